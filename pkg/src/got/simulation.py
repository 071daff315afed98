"""Monte Carlo engine for the three-variable simulation design.

Replication ``r`` draws from its own child of ``SeedSequence(seed)``, so
results do not depend on the number of worker processes (``GOT_THREADS``).
"""

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import estimation
from .errors import ConfigError, GotError
from .sip_solver import SolverOptions

KDE_POINTS = 512


@dataclass
class SimSettings:
    n: int = 1000
    reps: int = 100
    seed: int = 12345
    dgp: str = "uniform"
    gamma: float = 5.0
    degrees: int = 3
    basis: str = "monomial"
    tol: float = 1e-6
    max_iter: int = 500
    grid_resolution: int = 21

    def __post_init__(self):
        if int(self.reps) < 1:
            raise ConfigError(f"simulation reps must be at least 1, got {self.reps}")
        if int(self.n) < 2:
            raise ConfigError(f"simulation sample size must be at least 2, got {self.n}")
        if self.dgp not in estimation.DGPS:
            raise ConfigError(f"unknown simulation dgp {self.dgp!r}; choose from {sorted(estimation.DGPS)}")


@dataclass
class SimResult:
    settings: SimSettings
    rows: list = field(default_factory=list)

    def column(self, key):
        return np.array([r[key] for r in self.rows], dtype=float)

    def summary(self):
        oracle, got = self.column("oracle"), self.column("got")
        return {
            "reps": len(self.rows),
            "converged": int(sum(r["status"] == "converged" for r in self.rows)),
            "oracle_mean": float(oracle.mean()),
            "got_mean": float(got.mean()),
            "got_median": float(np.median(got)),
            "got_sd": float(got.std(ddof=1)) if got.size > 1 else 0.0,
            "got_minus_oracle_mean": float((got - oracle).mean()),
            "share_got_above_minus_0.05": float(np.mean(got >= -0.05)),
        }


def _one(args):
    n, seq, st = args
    rng = np.random.default_rng(seq)
    opts = SolverOptions(tol=st.tol, max_iter=st.max_iter, grid_resolution=st.grid_resolution)
    schedule = estimation.Schedule(gamma=st.gamma, degrees=st.degrees)
    try:
        oracle, got, rep = estimation.simulate_once(rng, n, st.tol, st.basis, schedule, st.dgp, opts)
        d = rep.diagnostics["upper"]
        return {"oracle": oracle, "got": got, "status": d["status"], "iterations": d["iterations"],
                "violation": d["final_violation"]}
    except GotError as exc:
        return {"oracle": float("nan"), "got": float("nan"), "status": f"error: {exc}", "iterations": 0,
                "violation": float("nan")}


def workers_from_env(default=None):
    raw = os.environ.get("GOT_THREADS")
    if raw is None:
        return default or os.cpu_count() or 1
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"GOT_THREADS must be an integer, got {raw!r}") from None
    return max(1, k)


def run(settings, workers=None):
    """Run every replication; rows are ordered by replication index."""
    seqs = np.random.SeedSequence(int(settings.seed)).spawn(int(settings.reps))
    tasks = [(int(settings.n), s, settings) for s in seqs]
    workers = min(workers or workers_from_env(), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_one, tasks))
    else:
        out = [_one(t) for t in tasks]
    rows = [{"rep": i + 1, **r} for i, r in enumerate(out)]
    return SimResult(settings, rows)


def silverman_bandwidth(x):
    """``0.9 min(sd, IQR/1.34) n^(-1/5)``, falling back to the non-zero scale
    (or a small absolute width) when the sample is degenerate."""
    x = np.asarray(x, dtype=float)
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25) / 1.34
    scale = min(sd, iqr) if min(sd, iqr) > 0 else max(sd, iqr)
    if scale <= 0:
        scale = 0.01 * (1.0 + abs(float(x.mean())))
    return 0.9 * scale * x.size ** -0.2


def kde(x, grid, h):
    z = (grid[:, None] - np.asarray(x, dtype=float)[None, :]) / h
    return np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * np.sqrt(2 * np.pi))


def kde_table(result, points=KDE_POINTS):
    """Gaussian KDE of both estimators on a shared grid; returns ``(grid, dens, bandwidths)``."""
    cols = {k: result.column(k) for k in ("oracle", "got")}
    cols = {k: v[np.isfinite(v)] for k, v in cols.items()}
    if any(v.size == 0 for v in cols.values()):
        raise GotError("no finite replications to smooth")
    bw = {k: silverman_bandwidth(v) for k, v in cols.items()}
    lo = min(v.min() - 4 * bw[k] for k, v in cols.items())
    hi = max(v.max() + 4 * bw[k] for k, v in cols.items())
    grid = np.linspace(lo, hi, points)
    return grid, {k: kde(v, grid, bw[k]) for k, v in cols.items()}, bw


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def sim_csv(result):
    keys = ["rep", "oracle", "got", "status", "iterations", "violation"]
    return _csv(keys, [[r[k] for k in keys] for r in result.rows])


def kde_csv(grid, dens):
    return _csv(["x", "oracle_density", "got_density"],
                [[float(x), float(a), float(b)] for x, a, b in zip(grid, dens["oracle"], dens["got"])])
