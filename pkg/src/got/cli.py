"""Command-line entry point: ``got solve|estimate|simulate|oracle <config>``.

Exit codes: 0 when every solve converged, 2 when a cutting-plane run hit its
iteration limit, 1 on configuration, data or numerical errors.
"""

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__, config, estimation, ot_oracle, simulation
from .errors import ConfigError, GotError
from .sip_solver import SolverOptions

EXIT_OK, EXIT_ERROR, EXIT_NONCONVERGED = 0, 1, 2


def to_jsonable(obj):
    """Plain JSON types only; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if hasattr(obj, "value"):
        return to_jsonable(obj.value)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


@dataclass
class RunReport:
    command: str
    config: dict
    results: dict
    version: str = __version__
    warnings: list = field(default_factory=list)
    timing: dict = None
    status: str = "ok"

    def __post_init__(self):
        self.config = to_jsonable(self.config)
        self.results = to_jsonable(self.results)
        self.warnings = [str(w) for w in self.warnings]
        self.timing = to_jsonable(self.timing)

    def to_dict(self):
        d = {"version": self.version, "command": self.command, "status": self.status, "config": self.config,
             "results": self.results, "warnings": self.warnings}
        if self.timing is not None:
            d["timing"] = self.timing
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(command=d["command"], config=d["config"], results=d["results"], version=d["version"],
                   warnings=d.get("warnings", []), timing=d.get("timing"), status=d.get("status", "ok"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


class _Parser(argparse.ArgumentParser):
    # usage errors share the config-error exit code; 2 is reserved for non-convergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _degrees(text):
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"degrees must be an integer or a comma list, got {text!r}") from None
    return vals[0] if len(vals) == 1 else vals


def build_parser():
    p = _Parser(prog="got", description="Sharp bounds via generalized optimal transport.")
    p.add_argument("--version", action="version", version=f"got {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("solve", "population bound with analytic targets"),
                        ("estimate", "plug-in bound estimate from CSV data"),
                        ("simulate", "Monte Carlo replication of the simulation design"),
                        ("oracle", "exact finite LP or discrete OT value")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="JSON problem configuration")
        if name == "estimate":
            sp.add_argument("csv", nargs="*", help="CSV files, as NAME=PATH or in dataset declaration order")
        sp.add_argument("--tol", type=float, help="cutting-plane tolerance")
        sp.add_argument("--gamma", type=float, help="norm-ball radius")
        sp.add_argument("--degrees", type=_degrees, help="basis degree, or one per continuous block (3,4)")
        sp.add_argument("--seed", type=int, help="root random seed")
        sp.add_argument("--out", help="output directory (default: config outputs.dir or ./got_out)")
        sp.add_argument("--timing", action="store_true", help="record wall-clock timing in the report")
    return p


def _overrides(args):
    out = {}
    for key in ("tol", "gamma", "degrees", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def _opts(sc):
    return SolverOptions(tol=sc.tol, max_iter=sc.max_iter, grid_resolution=sc.grid_resolution,
                         polish_iters=sc.polish_iters)


def _fixed_schedule(sc, default_gamma=5.0, default_degrees=3):
    gamma = sc.gamma if sc.gamma is not None else default_gamma
    if sc.split_radii is not None:
        gamma = tuple(sc.split_radii)
    degrees = sc.degrees if sc.degrees is not None else default_degrees
    return estimation.Schedule(gamma=gamma, degrees=degrees, ball_kind=sc.ball)


def _schedule(cfg, n):
    sc = cfg.solver
    if sc.schedule == "fixed":
        return _fixed_schedule(sc)
    if sc.schedule == "ot":
        s = estimation.ot_schedule(max(n, 2), cfg.dimension, sc.eta, sc.r_star, sc.max_degree)
    else:
        s = estimation.default_schedule(max(n, 2), sc.r_star, cfg.dimension, sc.max_degree)
        s.ball_kind = sc.ball
    if sc.gamma is not None:
        s.gamma = sc.gamma
    if sc.degrees is not None:
        s.degrees = sc.degrees
    return s


def _bounds(cfg, schedule):
    sc = cfg.solver
    fn = estimation.estimate_interval if sc.interval else estimation.estimate_upper
    return fn(cfg.support, cfg.restrictions, cfg.datasets, cfg.cost, schedule, sc.tol, sc.basis, _opts(sc),
              sc.gamma_check)


def _need_support(cfg):
    if cfg.support is None:
        raise ConfigError("config: missing required key 'support'")


def cmd_solve(cfg, args):
    _need_support(cfg)
    if cfg.dataset_specs:
        config.attach_datasets(cfg)
    rep = _bounds(cfg, _fixed_schedule(cfg.solver))
    return rep.to_dict(), rep.warnings, rep.converged


def cmd_estimate(cfg, args):
    _need_support(cfg)
    if not cfg.dataset_specs:
        raise ConfigError("estimate needs at least one dataset declared under 'datasets'")
    config.attach_datasets(cfg, args.csv)
    rep = _bounds(cfg, _schedule(cfg, estimation.sample_size(cfg.datasets)))
    out = rep.to_dict()
    out["datasets"] = {k: {"n": v.n} for k, v in cfg.datasets.items()}
    return out, rep.warnings, rep.converged


def _sim_settings(cfg, cli_seed=None):
    sim = dict(cfg.simulation or {})
    unknown = set(sim) - {"n", "reps", "seed", "dgp"}
    if unknown:
        raise ConfigError(f"simulation: unknown key(s) {sorted(unknown)}")
    sc = cfg.solver
    # --seed, then simulation.seed, then solver.seed
    if cli_seed is not None:
        seed = cli_seed
    else:
        seed = sim.get("seed", sc.seed if "seed" in (cfg.raw.get("solver") or {}) else 12345)
    return simulation.SimSettings(
        n=int(sim.get("n", 1000)), reps=int(sim.get("reps", 100)), seed=int(seed), dgp=sim.get("dgp", "uniform"),
        gamma=float(sc.gamma if sc.gamma is not None else 5.0),
        degrees=int(sc.degrees if sc.degrees is not None else 3), basis=sc.basis, tol=sc.tol,
        max_iter=sc.max_iter, grid_resolution=sc.grid_resolution)


def cmd_simulate(cfg, args, out_dir):
    st = _sim_settings(cfg, args.seed)
    res = simulation.run(st)
    grid, dens, bw = simulation.kde_table(res)
    files = {"sim.csv": simulation.sim_csv(res), "kde.csv": simulation.kde_csv(grid, dens)}
    for name, text in files.items():
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            fh.write(text)
    out = {"settings": dict(st.__dict__), "summary": res.summary(), "kde_bandwidth": bw,
           "files": sorted(files)}
    notes = []
    bad = [r["rep"] for r in res.rows if r["status"] != "converged"]
    if bad:
        notes.append(f"{len(bad)} replication(s) did not converge: {bad[:10]}")
    return out, notes, not bad


def _oracle_instance(spec):
    if not isinstance(spec, dict):
        raise ConfigError("oracle: must be an object")
    kinds = [k for k in ("finite", "balke_pearl", "transport") if k in spec]
    if len(kinds) != 1:
        raise ConfigError("oracle: declare exactly one of 'finite', 'balke_pearl', 'transport'")
    kind = kinds[0]
    body = spec[kind]
    if kind == "finite":
        inst = ot_oracle.FiniteInstance(body["points"], body["rows"], body["targets"], body["cost"])
        return kind, inst, None
    if kind == "balke_pearl":
        joint = body["joint"]
        if len(joint) != 2 or any(len(r) != 4 for r in joint):
            raise ConfigError("oracle.balke_pearl.joint must be two rows of P(Y=y, D=d | Z=z), "
                              "ordered (y,d) = (0,0), (0,1), (1,0), (1,1)")
        cells = [(0, 0), (0, 1), (1, 0), (1, 1)]
        return kind, ot_oracle.balke_pearl_instance({z: dict(zip(cells, map(float, joint[z]))) for z in (0, 1)}), None
    inst = ot_oracle.transport_instance(body["mu1"], body["mu2"], body["cost"])
    return kind, inst, body


def cmd_oracle(cfg, args):
    spec = cfg.oracle
    if spec is None:
        raise ConfigError("oracle command needs an 'oracle' section")
    kind, inst, ot = _oracle_instance(spec)
    compare = bool(spec.get("compare_pipeline", True))
    gamma = cfg.solver.gamma
    out = {"kind": kind, "n_points": int(inst.points.shape[0]), "n_rows": int(inst.targets.size)}
    if ot is not None:
        try:
            out["ot_value"] = ot_oracle.discrete_ot_value(ot["mu1"], ot["mu2"], ot["cost"])
        except GotError as exc:
            out.update(feasible=False, status="infeasible", message=str(exc))
            return out, [f"infeasible instance: {exc}"], True
    senses = (("upper", 1.0), ("lower", -1.0)) if kind == "balke_pearl" or spec.get("both", False) else (("upper", 1.0),)
    converged = True
    for name, sense in senses:
        res = ot_oracle.finite_got_lp(ot_oracle.FiniteInstance(inst.points, inst.moment_rows, inst.targets,
                                                               sense * inst.cost))
        if not res.feasible:
            out.update(feasible=False, status=res.status)
            return out, [f"infeasible instance: the finite LP reports {res.status}"], True
        entry = {"lp_value": sense * res.value}
        if compare:
            value, sol = ot_oracle.pipeline_finite(inst, gamma, min(cfg.solver.tol, 1e-9), sense)
            entry.update(pipeline_value=value, gap=abs(value - sense * res.value), status=sol.status.value,
                         iterations=sol.iterations)
            converged &= sol.converged
        out[name] = entry
    out["feasible"] = True
    return out, [], converged


def _out_dir(cfg, args):
    d = args.out or cfg.outputs.get("dir") or "got_out"
    if not os.path.isabs(d) and not args.out and cfg.outputs.get("dir"):
        d = os.path.join(cfg.base_dir, d)
    os.makedirs(d, exist_ok=True)
    return d


def run(argv=None):
    """Parse ``argv``, run the command, write ``report.json``; returns the exit code."""
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        cfg = config.load_config(args.config, _overrides(args))
        out_dir = _out_dir(cfg, args)
        if args.command == "solve":
            results, notes, ok = cmd_solve(cfg, args)
        elif args.command == "estimate":
            results, notes, ok = cmd_estimate(cfg, args)
        elif args.command == "simulate":
            results, notes, ok = cmd_simulate(cfg, args, out_dir)
        else:
            results, notes, ok = cmd_oracle(cfg, args)
    except GotError as exc:
        print(f"got {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"got {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    timing = {"seconds": time.perf_counter() - t0} if args.timing else None
    extra = {"csv": list(args.csv)} if args.command == "estimate" else {}
    report = RunReport(command=args.command, config={**cfg.raw, **({"cli": {**_overrides(args), **extra}}
                                                                      if _overrides(args) or extra else {})},
                       results=results, warnings=notes, timing=timing,
                       status="converged" if ok else "not_converged")
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report.to_json())
    for w in notes:
        print(f"warning: {w}", file=sys.stderr)
    print(_summary_line(args.command, results, out_dir))
    return EXIT_OK if ok else EXIT_NONCONVERGED


def _summary_line(command, results, out_dir):
    if command in ("solve", "estimate"):
        s = f"upper = {results['upper']:.10g}"
        if results.get("lower") is not None:
            s += f", lower = {results['lower']:.10g}"
    elif command == "simulate":
        sm = results["summary"]
        s = f"{sm['reps']} reps: oracle mean {sm['oracle_mean']:.6g}, GOT median {sm['got_median']:.6g}"
    elif not results.get("feasible", True):
        s = "instance is infeasible"
    else:
        s = ", ".join(f"{k} = {results[k]['lp_value']:.10g}" for k in ("upper", "lower") if k in results)
    return f"{s} (report: {os.path.join(out_dir, 'report.json')})"


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
