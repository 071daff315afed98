"""Sharp bounds on linear functionals of partially identified distributions.

The pipeline turns declarative identification restrictions into a moment
system, projects it onto a finite polynomial basis, and solves the penalized
dual as a semi-infinite LP by cutting planes.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    DataError,
    GotError,
    InfeasibleError,
    NumericError,
    SimplexError,
    UnsupportedRestrictionError,
)
from .estimation import Schedule, default_schedule, estimate_interval, estimate_upper, ot_schedule  # noqa: F401
from .moment_system import (  # noqa: F401
    AnalyticTarget,
    Dataset,
    DiscreteLaw,
    EmpiricalTarget,
    RestrictionKind,
    RestrictionSpec,
    UniformLaw,
    build_system,
)
from .ot_oracle import build_ot_system, discrete_ot_value, finite_got_lp  # noqa: F401
from .projection import make_basis, project  # noqa: F401
from .sip_solver import NormBall, SolverOptions, solve  # noqa: F401
from .support import SupportSet  # noqa: F401
