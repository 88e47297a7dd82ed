"""Moderate-deviation estimators, rates and Monte Carlo checks."""

from .distributions import *  # noqa: F401,F403
from .errors import (
    ConfigError,
    DegenerateRate,
    DomainViolation,
    GridMismatch,
    InsufficientHits,
    ModdevError,
    ModelError,
    NoRootInBox,
    QuadratureError,
)
from .estimators import *  # noqa: F401,F403
from .hypotest import *  # noqa: F401,F403
from .kernels import BACKEND
from .montecarlo import *  # noqa: F401,F403
from .projection import *  # noqa: F401,F403
from .rates import *  # noqa: F401,F403
from .samples import *  # noqa: F401,F403
from .scaling import *  # noqa: F401,F403

__version__ = "0.1.0"
