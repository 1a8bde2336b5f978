"""Numerical laboratory for a partially hyperbolic skew product on the 4-torus.

The map couples a standard map on the center torus to a hyperbolic toral
automorphism on the fiber.  Subpackages cover exact arithmetic on the torus,
the dynamics and its derivative, center Lyapunov exponents, hyperbolic-time
sets, cone checks, u-curve integrals and ergodicity diagnostics.
"""

__version__ = "0.1.0"

from .torus import IntMat2, DEFAULT_A  # noqa: E402
from .dynamics import MapParams, ShearPerturbation, f_apply, f_inverse, df_full, df_center  # noqa: E402
from .config import RunConfig, ConfigError, load, loads  # noqa: E402

__all__ = [
    "__version__",
    "IntMat2",
    "DEFAULT_A",
    "MapParams",
    "ShearPerturbation",
    "f_apply",
    "f_inverse",
    "df_full",
    "df_center",
    "RunConfig",
    "ConfigError",
    "load",
    "loads",
]
