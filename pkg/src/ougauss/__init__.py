"""Drift estimation for Ornstein-Uhlenbeck processes driven by general Gaussian noise."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DataError,
    DegeneratePathError,
    KernelDomainError,
    NotPSDError,
    OUGaussError,
    SingularityError,
    UnsupportedRegimeError,
)
from .kernels import (  # noqa: E402
    KernelSpec,
    bifbm,
    constants,
    cov,
    fbm,
    gensubfbm,
    hypothesis_report,
    mixed_partial,
    mixture,
    parse_kernel,
    psi,
    subfbm,
)
from .hilbert import Grid, GramMatrix, gram, ou_moments  # noqa: E402
from .simulate import build_ou_path, chaos_i2, factor, sample_increments  # noqa: E402
from .estimators import theta_hat, theta_hat_chaos, theta_tilde, studentize  # noqa: E402
from .montecarlo import McConfig, ks_distance, run_clt, run_consistency, run_rate  # noqa: E402
