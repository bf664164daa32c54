"""Super-Ornstein-Uhlenbeck processes: spectral limit constants, particle simulation, CLT checks."""

from __future__ import annotations

from .errors import (
    ConfigurationError,
    EnsembleResourceError,
    IndexRangeError,
    InputError,
    InsufficientDataError,
    RegimeError,
    ResourceError,
    SuperCLTError,
    TruncationError,
)
from .spectral import SpectralFunction, SuperOUConfig, classify, eigenvalue, multiply, triple_product
from .moments import (
    LimitLaw,
    beta2,
    beta_cov,
    covariance_functional,
    eta2,
    limit_decomposition,
    mean_functional,
    rho2,
    rho_cov,
    sigma2,
    sigma_cov,
    variance_functional,
)
from .simulator import Ensemble, SimPlan, run_ensemble, run_replica
from .cltlab import VerificationReport, build_clt_samples, ks_test, verify_joint_clt

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "EnsembleResourceError", "IndexRangeError", "InputError", "InsufficientDataError",
    "RegimeError", "ResourceError", "SuperCLTError", "TruncationError",
    "SpectralFunction", "SuperOUConfig", "classify", "eigenvalue", "multiply", "triple_product",
    "LimitLaw", "beta2", "beta_cov", "covariance_functional", "eta2", "limit_decomposition", "mean_functional",
    "rho2", "rho_cov", "sigma2", "sigma_cov", "variance_functional",
    "Ensemble", "SimPlan", "run_ensemble", "run_replica",
    "VerificationReport", "build_clt_samples", "ks_test", "verify_joint_clt",
]
