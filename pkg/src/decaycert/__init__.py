"""Decay certificates for nonautonomous evolution equations with vanishing dissipation."""

from .asymptotic import (
    ExpDecay,
    PerturbedSystem,
    PowerDecay,
    TabulatedB,
    levinson_match,
    matching_error_report,
    matrix_exponential,
    perturbed_stability_bound,
    propagator_bound,
)
from .certificate import (
    Certificate,
    ConditionId,
    GeneralMuSpec,
    certificate_from_dict,
    certify,
    classify_regime,
    search_b1,
    verify_general_mu,
)
from .comparison import ScalarProblem, check_dominance, integrate_scalar
from .core import (
    CertificateInvalid,
    DomainError,
    ForcingBound,
    InvariantViolation,
    PerturbationBound,
    PowerLaw,
    Tabulated,
    envelope_eval,
    gamma_eval,
    gamma_integral,
    mu_eval,
)
from .evolution import build_system, numerical_abscissa, simulate, verify_trajectory_envelope

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
