"""Closed-form stability certificates and the general comparison-function check.

For a power-law rate the certificate uses mu(t) = mu0 * exp(0.5 * int gamma)
and reduces the comparison inequality to a handful of scalar conditions:

* d in (0, 1):  2d < p*b1*b0**(1-d)  and  2*c0*mu0**(-p) <= b1*b0**(-d)
* d == 1:       b1*p > 2             and  2*c0*mu0**(-p) <= b1/b0

together with mu0*g0 < 1 on the initial data.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .core import (
    ForcingBound,
    GammaModel,
    PerturbationBound,
    PowerLaw,
    Tabulated,
    as_function,
    gamma_eval,
    gamma_integral,
)

MU0_MARGIN = 0.01


class Branch(str, enum.Enum):
    POWER_LAW_DLT1 = "PowerLawDlt1"
    POWER_LAW_DEQ1 = "PowerLawDeq1"
    GENERAL_MU = "GeneralMu"


class Regime(str, enum.Enum):
    ASYMPTOTIC_STABILITY = "AsymptoticStability"
    STABILITY_ONLY = "StabilityOnly"


class ConditionId(str, enum.Enum):
    MU0_STRICT = "Mu0Strict"
    DLT1_35 = "Dlt1_35"
    DLT1_36 = "Dlt1_36"
    DEQ1_41 = "Deq1_41"
    DEQ1_42 = "Deq1_42"
    GENERAL_17 = "General_17"
    GENERAL_18 = "General_18"
    DIVERGENT_RATE = "DivergentRate"


_CONDITION_TEXT = {
    ConditionId.MU0_STRICT: "mu0*g0 < 1",
    ConditionId.DLT1_35: "2*d < p*b1*b0^(1-d)",
    ConditionId.DLT1_36: "2*c0*mu0^(-p) <= b1*b0^(-d)",
    ConditionId.DEQ1_41: "2 < b1*p",
    ConditionId.DEQ1_42: "2*c0*mu0^(-p) <= b1/b0",
    ConditionId.GENERAL_17: "a*mu^(-1-p) + beta <= mu^(-1)*(gamma - mu'/mu)",
    ConditionId.GENERAL_18: "mu(0)*g(0) < 1",
    ConditionId.DIVERGENT_RATE: "1 / int_0^inf gamma <= 0",
}


@dataclass(frozen=True)
class ConditionReport:
    id: ConditionId
    lhs: float
    rhs: float
    strict: bool
    worst_t: Optional[float] = None

    @property
    def passed(self) -> bool:
        return self.lhs < self.rhs if self.strict else self.lhs <= self.rhs

    @property
    def text(self) -> str:
        return _CONDITION_TEXT[self.id]

    def to_dict(self) -> dict:
        return {"id": self.id.value, "lhs": self.lhs, "rhs": self.rhs,
                "strict": self.strict, "pass": self.passed}


@dataclass(frozen=True)
class Certificate:
    mu0: float
    gamma: GammaModel
    bound: PerturbationBound
    branch: Branch
    checks: tuple
    regime: Regime
    notes: tuple = ()

    @property
    def valid(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, cid: ConditionId) -> ConditionReport:
        for c in self.checks:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def to_dict(self) -> dict:
        if not isinstance(self.gamma, PowerLaw):
            raise TypeError("only power-law certificates serialise")
        return {
            "gamma": {"b0": self.gamma.b0, "b1": self.gamma.b1, "d": self.gamma.d},
            "bound": {"c0": self.bound.c0, "p": self.bound.p},
            "mu0": self.mu0,
            "branch": self.branch.value,
            "checks": [c.to_dict() for c in self.checks],
            "valid": self.valid,
            "regime": self.regime.value,
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def classify_regime(gamma: GammaModel) -> Regime:
    """Whether the envelope decays to zero (int gamma = inf) or only stays bounded."""
    if isinstance(gamma, Tabulated):
        raise NotImplementedError("cannot decide a tail integral from tabulated data")
    if not isinstance(gamma, PowerLaw):
        raise TypeError(f"unsupported gamma model {type(gamma).__name__}")
    return Regime.ASYMPTOTIC_STABILITY if gamma.d <= 1 else Regime.STABILITY_ONLY


def _branch_checks(gamma: PowerLaw, bound: PerturbationBound, mu0: float) -> List[ConditionReport]:
    b0, b1, d = gamma.b0, gamma.b1, gamma.d
    c0, p = bound.c0, bound.p
    lhs_forcing = 2 * c0 * mu0 ** (-p)
    if d < 1:
        return [
            ConditionReport(ConditionId.DLT1_35, 2 * d, p * b1 * b0 ** (1 - d), strict=True),
            ConditionReport(ConditionId.DLT1_36, lhs_forcing, b1 * b0 ** (-d), strict=False),
        ]
    return [
        ConditionReport(ConditionId.DEQ1_41, 2.0, b1 * p, strict=True),
        ConditionReport(ConditionId.DEQ1_42, lhs_forcing, b1 / b0, strict=False),
    ]


def _assemble(gamma: PowerLaw, bound: PerturbationBound, mu0: float, mu0_g0: float) -> Certificate:
    mu_check = ConditionReport(ConditionId.MU0_STRICT, mu0_g0, 1.0, strict=True)
    regime = classify_regime(gamma)
    if regime is Regime.STABILITY_ONLY:
        # the rate is integrable: 1/mu has a positive limit, no decay certificate
        rate = ConditionReport(ConditionId.DIVERGENT_RATE, 1.0 / gamma.tail_integral(), 0.0,
                               strict=False)
        return Certificate(mu0, gamma, bound, Branch.GENERAL_MU, (mu_check, rate), regime,
                           notes=("stability only: int_0^inf gamma < inf for d > 1",))
    branch = Branch.POWER_LAW_DLT1 if gamma.d < 1 else Branch.POWER_LAW_DEQ1
    checks = (mu_check, *_branch_checks(gamma, bound, mu0))
    return Certificate(mu0, gamma, bound, branch, checks, regime,
                       notes=("sufficient chain: the closed-form pair implies the canonical-mu "
                              "reduction, which implies the general condition",))


def certify(gamma: PowerLaw, bound: PerturbationBound, g0: float,
            mu0: Optional[float] = None) -> Certificate:
    """Check the closed-form stability conditions for a power-law rate.

    When ``mu0`` is omitted it is set just below the bound ``1/g0``,
    ``(1 - 0.01)/g0``; for ``g0 == 0`` it is 1.  Zero initial data stays
    zero, so that certificate carries only the (trivially true) initial
    condition.
    """
    if not isinstance(gamma, PowerLaw):
        raise TypeError("certify needs a PowerLaw rate; use verify_general_mu otherwise")
    if not (math.isfinite(g0) and g0 >= 0):
        raise ValueError(f"g0 must be finite and >= 0, got {g0!r}")
    if mu0 is None:
        mu0 = 1.0 if g0 == 0 else (1 - MU0_MARGIN) / g0
    if not (math.isfinite(mu0) and mu0 > 0):
        raise ValueError(f"mu0 must be finite and > 0, got {mu0!r}")
    if g0 == 0:
        mu_check = ConditionReport(ConditionId.MU0_STRICT, 0.0, 1.0, strict=True)
        return Certificate(mu0, gamma, bound, Branch.GENERAL_MU, (mu_check,),
                           classify_regime(gamma), notes=("zero initial data",))
    return _assemble(gamma, bound, mu0, mu0 * g0)


def certificate_from_dict(doc: dict) -> Certificate:
    """Rebuild a certificate from its JSON form, re-evaluating every condition."""
    try:
        gamma = PowerLaw(float(doc["gamma"]["b0"]), float(doc["gamma"]["b1"]), float(doc["gamma"]["d"]))
        bound = PerturbationBound(float(doc["bound"]["c0"]), float(doc["bound"]["p"]))
        mu0 = float(doc["mu0"])
        checks = doc["checks"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed certificate document: {exc}") from exc
    mu0_g0 = next((float(c["lhs"]) for c in checks if c["id"] == ConditionId.MU0_STRICT.value), None)
    if mu0_g0 is None:
        raise ValueError("certificate document lacks the Mu0Strict check")
    if mu0_g0 == 0:
        return certify(gamma, bound, 0.0, mu0)
    return _assemble(gamma, bound, mu0, mu0_g0)


def _feasible(b0: float, d: float, b1: float, bound: PerturbationBound, mu0: float) -> bool:
    return all(c.passed for c in _branch_checks(PowerLaw(b0, b1, d), bound, mu0))


def search_b1(b0: float, d: float, bound: PerturbationBound, mu0: float,
              tol: float = 1e-9) -> float:
    """Smallest b1 for which the branch conditions hold.

    The feasible set is upward closed in b1.  Bracket by doubling/halving
    from 1, bisect to ``tol``, then add a margin so the strict conditions
    still hold for the returned value.
    """
    if not (b0 > 0 and 0 < d <= 1 and mu0 > 0):
        raise ValueError("search_b1 needs b0 > 0, d in (0, 1], mu0 > 0")
    lo, hi = 1.0, 1.0
    if _feasible(b0, d, hi, bound, mu0):
        while _feasible(b0, d, lo, bound, mu0):
            hi = lo
            lo *= 0.5
            if lo < 1e-300:
                return hi
    else:
        while not _feasible(b0, d, hi, bound, mu0):
            lo = hi
            hi *= 2.0
            if not math.isfinite(hi):
                raise ArithmeticError("no feasible b1 within double range")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _feasible(b0, d, mid, bound, mu0):
            hi = mid
        else:
            lo = mid
    b1 = hi + max(1e-9, 1e-12 * hi)
    assert _feasible(b0, d, b1, bound, mu0)
    return b1


# -- general comparison function -------------------------------------------------


@dataclass
class GeneralMuSpec:
    """Inputs of the general comparison-function check on a finite horizon.

    ``log_mu`` and ``dlog_mu`` (the logarithmic derivative mu'/mu) are the
    working representation; :meth:`from_mu` builds them from mu and mu'.
    """

    log_mu: Callable
    dlog_mu: Callable
    a: Callable
    beta: ForcingBound
    gamma: GammaModel
    p: float
    horizon: float
    n_grid: int = 100_000
    mu_values: Optional[Callable] = None
    canonical_mu0: Optional[float] = None

    @classmethod
    def from_mu(cls, mu, mu_dot, a, beta, gamma, p, horizon=None, n_grid=100_000):
        def log_mu(t):
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.log(np.asarray(mu(t), dtype=float))

        def dlog_mu(t):
            return np.asarray(mu_dot(t), dtype=float) / np.asarray(mu(t), dtype=float)

        return cls(log_mu, dlog_mu, as_function(a), _forcing(beta), gamma, p,
                   _default_horizon(gamma, horizon), n_grid, mu_values=mu)

    @classmethod
    def canonical(cls, mu0, gamma, a, p, beta=None, horizon=None, n_grid=100_000):
        """mu(t) = mu0 * exp(0.5 * int_0^t gamma), so mu'/mu = gamma/2."""
        log_mu0 = math.log(mu0)
        return cls(lambda t: log_mu0 + 0.5 * np.asarray(gamma_integral(gamma, t)),
                   lambda t: 0.5 * np.asarray(gamma_eval(gamma, t)),
                   as_function(a), _forcing(beta), gamma, p,
                   _default_horizon(gamma, horizon), n_grid, canonical_mu0=mu0)


def _forcing(beta) -> ForcingBound:
    return beta if isinstance(beta, ForcingBound) else ForcingBound(beta)


def _default_horizon(gamma, horizon):
    if horizon is not None:
        return float(horizon)
    if isinstance(gamma, PowerLaw):
        return 1e4 * gamma.b0
    return float(gamma.t_max)


class SpecInvariantError(ValueError):
    """mu <= 0 or mu' < 0 found on the verification grid."""


@dataclass
class GeneralMuResult:
    passed: bool
    worst_t: float
    margin: float
    horizon: float
    cond32: Optional[bool] = None
    cond33: Optional[bool] = None
    tail_certified: bool = False
    notes: List[str] = field(default_factory=list)

    @property
    def verified_up_to(self) -> float:
        return math.inf if self.tail_certified else self.horizon


def verification_grid(horizon: float, n: int, scale: float = 1.0) -> np.ndarray:
    lo = min(horizon, scale) * 1e-6
    return np.concatenate([[0.0], np.geomspace(lo, horizon, n - 1)])


def verify_general_mu(spec: GeneralMuSpec) -> GeneralMuResult:
    """Check a(t)mu^(-1-p) + beta <= mu^(-1)(gamma - mu'/mu) on a log grid.

    The inequality is multiplied through by mu(t) > 0 before evaluation,
    ``a*mu^(-p) + beta*mu <= gamma - mu'/mu``, so huge mu neither overflows
    nor flattens the margin to zero.  ``margin`` is min(rhs - lhs) of that
    scaled form and ``worst_t`` its first minimiser.
    """
    scale = spec.gamma.b0 if isinstance(spec.gamma, PowerLaw) else 1.0
    t = verification_grid(spec.horizon, spec.n_grid, scale)
    if spec.mu_values is not None:
        mu = np.asarray(spec.mu_values(t), dtype=float)
        if np.any(~(mu > 0)):
            raise SpecInvariantError(f"mu <= 0 at t={t[np.argmax(~(mu > 0))]}")
    log_mu = np.asarray(spec.log_mu(t), dtype=float)
    dlog = np.asarray(spec.dlog_mu(t), dtype=float)
    if np.any(~np.isfinite(log_mu)):
        raise SpecInvariantError("mu is not positive and finite on the grid")
    if np.any(dlog < 0):
        raise SpecInvariantError(f"mu' < 0 at t={t[np.argmax(dlog < 0)]}")

    gamma = np.asarray(gamma_eval(spec.gamma, t), dtype=float)
    a = np.broadcast_to(np.asarray(spec.a(t), dtype=float), t.shape)
    if np.any(a < 0):
        raise SpecInvariantError("a(t) < 0 on the grid")
    beta = np.broadcast_to(np.asarray(spec.beta(t), dtype=float), t.shape)
    with np.errstate(over="ignore", under="ignore"):
        lhs = a * np.exp(-spec.p * log_mu)
        forced = beta > 0
        lhs = lhs + np.where(forced, beta * np.exp(np.where(forced, log_mu, 0.0)), 0.0)
    rhs = gamma - dlog
    gap = rhs - lhs
    i = int(np.argmin(gap))
    result = GeneralMuResult(bool(np.all(gap >= 0)), float(t[i]), float(gap[i]), spec.horizon)

    if spec.canonical_mu0 is not None:
        # layered sufficient conditions for the canonical mu
        integral = np.asarray(gamma_integral(spec.gamma, t), dtype=float)
        with np.errstate(divide="ignore"):
            grow = np.log(gamma) + 0.5 * spec.p * integral
        result.cond33 = bool(np.all(math.log(gamma[0]) <= grow + 1e-15 * np.abs(grow)))
        a0 = np.asarray(spec.a(t), dtype=float)
        if np.ndim(a0) == 0 or np.all(a0 == a0.flat[0]):
            c0 = float(np.ravel(a0)[0])
            result.cond32 = bool(2 * c0 * spec.canonical_mu0 ** (-spec.p) <= gamma[0])
        if isinstance(spec.gamma, PowerLaw) and spec.beta.is_zero and result.passed:
            g = spec.gamma
            # d/dt log(gamma e^{(p/2) int gamma}) = -d/(b0+t) + (p/2) gamma >= 0 at T
            # stays >= 0 for all later t when d <= 1
            T = spec.horizon
            slope = -g.d / (g.b0 + T) + 0.5 * spec.p * g.b1 / (g.b0 + T) ** g.d
            result.tail_certified = bool(g.d <= 1 and slope >= 0 and result.cond33
                                         and result.cond32)
        result.notes.append("canonical mu: mu'/mu = gamma/2")
    if not result.tail_certified:
        result.notes.append(f"grid-verified up to T={spec.horizon:g}")
    return result
