"""Decay-rate models, perturbation bounds and closed-form envelope evaluation.

The dissipation rate is either a power law ``b1 / (b0 + t)**d`` or a
tabulated nonnegative function (linear interpolation, trapezoid quadrature).
The envelope attached to a rate is ``1 / mu(t)`` with
``mu(t) = mu0 * exp(0.5 * int_0^t gamma)``.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

DBL_MAX = sys.float_info.max
LOG_DBL_MAX = math.log(DBL_MAX)

ArrayLike = Union[float, np.ndarray]
# rounding slack at the ends of a tabulation (stage times of the last step)
_GRID_SLACK = 1e-12


class DomainError(ValueError):
    """Query outside the domain of a model (e.g. beyond a tabulation)."""


class CertificateInvalid(RuntimeError):
    """An operation that needs a valid certificate was handed an invalid one."""


class InvariantViolation(RuntimeError):
    """A mathematical guarantee was breached; indicates a bug, not bad input."""


def _as_time(t, allow_array=True):
    arr = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError(f"time must be finite and nonnegative, got {t!r}")
    return arr


def _out(arr: np.ndarray, like):
    if np.ndim(like) == 0:
        return float(arr)
    return arr


@dataclass(frozen=True)
class PowerLaw:
    """gamma(t) = b1 / (b0 + t)**d with b0, b1, d > 0."""

    b0: float
    b1: float
    d: float

    def __post_init__(self):
        for name in ("b0", "b1", "d"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"PowerLaw.{name} must be finite and > 0, got {v!r}")

    def tail_integral(self) -> float:
        """int_0^inf gamma; infinite when d <= 1."""
        if self.d <= 1:
            return math.inf
        return self.b1 * self.b0 ** (1 - self.d) / (self.d - 1)


@dataclass(frozen=True)
class Tabulated:
    """Nonnegative rate given on a strictly increasing time grid."""

    grid: tuple
    values: tuple
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape:
            raise ValueError("Tabulated grid and values must be 1-d of equal length")
        if grid.size < 2:
            raise ValueError("Tabulated needs at least 2 points")
        if not np.all(np.isfinite(grid)) or not np.all(np.isfinite(values)):
            raise ValueError("Tabulated entries must be finite")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("Tabulated grid must be strictly increasing")
        if np.any(values < 0):
            raise ValueError("Tabulated values must be nonnegative")
        if grid[0] < 0:
            raise ValueError("Tabulated grid must start at t >= 0")
        object.__setattr__(self, "grid", tuple(grid.tolist()))
        object.__setattr__(self, "values", tuple(values.tolist()))
        cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(grid) * (values[1:] + values[:-1]))])
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def sample(cls, fn: Callable[[np.ndarray], np.ndarray], grid) -> "Tabulated":
        grid = np.asarray(grid, dtype=float)
        return cls(tuple(grid), tuple(np.asarray(fn(grid), dtype=float)))

    @property
    def t_min(self) -> float:
        return self.grid[0]

    @property
    def t_max(self) -> float:
        return self.grid[-1]


GammaModel = Union[PowerLaw, Tabulated]


@dataclass(frozen=True)
class PerturbationBound:
    """Constants of the growth bound ||F(t,u)|| <= c0 ||u||**(1+p)."""

    c0: float
    p: float

    def __post_init__(self):
        if not (math.isfinite(self.c0) and self.c0 >= 0):
            raise ValueError(f"c0 must be finite and >= 0, got {self.c0!r}")
        if not (math.isfinite(self.p) and self.p > 0):
            raise ValueError(f"p must be finite and > 0, got {self.p!r}")


class ForcingBound:
    """Nonnegative forcing term beta(t), from a callable or a tabulation.

    Negative values are rejected at evaluation time for callables and at
    construction for tabulations.
    """

    def __init__(self, beta: Union[Callable, float, Tabulated, None] = None):
        if beta is None:
            beta = 0.0
        if isinstance(beta, (int, float)):
            if beta < 0:
                raise ValueError("forcing bound must be nonnegative")
        self._beta = beta

    @property
    def is_zero(self) -> bool:
        return isinstance(self._beta, (int, float)) and self._beta == 0

    def __call__(self, t: ArrayLike) -> ArrayLike:
        b = self._beta
        if isinstance(b, (int, float)):
            return _out(np.full(np.shape(t), float(b)), t)
        if isinstance(b, Tabulated):
            return gamma_eval(b, t)
        out = np.asarray(b(t), dtype=float)
        if np.any(out < 0):
            raise ValueError("forcing bound beta(t) evaluated negative")
        return _out(out, t)


def as_function(value) -> Callable:
    """Promote a constant to a vectorised function of t."""
    if callable(value):
        return value
    c = float(value)
    if c < 0:
        raise ValueError("coefficient must be nonnegative")
    return lambda t: _out(np.full(np.shape(t), c), t)


def gamma_eval(model: GammaModel, t: ArrayLike) -> ArrayLike:
    arr = _as_time(t)
    if isinstance(model, PowerLaw):
        return _out(model.b1 / (model.b0 + arr) ** model.d, t)
    if isinstance(model, Tabulated):
        grid = np.asarray(model.grid)
        slack = _GRID_SLACK * max(abs(grid[-1]), 1.0)
        if np.any(arr < grid[0] - slack) or np.any(arr > grid[-1] + slack):
            raise DomainError(f"t outside tabulated grid [{grid[0]}, {grid[-1]}]")
        return _out(np.interp(arr, grid, np.asarray(model.values)), t)
    raise TypeError(f"unsupported gamma model {type(model).__name__}")


def gamma_integral(model: GammaModel, t: ArrayLike) -> ArrayLike:
    """int_0^t gamma(s) ds.

    Exact for the power law.  For a tabulation this is the exact integral of
    the piecewise-linear interpolant (composite trapezoid), measured from the
    first grid point, which must be 0.
    """
    arr = _as_time(t)
    if isinstance(model, PowerLaw):
        b0, b1, d = model.b0, model.b1, model.d
        if d == 1:
            out = b1 * np.log1p(arr / b0)
        else:
            # (b0+t)^(1-d) - b0^(1-d) written through expm1 to keep small-t accuracy
            e = 1 - d
            out = b1 * b0**e * np.expm1(e * np.log1p(arr / b0)) / e
        return _out(out, t)
    if isinstance(model, Tabulated):
        grid = np.asarray(model.grid)
        vals = np.asarray(model.values)
        if grid[0] != 0:
            raise DomainError("integral of a tabulated rate needs a grid starting at 0")
        if np.any(arr > grid[-1] + _GRID_SLACK * max(abs(grid[-1]), 1.0)):
            raise DomainError(f"t beyond tabulated grid end {grid[-1]}")
        idx = np.clip(np.searchsorted(grid, arr, side="right") - 1, 0, grid.size - 2)
        t0 = grid[idx]
        v0 = vals[idx]
        v1 = np.interp(arr, grid, vals)
        out = model._cum[idx] + 0.5 * (arr - t0) * (v0 + v1)
        return _out(out, t)
    raise TypeError(f"unsupported gamma model {type(model).__name__}")


class MuEvaluation(NamedTuple):
    value: float
    log_value: float
    saturated: bool


def log_mu_eval(mu0: float, model: GammaModel, t: ArrayLike) -> ArrayLike:
    if not mu0 > 0:
        raise ValueError("mu0 must be > 0")
    return _out(math.log(mu0) + 0.5 * np.asarray(gamma_integral(model, t)), t)


def mu_eval_status(mu0: float, model: GammaModel, t: float) -> MuEvaluation:
    """mu(t) together with its logarithm and an overflow flag.

    When mu(t) exceeds the double range the value saturates at DBL_MAX and
    ``saturated`` is set: the envelope 1/mu has underflowed to zero.
    """
    log_mu = float(log_mu_eval(mu0, model, t))
    if log_mu > LOG_DBL_MAX:
        return MuEvaluation(DBL_MAX, log_mu, True)
    return MuEvaluation(math.exp(log_mu), log_mu, False)


def mu_eval(mu0: float, model: GammaModel, t: ArrayLike) -> ArrayLike:
    """mu(t) = mu0 * exp(0.5 * int_0^t gamma), saturated at DBL_MAX.

    For d == 1 this is mu0 * ((b0 + t) / b0)**(b1 / 2).  Use
    :func:`mu_eval_status` to learn whether saturation happened.
    """
    log_mu = np.asarray(log_mu_eval(mu0, model, t))
    with np.errstate(over="ignore"):
        out = np.where(log_mu > LOG_DBL_MAX, DBL_MAX, np.exp(np.minimum(log_mu, LOG_DBL_MAX)))
    return _out(out, t)


def envelope_eval(cert, t: ArrayLike) -> ArrayLike:
    """Certified majorant 1/mu(t) of the solution norm.

    Returns 0.0 where mu saturated; see :func:`envelope_status`.
    """
    if not cert.valid:
        raise CertificateInvalid("envelope requested from an invalid certificate")
    log_mu = np.asarray(log_mu_eval(cert.mu0, cert.gamma, t))
    return _out(np.exp(-log_mu), t)


class EnvelopeStatus(NamedTuple):
    value: float
    underflow: bool


def envelope_status(cert, t: float) -> EnvelopeStatus:
    if not cert.valid:
        raise CertificateInvalid("envelope requested from an invalid certificate")
    m = mu_eval_status(cert.mu0, cert.gamma, t)
    if m.saturated:
        return EnvelopeStatus(0.0, True)
    value = math.exp(-m.log_value)
    return EnvelopeStatus(value, value == 0.0)


def log_dominance(cert, times, log_norms) -> np.ndarray:
    """log(g(t_i) * mu(t_i)); -inf where g vanishes."""
    times = np.asarray(times, dtype=float)
    log_mu = np.asarray(log_mu_eval(cert.mu0, cert.gamma, times), dtype=float)
    return np.asarray(log_norms, dtype=float) + log_mu


def dominance_products(cert, times, norms) -> np.ndarray:
    """g(t_i) * mu(t_i), computed in log space so neither factor overflows."""
    norms = np.asarray(norms, dtype=float)
    with np.errstate(divide="ignore"):
        logs = log_dominance(cert, times, np.log(norms))
    with np.errstate(over="ignore"):
        return np.exp(logs)


def power_law_envelope_closed_form(mu0: float, model: PowerLaw, t: float) -> float:
    """Envelope written directly from the branch formulas, for cross-checking."""
    b0, b1, d = model.b0, model.b1, model.d
    if d == 1:
        return ((b0 + t) / b0) ** (-b1 / 2) / mu0
    return math.exp(-b1 / (2 * (1 - d)) * ((b0 + t) ** (1 - d) - b0 ** (1 - d))) / mu0


def envelope_limit(mu0: float, model: PowerLaw) -> float:
    """lim_{t->inf} 1/mu(t); zero exactly when the rate is not integrable."""
    tail = model.tail_integral()
    if math.isinf(tail):
        return 0.0
    return math.exp(-0.5 * tail) / mu0
