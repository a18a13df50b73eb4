"""Finite-dimensional realisations of u' = A(t) u + F(t, u).

The built-in family is A(t) = -gamma(t) I + omega K with K skew-symmetric,
whose symmetric part is exactly -gamma(t) I and whose rotation
R(t) = exp(t omega K) is known in closed form.  Such systems are integrated
in a factored log-polar frame u = exp(s) R(t) z with ||z|| = 1:

    G  = exp(-s) R^T F(t, exp(s) R z),
    s' = -gamma(t) + <z, G> / <z, z>,
    z' = G - (<z, G> / <z, z>) z,

which removes the fast rotation, keeps log||u|| = s + log||z|| in range far
below the smallest double, and leaves only the nonlinear part to resolve.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .comparison import DominanceResult, dominance
from .core import (CertificateInvalid, GammaModel, InvariantViolation, PerturbationBound,
                   PowerLaw, gamma_eval, gamma_integral)
from .integrate import BLOWUP_THRESHOLD, dopri5, log_report_times

BOUND_SAMPLES = 1000
BOUND_TOL = 1e-10


def skew_matrix(n: int, seed: int) -> np.ndarray:
    """Seeded skew-symmetric matrix with unit spectral norm (zero for n == 1)."""
    if n < 1:
        raise ValueError("dimension must be >= 1")
    rng = np.random.default_rng(seed)
    M = rng.uniform(-1.0, 1.0, size=(n, n))
    K = 0.5 * (M - M.T)
    norm = np.linalg.norm(K, 2)
    return K / norm if norm > 0 else K


def random_orthogonal(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


# -- nonlinearities ---------------------------------------------------------------


def _scaled_generic(f, t, x, log_scale):
    """exp(-s) F(t, exp(s) x) by direct evaluation, guarded against underflow."""
    scale = np.exp(log_scale)
    if scale == 0.0 or scale < 1e-290:
        return np.zeros_like(x)
    return f(t, scale * x) / scale


@dataclass(frozen=True)
class Radial:
    """F(t, u) = c0 ||u||^p u, saturating the growth bound."""

    c0: float
    p: float
    equivariant = True

    def __call__(self, t, u):
        r = np.linalg.norm(u)
        return self.c0 * r**self.p * u if r > 0 else np.zeros_like(u)

    def scaled(self, t, x, log_scale):
        r = np.linalg.norm(x)
        if r == 0:
            return np.zeros_like(x)
        return self.c0 * np.exp(self.p * (log_scale + np.log(r))) * x


@dataclass(frozen=True)
class Rotated:
    """F(t, u) = c0 ||u||^p Q u with Q orthogonal; saturating but not radial."""

    c0: float
    p: float
    Q: np.ndarray = field(compare=False)
    equivariant = False

    def __call__(self, t, u):
        r = np.linalg.norm(u)
        return self.c0 * r**self.p * (self.Q @ u) if r > 0 else np.zeros_like(u)

    def scaled(self, t, x, log_scale):
        r = np.linalg.norm(x)
        if r == 0:
            return np.zeros_like(x)
        return self.c0 * np.exp(self.p * (log_scale + np.log(r))) * (self.Q @ x)


@dataclass(frozen=True)
class Truncated:
    """F(t, u) = c0 min(||u||, M)^p u; below the bound once ||u|| > M."""

    c0: float
    p: float
    M: float
    equivariant = True

    def __call__(self, t, u):
        r = np.linalg.norm(u)
        return self.c0 * min(r, self.M) ** self.p * u if r > 0 else np.zeros_like(u)

    def scaled(self, t, x, log_scale):
        r = np.linalg.norm(x)
        if r == 0:
            return np.zeros_like(x)
        return self.c0 * np.exp(self.p * min(log_scale + np.log(r), np.log(self.M))) * x


@dataclass(frozen=True)
class ZeroForce:
    equivariant = True

    def __call__(self, t, u):
        return np.zeros_like(u)

    def scaled(self, t, x, log_scale):
        return np.zeros_like(x)


def make_nonlinearity(kind: str, bound: PerturbationBound, dim: int, seed: int = 0,
                      truncation: float = 1.0):
    if kind == "radial":
        return Radial(bound.c0, bound.p)
    if kind == "rotated":
        return Rotated(bound.c0, bound.p, random_orthogonal(dim, seed + 1))
    if kind == "truncated":
        return Truncated(bound.c0, bound.p, truncation)
    if kind == "none":
        return ZeroForce()
    raise ValueError(f"unknown nonlinearity {kind!r}")


def sample_bound_violation(f, bound: PerturbationBound, dim: int, seed: int = 0,
                           samples: int = BOUND_SAMPLES, t_max: float = 1e3) -> float:
    """Largest ||F(t,u)|| / (c0 ||u||^(1+p)) - 1 over random (t, u)."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(samples):
        t = rng.uniform(0.0, t_max)
        u = rng.standard_normal(dim) * 10.0 ** rng.uniform(-3, 2)
        r = np.linalg.norm(u)
        lhs = np.linalg.norm(f(t, u))
        cap = bound.c0 * r ** (1 + bound.p)
        if cap == 0:
            excess = np.inf if lhs > 0 else -1.0
        else:
            excess = lhs / cap - 1.0
        worst = max(worst, excess)
    return float(worst)


# -- systems ----------------------------------------------------------------------


@dataclass
class TimeVaryingSystem:
    dim: int
    a_of_t: Callable[[float], np.ndarray]
    f_of_tu: Callable
    f_bound: PerturbationBound
    construction: str  # "DissipativePlusSkew" | "UserMatrix"
    gamma: Optional[GammaModel] = None
    omega: float = 0.0
    skew_seed: Optional[int] = None
    K: Optional[np.ndarray] = None
    hypothesis_verified: bool = True
    _frame: Optional[tuple] = field(default=None, repr=False)

    def rhs(self, t, u):
        return self.a_of_t(t) @ u + self.f_of_tu(t, u)

    def rotation(self, t: float) -> np.ndarray:
        """exp(t omega K), exact up to rounding (unitary diagonalisation of iK)."""
        V, lam = self._eig()
        phase = np.exp(-1j * lam * self.omega * t)
        return ((V * phase) @ V.conj().T).real

    def _eig(self):
        if self._frame is None:
            lam, V = np.linalg.eigh(1j * self.K)
            self._frame = (V, lam)
        return self._frame

    @property
    def factorable(self) -> bool:
        return self.construction == "DissipativePlusSkew"


def build_system(dim: int, gamma: GammaModel, omega: float = 0.0, skew_seed: int = 0,
                 nonlinearity: str = "radial", bound: PerturbationBound = PerturbationBound(0.0, 1.0),
                 truncation: float = 1.0) -> TimeVaryingSystem:
    """A(t) = -gamma(t) I + omega K with a seeded, unit-norm skew K."""
    K = skew_matrix(dim, skew_seed)
    eye = np.eye(dim)
    F = make_nonlinearity(nonlinearity, bound, dim, skew_seed, truncation)

    def a_of_t(t):
        return -gamma_eval(gamma, t) * eye + omega * K

    worst = sample_bound_violation(F, bound, dim, seed=skew_seed)
    if worst > BOUND_TOL:
        raise InvariantViolation(f"built-in nonlinearity exceeds its bound by {worst:.3e}")
    return TimeVaryingSystem(dim, a_of_t, F, bound, "DissipativePlusSkew", gamma,
                             float(omega), skew_seed, K)


def user_system(a_of_t: Callable, f_of_tu: Callable, bound: PerturbationBound, dim: int,
                gamma: Optional[GammaModel] = None, check_times=None) -> TimeVaryingSystem:
    """Wrap a user matrix family; hypotheses are sampled, not assumed.

    Failing the dissipativity or growth check only flags the system.
    """
    system = TimeVaryingSystem(dim, a_of_t, f_of_tu, bound, "UserMatrix", gamma)
    ok = True
    if gamma is not None:
        times = np.linspace(0.0, 100.0, 101) if check_times is None else np.asarray(check_times)
        for t in times:
            if numerical_abscissa(system, t) > -gamma_eval(gamma, t) + 1e-10:
                ok = False
                break
    if sample_bound_violation(f_of_tu, bound, dim) > BOUND_TOL:
        ok = False
    if not ok:
        warnings.warn("user system fails a sampled hypothesis check; hypothesis unverified")
    system.hypothesis_verified = ok and gamma is not None
    return system


def numerical_abscissa(system_or_matrix, t: float = 0.0) -> float:
    """Largest eigenvalue of the symmetric part of A(t)."""
    if isinstance(system_or_matrix, TimeVaryingSystem):
        A = system_or_matrix.a_of_t(t)
    else:
        A = np.asarray(system_or_matrix, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])


# -- trajectories -----------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    norms: np.ndarray
    report_times: np.ndarray
    report_states: np.ndarray
    report_norms: np.ndarray
    steps_accepted: int
    steps_rejected: int
    min_step: float
    status: str = "completed"
    message: str = ""
    log_norms: Optional[np.ndarray] = None
    report_log_norms: Optional[np.ndarray] = None

    def __post_init__(self):
        with np.errstate(divide="ignore"):
            if self.log_norms is None:
                self.log_norms = np.log(self.norms)
            if self.report_log_norms is None:
                self.report_log_norms = np.log(self.report_norms)

    @property
    def diagnostics(self) -> dict:
        return {"steps_accepted": self.steps_accepted, "steps_rejected": self.steps_rejected,
                "min_step": self.min_step, "status": self.status, "message": self.message}

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def sample_points(self):
        """Times and log-norms over accepted steps and computed report times."""
        ok = ~np.isnan(self.report_log_norms)
        return (np.concatenate([self.times, self.report_times[ok]]),
                np.concatenate([self.log_norms, self.report_log_norms[ok]]))

    def write_csv(self, path) -> None:
        """Report-time norms, header ``t,norm``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "norm"])
            for t, r in zip(self.report_times, self.report_norms):
                if np.isfinite(r):
                    w.writerow([repr(float(t)), repr(float(r))])

    def write_states_csv(self, path) -> None:
        n = self.report_states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"u_{i + 1}" for i in range(n)])
            for t, u in zip(self.report_times, self.report_states):
                if np.all(np.isfinite(u)):
                    w.writerow([repr(float(t))] + [repr(float(x)) for x in u])


def simulate(system: TimeVaryingSystem, u0, T: float, rel_tol: float = 1e-8,
             report_times=None, frame: str = "auto") -> Trajectory:
    """Integrate the system on [0, T] with dense norm output.

    ``frame="auto"`` integrates skew-perturbed dissipative systems in the
    factored frame and everything else directly; ``"direct"`` forces the
    plain equation u' = A(t) u + F(t, u).
    """
    u0 = np.asarray(u0, dtype=float).reshape(-1)
    if u0.size != system.dim:
        raise ValueError(f"u0 has dimension {u0.size}, system has {system.dim}")
    if report_times is None:
        report_times = log_report_times(T)
    if frame not in ("auto", "direct", "factored"):
        raise ValueError(f"unknown frame {frame!r}")
    if frame == "factored" and not system.factorable:
        raise ValueError("the factored frame needs a DissipativePlusSkew system")
    if frame == "direct" or not system.factorable:
        sol = dopri5(system.rhs, 0.0, u0, T, rel_tol, report_times=report_times,
                     blowup_threshold=BLOWUP_THRESHOLD)
        return Trajectory(sol.times, sol.states, np.linalg.norm(sol.states, axis=1),
                          sol.report_times, sol.report_states,
                          np.linalg.norm(sol.report_states, axis=1),
                          sol.steps_accepted, sol.steps_rejected, sol.min_step,
                          sol.status, sol.message)
    return _simulate_factored(system, u0, T, rel_tol, report_times)


def _simulate_factored(system, u0, T, rel_tol, report_times):
    gamma, F = system.gamma, system.f_of_tu
    rotating = system.dim > 1 and system.omega != 0
    rotate = rotating and not F.equivariant
    if hasattr(F, "scaled"):
        scaled = F.scaled
    else:
        def scaled(t, x, log_scale):
            return _scaled_generic(F, t, x, log_scale)

    if isinstance(gamma, PowerLaw):
        b0, b1, d = gamma.b0, gamma.b1, gamma.d

        def rate(t):
            return b1 / (b0 + t) ** d
    else:
        def rate(t):
            return gamma_eval(gamma, t)

    if rotate:
        V, lam = system._eig()
        Vh = V.conj().T
        freq = -lam * system.omega

    def rhs(t, y):
        s, z = y[0], y[1:]
        if rotate:
            # R(t) = V diag(e^{i freq t}) V^H is real orthogonal, R^T uses the conjugate phase
            phase = np.exp(1j * freq * t)
            w = (V @ (phase * (Vh @ z))).real
            G = (V @ (phase.conj() * (Vh @ scaled(t, w, s)))).real
        else:
            G = scaled(t, z, s)
        q = (z @ G) / (z @ z)
        out = np.empty_like(y)
        out[0] = q - rate(t)
        out[1:] = G - q * z
        return out

    r0 = np.linalg.norm(u0)
    if r0 == 0:
        n_rep = np.asarray(report_times).size
        return Trajectory(np.array([0.0, T]), np.zeros((2, system.dim)), np.zeros(2),
                          np.asarray(report_times, dtype=float), np.zeros((n_rep, system.dim)),
                          np.zeros(n_rep), 0, 0, 0.0)
    y0 = np.concatenate([[np.log(r0)], u0 / r0])
    cap = np.log(BLOWUP_THRESHOLD)
    sol = dopri5(rhs, 0.0, y0, T, rel_tol, report_times=report_times,
                 blowup_threshold=lambda y: y[0] > cap, abs_tol=rel_tol, absolute_only=True)

    def to_u(times, ys):
        logs = ys[:, 0] + np.log(np.linalg.norm(ys[:, 1:], axis=1))
        states = np.empty((len(times), system.dim))
        for k, (t, y) in enumerate(zip(times, ys)):
            z = system.rotation(t) @ y[1:] if rotating else y[1:]
            states[k] = np.exp(y[0]) * z
        return states, np.exp(logs), logs

    states, norms, logs = to_u(sol.times, sol.states)
    ok = ~np.isnan(sol.report_states[:, 0])
    n_rep = sol.report_times.size
    rep_states = np.full((n_rep, system.dim), np.nan)
    rep_norms = np.full(n_rep, np.nan)
    rep_logs = np.full(n_rep, np.nan)
    if np.any(ok):
        rep_states[ok], rep_norms[ok], rep_logs[ok] = to_u(sol.report_times[ok], sol.report_states[ok])
    return Trajectory(sol.times, states, norms, sol.report_times, rep_states, rep_norms,
                      sol.steps_accepted, sol.steps_rejected, sol.min_step, sol.status,
                      sol.message, logs, rep_logs)


def verify_trajectory_envelope(traj: Trajectory, cert) -> DominanceResult:
    """Check ||u(t_i)|| * mu(t_i) < 1 over accepted steps and report times."""
    if not cert.valid:
        raise CertificateInvalid("envelope check refused: certificate is invalid")
    if not traj.completed:
        raise InvariantViolation(
            f"trajectory did not complete ({traj.status}: {traj.message}) under a valid certificate")
    return dominance(cert, *traj.sample_points())
