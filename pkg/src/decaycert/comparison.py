"""Brute-force scalar oracle for the comparison inequality.

Integrates the extremal case g' = -gamma(t) g + a(t) g**(1+p) + beta(t)
and checks it against a certificate's envelope.  Positive solutions are
integrated as y = log g,

    y' = -gamma(t) + a(t) exp(p y) + beta(t) exp(-y),

with absolute error control on y (relative control on g), so g can decay
far below the double range without losing the comparison with 1/mu.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from .core import (
    CertificateInvalid,
    ForcingBound,
    GammaModel,
    InvariantViolation,
    as_function,
    gamma_eval,
    log_dominance,
)
from .integrate import BLOWUP_THRESHOLD, dopri5, log_report_times


@dataclass
class ScalarProblem:
    gamma: GammaModel
    a: Union[float, Callable]
    beta: Union[ForcingBound, Callable, float, None]
    p: float
    g0: float

    def __post_init__(self):
        if not self.g0 >= 0:
            raise ValueError("g0 must be >= 0")
        if not self.p > 0:
            raise ValueError("p must be > 0")
        self.a = as_function(self.a)
        if not isinstance(self.beta, ForcingBound):
            self.beta = ForcingBound(self.beta)

    def rhs(self, t: float, g: np.ndarray) -> np.ndarray:
        gv = g[0]
        growth = self.a(t) * gv ** (1 + self.p) if gv > 0 else 0.0
        return np.array([-gamma_eval(self.gamma, t) * gv + growth + self.beta(t)])

    def log_rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        yv = y[0]
        with np.errstate(over="ignore"):
            out = -gamma_eval(self.gamma, t) + self.a(t) * math.exp(min(self.p * yv, 709.0))
            if not self.beta.is_zero:
                out += self.beta(t) * math.exp(min(-yv, 709.0))
        return np.array([out])


@dataclass
class ScalarTrajectory:
    times: np.ndarray
    values: np.ndarray
    status: str  # "Completed" | "BlowUp"
    tau: Optional[float] = None
    steps_accepted: int = 0
    steps_rejected: int = 0
    report_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    report_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    log_values: Optional[np.ndarray] = None
    report_log_values: Optional[np.ndarray] = None

    def __post_init__(self):
        with np.errstate(divide="ignore"):
            if self.log_values is None:
                self.log_values = np.log(self.values)
            if self.report_log_values is None:
                self.report_log_values = np.log(self.report_values)

    @property
    def blew_up(self) -> bool:
        return self.status == "BlowUp"

    def sample_points(self):
        """Times and log g over accepted steps and computed report times."""
        ok = ~np.isnan(self.report_log_values)
        return (np.concatenate([self.times, self.report_times[ok]]),
                np.concatenate([self.log_values, self.report_log_values[ok]]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "g"])
            for t, g in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(g))])

    def sidecar(self) -> dict:
        return {"status": self.status, "tau": self.tau,
                "steps_accepted": self.steps_accepted, "steps_rejected": self.steps_rejected}

    def write_sidecar(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2)
            fh.write("\n")


def integrate_scalar(problem: ScalarProblem, T: float, rel_tol: float = 1e-8,
                     report_times=None, blowup_threshold: float = BLOWUP_THRESHOLD) -> ScalarTrajectory:
    """Adaptive solution of the comparison ODE with equality on [0, T].

    Escape above ``blowup_threshold`` or step-size underflow is reported as
    BlowUp at the last accepted time.  Zero initial data is integrated in g
    itself with g clamped at zero.
    """
    if not T > 0:
        raise ValueError("T must be > 0")
    if report_times is None:
        report_times = log_report_times(T)
    if problem.g0 > 0:
        log_cap = math.log(blowup_threshold)
        sol = dopri5(problem.log_rhs, 0.0, [math.log(problem.g0)], T, rel_tol,
                     report_times=report_times, blowup_threshold=lambda y: y[0] > log_cap,
                     abs_tol=rel_tol, absolute_only=True)
        logs, rep_logs = sol.states[:, 0], sol.report_states[:, 0]
        with np.errstate(over="ignore"):
            values, rep_values = np.exp(logs), np.exp(rep_logs)
    else:
        sol = dopri5(problem.rhs, 0.0, [0.0], T, rel_tol, report_times=report_times,
                     blowup_threshold=blowup_threshold, clamp_nonnegative=True)
        values, rep_values = sol.states[:, 0], sol.report_states[:, 0]
        logs = rep_logs = None
    status = "Completed" if sol.completed else "BlowUp"
    return ScalarTrajectory(sol.times, values, status, sol.tau, sol.steps_accepted,
                            sol.steps_rejected, sol.report_times, rep_values, logs, rep_logs)


class DominanceResult(NamedTuple):
    passed: bool
    max_product: float
    at: float


def dominance(cert, times, log_norms) -> DominanceResult:
    """Strict g * mu < 1 test, done on log g + log mu."""
    logs = log_dominance(cert, times, log_norms)
    if logs.size == 0:
        return DominanceResult(True, 0.0, 0.0)
    i = int(np.argmax(logs))
    with np.errstate(over="ignore"):
        top = float(np.exp(logs[i]))
    return DominanceResult(bool(np.all(logs < 0.0)), top, float(np.asarray(times)[i]))


def check_dominance(traj: ScalarTrajectory, cert) -> DominanceResult:
    """Check g(t_i) * mu(t_i) < 1 at every accepted step and report time."""
    if not cert.valid:
        raise CertificateInvalid("dominance check refused: certificate is invalid")
    if traj.blew_up:
        raise InvariantViolation(
            f"solution blew up at t={traj.tau} although the certificate is valid")
    return dominance(cert, *traj.sample_points())
