"""Dormand-Prince 5(4) integrator with PI step control and dense output.

By default error is measured relative to the state norm, with an absolute
floor of 1e-300, so decaying solutions keep their relative accuracy.
Blow-up is declared when the norm exceeds a threshold or the step size
underflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension: y(t + s h) = y + h * K^T (P @ [s, s^2, s^3, s^4])
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
# PI controller exponents (Hairer, Norsett & Wanner II, IV.2)
BETA = 0.04
ALPHA = 0.2 - 0.75 * BETA
NORM_FLOOR = 1e-300
BLOWUP_THRESHOLD = 1e12
STEP_UNDERFLOW = 1e-14


def check_tolerance(rel_tol: float) -> None:
    if not (1e-12 <= rel_tol <= 1e-2):
        raise ValueError(f"rel_tol must lie in [1e-12, 1e-2], got {rel_tol!r}")


@dataclass
class Solution:
    times: np.ndarray
    states: np.ndarray
    report_times: np.ndarray
    report_states: np.ndarray
    status: str  # "completed" | "blowup" | "underflow"
    tau: Optional[float]
    steps_accepted: int
    steps_rejected: int
    min_step: float
    nfev: int = 0
    message: str = ""

    @property
    def completed(self) -> bool:
        return self.status == "completed"


def _initial_step(f, t0, y0, f0, direction, r_weight, abs_tol):
    scale = r_weight * np.linalg.norm(y0) + abs_tol
    d0 = np.linalg.norm(y0) / scale
    d1 = np.linalg.norm(f0) / scale
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = f(t0 + direction * h0, y1)
    d2 = np.linalg.norm(f1 - f0) / scale / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def dopri5(
    f: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    y0,
    t_end: float,
    rel_tol: float = 1e-8,
    report_times=None,
    blowup_threshold: Optional[float] = None,
    clamp_nonnegative: bool = False,
    max_steps: int = 10_000_000,
    h_max: Optional[float] = None,
    abs_tol: float = NORM_FLOOR,
    absolute_only: bool = False,
) -> Solution:
    """Integrate y' = f(t, y) from t0 to t_end (either direction).

    The local error norm is compared with ``rel_tol * ||y|| + abs_tol``, or
    with ``abs_tol`` alone when ``absolute_only`` (log-transformed states).
    ``report_times`` are filled by 4th-order dense interpolation on the
    accepted steps.  ``blowup_threshold`` is a norm bound or a predicate on
    the state.  With ``clamp_nonnegative`` each accepted state is
    clipped at 0 from below.
    """
    check_tolerance(rel_tol)
    if callable(blowup_threshold):
        escaped = blowup_threshold
    elif blowup_threshold is not None:
        def escaped(y):
            return np.linalg.norm(y) > blowup_threshold
    r_weight = 0.0 if absolute_only else rel_tol
    y = np.array(y0, dtype=float).reshape(-1)
    t = float(t0)
    direction = 1.0 if t_end >= t0 else -1.0
    span = abs(t_end - t0)
    h_max = span if h_max is None else h_max
    reports = np.array([] if report_times is None else report_times, dtype=float)
    order = np.argsort(direction * reports, kind="stable")
    rep_sorted = reports[order]
    rep_out = np.full((rep_sorted.size, y.size), np.nan)
    ri = 0
    while ri < rep_sorted.size and direction * (rep_sorted[ri] - t) <= 0:
        rep_out[ri] = y
        ri += 1

    ts = [t]
    ys = [y.copy()]
    K = np.empty((7, y.size))
    K[0] = f(t, y)
    nfev = 1
    status, tau, message = "completed", None, ""
    accepted = rejected = 0
    min_step = math.inf
    err_prev = 1e-4
    if span == 0:
        return Solution(np.array(ts), np.array(ys), reports, rep_out[np.argsort(order)],
                        status, tau, 0, 0, 0.0, nfev)
    h = min(_initial_step(f, t, y, K[0], direction, r_weight, abs_tol), h_max)
    nfev += 1

    while direction * (t_end - t) > 0:
        if accepted + rejected >= max_steps:
            status, tau, message = "underflow", t, "maximum step count reached"
            break
        underflow_h = STEP_UNDERFLOW * (abs(t) + 1.0)
        if h < underflow_h:
            status, tau, message = "underflow", t, f"step size {h:.3e} underflowed"
            break
        last = h >= abs(t_end - t)
        if last:
            h = abs(t_end - t)
        hs = direction * h
        for s in range(1, 7):
            dy = K[0] * A[s][0]
            for j in range(1, s):
                if A[s][j]:
                    dy = dy + K[j] * A[s][j]
            K[s] = f(t + C[s] * hs, y + hs * dy)
        nfev += 6
        # trial stages may overflow; such steps are simply rejected
        with np.errstate(invalid="ignore", over="ignore"):
            y_new = y + hs * (B[:6] @ K[:6])
            err_vec = hs * (E @ K)
            scale = r_weight * max(np.linalg.norm(y), np.linalg.norm(y_new)) + abs_tol
            err = np.linalg.norm(err_vec) / scale
        if not np.isfinite(err):
            err = math.inf

        if err <= 1.0:
            t_new = t_end if last else t + hs
            if clamp_nonnegative:
                np.maximum(y_new, 0.0, out=y_new)
            while ri < rep_sorted.size and direction * (rep_sorted[ri] - t_new) <= 0:
                theta = (rep_sorted[ri] - t) / hs
                q = theta * np.array([1.0, theta, theta * theta, theta ** 3])
                rep_out[ri] = y + hs * (K.T @ (P @ q))
                if clamp_nonnegative:
                    np.maximum(rep_out[ri], 0.0, out=rep_out[ri])
                ri += 1
            accepted += 1
            min_step = min(min_step, h)
            t, y = t_new, y_new
            ts.append(t)
            ys.append(y.copy())
            K[0] = K[6] if not clamp_nonnegative else f(t, y)
            if clamp_nonnegative:
                nfev += 1
            if blowup_threshold is not None and escaped(y):
                status, tau, message = "blowup", t, "norm exceeded blow-up threshold"
                break
            if err == 0:
                factor = MAX_FACTOR
            else:
                factor = SAFETY * err ** (-ALPHA) * err_prev ** BETA
                factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
            err_prev = max(err, 1e-4)
            h = min(h * factor, h_max)
        else:
            rejected += 1
            factor = SAFETY * err ** (-0.2) if np.isfinite(err) else MIN_FACTOR
            h = h * max(MIN_FACTOR, factor)

    inverse = np.argsort(order)
    return Solution(np.array(ts), np.array(ys), reports, rep_out[inverse], status, tau,
                    accepted, rejected, min_step if accepted else 0.0, nfev, message)


def log_report_times(T: float, n: int = 200, decades: float = 5.0) -> np.ndarray:
    """t = 0 followed by n-1 log-spaced times ending at T."""
    if n < 2:
        return np.array([0.0, T])
    return np.concatenate([[0.0], np.geomspace(T * 10.0 ** (-decades), T, n - 1)])
