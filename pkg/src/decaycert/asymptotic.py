"""L1-perturbed constant-coefficient systems v' = (A + B(t)) v.

Two results live here: the growth bound ||v(t)|| <= exp(int ||B||) ||v0||
for dissipative A, and asymptotic matching of v with u(t) = exp(tA) u0
through the tail integral equation

    v(t) = exp(tA) u0 - int_t^inf exp((t - s)A) B(s) v(s) ds,

solved by Picard iteration on Chebyshev panels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.linalg import schur

from .evolution import numerical_abscissa
from .integrate import dopri5

# -- matrix exponential ----------------------------------------------------------

_PADE_THETA = {3: 1.495585217958292e-2, 5: 2.539398330063230e-1, 7: 9.504178996162932e-1,
               9: 2.097847961257068e0, 13: 5.371920351148152e0}
_PADE_B = {
    3: [120.0, 60.0, 12.0, 1.0],
    5: [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
    7: [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0],
    9: [17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0],
    13: [64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0, 670442572800.0,
         33522128640.0, 1323241920.0, 40840800.0, 960960.0, 16380.0, 182.0, 1.0],
}
NORMALITY_TOL = 1e-12


def is_normal(A: np.ndarray) -> bool:
    scale = np.linalg.norm(A, 2) ** 2
    return np.linalg.norm(A @ A.T - A.T @ A, 2) <= NORMALITY_TOL * scale


def _pade(A: np.ndarray, m: int) -> np.ndarray:
    b = _PADE_B[m]
    n = A.shape[0]
    eye = np.eye(n)
    A2 = A @ A
    if m == 13:
        A4 = A2 @ A2
        A6 = A4 @ A2
        U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
                 + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * eye)
        V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * eye
    else:
        powers = [eye, A2]
        for _ in range(2, (m + 1) // 2):
            powers.append(powers[-1] @ A2)
        U = sum(b[k] * powers[k // 2] for k in range(m, 0, -2))
        U = A @ U
        V = sum(b[k] * powers[k // 2] for k in range(m - 1, -1, -2))
    return np.linalg.solve(V - U, V + U)


def _expm_pade(A: np.ndarray) -> np.ndarray:
    norm1 = np.linalg.norm(A, 1)
    for m in (3, 5, 7, 9):
        if norm1 <= _PADE_THETA[m]:
            return _pade(A, m)
    s = max(0, int(math.ceil(math.log2(norm1 / _PADE_THETA[13])))) if norm1 > 0 else 0
    X = _pade(A / 2.0**s, 13)
    for _ in range(s):
        X = X @ X
    return X


def matrix_exponential(A, t: float = 1.0) -> np.ndarray:
    """exp(tA): unitary diagonalisation for normal A, else scaling and squaring
    with the degree-13 diagonal Pade approximant."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    M = t * A
    if not np.any(M):
        return np.eye(A.shape[0])
    if is_normal(M):
        T, Z = schur(M.astype(complex), output="complex")
        out = (Z * np.exp(np.diag(T))) @ Z.conj().T
        return out.real
    return _expm_pade(M)


class UnboundedSemigroup(ValueError):
    """The sampled propagator norm is still growing at the horizon."""


def propagator_bound(A, horizon: float = 100.0, samples: int = 200,
                     backward: bool = False, safety: float = 1.01) -> float:
    """Sampled estimate of sup_{0<=t<=horizon} ||exp(+-tA)||, times ``safety``.

    Not a proof.  Raises :class:`UnboundedSemigroup` when the largest norm of
    the last decade exceeds everything before it by more than 1%.
    """
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    sign = -1.0 if backward else 1.0
    times = np.concatenate([[0.0], np.geomspace(horizon * 1e-4, horizon, samples - 1)])
    norms = np.array([np.linalg.norm(matrix_exponential(A, sign * t), 2) for t in times])
    late = times >= horizon / 10
    if norms[late].max() > 1.01 * norms[~late].max():
        raise UnboundedSemigroup(
            f"||exp({'-' if backward else ''}tA)|| grows to {norms[late].max():.3g} near t={horizon:g}")
    return safety * float(norms.max())


# -- perturbation families -------------------------------------------------------


@dataclass(frozen=True)
class ExpDecay:
    """B(t) = exp(-alpha t) R."""

    R: np.ndarray = field(compare=False)
    alpha: float = 1.0

    def __call__(self, t):
        return math.exp(-self.alpha * t) * np.atleast_2d(self.R)

    def norm(self, t):
        return np.exp(-self.alpha * np.asarray(t)) * np.linalg.norm(np.atleast_2d(self.R), 2)

    def tail(self, t):
        """int_t^inf ||B(s)|| ds."""
        return np.linalg.norm(np.atleast_2d(self.R), 2) * np.exp(-self.alpha * np.asarray(t)) / self.alpha


@dataclass(frozen=True)
class PowerDecay:
    """B(t) = (1 + t)^(-q) R with q > 1."""

    R: np.ndarray = field(compare=False)
    q: float = 2.0

    def __post_init__(self):
        if not self.q > 1:
            raise ValueError("PowerDecay needs q > 1 for an integrable norm")

    def __call__(self, t):
        return (1.0 + t) ** (-self.q) * np.atleast_2d(self.R)

    def norm(self, t):
        return (1.0 + np.asarray(t)) ** (-self.q) * np.linalg.norm(np.atleast_2d(self.R), 2)

    def tail(self, t):
        return (np.linalg.norm(np.atleast_2d(self.R), 2) * (1.0 + np.asarray(t)) ** (1 - self.q)
                / (self.q - 1))


@dataclass(frozen=True)
class TabulatedB:
    """B(t) by linear interpolation of sampled matrices; no tail control."""

    times: np.ndarray = field(compare=False)
    matrices: np.ndarray = field(compare=False)

    def __call__(self, t):
        ts = np.asarray(self.times)
        if t <= ts[0]:
            return self.matrices[0]
        if t >= ts[-1]:
            return self.matrices[-1]
        i = int(np.searchsorted(ts, t)) - 1
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1 - w) * self.matrices[i] + w * self.matrices[i + 1]

    def norm(self, t):
        return np.array([np.linalg.norm(self(float(s)), 2) for s in np.atleast_1d(t)])

    tail = None


@dataclass
class PerturbedSystem:
    a_const: np.ndarray
    b: object
    b_norm_integral: Optional[float] = None
    c: Optional[float] = None

    def __post_init__(self):
        self.a_const = np.atleast_2d(np.asarray(self.a_const, dtype=float))
        if self.b_norm_integral is None:
            if getattr(self.b, "tail", None) is None:
                raise ValueError("tabulated B needs b_norm_integral supplied explicitly")
            self.b_norm_integral = float(self.b.tail(0.0))
        if not (math.isfinite(self.b_norm_integral) and self.b_norm_integral >= 0):
            raise ValueError("int ||B|| must be finite and >= 0")
        if self.c is None:
            self.c = propagator_bound(self.a_const)
        if self.c < 1:
            raise ValueError("propagator bound c must be >= 1")

    @property
    def dim(self) -> int:
        return self.a_const.shape[0]

    def rhs(self, t, v):
        return self.a_const @ v + self.b(t) @ v


def perturbed_stability_bound(sys: PerturbedSystem, v0) -> float:
    """c1 * ||v0|| with c1 = exp(int_0^inf ||B||); needs Re(Av, v) <= 0."""
    if numerical_abscissa(sys.a_const) > 1e-12:
        raise ValueError("the growth bound needs a dissipative A (numerical abscissa <= 0)")
    return math.exp(sys.b_norm_integral) * float(np.linalg.norm(v0))


def simulate_perturbed(sys: PerturbedSystem, v0, t_end: float, rel_tol: float = 1e-10,
                       report_times=None, t0: float = 0.0):
    return dopri5(sys.rhs, t0, np.asarray(v0, dtype=float), t_end, rel_tol,
                  report_times=report_times)


# -- Chebyshev panels -------------------------------------------------------------

PANEL_ORDER = 16


def _reference_panel(m: int):
    x = np.cos(np.pi * np.arange(m) / (m - 1))[::-1]  # Chebyshev-Lobatto, ascending
    V = cheb.chebvander(x, m - 1)
    Vinv = np.linalg.inv(V)
    G = np.empty((m, m))
    for k in range(m):
        e = np.zeros(m)
        e[k] = 1.0
        P = cheb.chebint(e)
        G[:, k] = cheb.chebval(1.0, P) - cheb.chebval(x, P)
    return x, Vinv, G @ Vinv  # S[i, j]: weight of f_j in int_{x_i}^1 f


_REF = _reference_panel(PANEL_ORDER)


@dataclass
class _Panels:
    edges: np.ndarray

    def __post_init__(self):
        x, self.Vinv, S = _REF
        a, b = self.edges[:-1], self.edges[1:]
        half = 0.5 * (b - a)
        self.nodes = ((a + b)[:, None] * 0.5 + half[:, None] * x[None, :])
        self.S = half[:, None, None] * S[None, :, :]
        self.weights = self.S[:, 0, :]  # full-panel weights

    @property
    def t(self) -> np.ndarray:
        return self.nodes.ravel()

    def tail_integral(self, f: np.ndarray) -> np.ndarray:
        """int_{t_i}^{t_max} f for every node; f has shape (panels, m, n)."""
        within = np.einsum("pij,pjn->pin", self.S, f)
        full = np.einsum("pj,pjn->pn", self.weights, f)
        after = np.concatenate([np.cumsum(full[::-1], axis=0)[::-1][1:], np.zeros((1, f.shape[2]))])
        return within + after[:, None, :]

    def operator_row_sums(self, E: np.ndarray, G: np.ndarray, factored: bool) -> np.ndarray:
        """sum_j |W_ij| ||E_i G_j|| for the discretised tail operator W.

        With ``factored`` the block norm splits as ||E_i|| ||G_j|| exactly
        (scalar or unitary E) and the sums cost O(N) via suffix sums.
        """
        P, m = self.nodes.shape
        absS, absw = np.abs(self.S), np.abs(self.weights)
        if factored:
            e = np.linalg.norm(E, 2, axis=(1, 2)).reshape(P, m)
            g = np.linalg.norm(G, 2, axis=(1, 2)).reshape(P, m)
            within = np.einsum("pij,pj->pi", absS, g)
            full = (absw * g).sum(axis=1)
            after = np.concatenate([np.cumsum(full[::-1])[::-1][1:], [0.0]])
            return (e * (within + after[:, None])).ravel()
        out = np.empty(P * m)
        for p in range(P):
            later = G[(p + 1) * m:]
            w_later = absw[p + 1:].ravel()
            own = G[p * m:(p + 1) * m]
            for r in range(m):
                Ei = E[p * m + r]
                total = float(absS[p, r] @ np.linalg.norm(Ei @ own, 2, axis=(1, 2)))
                if later.size:
                    total += float(w_later @ np.linalg.norm(Ei @ later, 2, axis=(1, 2)))
                out[p * m + r] = total
        return out

    def evaluate(self, values: np.ndarray, t) -> np.ndarray:
        """Interpolate node values (panels, m, n) at times t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        p = np.clip(np.searchsorted(self.edges, t, side="right") - 1, 0, len(self.edges) - 2)
        a, b = self.edges[p], self.edges[p + 1]
        x = (2 * t - a - b) / (b - a)
        coeffs = np.einsum("ij,pjn->pin", self.Vinv, values)
        out = np.empty((t.size, values.shape[2]))
        for k in range(t.size):
            out[k] = cheb.chebval(x[k], coeffs[p[k]])
        return out


def _adaptive_edges(fn, t0, t1, tol, max_width=2.0, max_panels=4000):
    x, Vinv, _ = _REF
    # graded start: width grows like t so slowly decaying tails stay cheap
    todo = [t0]
    while todo[-1] < t1:
        todo.append(min(t1, todo[-1] + max_width * max(1.0, todo[-1] / 8.0)))
    pending = list(zip(todo[:-1], todo[1:]))
    done = []
    length = t1 - t0
    while pending:
        a, b = pending.pop()
        vals = np.array([fn(0.5 * (a + b) + 0.5 * (b - a) * xi) for xi in x])
        coeffs = Vinv @ vals.reshape(len(x), -1)
        tail = np.abs(coeffs[-3:]).max()
        if tail <= tol / length or len(done) + len(pending) > max_panels:
            done.append((a, b))
        else:
            mid = 0.5 * (a + b)
            pending += [(a, mid), (mid, b)]
    done.sort()
    return np.array([done[0][0]] + [e[1] for e in done])


# -- Levinson matching ------------------------------------------------------------


@dataclass
class MatchedPair:
    u0: np.ndarray
    system: PerturbedSystem
    t_start: float
    t_max: float
    panels: _Panels = field(repr=False)
    v_nodes: np.ndarray = field(repr=False)
    iterations: int = 0
    differences: List[float] = field(default_factory=list)
    contraction_bound: float = 0.0
    contraction_factor: float = 0.0
    truncation_budget: float = 0.0
    tol: float = 0.0
    backward_times: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    backward_states: np.ndarray = field(default_factory=lambda: np.empty((0, 0)), repr=False)

    @property
    def observed_ratios(self) -> np.ndarray:
        d = np.asarray(self.differences)
        return d[1:] / d[:-1] if d.size > 1 else np.empty(0)

    @property
    def error_budget(self) -> float:
        return self.tol + self.truncation_budget

    @property
    def sup_v(self) -> float:
        norms = [np.linalg.norm(self.v_nodes, axis=2).max()]
        if self.backward_states.size:
            norms.append(np.linalg.norm(self.backward_states, axis=1).max())
        return float(max(norms))

    def u(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        A = self.system.a_const
        return np.array([matrix_exponential(A, s) @ self.u0 for s in t])

    def v(self, t) -> np.ndarray:
        """Matched solution: Picard panels on [t_start, t_max], the ODE outside."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t.size, self.u0.size))
        end = self.panels.edges[-1] * (1 + 1e-12)
        fwd = (t >= self.t_start) & (t <= end)
        if np.any(fwd):
            out[fwd] = self.panels.evaluate(self.v_nodes, t[fwd])
        late = t > end
        if np.any(late):
            v_end = self.panels.evaluate(self.v_nodes, [self.t_max])[0]
            sol = simulate_perturbed(self.system, v_end, float(t[late].max()), 1e-12,
                                     report_times=t[late], t0=self.t_max)
            out[late] = sol.report_states
        early = t < self.t_start
        if np.any(early):
            v_start = self.panels.evaluate(self.v_nodes, [self.t_start])[0]
            sol = simulate_perturbed(self.system, v_start, float(t[early].min()), 1e-12,
                                     report_times=t[early], t0=self.t_start)
            out[early] = sol.report_states
        return out

    def tail_bound(self, t) -> np.ndarray:
        """C int_t^inf ||B|| with C = c * sup ||v||."""
        return self.system.c * self.sup_v * self.system.b.tail(np.asarray(t, dtype=float))


def choose_t_start(sys: PerturbedSystem, target: float = 0.9) -> float:
    """Smallest sample time at which c * int_t^inf ||B|| < target."""
    candidates = np.concatenate([[0.0], np.geomspace(1e-3, 1e6, 2000)])
    ok = sys.c * sys.b.tail(candidates) < target
    if not np.any(ok):
        raise ValueError("no contraction up to t=1e6")
    return float(candidates[np.argmax(ok)])


def levinson_match(sys: PerturbedSystem, u0, t_start: Optional[float] = None,
                   t_max: Optional[float] = None, tol: float = 1e-10,
                   max_iter: int = 500) -> MatchedPair:
    """Solution of the perturbed system asymptotic to u(t) = exp(tA) u0.

    Picard iteration runs on [t_start, t_max]; the neglected integral over
    [t_max, inf) is bounded by c * sup||v|| * int_{t_max}^inf ||B|| and kept
    as ``truncation_budget``.  The solution is then continued back to t = 0
    by integrating the differential equation.
    """
    if getattr(sys.b, "tail", None) is None:
        raise ValueError("matching needs a perturbation family with a closed-form tail")
    A = sys.a_const
    u0 = np.asarray(u0, dtype=float).reshape(-1)
    n = u0.size
    if n != sys.dim:
        raise ValueError("u0 dimension does not match A")
    # the integral equation propagates backwards in time as well
    back = propagator_bound(A, backward=True)
    if back > 1.02 * sys.c:
        raise ValueError(f"||exp(-tA)|| reaches {back:.3g} > c={sys.c:.3g}; "
                         "matching needs a group bounded in both directions")
    if t_start is None:
        t_start = choose_t_start(sys)
    q = sys.c * float(sys.b.tail(t_start))
    if q >= 1:
        raise ValueError(f"contraction factor {q:.3g} >= 1 at t_start={t_start}")
    if t_max is None:
        scale = np.linalg.norm(u0) * sys.c / (1 - q)
        candidates = t_start + np.geomspace(1.0, 1e5, 500)
        small = sys.c * scale * sys.b.tail(candidates) <= 0.1 * tol
        t_max = float(candidates[np.argmax(small)] if np.any(small) else candidates[-1])
    if not t_max > t_start:
        raise ValueError("t_max must exceed t_start")

    normal = is_normal(A)

    def expA(s):
        return matrix_exponential(A, s)

    def integrand0(s):
        return expA(-s) @ sys.b(s) @ expA(s) @ u0

    edges = _adaptive_edges(integrand0, t_start, t_max, tol / 10)
    panels = _Panels(edges)
    tn = panels.t
    E = np.array([expA(s) for s in tn])
    G = np.array([expA(-s) @ sys.b(s) for s in tn])
    shape = panels.nodes.shape + (n,)

    v = np.einsum("kij,j->ki", E, u0)
    diffs = []
    for it in range(1, max_iter + 1):
        h = np.einsum("kij,kj->ki", G, v).reshape(shape)
        integral = panels.tail_integral(h).reshape(-1, n)
        v_new = np.einsum("kij,kj->ki", E, u0[None, :] - integral)
        diff = float(np.linalg.norm(v_new - v, axis=1).max())
        diffs.append(diff)
        v = v_new
        if diff <= tol:
            break
    else:
        raise ArithmeticError(f"Picard iteration did not reach tol={tol} in {max_iter} steps")

    # induced sup-norm of the discretised integral operator
    factored = n == 1 or (normal and np.allclose(A, -A.T))
    contraction = float(panels.operator_row_sums(E, G, factored).max())

    pair = MatchedPair(u0, sys, float(t_start), float(t_max), panels, v.reshape(shape),
                       iterations=it, differences=diffs, contraction_bound=q,
                       contraction_factor=contraction, tol=tol)
    if t_start > 0:
        grid = np.linspace(t_start, 0.0, 201)
        sol = simulate_perturbed(sys, v[0], 0.0, 1e-12, report_times=grid, t0=t_start)
        pair.backward_times = grid[::-1]
        pair.backward_states = sol.report_states[::-1]
    pair.truncation_budget = sys.c * pair.sup_v * float(sys.b.tail(t_max))
    return pair


@dataclass
class MatchingReport:
    t: np.ndarray
    error: np.ndarray
    bound: np.ndarray
    ratio: np.ndarray
    chain: np.ndarray  # int_t^inf ||exp((t-s)A)|| ||B(s)|| ||v(s)|| ds, nan below t_start
    limit: dict

    def rows(self):
        return list(zip(self.t, self.error, self.bound, self.ratio))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "error", "bound", "ratio"])
            for row in self.rows():
                w.writerow([repr(float(x)) for x in row])


def _chain_integral(pair: MatchedPair, t: float) -> float:
    if t < pair.t_start:
        return math.nan
    A = pair.system.a_const
    x, w = np.polynomial.legendre.leggauss(20)
    edges = pair.panels.edges
    cuts = np.concatenate([[t], edges[edges > t]])
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        s = 0.5 * (a + b) + 0.5 * (b - a) * x
        vs = np.linalg.norm(pair.panels.evaluate(pair.v_nodes, s), axis=1)
        prop = np.array([np.linalg.norm(matrix_exponential(A, t - si), 2) for si in s])
        total += 0.5 * (b - a) * float(np.sum(w * prop * pair.system.b.norm(s) * vs))
    return total + pair.truncation_budget


def limit_check(times, norms, b_norm, sup_v: float, tol: float = 1e-9) -> dict:
    """Evidence that lim ||v(t)|| exists.

    From d||v||/dt <= ||B|| ||v||, the function ||v(t)|| - int_0^t ||B|| ||v||
    is nonincreasing and bounded below, so ||v|| converges.  Checks that
    monotonicity and the one-sided increment bound between samples.
    """
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    order = np.argsort(times)
    times, norms = times[order], norms[order]
    x, w = np.polynomial.legendre.leggauss(10)
    pieces = []
    for a, b in zip(times[:-1], times[1:]):
        s = 0.5 * (a + b) + 0.5 * (b - a) * x
        pieces.append(0.5 * (b - a) * float(np.sum(w * b_norm(s))))
    pieces = np.array(pieces)
    increments = np.diff(norms)
    increment_ok = bool(np.all(increments <= pieces * sup_v + tol))
    # trapezoid for int ||B|| ||v||; its error is at most pieces * |increment|
    weighted = np.concatenate([[0.0], np.cumsum(pieces * 0.5 * (norms[:-1] + norms[1:]))])
    monotone = norms - weighted
    monotone_ok = bool(np.all(np.diff(monotone) <= tol + pieces * np.abs(increments)))
    late = times >= times[-1] / 10
    spread = float(norms[late].max() - norms[late].min()) if np.any(late) else 0.0
    return {"increments_bounded": increment_ok, "monotone_part_nonincreasing": monotone_ok,
            "limit_estimate": float(norms[-1]), "last_decade_spread": spread}


def matching_error_report(pair: MatchedPair, sample_times) -> MatchingReport:
    t = np.asarray(sample_times, dtype=float)
    err = np.linalg.norm(pair.v(t) - pair.u(t), axis=1)
    bound = np.asarray(pair.tail_bound(t), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, err / bound, 0.0)
    chain = np.array([_chain_integral(pair, s) for s in t])
    tail_t = np.unique(np.concatenate([pair.panels.t, pair.backward_times]))
    limit = limit_check(tail_t, np.linalg.norm(pair.v(tail_t), axis=1), pair.system.b.norm,
                        pair.sup_v, tol=10 * pair.error_budget)
    return MatchingReport(t, err, bound, ratio, chain, limit)
