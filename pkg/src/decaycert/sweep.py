"""Seeded Monte Carlo sweeps over certified instances.

Every instance draws from its own child of one SeedSequence, so a row does
not depend on which worker ran it or in what order rows finished.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np

from .certificate import certify, search_b1
from .comparison import ScalarProblem, check_dominance, dominance, integrate_scalar
from .core import PerturbationBound, PowerLaw
from .evolution import build_system, simulate, verify_trajectory_envelope

NONLINEARITIES = ("radial", "rotated", "truncated")


def _draw_common(rng):
    b0 = float(rng.uniform(0.1, 10.0))
    d = 1.0 if rng.random() < 0.25 else float(1.0 - rng.random())  # (0, 1]
    p = float(3.0 * (1.0 - rng.random()))                           # (0, 3]
    c0 = float(rng.uniform(0.0, 5.0))
    g0 = float(10.0 ** rng.uniform(-2.0, math.log10(2.0)))
    return b0, d, p, c0, g0


@dataclass
class InstanceRow:
    index: int
    dim: int
    nonlinearity: str
    omega: float
    skew_seed: int
    b0: float
    b1: float
    d: float
    c0: float
    p: float
    g0: float
    mu0: float
    valid: bool
    status: str
    dominance_pass: bool
    max_product: float
    at: float
    steps: int


def draw_instance(seed_seq: np.random.SeedSequence, index: int, omega_max: float = 100.0):
    rng = np.random.default_rng(seed_seq)
    b0, d, p, c0, g0 = _draw_common(rng)
    dim = int(rng.integers(1, 9))
    kind = NONLINEARITIES[int(rng.integers(0, len(NONLINEARITIES)))]
    omega = float(rng.uniform(0.0, omega_max))
    skew_seed = int(rng.integers(0, 2**31 - 1))
    direction = rng.standard_normal(dim)
    u0 = g0 * direction / np.linalg.norm(direction)
    return dict(index=index, dim=dim, nonlinearity=kind, omega=omega, skew_seed=skew_seed,
                b0=b0, d=d, c0=c0, p=p, g0=g0, u0=u0)


def run_instance(params: dict, T: float = 1e3, rel_tol: float = 1e-7) -> InstanceRow:
    bound = PerturbationBound(params["c0"], params["p"])
    u0 = np.asarray(params["u0"])
    g0 = float(np.linalg.norm(u0))
    mu0 = (1 - 0.01) / g0
    b1 = search_b1(params["b0"], params["d"], bound, mu0)
    gamma = PowerLaw(params["b0"], b1, params["d"])
    cert = certify(gamma, bound, g0, mu0)
    system = build_system(params["dim"], gamma, params["omega"], params["skew_seed"],
                          params["nonlinearity"], bound, truncation=1.0)
    traj = simulate(system, u0, T, rel_tol)
    if cert.valid and traj.completed:
        res = verify_trajectory_envelope(traj, cert)
    else:
        res = dominance(cert, *traj.sample_points()) if traj.completed else None
    return InstanceRow(params["index"], params["dim"], params["nonlinearity"], params["omega"],
                       params["skew_seed"], params["b0"], b1, params["d"], params["c0"],
                       params["p"], g0, mu0, cert.valid, traj.status,
                       bool(res.passed) if res else False,
                       res.max_product if res else math.inf, res.at if res else math.nan,
                       traj.steps_accepted)


def _run_indexed(args):
    params, T, rel_tol = args
    return run_instance(params, T, rel_tol)


def run_sweep(n: int, seed: int = 0, T: float = 1e3, rel_tol: float = 1e-7,
              jobs: Optional[int] = 1, omega_max: float = 100.0) -> List[InstanceRow]:
    """Draw, certify, simulate and check ``n`` instances; rows in index order."""
    children = np.random.SeedSequence(seed).spawn(n)
    tasks = [(draw_instance(s, i, omega_max), T, rel_tol) for i, s in enumerate(children)]
    if jobs is None or jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_indexed, tasks, chunksize=4))
    else:
        rows = [_run_indexed(t) for t in tasks]
    return sorted(rows, key=lambda r: r.index)


SUMMARY_FIELDS = list(InstanceRow.__dataclass_fields__)


def summary_csv(rows: List[InstanceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
    return buf.getvalue()


# -- scalar oracle draws ----------------------------------------------------------


def scalar_certified_draw(seed_seq, T: float = 1e3, rel_tol: float = 1e-7) -> dict:
    """One random certified scalar instance run through the oracle."""
    rng = np.random.default_rng(seed_seq)
    b0, d, p, c0, g0 = _draw_common(rng)
    bound = PerturbationBound(c0, p)
    mu0 = (1 - 0.01) / g0
    b1 = search_b1(b0, d, bound, mu0)
    gamma = PowerLaw(b0, b1, d)
    cert = certify(gamma, bound, g0, mu0)
    traj = integrate_scalar(ScalarProblem(gamma, c0, None, p, g0), T, rel_tol)
    out = dict(b0=b0, b1=b1, d=d, p=p, c0=c0, g0=g0, mu0=mu0, valid=cert.valid,
               status=traj.status, steps=traj.steps_accepted)
    if traj.blew_up:
        out.update(passed=False, max_product=math.inf)
    else:
        res = check_dominance(traj, cert)
        out.update(passed=res.passed, max_product=res.max_product)
    return out


def scalar_adversarial_draw(seed_seq, T: float = 1e3, rel_tol: float = 1e-7,
                            c0: float = 10.0) -> dict:
    """Violate mu0*g0 < 1 with strong growth and a weak rate; record blow-up."""
    rng = np.random.default_rng(seed_seq)
    b0 = float(rng.uniform(0.1, 10.0))
    b1 = float(rng.uniform(0.01, 0.1))
    d = float(1.0 - rng.random())
    p = float(3.0 * (1.0 - rng.random()))
    mu0 = float(10.0 ** rng.uniform(-1, 1))
    g0 = float(rng.uniform(1.05, 3.0)) / mu0
    gamma = PowerLaw(b0, b1, d)
    cert = certify(gamma, PerturbationBound(c0, p), g0, mu0)
    traj = integrate_scalar(ScalarProblem(gamma, c0, None, p, g0), T, rel_tol)
    return dict(b0=b0, b1=b1, d=d, p=p, mu0=mu0, g0=g0, valid=cert.valid,
                status=traj.status, tau=traj.tau)
