"""Command line front end.

    decaycert certify  --config run.toml --out OUT
    decaycert simulate --config run.toml --out OUT [--states]
    decaycert oracle   --config run.toml --out OUT
    decaycert sweep    --config run.toml --out OUT [--seed N] [--jobs N]
    decaycert levinson --config run.toml --out OUT
    decaycert plot     CSV --kind NormVsEnvelope --certificate cert.json --out OUT

Every run writes a ``manifest.json`` next to its artifacts.  Exit status is
1 for bad input, 2 when a certified instance breaches its envelope and 0
otherwise.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .asymptotic import ExpDecay, PerturbedSystem, PowerDecay, levinson_match, matching_error_report
from .certificate import certificate_from_dict, certify, search_b1
from .comparison import ScalarProblem, check_dominance, integrate_scalar
from .core import CertificateInvalid, InvariantViolation, PerturbationBound, PowerLaw, Tabulated
from .evolution import build_system, simulate, verify_trajectory_envelope
from .integrate import log_report_times
from .plotting import PlotInputError, emit_plot
from .sweep import run_sweep, summary_csv

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2
COMMANDS = ("certify", "simulate", "sweep", "levinson", "oracle", "plot")


class ConfigError(ValueError):
    pass


# -- config -----------------------------------------------------------------------


def load_config(path: Path) -> tuple[dict, str]:
    """Parsed TOML (or certificate JSON) plus the sha256 of the raw bytes."""
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    digest = hashlib.sha256(raw).hexdigest()
    if not raw.strip():
        raise ConfigError(f"{path}: empty config")
    text = raw.decode("utf-8", errors="replace")
    try:
        if path.suffix == ".json":
            doc = json.loads(text)
        else:
            doc = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    if not isinstance(doc, dict) or not doc:
        raise ConfigError(f"{path}: config has no sections")
    return doc, digest


def _section(cfg: dict, name: str, required: bool = True) -> dict:
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"missing [{name}] section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _num(sec: dict, key: str, name: str, default=None) -> float:
    if key not in sec:
        if default is None:
            raise ConfigError(f"[{name}] lacks {key!r}")
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"[{name}].{key} must be a number, got {v!r}")
    return float(v)


def parse_bound(cfg: dict) -> PerturbationBound:
    sec = _section(cfg, "bound")
    return PerturbationBound(_num(sec, "c0", "bound"), _num(sec, "p", "bound"))


def parse_gamma(cfg: dict, bound=None, mu0=None):
    """Power law {b0, b1, d} or tabulated {grid, values}.

    A power law without ``b1`` gets the smallest certifying value.
    """
    sec = _section(cfg, "gamma")
    if "grid" in sec or "values" in sec:
        return Tabulated(tuple(sec.get("grid", ())), tuple(sec.get("values", ())))
    b0, d = _num(sec, "b0", "gamma"), _num(sec, "d", "gamma")
    if "b1" not in sec:
        if bound is None or mu0 is None:
            raise ConfigError("[gamma] lacks 'b1'")
        if not 0 < d <= 1:
            raise ConfigError("b1 search needs d in (0, 1]")
        return PowerLaw(b0, search_b1(b0, d, bound, mu0), d)
    return PowerLaw(b0, _num(sec, "b1", "gamma"), d)


def _initial_state(cfg: dict, seed: int) -> np.ndarray:
    sys_sec = _section(cfg, "system", required=False)
    run = _section(cfg, "run", required=False)
    if "u0" in sys_sec:
        u0 = np.asarray(sys_sec["u0"], dtype=float).reshape(-1)
        if "dim" in sys_sec and int(sys_sec["dim"]) != u0.size:
            raise ConfigError("[system].u0 length differs from dim")
        return u0
    dim = int(_num(sys_sec, "dim", "system", 1.0))
    g0 = _num(run, "g0", "run", _num(sys_sec, "g0", "system", 1.0))
    if dim < 1:
        raise ConfigError("[system].dim must be >= 1")
    direction = np.random.default_rng(seed).standard_normal(dim)
    return g0 * direction / np.linalg.norm(direction)


def _g0(cfg: dict, seed: int) -> float:
    sys_sec = _section(cfg, "system", required=False)
    run = _section(cfg, "run", required=False)
    if "u0" in sys_sec:
        return float(np.linalg.norm(np.asarray(sys_sec["u0"], dtype=float)))
    return _num(run, "g0", "run", _num(sys_sec, "g0", "system", 1.0))


def _mu0(cfg: dict, g0: float):
    run = _section(cfg, "run", required=False)
    if "mu0" in run:
        return _num(run, "mu0", "run")
    return 1.0 if g0 == 0 else 0.99 / g0


def _report_times(cfg: dict, T: float) -> np.ndarray:
    run = _section(cfg, "run", required=False)
    if "report_times" in run:
        return np.asarray(run["report_times"], dtype=float)
    n = int(_num(run, "report_points", "run", 200.0))
    if n < 200:
        raise ConfigError("[run].report_points must be >= 200")
    return log_report_times(T, n)


# -- output helpers ---------------------------------------------------------------


def _finite(x):
    """JSON has no inf/nan: map them to strings."""
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        x = x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_finite(doc), indent=2, allow_nan=False) + "\n")


class Run:
    def __init__(self, command: str, out: Path, seed: int, config_hash: str):
        self.command, self.out, self.seed, self.config_hash = command, out, seed, config_hash
        self.artifacts: list[str] = []
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise ConfigError(f"output directory {out} is not writable")

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def finish(self) -> None:
        write_json(self.out / "manifest.json", {
            "command": self.command, "config_hash": self.config_hash, "seed": self.seed,
            "version": __version__, "artifacts": self.artifacts})


# -- commands ---------------------------------------------------------------------


def cmd_certify(cfg, run: Run, args) -> int:
    if "checks" in cfg:  # a certificate document: re-evaluate its ledger
        cert = certificate_from_dict(cfg)
    else:
        bound = parse_bound(cfg)
        g0 = _g0(cfg, run.seed)
        mu0 = _mu0(cfg, g0)
        gamma = parse_gamma(cfg, bound, mu0)
        if not isinstance(gamma, PowerLaw):
            raise ConfigError("certify needs a power-law [gamma]")
        cert = certify(gamma, bound, g0, mu0)
    run.path("certificate.json").write_text(cert.to_json() + "\n")
    print(f"certificate valid={cert.valid} branch={cert.branch.value}")
    return EXIT_OK


def cmd_simulate(cfg, run: Run, args) -> int:
    bound = parse_bound(cfg)
    u0 = _initial_state(cfg, run.seed)
    g0 = float(np.linalg.norm(u0))
    mu0 = _mu0(cfg, g0)
    gamma = parse_gamma(cfg, bound, mu0)
    sys_sec = _section(cfg, "system", required=False)
    runsec = _section(cfg, "run", required=False)
    T = _num(runsec, "T", "run", 1e3)
    system = build_system(u0.size, gamma, _num(sys_sec, "omega", "system", 0.0),
                          int(_num(sys_sec, "skew_seed", "system", float(run.seed))),
                          str(sys_sec.get("nonlinearity", "radial")), bound,
                          _num(sys_sec, "truncation", "system", 1.0))
    traj = simulate(system, u0, T, args.rel_tol, report_times=_report_times(cfg, T))
    traj.write_csv(run.path("trajectory.csv"))
    if args.states:
        traj.write_states_csv(run.path("states.csv"))

    check = {"diagnostics": traj.diagnostics, "final_norm": float(traj.report_norms[-1])}
    status = EXIT_OK
    cert = certify(gamma, bound, g0, mu0) if isinstance(gamma, PowerLaw) else None
    if cert is not None:
        check["certificate"] = cert.to_dict()
    if cert is not None and cert.valid:
        if not traj.completed:
            check["envelope"] = {"pass": False, "reason": f"trajectory {traj.status}"}
            status = EXIT_INVARIANT
        else:
            res = verify_trajectory_envelope(traj, cert)
            check["envelope"] = {"pass": res.passed, "max_product": res.max_product, "at": res.at}
            status = EXIT_OK if res.passed else EXIT_INVARIANT
            emit_plot(run.out / "trajectory.csv", "NormVsEnvelope", run.path("norm_vs_envelope.svg"),
                      cert, timestamp=not args.no_timestamp)
    else:
        check["envelope"] = {"pass": None, "reason": "no valid certificate"}
    write_json(run.path("envelope_check.json"), check)
    print(f"simulate status={traj.status} final_norm={check['final_norm']!r} "
          f"envelope={check['envelope'].get('pass')}")
    return status


def cmd_oracle(cfg, run: Run, args) -> int:
    bound = parse_bound(cfg)
    g0 = _g0(cfg, run.seed)
    mu0 = _mu0(cfg, g0)
    gamma = parse_gamma(cfg, bound, mu0)
    runsec = _section(cfg, "run", required=False)
    T = _num(runsec, "T", "run", 1e3)
    beta = _num(runsec, "beta", "run", 0.0)
    traj = integrate_scalar(ScalarProblem(gamma, bound.c0, beta if beta else None, bound.p, g0),
                            T, args.rel_tol, report_times=_report_times(cfg, T))
    traj.write_csv(run.path("scalar.csv"))
    traj.write_sidecar(run.path("scalar.json"))
    status = EXIT_OK
    if isinstance(gamma, PowerLaw):
        cert = certify(gamma, bound, g0, mu0)
        doc = {"certificate": cert.to_dict()}
        if beta:
            doc["dominance"] = {"pass": None, "reason": "forcing term outside the closed-form certificate"}
        else:
            try:
                res = check_dominance(traj, cert)
                doc["dominance"] = {"pass": res.passed, "max_product": res.max_product, "at": res.at}
                status = EXIT_OK if res.passed else EXIT_INVARIANT
            except CertificateInvalid as exc:
                doc["dominance"] = {"pass": None, "reason": str(exc)}
            except InvariantViolation as exc:
                doc["dominance"] = {"pass": False, "reason": str(exc)}
                status = EXIT_INVARIANT
    else:
        doc = {"dominance": {"pass": None, "reason": "tabulated rate: no closed-form certificate"}}
    write_json(run.path("dominance.json"), doc)
    print(f"oracle status={traj.status} dominance={doc['dominance'].get('pass')}")
    return status


def cmd_sweep(cfg, run: Run, args) -> int:
    sec = _section(cfg, "sweep", required=False)
    n = int(_num(sec, "n", "sweep", 200.0))
    T = _num(sec, "T", "sweep", 1e3)
    omega_max = _num(sec, "omega_max", "sweep", 100.0)
    if n < 1:
        raise ConfigError("[sweep].n must be >= 1")
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    rows = run_sweep(n, run.seed, T, args.rel_tol, jobs=jobs, omega_max=omega_max)
    run.path("summary.csv").write_text(summary_csv(rows))
    breaches = [r.index for r in rows if r.valid and not r.dominance_pass]
    print(f"sweep n={n} valid={sum(r.valid for r in rows)} breaches={len(breaches)}")
    if breaches:
        print(f"envelope breached by certified instances {breaches}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _perturbation(sec: dict, n: int):
    R = np.asarray(sec.get("R", np.eye(n).tolist()), dtype=float)
    if R.shape != (n, n):
        raise ConfigError(f"[levinson].R must be {n}x{n}")
    family = sec.get("family", "exp")
    if family == "exp":
        return ExpDecay(R, _num(sec, "alpha", "levinson", 1.0))
    if family == "power":
        return PowerDecay(R, _num(sec, "q", "levinson", 2.0))
    raise ConfigError(f"[levinson].family must be 'exp' or 'power', got {family!r}")


def cmd_levinson(cfg, run: Run, args) -> int:
    sec = _section(cfg, "levinson")
    if "A" not in sec or "u0" not in sec:
        raise ConfigError("[levinson] needs 'A' and 'u0'")
    A = np.atleast_2d(np.asarray(sec["A"], dtype=float))
    u0 = np.asarray(sec["u0"], dtype=float).reshape(-1)
    if A.shape != (u0.size, u0.size):
        raise ConfigError("[levinson].A must be square and match u0")
    system = PerturbedSystem(A, _perturbation(sec, u0.size),
                             c=_num(sec, "c", "levinson", 0.0) or None)
    pair = levinson_match(system, u0, sec.get("t_start"), sec.get("t_max"),
                          tol=_num(sec, "tol", "levinson", 1e-10))
    samples = np.asarray(sec.get("sample_times", [0.0, 1.0, 2.0, 5.0, 10.0]), dtype=float)
    report = matching_error_report(pair, samples)
    report.write_csv(run.path("matching.csv"))
    tol = 1e-6
    ok = bool(np.all(report.ratio <= 1 + tol))
    write_json(run.path("levinson.json"), {
        "t_start": pair.t_start, "t_max": pair.t_max, "iterations": pair.iterations,
        "contraction_bound": pair.contraction_bound, "contraction_factor": pair.contraction_factor,
        "differences": pair.differences, "truncation_budget": pair.truncation_budget,
        "propagator_bound": system.c, "b_norm_integral": system.b_norm_integral,
        "v0": pair.v(0.0)[0].tolist(), "sup_v": pair.sup_v,
        "chain": report.chain.tolist(), "limit": report.limit, "ratios_ok": ok})
    emit_plot(run.out / "matching.csv", "MatchingError", run.path("matching_error.svg"),
              timestamp=not args.no_timestamp)
    print(f"levinson iterations={pair.iterations} max_ratio={float(report.ratio.max())!r}")
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_plot(args) -> int:
    cert = None
    if args.certificate is not None:
        cert = certificate_from_dict(json.loads(Path(args.certificate).read_text()))
    out = Path(args.out)
    if out.suffix != ".svg":
        out.mkdir(parents=True, exist_ok=True)
        out = out / ("norm_vs_envelope.svg" if args.kind == "NormVsEnvelope" else "matching_error.svg")
    emit_plot(args.csv, args.kind, out, cert, timestamp=not args.no_timestamp)
    print(f"wrote {out}")
    return EXIT_OK


HANDLERS = {"certify": cmd_certify, "simulate": cmd_simulate, "oracle": cmd_oracle,
            "sweep": cmd_sweep, "levinson": cmd_levinson}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decaycert", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in HANDLERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", default=Path("out"), type=Path)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--rel-tol", type=float, default=None, dest="rel_tol")
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--no-timestamp", action="store_true", dest="no_timestamp")
        p.add_argument("--states", action="store_true", help="also write t,u_1..u_n")
    p = sub.add_parser("plot")
    p.add_argument("csv", type=Path)
    p.add_argument("--kind", required=True, choices=["NormVsEnvelope", "MatchingError"])
    p.add_argument("--certificate", type=Path, default=None)
    p.add_argument("--out", default=Path("out"), type=Path)
    p.add_argument("--no-timestamp", action="store_true", dest="no_timestamp")
    return parser


def _resolve(args, cfg) -> None:
    run = cfg.get("run", {}) if isinstance(cfg.get("run", {}), dict) else {}
    sweep = cfg.get("sweep", {}) if isinstance(cfg.get("sweep", {}), dict) else {}
    if args.seed is None:
        args.seed = int(sweep.get("seed", run.get("seed", 0)))
    if args.rel_tol is None:
        args.rel_tol = float(run.get("rel_tol", sweep.get("rel_tol", 1e-7 if args.command == "sweep" else 1e-8)))
    if not 1e-12 <= args.rel_tol <= 1e-2:
        raise ConfigError(f"rel_tol must lie in [1e-12, 1e-2], got {args.rel_tol!r}")
    if args.jobs is not None and args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "plot":
            return cmd_plot(args)
        cfg, digest = load_config(args.config)
        _resolve(args, cfg)
        run = Run(args.command, args.out, args.seed, digest)
        status = HANDLERS[args.command](cfg, run, args)
        run.finish()
        return status
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, PlotInputError, ValueError, TypeError, KeyError,
            OSError, CertificateInvalid, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
