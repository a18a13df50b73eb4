"""Static SVG figures for trajectory and matching reports."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core import envelope_eval  # noqa: E402

NORM_HEADERS = (["t", "norm"], ["t", "g"])
MATCHING_HEADER = ["t", "error", "bound", "ratio"]


class PlotInputError(ValueError):
    pass


def read_columns(path, expected):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PlotInputError(f"{path}: empty file")
    header = rows[0]
    if header not in [list(e) for e in expected]:
        raise PlotInputError(f"{path}: header {header} not one of {list(expected)}")
    if len(rows) < 2:
        raise PlotInputError(f"{path}: no data rows")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return header, data


def _style(ax):
    ax.set_yscale("log")
    ax.grid(True, which="major", alpha=0.3)
    ax.legend(frameon=False)


def _save(fig, out, timestamp):
    plt.rcParams["svg.hashsalt"] = "decaycert"
    metadata = {"Date": None} if not timestamp else {}
    fig.savefig(out, format="svg", metadata=metadata)
    plt.close(fig)


def plot_norm_vs_envelope(csv_path, cert, out, timestamp: bool = True) -> Path:
    header, data = read_columns(csv_path, NORM_HEADERS)
    t, g = data[:, 0], data[:, 1]
    keep = g > 0
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    if t.size > 1 and np.all(t[1:] > 0):
        ax.set_xscale("symlog", linthresh=max(t[1], 1e-12))
    ax.plot(t[keep], g[keep], lw=1.4, label=f"solution {header[1]}")
    env = np.asarray(envelope_eval(cert, t))
    ax.plot(t[env > 0], env[env > 0], lw=1.4, ls="--", label="envelope 1/mu(t)")
    ax.set_xlabel("t")
    ax.set_ylabel("norm")
    _style(ax)
    _save(fig, out, timestamp)
    return Path(out)


def plot_matching_error(csv_path, out, timestamp: bool = True) -> Path:
    _, data = read_columns(csv_path, [MATCHING_HEADER])
    t, err, bound = data[:, 0], data[:, 1], data[:, 2]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(t[err > 0], err[err > 0], marker="o", ms=3, lw=1.2, label="||v - u||")
    ax.plot(t[bound > 0], bound[bound > 0], lw=1.2, ls="--", label="C int_t^inf ||B||")
    ax.set_xlabel("t")
    ax.set_ylabel("matching error")
    _style(ax)
    _save(fig, out, timestamp)
    return Path(out)


def emit_plot(csv_path, kind: str, out, cert=None, timestamp: bool = True) -> Path:
    """Render ``NormVsEnvelope`` (needs ``cert``) or ``MatchingError`` to SVG."""
    if kind == "NormVsEnvelope":
        if cert is None:
            raise PlotInputError("NormVsEnvelope needs a certificate")
        return plot_norm_vs_envelope(csv_path, cert, out, timestamp)
    if kind == "MatchingError":
        return plot_matching_error(csv_path, out, timestamp)
    raise PlotInputError(f"unknown plot kind {kind!r}")
