"""Figure rendering for the CLI report path.

All matplotlib usage lives here; the core modules stay plotting-free and the
CSV column contract remains the portable interface.  Figures are a visual
companion to the delimited output, not part of the determinism contract.
"""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .market import FiniteMarket
    from .solver import DualCurve, SolverResult, ValueCurve
    from .transform import ConvexConjugate
    from .utility import ConcaveEnvelope, PiecewiseUtility


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def render_envelope(
    u: "PiecewiseUtility", env: "ConcaveEnvelope", path: Path
) -> Path:
    """Utility vs its concave envelope, components shaded."""
    plt = _pyplot()
    xs = env.grid_spec.build() if env.grid_spec is not None else np.linspace(
        max(env.x_first, 1e-6), env.x_last, 400
    )
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(xs, np.asarray(u.value(xs)), lw=1.2, label="U")
    ax.plot(xs, np.asarray(env.value(xs)), lw=1.2, ls="--", label="concave envelope")
    for a, b in env.components:
        ax.axvspan(max(a, xs[0]), min(b, xs[-1]), alpha=0.15, color="tab:orange")
    if env.grid_spec is not None and env.grid_spec.spacing == "geometric":
        ax.set_xscale("log")
    ax.set_xlabel("wealth x")
    ax.set_ylabel("utility")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_conjugate(V: "ConvexConjugate", path: Path) -> Path:
    plt = _pyplot()
    ys = V._ys
    lo = max(V.domain_start * 1.001, ys[0] * 1e-2) if V.domain_start > 0 else ys[0] * 1e-2
    grid = np.geomspace(max(lo, 1e-12), ys[-1] * 10, 400)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(grid, np.asarray(V.value(grid, strict=False)), lw=1.2)
    ax.plot(ys, V._vals, "o", ms=4, label="kinks")
    ax.set_xscale("log")
    ax.set_xlabel("multiplier y")
    ax.set_ylabel("V(y)")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_eae(y: np.ndarray, ratios: np.ndarray, path: Path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(y, ratios, lw=1.2)
    ax.set_xscale("log")
    ax.set_xlabel("y")
    ax.set_ylabel("|dV(y)| y / V(y)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_payoff(result: "SolverResult", m: "FiniteMarket", path: Path) -> Path:
    plt = _pyplot()
    idx = np.arange(m.n_states)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    width = 0.4
    ax.bar(idx - width / 2, result.payoff, width, label="concavified payoff")
    ax.bar(idx + width / 2, result.primal_payoff, width, label="attainable payoff")
    ax.set_xticks(idx)
    ax.set_xticklabels([f"z={z:g}" for z in m.density], rotation=30)
    ax.set_xlabel("state (pricing density)")
    ax.set_ylabel("payoff")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_curves(
    curve: "ValueCurve", dual: "DualCurve | None", path: Path
) -> Path:
    plt = _pyplot()
    if dual is not None:
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4.2))
    else:
        fig, ax1 = plt.subplots(figsize=(7, 4.5))
        ax2 = None
    xs = np.asarray(curve.x)
    ax1.plot(xs, curve.u_U, lw=1.1, label="u(x, U)")
    ax1.plot(xs, curve.u_Uc, lw=1.1, ls="--", label="u(x, U_c)")
    ax1.plot(xs, curve.hull_u_U, lw=1.0, ls=":", label="hull of u(x, U)")
    ax1.set_xlabel("wealth x")
    ax1.set_ylabel("value")
    ax1.legend(loc="lower right")
    if ax2 is not None:
        ax2.plot(dual.y, dual.v, lw=1.1)
        ax2.set_xlabel("multiplier y")
        ax2.set_ylabel("v(y)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
