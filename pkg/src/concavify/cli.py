"""Batch CLI: parse a problem config, dispatch, emit deterministic reports.

Subcommands: ``envelope``, ``conjugate``, ``eae``, ``solve``, ``curves``,
``cps-check``, ``liquidate``.  Every run reads one JSON config
(``--config``) and writes CSV/JSON artifacts plus companion figures into the
output directory (``--out``, default from ``$CONCAVIFY_OUT`` or ``./out``).

Exit codes: 0 success, 2 config error, 3 solver non-convergence, 4 CPS
failure.  JSON and CSV outputs are byte-identical across runs of the same
config (sorted keys, shortest round-trip float formatting); wall-clock goes
to stderr only.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import figures
from .config import ConfigError, ProblemConfig, config_digest, load_config
from .market import check_cps, liquidation_value, terminal_density
from .solver import (
    SolverError,
    default_envelope_grid,
    dual_function,
    duality_check,
    foc_check,
    solve,
    value_function,
)
from .tolerances import PROFILES, profile
from .transform import conjugate, estimate_eae
from .utility import GridSpec, compute_envelope

SCHEMA_TAG = "concavify/1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CPS = 4


def _sanitize(obj: Any) -> Any:
    """Make dataclass trees JSON-safe with stable float text."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _sanitize(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    return obj


def _write_json(path: Path, command: str, digest: str, result: Any) -> Path:
    doc = {
        "schema": SCHEMA_TAG,
        "command": command,
        "config_digest": digest,
        "result": _sanitize(result),
    }
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")
    return path


def _envelope_grid(cfg: ProblemConfig) -> GridSpec:
    spec = cfg.grid("envelope")
    if spec is not None:
        return spec
    u = cfg.utility
    bps = [b for b in u.breakpoints if math.isfinite(b)]
    x_max = max(10.0, (4.0 * max(bps)) if bps else 0.0)
    if cfg.initial_wealth is not None:
        x_max = max(x_max, 10.0 * cfg.initial_wealth)
    return GridSpec(x_min=1e-4, x_max=x_max, n_points=4001, spacing="geometric")


def cmd_envelope(cfg: ProblemConfig, out: Path, digest: str, render: bool) -> int:
    cfg.require("utility")
    env = compute_envelope(cfg.utility, _envelope_grid(cfg), tol=cfg.tolerances)
    _write_json(out / "envelope.json", "envelope", digest, {
        "hull_vertices": env.hull_vertices,
        "tail_slope": env.tail_slope,
        "components": env.components,
        "grid": dataclasses.asdict(env.grid_spec) if env.grid_spec else None,
    })
    _write_csv(out / "envelope_vertices.csv", ["x", "U_c"], env.hull_vertices)
    _write_csv(out / "envelope_components.csv", ["a", "b"], env.components)
    if render:
        figures.render_envelope(cfg.utility, env, out / "envelope.png")
    return EXIT_OK


def cmd_conjugate(cfg: ProblemConfig, out: Path, digest: str, render: bool) -> int:
    cfg.require("utility")
    env = compute_envelope(cfg.utility, _envelope_grid(cfg), tol=cfg.tolerances)
    V = conjugate(env, tol=cfg.tolerances)
    _write_json(out / "conjugate.json", "conjugate", digest, {
        "vertices": V.vertices,
        "left_slope": V.left_slope,
        "right_slope": V.right_slope,
        "domain_start": V.domain_start,
        "provenance": V.provenance,
    })
    _write_csv(out / "conjugate_vertices.csv", ["y", "V"], V.vertices)
    if render:
        figures.render_conjugate(V, out / "conjugate.png")
    return EXIT_OK


def cmd_eae(cfg: ProblemConfig, out: Path, digest: str, render: bool) -> int:
    cfg.require("utility")
    y_spec = cfg.grid("y")
    if y_spec is None:
        raise ConfigError("grids.y", "eae needs a y grid spanning at least 4 decades")
    env = compute_envelope(cfg.utility, _envelope_grid(cfg), tol=cfg.tolerances)
    V = conjugate(env, tol=cfg.tolerances)
    report = estimate_eae(V, y_spec.build(), tol=cfg.tolerances)
    _write_json(out / "eae.json", "eae", digest, {
        "estimate": report.estimate,
        "per_decade_max": report.per_decade_max,
        "converged": report.converged,
    })
    _write_csv(out / "eae_trace.csv", ["y", "ratio"], list(zip(report.y_grid, report.ratios)))
    if render:
        figures.render_eae(np.asarray(report.y_grid), np.asarray(report.ratios), out / "eae.png")
    return EXIT_OK


def cmd_solve(cfg: ProblemConfig, out: Path, digest: str, render: bool) -> int:
    cfg.require("utility", "initial_wealth")
    m = cfg.resolved_market()
    x = cfg.initial_wealth
    spec = cfg.grid("envelope") or default_envelope_grid(m, cfg.utility, x)
    env = compute_envelope(cfg.utility, spec, tol=cfg.tolerances)
    V = conjugate(env, tol=cfg.tolerances)
    result = solve(m, cfg.utility, x, env=env, V=V, tol=cfg.tolerances)
    foc = foc_check(result, m, env, tol=cfg.tolerances)
    _write_json(out / "solve.json", "solve", digest, {
        "result": result,
        "foc": foc,
        "gap_summary": {
            "duality_gap": result.duality_gap,
            "budget_slack": result.budget_slack,
            "kink_states": result.kink_states,
            "primal_search_exhaustive": result.primal_search_exhaustive,
        },
    })
    rows = [
        (
            i,
            m.probabilities[i],
            m.density[i],
            result.payoff[i],
            result.primal_payoff[i],
            float(cfg.utility.value_or_limit(result.primal_payoff[i])),
            float(env.value(result.payoff[i])),
        )
        for i in range(m.n_states)
    ]
    _write_csv(
        out / "payoff.csv",
        ["state", "probability", "density", "payoff", "primal_payoff", "U", "U_c"],
        rows,
    )
    if render:
        figures.render_payoff(result, m, out / "payoff.png")
    return EXIT_OK


def cmd_curves(cfg: ProblemConfig, out: Path, digest: str, render: bool) -> int:
    cfg.require("utility")
    m = cfg.resolved_market()
    x_spec, y_spec = cfg.grid("x"), cfg.grid("y")
    if x_spec is None or y_spec is None:
        raise ConfigError("grids", "curves needs both an x grid and a y grid")
    xs, ys = x_spec.build(), y_spec.build()
    spec = cfg.grid("envelope") or default_envelope_grid(m, cfg.utility, float(xs[-1]))
    env = compute_envelope(cfg.utility, spec, tol=cfg.tolerances)
    V = conjugate(env, tol=cfg.tolerances)
    curve = value_function(m, cfg.utility, xs, env=env, V=V, tol=cfg.tolerances)
    dual = dual_function(m, V, ys)
    report = duality_check(m, cfg.utility, xs, ys, env=env, V=V, curve=curve,
                           tol=cfg.tolerances)
    _write_csv(
        out / "curves.csv",
        ["x", "u_U", "u_Uc", "hull_u_U"],
        list(zip(curve.x, curve.u_U, curve.u_Uc, curve.hull_u_U)),
    )
    _write_csv(out / "dual_curve.csv", ["y", "v"], list(zip(dual.y, dual.v)))
    _write_json(out / "deviations.json", "curves", digest, report)
    if render:
        figures.render_curves(curve, dual, out / "curves.png")
    return EXIT_OK


def cmd_cps_check(cfg: ProblemConfig, out: Path, digest: str, render: bool) -> int:
    cfg.require("tree", "cps")
    report = check_cps(cfg.tree, cfg.cps, tol=cfg.tolerances)
    _write_json(out / "cps_report.json", "cps-check", digest, {
        "pass": report.ok,
        "martingale_Z0": report.martingale_Z0,
        "martingale_Z1": report.martingale_Z1,
        "band_ok": report.band_ok,
        "violations": report.per_node_violations,
    })
    if not report.ok:
        for v in report.per_node_violations:
            print(f"CPS violation at node {v.node}: {v.kind} residual {v.residual!r}",
                  file=sys.stderr)
        return EXIT_CPS
    market = terminal_density(cfg.tree, cfg.cps, tol=cfg.tolerances)
    _write_json(out / "market.json", "cps-check", digest, {
        "probabilities": market.probabilities,
        "density": market.density,
        "states": [leaf.id for leaf in cfg.tree.leaves],
    })
    _write_csv(
        out / "market.csv",
        ["state", "probability", "density"],
        [(leaf.id, p, z) for leaf, p, z in
         zip(cfg.tree.leaves, market.probabilities, market.density)],
    )
    return EXIT_OK


def cmd_liquidate(cfg: ProblemConfig, out: Path, digest: str, render: bool) -> int:
    cfg.require("position", "lambda")
    phi0, phi1, price = cfg.position
    value = liquidation_value(phi0, phi1, price, cfg.lam)
    _write_json(out / "liquidate.json", "liquidate", digest, {
        "phi0": phi0, "phi1": phi1, "price": price, "lambda": cfg.lam,
        "liquidation_value": value,
    })
    return EXIT_OK


_COMMANDS = {
    "envelope": cmd_envelope,
    "conjugate": cmd_conjugate,
    "eae": cmd_eae,
    "solve": cmd_solve,
    "curves": cmd_curves,
    "cps-check": cmd_cps_check,
    "liquidate": cmd_liquidate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="concavify",
        description="Non-concave utility maximization via concavification duality.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", required=True, help="path to the JSON problem config")
        p.add_argument("--out", default=None,
                       help="output directory (default: $CONCAVIFY_OUT or ./out)")
        p.add_argument("--tolerance-profile", default="default", choices=sorted(PROFILES),
                       help="named tolerance profile")
        p.add_argument("--seed", type=int, default=None,
                       help="seed reserved for randomized property demos")
        p.add_argument("--no-figures", action="store_true",
                       help="skip matplotlib figure rendering")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    out = Path(args.out or os.environ.get("CONCAVIFY_OUT", "out"))
    started = time.monotonic()
    try:
        base_tol = profile(args.tolerance_profile)
        cfg = load_config(args.config, base_tol=base_tol)
        digest = config_digest(cfg.raw)
        code = _COMMANDS[args.command](cfg, _ensure_dir(out), digest, not args.no_figures)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as e:
        print(f"solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    elapsed = time.monotonic() - started
    print(f"[concavify] {args.command} finished in {elapsed:.3f}s -> {out}", file=sys.stderr)
    return code


def _ensure_dir(out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    return out


if __name__ == "__main__":
    sys.exit(main())
