"""Problem-configuration schema: one JSON document drives every subcommand.

Top-level keys (all others rejected):

- ``utility``:    {"pieces": [{"lo", "hi", "form", ...params}, ...]}
                  ``hi`` may be the string "inf" on the last piece.
- ``market``:     {"probabilities": [...], "density": [...]}            (inline)
- ``tree``:       {"nodes": [{"id", "parent", "price", "prob"}, ...]}   (or tree+cps)
- ``cps``:        {"lambda": 0.1, "z0": {id: val}, "z1": {id: val}}
- ``lambda``:     transaction cost in (0, 1) for strategy checks
- ``initial_wealth``: x > 0
- ``position``:   {"phi0", "phi1", "price"} for the liquidate subcommand
- ``grids``:      {"x"|"y"|"wealth": {"min","max","points"[,"spacing"]},
                   "envelope": {"min","max","points"[,"spacing"]}}
- ``tolerances``: field overrides applied on top of the selected profile

Exactly one market form (inline market, or tree+cps) may be present.
Validation errors carry the offending field path for CLI diagnostics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields as dc_fields
from pathlib import Path
from typing import Any

import numpy as np

from .market import CPSCandidate, EventTree, FiniteMarket, TreeNode
from .tolerances import DEFAULT, Tolerances, profile
from .utility import GridSpec, PiecewiseUtility, UtilityPiece

__all__ = ["ConfigError", "ProblemConfig", "load_config", "parse_config", "config_digest"]

_TOP_KEYS = {
    "utility", "market", "tree", "cps", "lambda", "initial_wealth",
    "position", "grids", "tolerances",
}


class ConfigError(ValueError):
    """Schema violation, annotated with the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def _number(doc: dict, key: str, path: str, allow_inf: bool = False) -> float:
    if key not in doc:
        raise ConfigError(f"{path}.{key}", "missing required field")
    v = doc[key]
    if isinstance(v, str) and allow_inf and v in ("inf", "Infinity"):
        return math.inf
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {v!r}")
    return float(v)


def _parse_piece(doc: Any, path: str) -> UtilityPiece:
    if not isinstance(doc, dict):
        raise ConfigError(path, "each piece must be an object")
    lo = _number(doc, "lo", path)
    hi = _number(doc, "hi", path, allow_inf=True)
    form = doc.get("form")
    if not isinstance(form, str):
        raise ConfigError(f"{path}.form", "missing or non-string piece form")
    params = {
        k: float(v) for k, v in doc.items()
        if k not in ("lo", "hi", "form") and isinstance(v, (int, float))
    }
    try:
        return UtilityPiece(lo=lo, hi=hi, form=form, params=params)
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


def _parse_utility(doc: Any, path: str) -> PiecewiseUtility:
    if not isinstance(doc, dict) or "pieces" not in doc:
        raise ConfigError(path, "utility must be an object with a 'pieces' list")
    raw = doc["pieces"]
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{path}.pieces", "must be a nonempty list")
    pieces = tuple(_parse_piece(p, f"{path}.pieces[{i}]") for i, p in enumerate(raw))
    try:
        return PiecewiseUtility(pieces=pieces)
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


def _parse_market(doc: Any, path: str) -> FiniteMarket:
    if not isinstance(doc, dict):
        raise ConfigError(path, "market must be an object")
    for key in ("probabilities", "density"):
        if key not in doc or not isinstance(doc[key], list):
            raise ConfigError(f"{path}.{key}", "missing or non-list field")
    try:
        return FiniteMarket(
            probabilities=tuple(float(v) for v in doc["probabilities"]),
            density=tuple(float(v) for v in doc["density"]),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(path, str(e)) from None


def _parse_tree(doc: Any, path: str) -> EventTree:
    if not isinstance(doc, dict) or not isinstance(doc.get("nodes"), list):
        raise ConfigError(path, "tree must be an object with a 'nodes' list")
    nodes = []
    for i, nd in enumerate(doc["nodes"]):
        npath = f"{path}.nodes[{i}]"
        if not isinstance(nd, dict):
            raise ConfigError(npath, "each node must be an object")
        if "id" not in nd or not isinstance(nd["id"], str):
            raise ConfigError(f"{npath}.id", "missing or non-string node id")
        parent = nd.get("parent")
        if parent is not None and not isinstance(parent, str):
            raise ConfigError(f"{npath}.parent", "must be a string or null")
        nodes.append(
            TreeNode(
                id=nd["id"],
                parent=parent,
                price=_number(nd, "price", npath),
                prob=float(nd.get("prob", 1.0)),
            )
        )
    try:
        return EventTree(nodes=tuple(nodes))
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


def _parse_cps(doc: Any, path: str) -> CPSCandidate:
    if not isinstance(doc, dict):
        raise ConfigError(path, "cps must be an object")
    lam = _number(doc, "lambda", path)
    if not 0 < lam < 1:
        raise ConfigError(f"{path}.lambda", "transaction cost must lie strictly in (0, 1)")
    for key in ("z0", "z1"):
        if key not in doc or not isinstance(doc[key], dict):
            raise ConfigError(f"{path}.{key}", "missing or non-object field")
    try:
        return CPSCandidate(
            lam=lam,
            z0={str(k): float(v) for k, v in doc["z0"].items()},
            z1={str(k): float(v) for k, v in doc["z1"].items()},
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(path, str(e)) from None


def _parse_grid(doc: Any, path: str, spacing_default: str) -> GridSpec:
    if not isinstance(doc, dict):
        raise ConfigError(path, "grid must be an object")
    spec_kwargs = dict(
        x_min=_number(doc, "min", path),
        x_max=_number(doc, "max", path),
        n_points=int(_number(doc, "points", path)),
        spacing=doc.get("spacing", spacing_default),
    )
    try:
        return GridSpec(**spec_kwargs)
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


@dataclass(frozen=True)
class ProblemConfig:
    utility: PiecewiseUtility | None
    market: FiniteMarket | None
    tree: EventTree | None
    cps: CPSCandidate | None
    lam: float | None
    initial_wealth: float | None
    position: tuple[float, float, float] | None  # (phi0, phi1, price)
    grids: dict[str, GridSpec]
    tolerances: Tolerances
    raw: dict

    def require(self, *names: str) -> None:
        """Fail with a field diagnostic when a needed section is absent."""
        for name in names:
            attr = {"lambda": "lam"}.get(name, name)
            if getattr(self, attr) is None:
                raise ConfigError(name, "required by this subcommand but missing")

    def resolved_market(self) -> FiniteMarket:
        if self.market is not None:
            return self.market
        from .market import terminal_density  # local import to avoid cycles

        if self.tree is None or self.cps is None:
            raise ConfigError("market", "no inline market and no tree+cps pair")
        return terminal_density(self.tree, self.cps, tol=self.tolerances)

    def grid(self, name: str) -> GridSpec | None:
        return self.grids.get(name)

    def grid_array(self, name: str) -> np.ndarray | None:
        spec = self.grids.get(name)
        return None if spec is None else spec.build()


def parse_config(doc: Any, base_tol: Tolerances = DEFAULT) -> ProblemConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown top-level field")
    utility = _parse_utility(doc["utility"], "utility") if "utility" in doc else None
    market = _parse_market(doc["market"], "market") if "market" in doc else None
    tree = _parse_tree(doc["tree"], "tree") if "tree" in doc else None
    cps = _parse_cps(doc["cps"], "cps") if "cps" in doc else None
    if market is not None and tree is not None:
        raise ConfigError("market", "exactly one market form allowed: inline market or tree")
    if (tree is None) != (cps is None):
        raise ConfigError("tree", "tree and cps must be provided together")
    lam = None
    if "lambda" in doc:
        lam = _number(doc, "lambda", "<root>")
        if not 0 < lam < 1:
            raise ConfigError("lambda", "transaction cost must lie strictly in (0, 1)")
    wealth = None
    if "initial_wealth" in doc:
        wealth = _number(doc, "initial_wealth", "<root>")
        if wealth <= 0:
            raise ConfigError("initial_wealth", "must be positive")
    position = None
    if "position" in doc:
        pd = doc["position"]
        if not isinstance(pd, dict):
            raise ConfigError("position", "must be an object")
        position = (
            _number(pd, "phi0", "position"),
            _number(pd, "phi1", "position"),
            _number(pd, "price", "position"),
        )
        if position[2] <= 0:
            raise ConfigError("position.price", "must be positive")
    grids: dict[str, GridSpec] = {}
    if "grids" in doc:
        gd = doc["grids"]
        if not isinstance(gd, dict):
            raise ConfigError("grids", "must be an object")
        for name, sub in gd.items():
            if name not in ("x", "y", "wealth", "envelope"):
                raise ConfigError(f"grids.{name}", "unknown grid name")
            default_spacing = "geometric" if name in ("y", "envelope") else "linear"
            grids[name] = _parse_grid(sub, f"grids.{name}", default_spacing)
    tol = base_tol
    if "tolerances" in doc:
        td = doc["tolerances"]
        if not isinstance(td, dict):
            raise ConfigError("tolerances", "must be an object")
        known = {f.name for f in dc_fields(Tolerances)}
        for k, v in td.items():
            if k not in known:
                raise ConfigError(f"tolerances.{k}", "unknown tolerance field")
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"tolerances.{k}", "must be a number")
        tol = tol.replace(**{k: type(getattr(tol, k))(v) for k, v in td.items()})
    return ProblemConfig(
        utility=utility,
        market=market,
        tree=tree,
        cps=cps,
        lam=lam,
        initial_wealth=wealth,
        position=position,
        grids=grids,
        tolerances=tol,
        raw=doc,
    )


def load_config(path: str | Path, base_tol: Tolerances = DEFAULT) -> ProblemConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError("<file>", f"cannot read {p}: {e}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"invalid JSON at line {e.lineno} col {e.colno}: {e.msg}") from None
    return parse_config(doc, base_tol=base_tol)


def config_digest(doc: dict) -> str:
    """Stable digest of the canonicalized config document."""
    import hashlib

    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
