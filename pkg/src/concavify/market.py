"""Finite-state markets, event trees, and consistent-price-system checks.

Discrete event trees stand in for continuous-time price processes: every
martingale condition becomes an exactly checkable per-node expectation, and
the pricing density induced by a consistent price system reduces to one
positive number per terminal path.  Trades on an edge execute at the parent
node's price (the decision is taken before the branch is revealed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .tolerances import DEFAULT, Tolerances

__all__ = [
    "FiniteMarket",
    "TreeNode",
    "EventTree",
    "CPSCandidate",
    "TradingStrategy",
    "CpsViolation",
    "CpsReport",
    "check_cps",
    "terminal_density",
    "liquidation_value",
    "SelfFinancingReport",
    "check_self_financing",
    "AdmissibilityReport",
    "check_admissible",
    "BudgetReport",
    "budget_check",
]


@dataclass(frozen=True)
class FiniteMarket:
    """State probabilities and the pricing density z = dQ/dP per state."""

    probabilities: tuple[float, ...]
    density: tuple[float, ...]

    def __post_init__(self) -> None:
        p = tuple(float(v) for v in self.probabilities)
        z = tuple(float(v) for v in self.density)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "density", z)
        if len(p) != len(z) or not p:
            raise ValueError("probabilities and density must be nonempty and equal length")
        if any(v <= 0 for v in p):
            raise ValueError("state probabilities must be positive")
        if abs(math.fsum(p) - 1.0) > DEFAULT.prob_sum:
            raise ValueError(f"probabilities sum to {math.fsum(p)!r}, not 1")
        if any(v <= 0 for v in z):
            raise ValueError("density must be positive")
        mean = math.fsum(pi * zi for pi, zi in zip(p, z))
        if abs(mean - 1.0) > DEFAULT.martingale:
            raise ValueError(f"density has mean {mean!r} under P, not 1")

    @property
    def n_states(self) -> int:
        return len(self.probabilities)

    @cached_property
    def p(self) -> np.ndarray:
        return np.array(self.probabilities)

    @cached_property
    def z(self) -> np.ndarray:
        return np.array(self.density)

    def cost(self, f: Sequence[float]) -> float:
        """Price of a payoff under Q: sum_i p_i z_i f_i (exact summation)."""
        f = tuple(float(v) for v in f)
        if len(f) != self.n_states:
            raise ValueError("payoff length does not match the number of states")
        return math.fsum(p * z * fi for p, z, fi in zip(self.probabilities, self.density, f))


@dataclass(frozen=True)
class TreeNode:
    """One node: id, parent id (None for the root), price, and branch probability."""

    id: str
    parent: str | None
    price: float
    prob: float = 1.0


@dataclass(frozen=True)
class EventTree:
    """Finite rooted tree with per-node prices and branch probabilities.

    Time is the depth of a node; all leaves must sit at the same depth.
    Branch probabilities of the children of any node sum to one.
    """

    nodes: tuple[TreeNode, ...]

    def __post_init__(self) -> None:
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if not nodes:
            raise ValueError("tree needs at least one node")
        ids = [n.id for n in nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        by_id = {n.id: n for n in nodes}
        roots = [n for n in nodes if n.parent is None]
        if len(roots) != 1:
            raise ValueError(f"tree must have exactly one root, found {len(roots)}")
        for n in nodes:
            if n.parent is not None and n.parent not in by_id:
                raise ValueError(f"node {n.id!r} references unknown parent {n.parent!r}")
            if n.price <= 0:
                raise ValueError(f"node {n.id!r} has nonpositive price")
            if n.prob <= 0:
                raise ValueError(f"node {n.id!r} has nonpositive branch probability")
        children: dict[str, list[str]] = {n.id: [] for n in nodes}
        for n in nodes:
            if n.parent is not None:
                children[n.parent].append(n.id)
        for nid, kids in children.items():
            if kids:
                total = math.fsum(by_id[k].prob for k in kids)
                if abs(total - 1.0) > DEFAULT.prob_sum:
                    raise ValueError(
                        f"branch probabilities of node {nid!r} sum to {total!r}, not 1"
                    )
        depths = {roots[0].id: 0}
        # nodes may appear in any order; resolve depths iteratively
        pending = [n for n in nodes if n.parent is not None]
        while pending:
            progressed = False
            rest = []
            for n in pending:
                if n.parent in depths:
                    depths[n.id] = depths[n.parent] + 1
                    progressed = True
                else:
                    rest.append(n)
            if not progressed:
                raise ValueError("tree contains a cycle or unreachable nodes")
            pending = rest
        leaf_depths = {depths[nid] for nid, kids in children.items() if not kids}
        if len(leaf_depths) != 1:
            raise ValueError("all terminal nodes must sit at the same depth")
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_children", {k: tuple(v) for k, v in children.items()})
        object.__setattr__(self, "_depths", depths)

    def node(self, nid: str) -> TreeNode:
        return self._by_id[nid]

    def children(self, nid: str) -> tuple[str, ...]:
        return self._children[nid]

    def depth(self, nid: str) -> int:
        return self._depths[nid]

    @property
    def root(self) -> TreeNode:
        return next(n for n in self.nodes if n.parent is None)

    @property
    def leaves(self) -> tuple[TreeNode, ...]:
        """Terminal nodes in input order."""
        return tuple(n for n in self.nodes if not self._children[n.id])

    @property
    def horizon(self) -> int:
        return self.depth(self.leaves[0].id)

    def path_probability(self, nid: str) -> float:
        prob = 1.0
        node = self.node(nid)
        while node.parent is not None:
            prob *= node.prob
            node = self.node(node.parent)
        return prob

    def edges(self) -> tuple[tuple[str, str], ...]:
        """(parent, child) pairs in child input order."""
        return tuple((n.parent, n.id) for n in self.nodes if n.parent is not None)


@dataclass(frozen=True)
class CPSCandidate:
    """Per-node pair (Z0, Z1) of positive values and the friction level."""

    lam: float
    z0: Mapping[str, float]
    z1: Mapping[str, float]

    def __post_init__(self) -> None:
        if not 0 < self.lam < 1:
            raise ValueError("transaction cost lambda must lie strictly in (0, 1)")
        z0 = dict(self.z0)
        z1 = dict(self.z1)
        object.__setattr__(self, "z0", z0)
        object.__setattr__(self, "z1", z1)
        if any(v <= 0 for v in z0.values()) or any(v <= 0 for v in z1.values()):
            raise ValueError("CPS components must be strictly positive")


@dataclass(frozen=True)
class CpsViolation:
    node: str
    kind: str  # "z0_martingale" | "z1_martingale" | "band"
    residual: float


@dataclass(frozen=True)
class CpsReport:
    martingale_Z0: bool
    martingale_Z1: bool
    band_ok: bool
    per_node_violations: tuple[CpsViolation, ...]

    @property
    def ok(self) -> bool:
        return self.martingale_Z0 and self.martingale_Z1 and self.band_ok

    def __bool__(self) -> bool:
        return self.ok


def check_cps(tree: EventTree, cand: CPSCandidate, tol: Tolerances = DEFAULT) -> CpsReport:
    """Verify the martingale and bid-ask band conditions node by node.

    On a finite tree local martingales are martingales, so a single per-node
    conditional-expectation residual covers both notions.
    """
    missing = [n.id for n in tree.nodes if n.id not in cand.z0 or n.id not in cand.z1]
    if missing:
        raise ValueError(f"candidate undefined on nodes: {missing}")
    root = tree.root
    violations: list[CpsViolation] = []
    if abs(cand.z0[root.id] - 1.0) > tol.prob_sum:
        violations.append(CpsViolation(root.id, "z0_martingale", cand.z0[root.id] - 1.0))
    mart0 = mart1 = band = True
    for n in tree.nodes:
        kids = tree.children(n.id)
        if kids:
            e0 = math.fsum(tree.node(k).prob * cand.z0[k] for k in kids)
            e1 = math.fsum(tree.node(k).prob * cand.z1[k] for k in kids)
            r0 = e0 - cand.z0[n.id]
            r1 = e1 - cand.z1[n.id]
            if abs(r0) > tol.martingale:
                mart0 = False
                violations.append(CpsViolation(n.id, "z0_martingale", r0))
            if abs(r1) > tol.martingale:
                mart1 = False
                violations.append(CpsViolation(n.id, "z1_martingale", r1))
        ratio = cand.z1[n.id] / cand.z0[n.id]
        lo = (1.0 - cand.lam) * n.price
        hi = n.price
        if ratio < lo - tol.martingale or ratio > hi + tol.martingale:
            band = False
            residual = max(lo - ratio, ratio - hi)
            violations.append(CpsViolation(n.id, "band", residual))
    if violations and abs(cand.z0[root.id] - 1.0) > tol.prob_sum:
        mart0 = False
    violations.sort(key=lambda v: (v.node, v.kind))
    return CpsReport(mart0, mart1, band, tuple(violations))


def terminal_density(
    tree: EventTree, cand: CPSCandidate, tol: Tolerances = DEFAULT
) -> FiniteMarket:
    """Read the pricing density off the terminal layer: states are the leaves.

    Each leaf carries its path probability and the terminal Z0 value;
    requires the Z0 martingale condition to hold.
    """
    report = check_cps(tree, cand, tol=tol)
    if not report.martingale_Z0:
        bad = [v for v in report.per_node_violations if v.kind == "z0_martingale"]
        raise ValueError(f"Z0 is not a martingale: {bad}")
    probs = tuple(tree.path_probability(leaf.id) for leaf in tree.leaves)
    dens = tuple(cand.z0[leaf.id] for leaf in tree.leaves)
    return FiniteMarket(probabilities=probs, density=dens)


def liquidation_value(phi0: float, phi1: float, S: float, lam: float) -> float:
    """Cash plus stock unwound at the bid (long) or ask (short) price."""
    if S <= 0:
        raise ValueError("price must be positive")
    if not 0 < lam < 1:
        raise ValueError("transaction cost lambda must lie strictly in (0, 1)")
    return phi0 + max(phi1, 0.0) * (1.0 - lam) * S - max(-phi1, 0.0) * S


@dataclass(frozen=True)
class TradingStrategy:
    """Holdings (phi0, phi1) per node plus buy/sell increments per edge.

    ``trades`` maps a child node id to the (buy, sell) stock increments on
    the edge into it; both must be nonnegative and satisfy
    phi1_child - phi1_parent = buy - sell.  The root holds (x, 0).
    """

    holdings: Mapping[str, tuple[float, float]]
    trades: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "holdings", dict(self.holdings))
        object.__setattr__(self, "trades", dict(self.trades))
        for nid, (buy, sell) in self.trades.items():
            if buy < 0 or sell < 0:
                raise ValueError(f"edge into {nid!r} has negative buy/sell increment")

    def validate_against(self, tree: EventTree, tol: Tolerances = DEFAULT) -> None:
        for n in tree.nodes:
            if n.id not in self.holdings:
                raise ValueError(f"strategy undefined on node {n.id!r}")
        root = tree.root
        phi0, phi1 = self.holdings[root.id]
        if phi1 != 0.0:
            raise ValueError("initial stock holding must be 0")
        for parent, child in tree.edges():
            buy, sell = self.trades.get(child, (0.0, 0.0))
            dphi1 = self.holdings[child][1] - self.holdings[parent][1]
            if abs(dphi1 - (buy - sell)) > tol.self_financing:
                raise ValueError(
                    f"edge into {child!r}: stock increment {dphi1} != buy - sell = {buy - sell}"
                )


@dataclass(frozen=True)
class SelfFinancingReport:
    ok: bool
    violating_edges: tuple[tuple[str, float], ...]  # (child id, residual)

    def __bool__(self) -> bool:
        return self.ok


def check_self_financing(
    tree: EventTree,
    strategy: TradingStrategy,
    lam: float,
    tol: Tolerances = DEFAULT,
) -> SelfFinancingReport:
    """Per edge: cash increment <= -S*buy + (1-lam)*S*sell at the parent price."""
    if not 0 < lam < 1:
        raise ValueError("transaction cost lambda must lie strictly in (0, 1)")
    strategy.validate_against(tree, tol=tol)
    violations: list[tuple[str, float]] = []
    for parent, child in tree.edges():
        buy, sell = strategy.trades.get(child, (0.0, 0.0))
        s = tree.node(parent).price
        dphi0 = strategy.holdings[child][0] - strategy.holdings[parent][0]
        bound = -s * buy + (1.0 - lam) * s * sell
        residual = dphi0 - bound
        if residual > tol.self_financing:
            violations.append((child, residual))
    violations.sort()
    return SelfFinancingReport(not violations, tuple(violations))


@dataclass(frozen=True)
class AdmissibilityReport:
    ok: bool
    violating_nodes: tuple[tuple[str, float], ...]  # (node id, liquidation value)

    def __bool__(self) -> bool:
        return self.ok


def check_admissible(
    tree: EventTree,
    strategy: TradingStrategy,
    lam: float,
    tol: Tolerances = DEFAULT,
) -> AdmissibilityReport:
    """True iff the liquidation value is >= -tol at every node."""
    strategy.validate_against(tree, tol=tol)
    bad: list[tuple[str, float]] = []
    for n in tree.nodes:
        phi0, phi1 = strategy.holdings[n.id]
        v = liquidation_value(phi0, phi1, n.price, lam)
        if v < -tol.admissible:
            bad.append((n.id, v))
    bad.sort()
    return AdmissibilityReport(not bad, tuple(bad))


@dataclass(frozen=True)
class BudgetReport:
    cost: float
    within_budget: bool

    def __bool__(self) -> bool:
        return self.within_budget


def budget_check(
    f: Sequence[float],
    m: FiniteMarket,
    x: float,
    tol: Tolerances = DEFAULT,
) -> BudgetReport:
    """Membership of a nonnegative payoff in the budget set {E_Q[f] <= x}."""
    f = tuple(float(v) for v in f)
    if any(v < 0 for v in f):
        raise ValueError("payoffs must be nonnegative")
    cost = m.cost(f)
    return BudgetReport(cost=cost, within_budget=bool(cost <= x + tol.budget))
