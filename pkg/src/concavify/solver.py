"""Expected-utility maximization on a finite market via concavification duality.

The concavified problem max E[U_c(f)] s.t. E[z f] <= x separates across
states given a multiplier y: each state's payoff lies in the maximizer set
-dV(y z_i).  A bisection over y locates the multiplier whose budget envelope
[B_min, B_max] brackets x; states whose scaled multiplier lands on a kink of
V retain interval freedom that is resolved deterministically.  The payoff
under the original non-concave U is then searched over component-endpoint
assignments at the kink states, and the gap between the concavified and the
attainable value is reported honestly.  A brute-force grid search over the
budget simplex serves as an independent oracle on small markets.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .market import FiniteMarket
from .tolerances import DEFAULT, Tolerances
from .transform import ConvexConjugate, conjugate, subdifferential_V, subdifferential_Uc
from .utility import ConcaveEnvelope, GridSpec, PiecewiseUtility, compute_envelope, _upper_hull

__all__ = [
    "SolverError",
    "KinkSelection",
    "SolverResult",
    "BudgetEnvelope",
    "budget_envelope",
    "ValueCurve",
    "DualCurve",
    "DualityReport",
    "BruteForceResult",
    "VFiniteReport",
    "FocReport",
    "pointwise_argmax",
    "solve",
    "value_function",
    "dual_function",
    "duality_check",
    "brute_force",
    "check_assumption_vfinite",
    "foc_check",
    "default_envelope_grid",
]


class SolverError(RuntimeError):
    """Multiplier search failed to converge or to bracket the budget."""


class _BracketError(SolverError):
    """Budget outside the reachable range of the current envelope grid."""


def pointwise_argmax(
    V: ConvexConjugate, y: float, z: float, tol: Tolerances = DEFAULT
) -> tuple[float, float]:
    """Maximizer interval [x_lo, x_hi] of x -> U_c(x) - y*z*x, read off -dV(y*z)."""
    if y <= 0 or z <= 0:
        raise ValueError("y and z must be positive")
    dv = subdifferential_V(V, y * z, tol=tol)
    return (-dv.hi, -dv.lo)


@dataclass(frozen=True)
class KinkSelection:
    """Record of the choice made inside one kink state's maximizer interval."""

    state: int
    x_lo: float
    x_hi: float
    chosen: float


@dataclass(frozen=True)
class SolverResult:
    payoff: tuple[float, ...]
    multiplier: float
    primal_value_U: float
    concavified_value: float
    dual_value: float
    duality_gap: float
    kink_states: tuple[int, ...]
    selection_record: tuple[KinkSelection, ...]
    primal_payoff: tuple[float, ...]
    budget_slack: bool
    primal_search_exhaustive: bool
    iterations: int


@dataclass(frozen=True)
class _Concavified:
    """Internal: concavified optimum on a subset of states."""

    multiplier: float
    payoff: dict[int, float]
    intervals: dict[int, tuple[float, float]]
    kink_states: tuple[int, ...]
    budget_slack: bool
    iterations: int


@dataclass(frozen=True)
class BudgetEnvelope:
    """Reachable budget range at a multiplier: B_min/B_max price the maximizer
    interval endpoints of every state.  Both bounds are nonincreasing in y."""

    multiplier: float
    b_min: float
    b_max: float
    intervals: tuple[tuple[float, float], ...]

    def brackets(self, x: float, slack: float) -> bool:
        return self.b_min - slack <= x <= self.b_max + slack


def budget_envelope(
    m: FiniteMarket,
    V: ConvexConjugate,
    y: float,
    states: Sequence[int] | None = None,
    caps: np.ndarray | None = None,
    tol: Tolerances = DEFAULT,
) -> BudgetEnvelope:
    """B_min(y), B_max(y) over the given states (all by default)."""
    if states is None:
        states = tuple(range(m.n_states))
    if caps is None:
        caps = np.full(m.n_states, math.inf)
    iv = _intervals_at(m, V, y, states, caps, tol)
    p, z = m.p, m.z
    b_min = math.fsum(p[i] * z[i] * iv[i][0] for i in states)
    b_max = math.fsum(p[i] * z[i] * iv[i][1] for i in states)
    return BudgetEnvelope(y, b_min, b_max, tuple(iv[i] for i in states))


def default_envelope_grid(m: FiniteMarket, u: PiecewiseUtility, x: float) -> GridSpec:
    """Geometric grid generous enough to cover every affordable payoff."""
    caps = x / (m.p * m.z)
    bps = [b for b in u.breakpoints if math.isfinite(b)]
    x_max = max(4.0 * float(np.max(caps)), (4.0 * max(bps)) if bps else 0.0, 10.0)
    x_min = min(1e-4, x * 1e-4)
    return GridSpec(x_min=x_min, x_max=x_max, n_points=4001, spacing="geometric")


def _intervals_at(
    m: FiniteMarket, V: ConvexConjugate, y: float, states: Sequence[int],
    caps: np.ndarray, tol: Tolerances,
) -> dict[int, tuple[float, float]]:
    out: dict[int, tuple[float, float]] = {}
    for i in states:
        lo, hi = pointwise_argmax(V, y, float(m.z[i]), tol=tol)
        # an unbounded maximizer (domain boundary) is capped at the budget's reach
        if not math.isfinite(hi):
            hi = float(caps[i]) + 1.0
        out[i] = (lo, hi)
    return out


def _solve_concavified(
    m: FiniteMarket,
    env: ConcaveEnvelope,
    V: ConvexConjugate,
    states: tuple[int, ...],
    budget: float,
    tol: Tolerances,
) -> _Concavified:
    """Bisection on the multiplier restricted to ``states`` with ``budget``."""
    p, z = m.p, m.z
    slack = tol.budget_bind * max(1.0, budget)
    if budget <= tol.budget:
        pay = {i: 0.0 for i in states}
        return _Concavified(math.inf, pay, {i: (0.0, 0.0) for i in states}, (), False, 0)
    caps = np.array([budget / (p[i] * z[i]) for i in range(m.n_states)])

    # satiation: the cheapest profile reaching the envelope's supremum
    x_sat = env.satiation_point
    if x_sat is not None:
        sat_cost = math.fsum(p[i] * z[i] * x_sat for i in states)
        if budget >= sat_cost - slack:
            pay = {i: x_sat for i in states}
            iv = {i: (x_sat, x_sat) for i in states}
            return _Concavified(0.0, pay, iv, (), budget > sat_cost + tol.budget, 0)

    zmin = float(np.min(z[list(states)]))
    zmax = float(np.max(z[list(states)]))
    kink_lo = float(V._ys[0])
    kink_hi = float(V._ys[-1])
    if V.domain_start > 0:
        y_lo = V.domain_start / zmin * (1 + 1e-12)
    else:
        y_lo = kink_lo / zmax * 1e-9
    y_hi = kink_hi / zmin * 2.0

    def envelope_at(y: float) -> tuple[float, float, dict[int, tuple[float, float]]]:
        be = budget_envelope(m, V, y, states=states, caps=caps, tol=tol)
        return be.b_min, be.b_max, dict(zip(states, be.intervals))

    bmin, bmax, iv = envelope_at(y_lo)
    if bmax + slack < budget:
        raise _BracketError(
            f"budget {budget} exceeds the grid's reach {bmax} at the smallest multiplier; "
            "enlarge the envelope grid"
        )
    if bmin - slack <= budget <= bmax + slack:
        y_star, intervals = y_lo, iv
        iters = 0
    else:
        bmin, bmax, iv = envelope_at(y_hi)
        if bmin - slack > budget:
            raise _BracketError(
                f"budget {budget} below the grid's reach {bmin} at the largest multiplier"
            )
        y_star, intervals, iters = None, None, 0
        for it in range(tol.bisect_max_iter):
            iters = it + 1
            y_mid = math.sqrt(y_lo * y_hi)
            bmin, bmax, iv = envelope_at(y_mid)
            if bmin - slack <= budget <= bmax + slack:
                y_star, intervals = y_mid, iv
                break
            if bmin > budget:
                y_lo = y_mid
            else:
                y_hi = y_mid
            if y_hi - y_lo < tol.bisect_rel_bracket * y_hi:
                y_mid = math.sqrt(y_lo * y_hi)
                bmin, bmax, iv = envelope_at(y_mid)
                if bmin - slack <= budget <= bmax + slack:
                    y_star, intervals = y_mid, iv
                break
        if y_star is None:
            raise SolverError(
                f"bisection did not converge: bracket [{y_lo}, {y_hi}], "
                f"budget envelope [{bmin}, {bmax}], target {budget}"
            )

    # deterministic in-interval selection: start at the lower endpoints, raise
    # in ascending z order, split fractionally in the last adjusted state
    pay = {i: intervals[i][0] for i in states}
    kinks = [
        i for i in states
        if intervals[i][1] - intervals[i][0] > 1e-12 * max(1.0, abs(intervals[i][1]))
    ]
    residual = budget - math.fsum(p[i] * z[i] * pay[i] for i in states)
    residual = max(residual, 0.0)
    order = sorted(kinks, key=lambda i: (z[i], i))
    for i in order:
        if residual <= 0:
            break
        room = p[i] * z[i] * (intervals[i][1] - intervals[i][0])
        take = min(residual, room)
        pay[i] += take / (p[i] * z[i])
        residual -= take
    pay = {i: float(v) for i, v in pay.items()}
    return _Concavified(y_star, pay, intervals, tuple(sorted(kinks)), False, iters)


def _primal_search(
    m: FiniteMarket,
    u: PiecewiseUtility,
    env: ConcaveEnvelope,
    V: ConvexConjugate,
    x: float,
    tol: Tolerances,
) -> tuple[float, tuple[float, ...], bool]:
    """Best attainable E[U(f)] over endpoint-restricted kink assignments.

    Three candidate families, all evaluated under the raw U:

    - the deterministic concavified selection;
    - recursive branching: kink states take their maximizer-interval
      endpoints, any state may be pinned to a component endpoint, and the
      remaining states are re-solved on the leftover budget;
    - anchor assignments: all states but one on {0, breakpoints, component
      endpoints} with the free state absorbing the budget exactly.

    Exact for piecewise-linear utilities (every linear-programming vertex of
    the problem has one of these shapes).  Optima that park several states
    in the interior of a strictly concave arc inside a non-concavity
    component are approximated from below; the reported duality gap is then
    conservative.  The enumeration is capped at ``tol.max_primal_branches``
    nodes; past the cap only the candidates found so far are kept and the
    result is flagged non-exhaustive.
    """
    p, z = m.p, m.z
    counter = {"nodes": 0, "exhaustive": True}

    def utility_of(pay: dict[int, float]) -> float:
        return math.fsum(p[i] * float(u.value_or_limit(pay[i])) for i in pay)

    def fallback(states: tuple[int, ...], budget: float) -> tuple[float, dict[int, float]]:
        # bracket failure: tiny budgets below the grid's reach
        best_pay = {i: 0.0 for i in states}
        best_val = utility_of(best_pay)
        for j in states:
            pay = {i: 0.0 for i in states}
            pay[j] = budget / (p[j] * z[j])
            val = utility_of(pay)
            if val > best_val:
                best_val, best_pay = val, pay
        return best_val, best_pay

    # pinning only pays off for strictly concave arcs inside components; for
    # piecewise-linear utilities the anchor search below is already exact
    piecewise_linear = all(piece.form in ("linear", "constant") for piece in u.pieces)
    pin_values = () if piecewise_linear else sorted(
        {v for comp in env.components for v in comp}
    )

    def rec(states: tuple[int, ...], budget: float) -> tuple[float, dict[int, float]]:
        if not states:
            return 0.0, {}
        counter["nodes"] += 1
        try:
            sub = _solve_concavified(m, env, V, states, budget, tol)
        except _BracketError:
            return fallback(states, budget)
        best_pay = dict(sub.payoff)
        best_val = utility_of(best_pay)
        if sub.kink_states and counter["nodes"] < tol.max_primal_branches:
            endpoints = [
                ((i, sub.intervals[i][0]), (i, sub.intervals[i][1]))
                for i in sub.kink_states
            ]
            rest = tuple(i for i in states if i not in sub.kink_states)
            for combo in itertools.product(*endpoints):
                assigned = dict(combo)
                cost = math.fsum(p[i] * z[i] * v for i, v in assigned.items())
                if cost > budget + tol.budget:
                    continue
                val_a = utility_of(assigned)
                if math.isinf(val_a) and val_a < 0:
                    continue
                sub_val, sub_pay = rec(rest, budget - cost)
                if val_a + sub_val > best_val:
                    best_val = val_a + sub_val
                    best_pay = {**assigned, **sub_pay}
        elif sub.kink_states:
            counter["exhaustive"] = False
        # pin one state to a component endpoint, re-solve the others: catches
        # optima that keep several states interior at a different multiplier
        if len(states) > 1:
            for i in states:
                for v in pin_values:
                    if counter["nodes"] >= tol.max_primal_branches:
                        counter["exhaustive"] = False
                        return best_val, best_pay
                    cost = p[i] * z[i] * v
                    if cost > budget + tol.budget:
                        continue
                    if abs(v - best_pay.get(i, -1.0)) <= 1e-12 * max(1.0, v):
                        continue  # already the selection
                    sub_val, sub_pay = rec(tuple(s for s in states if s != i),
                                           budget - cost)
                    val = p[i] * float(u.value_or_limit(v)) + sub_val
                    if val > best_val:
                        best_val = val
                        best_pay = {i: float(v), **sub_pay}
        return best_val, best_pay

    states = tuple(range(m.n_states))
    val, pay = rec(states, x)
    payoff = tuple(float(pay.get(i, 0.0)) for i in states)
    a_val, a_pay, a_exh = _anchor_search(m, u, env, x, tol)
    if a_val > val:
        val, payoff = a_val, a_pay
    return float(val), payoff, counter["exhaustive"] and a_exh


def _anchor_search(
    m: FiniteMarket,
    u: PiecewiseUtility,
    env: ConcaveEnvelope,
    x: float,
    tol: Tolerances,
) -> tuple[float, tuple[float, ...], bool]:
    """Exhaust payoffs with all states but one on the utility's anchor set.

    Anchors are 0, the piece breakpoints, and the component endpoints; the
    remaining state absorbs the budget residual exactly.  For piecewise-linear
    utilities every vertex of the problem's linear cells has this shape, so
    the search attains the true optimum there.
    """
    p, z = m.p, m.z
    n = m.n_states
    caps = x / (p * z)
    anchors = {0.0}
    anchors.update(b for b in u.breakpoints if math.isfinite(b))
    for a, b in env.components:
        anchors.update((a, b))
    anchor_list = sorted(anchors)
    exhaustive = True
    n_combos = n * max(1, len(anchor_list)) ** max(0, n - 1)
    if n_combos > tol.max_primal_branches:
        anchor_list = anchor_list[: max(2, int(tol.max_primal_branches ** (1 / max(1, n - 1))))]
        exhaustive = False
    best_val = -math.inf
    best_pay = tuple(0.0 for _ in range(n))
    states = list(range(n))
    for free in states:
        others = [i for i in states if i != free]
        cand_sets = [[a for a in anchor_list if a <= caps[i] * (1 + 1e-12)] for i in others]
        for combo in itertools.product(*cand_sets):
            cost = math.fsum(p[i] * z[i] * v for i, v in zip(others, combo))
            rem = x - cost
            if rem < -tol.budget:
                continue
            f_free = max(rem, 0.0) / (p[free] * z[free])
            val = math.fsum(
                p[i] * float(u.value_or_limit(v)) for i, v in zip(others, combo)
            ) + p[free] * float(u.value_or_limit(f_free))
            if val > best_val:
                pay = dict(zip(others, combo))
                pay[free] = f_free
                best_val = val
                best_pay = tuple(float(pay[i]) for i in states)
    return best_val, best_pay, exhaustive


def solve(
    m: FiniteMarket,
    u: PiecewiseUtility,
    x: float,
    env: ConcaveEnvelope | None = None,
    V: ConvexConjugate | None = None,
    grid: GridSpec | None = None,
    tol: Tolerances = DEFAULT,
) -> SolverResult:
    """Maximize E[U(f)] over the budget set {f >= 0 : E[z f] <= x}.

    Returns the concavified optimizer (budget-exact, per-state membership in
    -dV(y* z_i)), the multiplier, both optimal values, and the duality gap.
    When the utility saturates and the budget exceeds the cheapest satiating
    profile, the multiplier is 0 and the result is flagged ``budget_slack``.
    """
    if x <= 0:
        raise ValueError("initial wealth must be positive")
    if env is None:
        env = compute_envelope(u, grid or default_envelope_grid(m, u, x), tol=tol)
    if V is None:
        V = conjugate(env, tol=tol)
    states = tuple(range(m.n_states))
    try:
        core = _solve_concavified(m, env, V, states, x, tol)
    except _BracketError as e:
        raise SolverError(str(e)) from None
    p = m.p
    payoff = tuple(core.payoff[i] for i in states)
    concavified = math.fsum(p[i] * float(env.value(payoff[i])) for i in states)
    if core.multiplier == 0.0 or not math.isfinite(core.multiplier):
        dual = concavified  # v(0+) is the satiation level; x*y = 0
    else:
        dual = math.fsum(
            p[i] * float(V.value(core.multiplier * m.z[i])) for i in states
        ) + x * core.multiplier
    primal, primal_payoff, exhaustive = _primal_search(m, u, env, V, x, tol)
    gap = concavified - primal
    selection = tuple(
        KinkSelection(i, core.intervals[i][0], core.intervals[i][1], core.payoff[i])
        for i in core.kink_states
    )
    return SolverResult(
        payoff=payoff,
        multiplier=core.multiplier,
        primal_value_U=primal,
        concavified_value=concavified,
        dual_value=dual,
        duality_gap=gap,
        kink_states=core.kink_states,
        selection_record=selection,
        primal_payoff=primal_payoff,
        budget_slack=core.budget_slack,
        primal_search_exhaustive=exhaustive,
        iterations=core.iterations,
    )


@dataclass(frozen=True)
class ValueCurve:
    x: tuple[float, ...]
    u_U: tuple[float, ...]
    u_Uc: tuple[float, ...]
    hull_u_U: tuple[float, ...]


def value_function(
    m: FiniteMarket,
    u: PiecewiseUtility,
    x_grid: Sequence[float],
    env: ConcaveEnvelope | None = None,
    V: ConvexConjugate | None = None,
    grid: GridSpec | None = None,
    refine: bool | None = None,
    refine_grid: int = 1001,
    tol: Tolerances = DEFAULT,
) -> ValueCurve:
    """Value curves u(x, U) and u(x, U_c) over the wealth grid, plus the hull.

    Grid points whose solve reports a positive gap are re-searched with the
    brute-force oracle on markets with at most 4 states (``refine``, on by
    default there) and the better value is kept.
    """
    xs = np.asarray(x_grid, dtype=float)
    if np.any(xs <= 0) or np.any(np.diff(xs) <= 0):
        raise ValueError("x grid must be positive and strictly increasing")
    if env is None:
        env = compute_envelope(u, grid or default_envelope_grid(m, u, float(xs[-1])), tol=tol)
    if V is None:
        V = conjugate(env, tol=tol)
    if refine is None:
        refine = m.n_states <= 4
    u_raw = np.empty(len(xs))
    u_conc = np.empty(len(xs))
    for k, xv in enumerate(xs):
        res = solve(m, u, float(xv), env=env, V=V, tol=tol)
        u_conc[k] = res.concavified_value
        val = res.primal_value_U
        if refine and m.n_states <= 4 and res.duality_gap > tol.geom:
            bf = brute_force(m, u, float(xv), n_grid=refine_grid)
            val = max(val, bf.value)
        u_raw[k] = val
    hull_idx = _upper_hull(xs, u_raw)
    hull_vals = np.interp(xs, xs[hull_idx], u_raw[hull_idx])
    return ValueCurve(
        x=tuple(xs.tolist()),
        u_U=tuple(u_raw.tolist()),
        u_Uc=tuple(u_conc.tolist()),
        hull_u_U=tuple(hull_vals.tolist()),
    )


@dataclass(frozen=True)
class DualCurve:
    y: tuple[float, ...]
    v: tuple[float, ...]
    domain_violations: tuple[tuple[float, int], ...]  # (y, state) with y*z below domain


def dual_function(
    m: FiniteMarket,
    V: ConvexConjugate,
    y_grid: Sequence[float],
) -> DualCurve:
    """v(y) = sum_i p_i V(y z_i): exact piecewise-linear evaluation in y."""
    ys = np.asarray(y_grid, dtype=float)
    if np.any(ys <= 0):
        raise ValueError("y grid must be positive")
    vals = np.empty(len(ys))
    violations: list[tuple[float, int]] = []
    for k, y in enumerate(ys):
        per_state = np.asarray(V.value(y * m.z, strict=False))
        for i in np.nonzero(~np.isfinite(per_state))[0]:
            violations.append((float(y), int(i)))
        vals[k] = math.fsum(float(p) * float(v) for p, v in zip(m.p, per_state))
    return DualCurve(tuple(ys.tolist()), tuple(vals.tolist()), tuple(violations))


@dataclass(frozen=True)
class DualityReport:
    max_dev_fenchel: float
    hull_coincidence_dev: float
    x_points: int
    y_points: int


def duality_check(
    m: FiniteMarket,
    u: PiecewiseUtility,
    x_grid: Sequence[float],
    y_grid: Sequence[float],
    env: ConcaveEnvelope | None = None,
    V: ConvexConjugate | None = None,
    grid: GridSpec | None = None,
    curve: ValueCurve | None = None,
    tol: Tolerances = DEFAULT,
) -> DualityReport:
    """Grid residuals of the two duality identities.

    max_dev_fenchel compares v(y) against the conjugate of the sampled value
    curve; hull_coincidence_dev compares the concavified value curve with the
    upper hull of the raw one.  Both shrink with the grid resolution.  Pass a
    precomputed ``curve`` to avoid re-solving the grid.
    """
    xs = np.asarray(x_grid, dtype=float)
    if env is None:
        env = compute_envelope(u, grid or default_envelope_grid(m, u, float(xs[-1])), tol=tol)
    if V is None:
        V = conjugate(env, tol=tol)
    if curve is None:
        curve = value_function(m, u, xs, env=env, V=V, tol=tol)
    elif len(curve.x) != len(xs) or not np.allclose(curve.x, xs):
        raise ValueError("supplied curve was computed on a different x grid")
    dual = dual_function(m, V, y_grid)
    u_raw = np.asarray(curve.u_U)
    max_dev = 0.0
    for y, v in zip(dual.y, dual.v):
        best = float(np.max(u_raw - xs * y))
        max_dev = max(max_dev, abs(v - best))
    hull_dev = float(np.max(np.abs(np.asarray(curve.u_Uc) - np.asarray(curve.hull_u_U))))
    return DualityReport(
        max_dev_fenchel=max_dev,
        hull_coincidence_dev=hull_dev,
        x_points=len(xs),
        y_points=len(dual.y),
    )


@dataclass(frozen=True)
class BruteForceResult:
    value: float
    payoff: tuple[float, ...]


def brute_force(
    m: FiniteMarket,
    u: PiecewiseUtility,
    x: float,
    wealth_grid: Sequence[float] | None = None,
    n_grid: int | None = None,
) -> BruteForceResult:
    """Exhaustive search over the budget simplex; oracle for small markets.

    All states but one range over the wealth grid (restricted to their
    affordability caps); the free coordinate is solved exactly from the
    budget.  Every coordinate takes a turn as the free one.  The grid always
    contains 0, the caps, and the utility's breakpoints, so the result is
    within a local-Lipschitz-constant times the grid spacing of the true
    maximum, with jump points hit exactly.
    """
    n = m.n_states
    if n > 4:
        raise ValueError("brute force refused: exponential beyond 4 states")
    if x <= 0:
        raise ValueError("initial wealth must be positive")
    p, z = m.p, m.z
    caps = x / (p * z)
    if wealth_grid is None:
        if n_grid is None:
            n_grid = 1001 if n <= 3 else 201
        base = np.linspace(0.0, float(np.max(caps)), n_grid)
    else:
        base = np.asarray(wealth_grid, dtype=float)
        if np.any(base < 0):
            raise ValueError("wealth grid must be nonnegative")
    extras = [b for b in u.breakpoints if b <= float(np.max(caps))]
    pts = np.unique(np.concatenate([base, np.asarray(extras), caps, [0.0]]))

    def cand(i: int) -> np.ndarray:
        return pts[pts <= caps[i] * (1 + 1e-12)]

    def uval(vec: np.ndarray) -> np.ndarray:
        return np.asarray(u.value_or_limit(np.maximum(vec, 0.0)))

    best_val = -math.inf
    best_pay: tuple[float, ...] = tuple(0.0 for _ in range(n))
    states = list(range(n))
    for free in states:
        others = [i for i in states if i != free]
        if not others:
            f = x / (p[free] * z[free])
            val = float(u.value_or_limit(f))
            if val > best_val:
                best_val, best_pay = val, (f,)
            continue
        vec_state = others[-1]
        loop_states = others[:-1]
        vec_cand = cand(vec_state)
        vec_pu = p[vec_state] * uval(vec_cand)
        vec_cost = p[vec_state] * z[vec_state] * vec_cand
        for combo in itertools.product(*(cand(i) for i in loop_states)):
            fixed_cost = math.fsum(
                p[i] * z[i] * v for i, v in zip(loop_states, combo)
            )
            if fixed_cost > x * (1 + 1e-12):
                continue
            fixed_u = math.fsum(
                p[i] * float(u.value_or_limit(v)) for i, v in zip(loop_states, combo)
            )
            rem = x - fixed_cost - vec_cost
            ok = rem >= -1e-12 * max(1.0, x)
            if not np.any(ok):
                continue
            f_free = np.where(ok, rem / (p[free] * z[free]), 0.0)
            total = fixed_u + vec_pu + p[free] * uval(f_free)
            total = np.where(ok, total, -math.inf)
            k = int(np.argmax(total))
            if total[k] > best_val:
                pay = dict(zip(loop_states, combo))
                pay[vec_state] = float(vec_cand[k])
                pay[free] = float(max(f_free[k], 0.0))
                best_val = float(total[k])
                best_pay = tuple(pay[i] for i in states)
    return BruteForceResult(value=best_val, payoff=best_pay)


@dataclass(frozen=True)
class VFiniteReport:
    finite_for_all_probes: bool
    values: tuple[float, ...]
    violations: tuple[tuple[float, int], ...]  # (probe, state)


def check_assumption_vfinite(
    m: FiniteMarket,
    V: ConvexConjugate,
    y_probes: Sequence[float],
) -> VFiniteReport:
    """Is E[V(y z)] finite at each probe?  Reports per-state domain violations."""
    probes = [float(y) for y in y_probes]
    if any(y <= 0 for y in probes):
        raise ValueError("probes must be positive")
    values: list[float] = []
    violations: list[tuple[float, int]] = []
    for y in probes:
        per_state = np.asarray(V.value(y * m.z, strict=False))
        for i in np.nonzero(~np.isfinite(per_state))[0]:
            violations.append((y, int(i)))
        values.append(
            math.fsum(float(p) * float(v) for p, v in zip(m.p, per_state))
            if np.all(np.isfinite(per_state))
            else math.inf
        )
    return VFiniteReport(
        finite_for_all_probes=not violations,
        values=tuple(values),
        violations=tuple(violations),
    )


@dataclass(frozen=True)
class FocReport:
    max_foc_residual: float
    checked_states: tuple[int, ...]
    mode: str  # "derivative" | "subgradient form"


def foc_check(
    result: SolverResult,
    m: FiniteMarket,
    env: ConcaveEnvelope,
    tol: Tolerances = DEFAULT,
) -> FocReport:
    """First-order condition y* z_i in dU_c(f_i) at every positive payoff state.

    For non-differentiable utilities the condition is the subgradient
    inclusion; the report is flagged "subgradient form" whenever a checked
    state sits on a hull kink.
    """
    checked: list[int] = []
    residual = 0.0
    at_kink = False
    for i, f in enumerate(result.payoff):
        if f <= tol.geom:
            continue
        checked.append(i)
        interval = subdifferential_Uc(env, f, tol=tol)
        if interval.width() > tol.geom:
            at_kink = True
        target = result.multiplier * float(m.z[i])
        residual = max(residual, interval.lo - target, target - interval.hi, 0.0)
    return FocReport(
        max_foc_residual=residual,
        checked_states=tuple(checked),
        mode="subgradient form" if at_kink else "derivative",
    )
