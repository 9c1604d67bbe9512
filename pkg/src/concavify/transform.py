"""Convex-duality engine on piecewise-linear hulls.

The conjugate V(y) = sup_x {U_c(x) - x*y} of a piecewise-linear concave hull
is computed by exact vertex algebra: V's kinks sit at the hull's chord slopes
and its slopes are the negated hull abscissae.  Everything downstream
(subdifferentials, Fenchel-Young checks, the biconjugate, elasticity
diagnostics) is then exact arithmetic on those vertices rather than a
numerical sup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .tolerances import DEFAULT, Tolerances
from .utility import ConcaveEnvelope, DomainError, PiecewiseUtility

__all__ = [
    "ConvexConjugate",
    "SubdifferentialInterval",
    "conjugate",
    "grid_sup_conjugate",
    "subdifferential_V",
    "subdifferential_Uc",
    "FenchelYoungReport",
    "fenchel_young_check",
    "biconjugate",
    "EAEReport",
    "estimate_eae",
    "check_eae_inequality",
    "find_eae_gamma",
    "check_envelope_domination",
]


@dataclass(frozen=True)
class SubdifferentialInterval:
    """Closed interval [lo, hi] of supporting slopes at a point."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError(f"subdifferential interval inverted: [{self.lo}, {self.hi}]")

    def contains(self, v: float, tol: float = 0.0) -> bool:
        lo_slack = tol * max(1.0, abs(self.lo)) if math.isfinite(self.lo) else 0.0
        hi_slack = tol * max(1.0, abs(self.hi)) if math.isfinite(self.hi) else 0.0
        return self.lo - lo_slack <= v <= self.hi + hi_slack

    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class ConvexConjugate:
    """Piecewise-linear convex, nonincreasing V with kinks at ``vertices``.

    Below the first kink V follows ``left_slope`` down to ``domain_start``
    (V = +inf below that when positive); beyond the last kink it follows
    ``right_slope``.  When ``domain_start == 0`` the function has the finite
    limit ``limit_at_zero`` as y -> 0.
    """

    vertices: tuple[tuple[float, float], ...]
    left_slope: float
    right_slope: float
    domain_start: float
    provenance: str = ""
    interior_slopes: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        verts = tuple((float(y), float(v)) for y, v in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if not verts:
            raise ValueError("conjugate needs at least one vertex")
        ys = [y for y, _ in verts]
        if ys[0] <= 0:
            raise ValueError("conjugate vertices must have positive abscissae")
        if any(b <= a for a, b in zip(ys, ys[1:])):
            raise ValueError("conjugate vertex abscissae must be strictly increasing")
        if any(not math.isfinite(v) for _, v in verts):
            raise ValueError("conjugate must be finite at every vertex")
        if self.domain_start < 0:
            raise ValueError("domain start must be nonnegative")
        if self.domain_start > ys[0] * (1 + 1e-12):
            raise ValueError("domain start must not exceed the first vertex")
        if self.interior_slopes is not None:
            interior = tuple(float(s) for s in self.interior_slopes)
            object.__setattr__(self, "interior_slopes", interior)
            if len(interior) != len(verts) - 1:
                raise ValueError("interior_slopes must have one entry per segment")
        slopes = self.segment_slopes
        scale = max(1.0, float(np.max(np.abs(slopes[np.isfinite(slopes)]))))
        if np.any(np.diff(slopes) < -1e-12 * scale):
            raise ValueError("conjugate slopes must be nondecreasing (convexity)")
        if slopes[-1] > 1e-12 * scale:
            raise ValueError("conjugate must be nonincreasing in y")

    @cached_property
    def _ys(self) -> np.ndarray:
        return np.array([y for y, _ in self.vertices])

    @cached_property
    def _vals(self) -> np.ndarray:
        return np.array([v for _, v in self.vertices])

    @cached_property
    def segment_slopes(self) -> np.ndarray:
        """Slopes of V on the segments around the kinks, ascending in y.

        When the conjugate came out of the hull algebra the interior slopes
        are the exact negated hull abscissae; otherwise they are chord
        quotients of the vertex list.
        """
        if self.interior_slopes is not None:
            chords = np.asarray(self.interior_slopes)
        elif len(self._ys) > 1:
            chords = np.diff(self._vals) / np.diff(self._ys)
        else:
            chords = np.array([])
        return np.concatenate([[self.left_slope], chords, [self.right_slope]])

    @property
    def limit_at_zero(self) -> float:
        if self.domain_start > 0:
            return math.inf
        return float(self._vals[0] - self.left_slope * self._ys[0])

    def value(self, y: np.ndarray | float, strict: bool = True) -> np.ndarray | float:
        """V(y); out-of-domain queries raise (strict) or return +inf."""
        arr = np.asarray(y, dtype=float)
        bad = (arr <= 0) | (arr < self.domain_start * (1 - 1e-12))
        if strict and np.any(bad):
            raise DomainError(
                f"conjugate is +inf below its domain start {self.domain_start}"
            )
        ys, vals = self._ys, self._vals
        out = np.interp(arr, ys, vals)
        below = arr < ys[0]
        if np.any(below):
            out = np.where(below, vals[0] + self.left_slope * (arr - ys[0]), out)
        above = arr > ys[-1]
        if np.any(above):
            out = np.where(above, vals[-1] + self.right_slope * (arr - ys[-1]), out)
        out = np.where(bad, math.inf, out)
        return out if out.ndim else float(out)


def conjugate(env: ConcaveEnvelope, tol: Tolerances = DEFAULT) -> ConvexConjugate:
    """Exact Legendre-Fenchel transform of the piecewise-linear hull.

    Kinks of V sit at the hull's positive chord slopes with values
    V(s_i) = U_c(x_i) - x_i * s_i; for y beyond the steepest slope the
    maximizer collapses to the first hull vertex, and below the flattest
    positive slope it sits at the last vertex of that segment.  V is +inf
    below ``tail_slope`` when the hull keeps growing.
    """
    xs = env._xs
    vals = env._vals
    slopes = env.slopes  # nonincreasing
    pos = np.nonzero(slopes > 0)[0]
    if len(pos) == 0:
        raise ValueError("hull has no increasing segment; conjugate degenerate")
    k = int(pos[-1])  # last segment with positive slope
    kinks: list[tuple[float, float]] = []
    afters: list[float] = []  # exact slope of V just above each kink: -x_i
    for i in range(k, -1, -1):  # ascending y = slopes[i]
        y = float(slopes[i])
        v = float(vals[i + 1] - xs[i + 1] * y)
        if kinks and abs(y - kinks[-1][0]) <= 1e-15 * max(y, kinks[-1][0]):
            afters[-1] = float(-xs[i])  # merged kink: the upper segment wins
            continue
        kinks.append((y, v))
        afters.append(float(-xs[i]))
    return ConvexConjugate(
        vertices=tuple(kinks),
        left_slope=float(-xs[k + 1]),
        right_slope=float(-xs[0]),
        domain_start=float(max(env.tail_slope, 0.0)),
        provenance="hull",
        interior_slopes=tuple(afters[:-1]),
    )


def grid_sup_conjugate(
    u: PiecewiseUtility, xs: Sequence[float], ys: Sequence[float]
) -> np.ndarray:
    """Oracle route: pointwise sup of U(x) - x*y over the sampled grid.

    Independent of the hull algebra; used to cross-check :func:`conjugate`
    (the raw utility and its envelope share one conjugate).
    """
    xs = np.asarray(xs, dtype=float)
    vals = np.asarray(u.value(xs))
    out = np.empty(len(ys))
    for j, y in enumerate(ys):
        out[j] = np.max(vals - xs * float(y))
    return out


def subdifferential_V(
    V: ConvexConjugate, y: float, tol: Tolerances = DEFAULT
) -> SubdifferentialInterval:
    """[V'_-(y), V'_+(y)]; the maximizer set of x -> U_c(x) - x*y is -dV(y)."""
    y = float(y)
    if y <= 0 or y < V.domain_start * (1 - 1e-12):
        raise DomainError(f"y={y} outside the conjugate's domain [{V.domain_start}, oo)")
    ys = V._ys
    seg = V.segment_slopes
    j = int(np.searchsorted(ys, y))
    for cand in (j - 1, j):
        if 0 <= cand < len(ys) and abs(y - ys[cand]) <= tol.kink_rel * max(abs(y), ys[cand]):
            return SubdifferentialInterval(float(seg[cand]), float(seg[cand + 1]))
    if V.domain_start > 0 and abs(y - V.domain_start) <= tol.kink_rel * max(abs(y), V.domain_start):
        # left boundary of the domain: every steeper support works
        return SubdifferentialInterval(-math.inf, float(seg[0]))
    s = seg[min(j, len(seg) - 1)]
    return SubdifferentialInterval(float(s), float(s))


def subdifferential_Uc(
    env: ConcaveEnvelope, x: float, tol: Tolerances = DEFAULT
) -> SubdifferentialInterval:
    """Supporting slopes of the hull at x > 0, reported as [lo, hi] with lo <= hi."""
    left, right = env.one_sided_slopes(float(x), kink_rel=tol.kink_rel)
    return SubdifferentialInterval(min(left, right), max(left, right))


@dataclass(frozen=True)
class FenchelYoungReport:
    gap: float
    equality_flag: bool
    x_in_minus_dV: bool
    y_in_dUc: bool


def fenchel_young_check(
    env: ConcaveEnvelope,
    V: ConvexConjugate,
    x: float,
    y: float,
    tol: Tolerances = DEFAULT,
) -> FenchelYoungReport:
    """gap = V(y) - (U_c(x) - x*y) with the three equivalent equality tests.

    Membership flags use the kink-snap tolerance so the three routes agree
    away from degenerate hairline cases.
    """
    x, y = float(x), float(y)
    gap = float(V.value(y)) + x * y - float(env.value(x))
    dv = subdifferential_V(V, y, tol=tol)
    maximizers = SubdifferentialInterval(-dv.hi, -dv.lo)
    duc = subdifferential_Uc(env, x, tol=tol)
    member_tol = tol.kink_rel
    return FenchelYoungReport(
        gap=gap,
        equality_flag=bool(gap <= tol.fenchel),
        x_in_minus_dV=maximizers.contains(x, tol=member_tol),
        y_in_dUc=duc.contains(y, tol=member_tol),
    )


def biconjugate(V: ConvexConjugate) -> ConcaveEnvelope:
    """Transform back to x-space: x -> inf_y {V(y) + x*y}.

    For a conjugate produced from a hull this recovers the hull exactly (up
    to collinear vertices on a flat top): the new vertices sit at the negated
    segment slopes of V and carry values v_j + x*y_j from the adjacent kink.
    The returned envelope has the conjugate's domain start as its tail slope
    and carries no component information.
    """
    ys, vals = V._ys, V._vals
    seg = V.segment_slopes
    m = len(ys)
    verts: list[tuple[float, float]] = []
    for t in range(m, -1, -1):  # seg[t] ascending in t; x = -seg[t] descending
        x = -float(seg[t])
        j = t if t < m else m - 1  # adjacent kink index
        val = float(vals[j]) + x * float(ys[j])
        if verts and abs(x - verts[-1][0]) <= 1e-15 * max(abs(x), abs(verts[-1][0])):
            continue
        verts.append((x, val))
    if len(verts) == 1:
        # single-slope conjugate: synthesize a second vertex along the kink slope
        x0, v0 = verts[0]
        y0 = float(ys[0])
        verts.append((x0 + max(1.0, abs(x0)), v0 + y0 * max(1.0, abs(x0))))
    return ConcaveEnvelope(
        hull_vertices=tuple(verts),
        tail_slope=float(V.domain_start),
        components=(),
        grid_spec=None,
    )


@dataclass(frozen=True)
class EAEReport:
    """Numeric estimate of the asymptotic elasticity read off the conjugate."""

    estimate: float
    per_decade_max: tuple[float, ...]
    converged: bool
    y_grid: tuple[float, ...]
    ratios: tuple[float, ...]


def estimate_eae(
    V: ConvexConjugate,
    y_grid: Sequence[float],
    tol: Tolerances = DEFAULT,
) -> EAEReport:
    """Estimate limsup_{y->0} sup_{q in dV(y)} |q| y / V(y) on a log grid.

    Returns the max ratio over the smallest decade of y, plus the per-decade
    trace; flags non-convergence when the two smallest decades still differ
    by more than 5%.  Requires >= 10 points spanning >= 4 decades and V > 0
    on the grid (shift the utility by a constant first if needed).
    """
    ys = np.sort(np.asarray(y_grid, dtype=float))
    if len(ys) < 10:
        raise ValueError("need at least 10 grid points")
    if ys[0] <= 0:
        raise ValueError("y grid must be positive")
    span = math.log10(ys[-1] / ys[0])
    if span < 4 - 1e-9:
        raise ValueError(f"y grid must span at least 4 decades (got {span:.2f})")
    if np.any(ys <= V.domain_start * (1 + 1e-12)):
        raise DomainError("y grid dips below the conjugate's domain start")
    vvals = np.asarray(V.value(ys))
    if np.any(vvals <= 0):
        raise ValueError("shift utility: EAE undefined here (V <= 0 on the grid)")
    ratios = np.empty(len(ys))
    for i, y in enumerate(ys):
        dv = subdifferential_V(V, float(y), tol=tol)
        qmag = max(abs(dv.lo), abs(dv.hi))
        ratios[i] = qmag * y / vvals[i]
    decade = np.floor(np.log10(ys / ys[0]) + 1e-12).astype(int)
    decade = np.minimum(decade, int(math.floor(span - 1e-9)))
    per_decade = tuple(
        float(np.max(ratios[decade == d])) for d in range(int(decade.max()) + 1)
        if np.any(decade == d)
    )
    estimate = per_decade[0]
    converged = False
    if len(per_decade) >= 2:
        m0, m1 = per_decade[0], per_decade[1]
        converged = abs(m0 - m1) <= 0.05 * max(abs(m1), 1e-30)
    return EAEReport(
        estimate=float(estimate),
        per_decade_max=per_decade,
        converged=converged,
        y_grid=tuple(ys.tolist()),
        ratios=tuple(ratios.tolist()),
    )


def check_eae_inequality(
    V: ConvexConjugate,
    gamma: float,
    y0: float,
    mu_grid: Sequence[float],
    y_grid: Sequence[float] | None = None,
) -> bool:
    """Verify V(mu*y) <= mu**(-gamma) V(y) on the (mu, y) grid, y in (0, y0].

    Pairs whose scaled abscissa mu*y falls below the conjugate's domain are
    grid-truncation artifacts and are skipped.  Relative tolerance 1e-9.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if y0 <= 0:
        raise ValueError("y0 must be positive")
    mus = np.asarray(mu_grid, dtype=float)
    if np.any((mus <= 0) | (mus > 1)):
        raise ValueError("mu grid must lie in (0, 1]")
    if y_grid is None:
        lo = max(V.domain_start * (1 + 1e-9), y0 * 1e-4)
        if lo >= y0:
            raise DomainError("y0 is below the conjugate's usable domain")
        ys = np.geomspace(lo, y0, 40)
    else:
        ys = np.asarray(y_grid, dtype=float)
        if np.any((ys <= 0) | (ys > y0 * (1 + 1e-12))):
            raise ValueError("y grid must lie in (0, y0]")
    vy = np.asarray(V.value(ys, strict=False))
    if np.any(~np.isfinite(vy)):
        raise DomainError("y grid dips below the conjugate's domain start")
    if np.any(vy <= 0):
        raise ValueError("V must be positive on (0, y0] for this check")
    for mu in mus:
        scaled = mu * ys
        ok = scaled >= V.domain_start * (1 - 1e-12)
        if not np.any(ok):
            continue
        vmu = np.asarray(V.value(scaled[ok], strict=False))
        bound = mu ** (-gamma) * vy[ok]
        if np.any(vmu > bound * (1 + 1e-9) + 1e-15):
            return False
    return True


def find_eae_gamma(
    V: ConvexConjugate,
    y0: float,
    candidates: Sequence[float] = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0),
    mu_grid: Sequence[float] | None = None,
) -> float | None:
    """Smallest candidate gamma passing :func:`check_eae_inequality`, if any.

    A coarse search only; failing to find a gamma here does not certify that
    none exists.
    """
    mus = np.geomspace(1e-3, 1.0, 25) if mu_grid is None else np.asarray(mu_grid)
    for g in sorted(candidates):
        if check_eae_inequality(V, g, y0, mus):
            return float(g)
    return None


def check_envelope_domination(
    u: PiecewiseUtility,
    env: ConcaveEnvelope,
    x0: float,
    k: float,
    tol: Tolerances = DEFAULT,
) -> bool:
    """True iff 0 <= U_c <= k*U at all grid points beyond x0."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if float(u.value(x0)) <= 0:
        raise ValueError("U(x0) must be positive")
    if env.grid_spec is not None:
        xs = env.grid_spec.build()
        bps = [b for b in u.breakpoints if env.grid_spec.x_min < b < env.grid_spec.x_max]
        if bps:
            xs = np.unique(np.concatenate([xs, np.asarray(bps)]))
    else:
        hx = env._xs
        xs = np.unique(np.concatenate([hx, (hx[:-1] + hx[1:]) / 2.0]))
    xs = xs[xs > x0]
    if len(xs) == 0:
        return True
    uc = np.asarray(env.value(xs))
    uv = np.asarray(u.value(xs))
    slack = tol.geom * np.maximum(1.0, np.abs(uv))
    return bool(np.all(uc >= -slack) and np.all(uc <= k * uv + slack))
