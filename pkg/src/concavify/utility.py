"""Non-concave utilities on (0, oo) and their concave envelopes.

A utility is an ordered list of analytic pieces tiling (0, oo).  It must be
nondecreasing, upper semicontinuous (jumps up are allowed, jumps down are
not), non-constant, positive at infinity, and sublinear at infinity.  The
concave envelope is built on a finite grid by an upper-hull sweep with exact
insertion of every piece breakpoint, which makes all downstream transforms
exact piecewise-linear algebra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .tolerances import DEFAULT, Tolerances

__all__ = [
    "DomainError",
    "UtilityPiece",
    "PiecewiseUtility",
    "GridSpec",
    "GrowthReport",
    "ConcaveEnvelope",
    "eval_utility",
    "check_growth",
    "compute_envelope",
    "envelope_components",
]

_FORMS = ("power", "logarithmic", "linear", "constant", "shifted_power")


class DomainError(ValueError):
    """Raised for queries outside a function's domain."""


@dataclass(frozen=True)
class UtilityPiece:
    """One analytic piece of a utility, valid on the open interval (lo, hi).

    Supported forms and their parameters (all map wealth to utility):

    - ``power``:          scale * x**exponent,          scale > 0, 0 < exponent < 1
    - ``logarithmic``:    scale * log(x),               scale > 0
    - ``linear``:         slope * x + intercept,        slope >= 0
    - ``constant``:       level
    - ``shifted_power``:  scale * (x - shift)**exponent, scale > 0,
                          0 < exponent < 1, shift <= lo
    """

    lo: float
    hi: float
    form: str
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError(f"piece interval empty: [{self.lo}, {self.hi}]")
        if self.lo < 0:
            raise ValueError("piece interval must lie in [0, oo)")
        if self.form not in _FORMS:
            raise ValueError(f"unknown piece form {self.form!r}; expected one of {_FORMS}")
        p = self.params
        if self.form == "power":
            self._require(p, "exponent", "scale")
            if not 0 < p["exponent"] < 1:
                raise ValueError("power exponent must lie in (0, 1)")
            if p["scale"] <= 0:
                raise ValueError("power scale must be positive")
        elif self.form == "logarithmic":
            self._require(p, "scale")
            if p["scale"] <= 0:
                raise ValueError("logarithmic scale must be positive")
        elif self.form == "linear":
            self._require(p, "slope", "intercept")
            if p["slope"] < 0:
                raise ValueError("linear slope must be nonnegative (utility nondecreasing)")
        elif self.form == "constant":
            self._require(p, "level")
        elif self.form == "shifted_power":
            self._require(p, "exponent", "scale", "shift")
            if not 0 < p["exponent"] < 1:
                raise ValueError("shifted_power exponent must lie in (0, 1)")
            if p["scale"] <= 0:
                raise ValueError("shifted_power scale must be positive")
            if p["shift"] > self.lo:
                raise ValueError("shifted_power shift must not exceed the interval start")

    @staticmethod
    def _require(params: dict[str, float], *names: str) -> None:
        missing = [n for n in names if n not in params]
        if missing:
            raise ValueError(f"missing piece parameters: {missing}")

    def value(self, x: np.ndarray | float) -> np.ndarray | float:
        """Analytic value of the piece form at x (defined on [lo, hi] closure)."""
        p = self.params
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.form == "power":
                out = p["scale"] * np.power(x, p["exponent"])
            elif self.form == "logarithmic":
                out = p["scale"] * np.log(x)
            elif self.form == "linear":
                out = p["slope"] * x + p["intercept"]
            elif self.form == "constant":
                out = np.full_like(x, p["level"])
            else:  # shifted_power
                out = p["scale"] * np.power(np.maximum(x - p["shift"], 0.0), p["exponent"])
        return out if out.ndim else float(out)

    def slope_at(self, x: float) -> float:
        """One-sided derivative of the piece form at x > lo."""
        p = self.params
        if self.form == "power":
            return p["scale"] * p["exponent"] * x ** (p["exponent"] - 1.0)
        if self.form == "logarithmic":
            return p["scale"] / x
        if self.form == "linear":
            return p["slope"]
        if self.form == "constant":
            return 0.0
        d = x - p["shift"]
        if d <= 0:
            return math.inf
        return p["scale"] * p["exponent"] * d ** (p["exponent"] - 1.0)

    def limit_at(self, x: float) -> float:
        """Limit of the piece form at an interval endpoint (may be +-inf)."""
        if x == math.inf:
            if self.form in ("power", "shifted_power"):
                return math.inf
            if self.form == "logarithmic":
                return math.inf
            if self.form == "linear":
                return math.inf if self.params["slope"] > 0 else self.params["intercept"]
            return self.params["level"]
        if x == 0.0 and self.form == "logarithmic":
            return -math.inf
        return float(self.value(x))


@dataclass(frozen=True)
class PiecewiseUtility:
    """A nondecreasing, upper-semicontinuous utility given as pieces tiling (0, oo).

    At a breakpoint the utility takes the larger one-sided limit (usc
    convention).  ``value_at_zero`` and ``value_at_infinity`` are the limits at
    the domain boundary, computed from the first and last pieces.
    """

    pieces: tuple[UtilityPiece, ...]
    value_at_zero: float = field(default=math.nan)
    value_at_infinity: float = field(default=math.nan)

    def __post_init__(self) -> None:
        pieces = tuple(self.pieces)
        object.__setattr__(self, "pieces", pieces)
        if not pieces:
            raise ValueError("utility needs at least one piece")
        if pieces[0].lo != 0.0:
            raise ValueError("first piece must start at 0")
        if pieces[-1].hi != math.inf:
            raise ValueError("last piece must extend to +inf")
        for left, right in zip(pieces, pieces[1:]):
            if left.hi != right.lo:
                raise ValueError(
                    f"pieces do not tile (0, oo): gap/overlap at [{left.hi}, {right.lo}]"
                )
        # no downward jumps: right limit at each breakpoint >= left limit
        for left, right in zip(pieces, pieces[1:]):
            b = left.hi
            if right.limit_at(b) < left.limit_at(b) - 1e-15 * max(1.0, abs(left.limit_at(b))):
                raise ValueError(f"utility decreases across breakpoint x={b}")
        v0 = pieces[0].limit_at(0.0)
        vinf = pieces[-1].limit_at(math.inf)
        object.__setattr__(self, "value_at_zero", v0)
        object.__setattr__(self, "value_at_infinity", vinf)
        if not vinf > 0:
            raise ValueError("utility must be positive at infinity")
        if self._is_constant():
            raise ValueError("utility must be non-constant")

    def _is_constant(self) -> bool:
        if any(p.form != "constant" for p in self.pieces):
            return False
        levels = {p.params["level"] for p in self.pieces}
        return len(levels) == 1

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Interior piece boundaries (finite, increasing)."""
        return tuple(p.hi for p in self.pieces[:-1])

    def value(self, x: np.ndarray | float) -> np.ndarray | float:
        """usc value of U at x > 0 (vectorized); raises on any x <= 0."""
        arr = np.asarray(x, dtype=float)
        if np.any(arr <= 0):
            raise DomainError("below domain: U(x) = -inf for x <= 0")
        out = np.full(arr.shape, -math.inf)
        for piece in self.pieces:
            mask = (arr >= piece.lo) & (arr <= piece.hi)
            if np.any(mask):
                np.copyto(out, np.maximum(out, piece.value(arr)), where=mask)
        return out if out.ndim else float(out)

    def value_or_limit(self, x: np.ndarray | float) -> np.ndarray | float:
        """Like :meth:`value` but maps x == 0 to the limit U(0+)."""
        arr = np.asarray(x, dtype=float)
        if np.any(arr < 0):
            raise DomainError("below domain: U(x) = -inf for x < 0")
        out = np.full(arr.shape, self.value_at_zero)
        pos = arr > 0
        if np.any(pos):
            vals = self.value(np.where(pos, arr, 1.0))
            np.copyto(out, vals, where=pos)
        return out if out.ndim else float(out)

    def lipschitz_bound(self, lo: float, hi: float) -> float:
        """Max derivative magnitude of the pieces on [lo, hi]; jumps excluded.

        The forms are concave or linear on their intervals, so the per-piece
        slope maximum sits at the left end of the overlap.
        """
        if not 0 < lo <= hi:
            raise ValueError("need 0 < lo <= hi")
        bound = 0.0
        for piece in self.pieces:
            a = max(lo, piece.lo)
            b = min(hi, piece.hi)
            if a >= b:
                continue
            if piece.form == "shifted_power" and a <= piece.params["shift"]:
                a = piece.params["shift"] + 1e-12 * max(1.0, abs(piece.params["shift"]))
            bound = max(bound, piece.slope_at(a))
        return bound


def eval_utility(u: PiecewiseUtility, x: float) -> float:
    """usc-consistent value of U at x > 0.

    At a breakpoint this is the max of the one-sided limits.  Raises
    :class:`DomainError` for x <= 0.
    """
    return float(u.value(float(x)))


@dataclass(frozen=True)
class GrowthReport:
    """Numeric verdict on the sublinear-growth condition U(x)/x -> 0."""

    probes: tuple[float, ...]
    ratios: tuple[float, ...]
    monotone_decay_flag: bool
    threshold: float
    passed: bool

    def __bool__(self) -> bool:
        return self.passed


def check_growth(
    u: PiecewiseUtility,
    probes: Sequence[float],
    threshold: float | None = None,
    tol: Tolerances = DEFAULT,
) -> GrowthReport:
    """Probe U(x)/x on an increasing grid reaching at least 1e6.

    Passes iff the ratio at the largest probe is below ``threshold`` and the
    ratio sequence is eventually (strictly) decreasing.
    """
    probes = tuple(float(p) for p in probes)
    if not probes:
        raise ValueError("probes must be nonempty")
    if any(b <= a for a, b in zip(probes, probes[1:])):
        raise ValueError("probes must be strictly increasing")
    if probes[0] <= 0:
        raise ValueError("probes must be positive")
    if probes[-1] < 1e6:
        raise ValueError("largest probe must be at least 1e6")
    theta = tol.growth_ratio if threshold is None else float(threshold)
    vals = np.asarray(u.value(np.asarray(probes)))
    ratios = tuple(float(v) / p for v, p in zip(vals, probes))
    decaying = len(ratios) >= 2 and ratios[-1] < ratios[-2] and ratios[-1] <= min(ratios)
    passed = bool(ratios[-1] <= theta and decaying)
    return GrowthReport(probes, ratios, decaying, theta, passed)


@dataclass(frozen=True)
class GridSpec:
    """Evaluation grid on (x_min, x_max); geometric spacing by default."""

    x_min: float
    x_max: float
    n_points: int
    spacing: str = "geometric"

    def __post_init__(self) -> None:
        if not 0 < self.x_min < self.x_max:
            raise ValueError("need 0 < x_min < x_max")
        if self.n_points < 2:
            raise ValueError("need at least 2 grid points")
        if self.spacing not in ("geometric", "linear"):
            raise ValueError("spacing must be 'geometric' or 'linear'")

    def build(self) -> np.ndarray:
        if self.spacing == "geometric":
            return np.geomspace(self.x_min, self.x_max, self.n_points)
        return np.linspace(self.x_min, self.x_max, self.n_points)


@dataclass(frozen=True)
class ConcaveEnvelope:
    """Hull-vertex representation of the concave envelope U_c.

    The function is piecewise linear between ``hull_vertices``, extended
    affinely with the first segment's slope below the first vertex and with
    ``tail_slope`` beyond the last vertex.  ``components`` are the open
    intervals where the envelope strictly exceeds the utility it was built
    from.
    """

    hull_vertices: tuple[tuple[float, float], ...]
    tail_slope: float
    components: tuple[tuple[float, float], ...] = ()
    grid_spec: GridSpec | None = None

    def __post_init__(self) -> None:
        verts = tuple((float(x), float(v)) for x, v in self.hull_vertices)
        object.__setattr__(self, "hull_vertices", verts)
        comps = tuple((float(a), float(b)) for a, b in self.components)
        object.__setattr__(self, "components", comps)
        if len(verts) < 2:
            raise ValueError("envelope needs at least 2 hull vertices")
        xs = [x for x, _ in verts]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("hull vertex abscissae must be strictly increasing")
        if xs[0] < 0:
            raise ValueError("hull vertices must lie in [0, oo)")
        if self.tail_slope < 0:
            raise ValueError("tail slope must be nonnegative")
        slopes = self.slopes
        scale = max(1.0, float(np.max(np.abs(slopes))))
        if np.any(np.diff(slopes) > 1e-12 * scale):
            raise ValueError("hull slopes must be nonincreasing (concavity)")
        if self.tail_slope > slopes[-1] + 1e-12 * scale:
            raise ValueError("tail slope exceeds the last hull slope")
        for a, b in comps:
            if not 0 <= a < b < math.inf:
                raise ValueError(f"component ({a}, {b}) must be a bounded open interval")
        for (_, b), (a2, _) in zip(comps, comps[1:]):
            if a2 < b:
                raise ValueError("components must be disjoint and sorted")

    @cached_property
    def _xs(self) -> np.ndarray:
        return np.array([x for x, _ in self.hull_vertices])

    @cached_property
    def _vals(self) -> np.ndarray:
        return np.array([v for _, v in self.hull_vertices])

    @cached_property
    def slopes(self) -> np.ndarray:
        """Chord slopes between consecutive hull vertices (nonincreasing)."""
        return np.diff(self._vals) / np.diff(self._xs)

    @property
    def x_first(self) -> float:
        return float(self._xs[0])

    @property
    def x_last(self) -> float:
        return float(self._xs[-1])

    def value(self, x: np.ndarray | float) -> np.ndarray | float:
        """U_c(x) for x >= 0, with affine extensions outside the vertex span."""
        arr = np.asarray(x, dtype=float)
        if np.any(arr < 0):
            raise DomainError("envelope evaluated at x < 0")
        xs, vals = self._xs, self._vals
        out = np.interp(arr, xs, vals)
        below = arr < xs[0]
        if np.any(below):
            out = np.where(below, vals[0] + self.slopes[0] * (arr - xs[0]), out)
        above = arr > xs[-1]
        if np.any(above):
            out = np.where(above, vals[-1] + self.tail_slope * (arr - xs[-1]), out)
        return out if out.ndim else float(out)

    def one_sided_slopes(self, x: float, kink_rel: float = DEFAULT.kink_rel) -> tuple[float, float]:
        """(left, right) derivative of U_c at x > 0; left >= right by concavity.

        At the first vertex the left slope is +inf: that vertex is the
        domain edge of the conjugate pairing, where every steeper slope
        supports the hull (mirror of the -inf convention at the conjugate's
        domain start).
        """
        if x <= 0:
            raise DomainError("envelope slope queried at x <= 0")
        xs = self._xs
        slopes = self.slopes
        j = int(np.searchsorted(xs, x))
        # snap onto a vertex within relative tolerance
        for cand in (j - 1, j):
            if 0 <= cand < len(xs) and abs(x - xs[cand]) <= kink_rel * max(abs(x), abs(xs[cand])):
                left = slopes[cand - 1] if cand > 0 else math.inf
                right = slopes[cand] if cand < len(slopes) else self.tail_slope
                return float(left), float(right)
        if x < xs[0]:
            return float(slopes[0]), float(slopes[0])
        if x > xs[-1]:
            return float(self.tail_slope), float(self.tail_slope)
        s = slopes[min(max(j - 1, 0), len(slopes) - 1)]
        return float(s), float(s)

    @property
    def max_value(self) -> float:
        """Supremum of the envelope (finite only when the tail is flat)."""
        return float(self._vals[-1]) if self.tail_slope == 0.0 else math.inf

    @property
    def satiation_point(self) -> float | None:
        """Smallest x attaining the supremum, when the envelope saturates."""
        if self.tail_slope != 0.0:
            return None
        xs, slopes = self._xs, self.slopes
        pos = np.nonzero(slopes > 0)[0]
        if len(pos) == 0:
            return float(xs[0])
        return float(xs[pos[-1] + 1])


def _upper_hull(xs: np.ndarray, vals: np.ndarray) -> list[int]:
    """Indices of the upper concave hull of (xs, vals); xs strictly increasing.

    Collinear middle points are dropped, so the resulting chord slopes are
    strictly decreasing.  Slope comparisons (not cross products) keep the
    sweep stable when the abscissae span many orders of magnitude.
    """
    hull: list[int] = []
    for i in range(len(xs)):
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            s_in = (vals[k] - vals[j]) / (xs[k] - xs[j])
            s_out = (vals[i] - vals[k]) / (xs[i] - xs[k])
            # merge near-collinear vertices; keeps downstream kinks separated
            if s_in <= s_out + 1e-12 * max(abs(s_in), abs(s_out)):
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def compute_envelope(
    u: PiecewiseUtility,
    grid: GridSpec,
    tol: Tolerances = DEFAULT,
) -> ConcaveEnvelope:
    """Upper concave hull of U sampled on the grid, breakpoints inserted exactly.

    Refuses when the growth check fails (the envelope would be ill-posed) or
    the utility is constant.  Components of {U < U_c} are reported as maximal
    grid runs where the hull exceeds U by more than the component threshold,
    snapped to the adjacent equality points.
    """
    if u._is_constant():
        raise ValueError("refusing to build an envelope of a constant utility")
    bps = [b for b in u.breakpoints if b < math.inf]
    if bps and grid.x_max <= max(bps):
        raise ValueError(
            f"grid x_max={grid.x_max} must exceed the last breakpoint {max(bps)}"
        )
    probe_top = max(1e14, 10.0 * grid.x_max)
    probes = np.geomspace(max(grid.x_max, 1.0), probe_top, 10)
    growth = check_growth(u, probes, tol=tol)
    if not growth.passed:
        raise ValueError(
            "refusing to build an envelope: growth check failed "
            f"(U(x)/x = {growth.ratios[-1]:.3g} at x = {growth.probes[-1]:.3g})"
        )
    xs = grid.build()
    inner = [b for b in bps if grid.x_min < b < grid.x_max]
    if inner:
        xs = np.unique(np.concatenate([xs, np.asarray(inner, dtype=float)]))
    vals = np.asarray(u.value(xs))
    if not np.all(np.isfinite(vals)):
        finite = np.isfinite(vals)
        xs, vals = xs[finite], vals[finite]
        if len(xs) < 2:
            raise ValueError("utility is not finite on the requested grid")
    hull_idx = _upper_hull(xs, vals)
    hx, hv = xs[hull_idx], vals[hull_idx]
    tail = float((hv[-1] - hv[-2]) / (hx[-1] - hx[-2]))
    tail = max(tail, 0.0)
    env = ConcaveEnvelope(
        hull_vertices=tuple(zip(hx.tolist(), hv.tolist())),
        tail_slope=tail,
        components=(),
        grid_spec=grid,
    )
    hull_on_grid = np.asarray(env.value(xs))
    gap = hull_on_grid - vals
    comps: list[tuple[float, float]] = []
    inside = gap > tol.component
    i = 0
    n = len(xs)
    while i < n:
        if inside[i]:
            j = i
            while j + 1 < n and inside[j + 1]:
                j += 1
            a = xs[i - 1] if i > 0 else xs[0]
            b = xs[j + 1] if j + 1 < n else xs[-1]
            comps.append((float(a), float(b)))
            i = j + 1
        else:
            i += 1
    return ConcaveEnvelope(
        hull_vertices=env.hull_vertices,
        tail_slope=env.tail_slope,
        components=tuple(comps),
        grid_spec=grid,
    )


def envelope_components(env: ConcaveEnvelope) -> list[tuple[float, float]]:
    """Sorted disjoint open intervals where the envelope exceeds the utility."""
    return sorted(env.components)
