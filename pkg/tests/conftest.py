"""Shared fixtures: canonical utilities, markets, and randomized generators."""

from __future__ import annotations

import math

import numpy as np
import pytest

from concavify import (
    ConcaveEnvelope,
    FiniteMarket,
    GridSpec,
    PiecewiseUtility,
    UtilityPiece,
)

INF = math.inf


def make_step_utility() -> PiecewiseUtility:
    """0 on (0,1), 1 on [1,oo): the canonical one-jump utility."""
    return PiecewiseUtility(pieces=(
        UtilityPiece(0.0, 1.0, "constant", {"level": 0.0}),
        UtilityPiece(1.0, INF, "constant", {"level": 1.0}),
    ))


def make_two_bump_utility() -> PiecewiseUtility:
    """min(x,1) + max(0, min(x-2, 1)): two ramps separated by a plateau."""
    return PiecewiseUtility(pieces=(
        UtilityPiece(0.0, 1.0, "linear", {"slope": 1.0, "intercept": 0.0}),
        UtilityPiece(1.0, 2.0, "constant", {"level": 1.0}),
        UtilityPiece(2.0, 3.0, "linear", {"slope": 1.0, "intercept": -1.0}),
        UtilityPiece(3.0, INF, "constant", {"level": 2.0}),
    ))


def make_sqrt_utility() -> PiecewiseUtility:
    """2*sqrt(x): smooth concave benchmark with V(y) = 1/y."""
    return PiecewiseUtility(pieces=(
        UtilityPiece(0.0, INF, "power", {"exponent": 0.5, "scale": 2.0}),
    ))


def make_log_utility() -> PiecewiseUtility:
    """log(x): V(y) = -log(y) - 1."""
    return PiecewiseUtility(pieces=(
        UtilityPiece(0.0, INF, "logarithmic", {"scale": 1.0}),
    ))


def step_envelope_exact() -> ConcaveEnvelope:
    """Exact hull of the step utility: min(x, 1), flat beyond 1."""
    return ConcaveEnvelope(
        hull_vertices=((0.0, 0.0), (1.0, 1.0), (10.0, 1.0)),
        tail_slope=0.0,
        components=((0.0, 1.0),),
    )


def two_bump_envelope_exact() -> ConcaveEnvelope:
    """Exact hull of the two-bump utility: affine on (1, 3)."""
    return ConcaveEnvelope(
        hull_vertices=((0.0, 0.0), (1.0, 1.0), (3.0, 2.0), (12.0, 2.0)),
        tail_slope=0.0,
        components=((1.0, 3.0),),
    )


@pytest.fixture
def step_utility() -> PiecewiseUtility:
    return make_step_utility()


@pytest.fixture
def two_bump_utility() -> PiecewiseUtility:
    return make_two_bump_utility()


@pytest.fixture
def sqrt_utility() -> PiecewiseUtility:
    return make_sqrt_utility()


@pytest.fixture
def log_utility() -> PiecewiseUtility:
    return make_log_utility()


@pytest.fixture
def step_env() -> ConcaveEnvelope:
    return step_envelope_exact()


@pytest.fixture
def two_state_market() -> FiniteMarket:
    return FiniteMarket((0.5, 0.5), (0.5, 1.5))


def random_market(rng: np.random.Generator, n_states: int) -> FiniteMarket:
    """Random probabilities (bounded away from 0) and a unit-mean density."""
    while True:
        p = rng.dirichlet(np.ones(n_states))
        if np.min(p) >= 0.08:
            break
    w = rng.uniform(0.3, 2.0, size=n_states)
    z = w / math.fsum(float(pi * wi) for pi, wi in zip(p, w))
    return FiniteMarket(tuple(float(v) for v in p), tuple(float(v) for v in z))


def random_piecewise_utility(
    rng: np.random.Generator, max_pieces: int = 6
) -> PiecewiseUtility:
    """Random nondecreasing usc utility with up to ``max_pieces`` pieces.

    Mixes jumps, plateaus, ramps, and concave arcs so that the envelope has
    nontrivial components; the last piece is always sublinear.
    """
    for _ in range(100):
        n = int(rng.integers(1, max_pieces + 1))
        cuts = np.sort(rng.uniform(0.3, 8.0, size=n - 1))
        if n > 1 and np.min(np.diff(np.concatenate([[0.0], cuts]))) < 0.15:
            continue
        bounds = [0.0, *[float(c) for c in cuts], INF]
        pieces: list[UtilityPiece] = []
        left_limit = 0.0
        ok = True
        for i in range(n):
            lo, hi = bounds[i], bounds[i + 1]
            last = i == n - 1
            jump = float(rng.uniform(0.05, 0.8)) if rng.random() < 0.45 else 0.0
            target = left_limit + jump
            allowed = ["constant"]
            if not last:
                allowed.append("linear")
            if target > 0 or lo == 0.0:
                allowed.append("power")
            allowed.append("shifted_power")
            if lo > 1.1 and target > 0:
                allowed.append("logarithmic")
            if last and target <= 0:
                allowed = [f for f in allowed if f != "constant"] or ["shifted_power"]
            form = str(rng.choice(allowed))
            try:
                piece = _build_piece(rng, form, lo, hi, target)
            except ValueError:
                ok = False
                break
            pieces.append(piece)
            left_limit = piece.limit_at(hi) if hi != INF else INF
        if not ok:
            continue
        try:
            return PiecewiseUtility(pieces=tuple(pieces))
        except ValueError:
            continue
    raise RuntimeError("random utility generation failed to converge")


def _build_piece(
    rng: np.random.Generator, form: str, lo: float, hi: float, target: float
) -> UtilityPiece:
    """One piece whose value at ``lo`` (from the right) equals ``target``."""
    if form == "constant":
        level = target if target > 0 or hi != INF else target + float(rng.uniform(0.2, 1.0))
        return UtilityPiece(lo, hi, "constant", {"level": level})
    if form == "linear":
        slope = float(rng.uniform(0.05, 1.5))
        return UtilityPiece(lo, hi, "linear", {"slope": slope, "intercept": target - slope * lo})
    if form == "power":
        alpha = float(rng.uniform(0.2, 0.65))
        if lo == 0.0:
            if target > 1e-12:
                raise ValueError("power piece cannot start positive at 0")
            scale = float(rng.uniform(0.3, 2.0))
        else:
            scale = target / lo ** alpha
            if scale <= 0:
                raise ValueError("nonpositive power scale")
        return UtilityPiece(lo, hi, "power", {"exponent": alpha, "scale": scale})
    if form == "shifted_power":
        alpha = float(rng.uniform(0.2, 0.65))
        scale = float(rng.uniform(0.3, 2.0))
        if target <= 0:
            shift = lo
        else:
            shift = lo - (target / scale) ** (1.0 / alpha)
        return UtilityPiece(lo, hi, "shifted_power",
                            {"exponent": alpha, "scale": scale, "shift": shift})
    if form == "logarithmic":
        scale = target / math.log(lo)
        if scale <= 0:
            raise ValueError("nonpositive log scale")
        return UtilityPiece(lo, hi, "logarithmic", {"scale": scale})
    raise ValueError(f"unknown form {form}")


def envelope_grid_for(u: PiecewiseUtility, x_max: float | None = None) -> GridSpec:
    bps = [b for b in u.breakpoints if math.isfinite(b)]
    top = x_max if x_max is not None else max(50.0, 4.0 * max(bps)) if bps else 50.0
    return GridSpec(x_min=1e-4, x_max=top, n_points=3001, spacing="geometric")
