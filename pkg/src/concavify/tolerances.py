"""Central numeric tolerances.

Every module reads its tolerances from a single :class:`Tolerances` record so
that test calibration has one source of truth.  Named profiles are selectable
from the CLI via ``--tolerance-profile``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # geometry of piecewise-linear objects (absolute, values and vertices)
    geom: float = 1e-9
    # threshold on U_c - U for declaring a point inside a component
    component: float = 1e-8
    # relative width for snapping a query onto a kink of a PL function
    kink_rel: float = 1e-11
    # probabilities must sum to 1 this tightly
    prob_sum: float = 1e-12
    # martingale / density-mean residual bound
    martingale: float = 1e-9
    # self-financing and admissibility slack
    self_financing: float = 1e-12
    admissible: float = 1e-12
    # budget-set membership slack
    budget: float = 1e-12
    # budget must bind at the solver optimum this tightly
    budget_bind: float = 1e-9
    # Fenchel-Young gap slack
    fenchel: float = 1e-9
    # growth check: U(x)/x at the largest probe must fall below this
    growth_ratio: float = 1e-2
    # multiplier bisection
    bisect_rel_bracket: float = 1e-14
    bisect_max_iter: int = 200
    # cap on endpoint assignments explored by the primal search
    max_primal_branches: int = 2 ** 12

    def replace(self, **kwargs: float) -> "Tolerances":
        return dataclasses.replace(self, **kwargs)


DEFAULT = Tolerances()

PROFILES: dict[str, Tolerances] = {
    "default": DEFAULT,
    # tighter geometry for golden-file regeneration
    "strict": DEFAULT.replace(geom=1e-12, component=1e-10, fenchel=1e-12),
    # looser profile for quick exploratory runs on coarse grids
    "relaxed": DEFAULT.replace(geom=1e-6, component=1e-6, fenchel=1e-6,
                               budget_bind=1e-6, martingale=1e-6),
}


def profile(name: str) -> Tolerances:
    """Look up a named tolerance profile."""
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(
            f"unknown tolerance profile {name!r}; available: {sorted(PROFILES)}"
        ) from None
