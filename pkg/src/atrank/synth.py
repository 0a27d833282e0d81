"""Artificial rating networks with known item quality, and random-rating spammers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .model import FIVE_STAR, GroundTruth, RatingEvent, RatingScale

__all__ = [
    "SynthParams",
    "SpamInjection",
    "DegenerateSizeError",
    "InjectionError",
    "generate_artificial",
    "inject_random_spammers",
]


class DegenerateSizeError(ValueError):
    pass


class InjectionError(ValueError):
    pass


@dataclass(frozen=True)
class SynthParams:
    """Shape of an artificial network.

    The defaults give 480000 links (mean degrees 80 and 120). Link count is
    ``floor(n_users * n_items * sparsity)``.
    """

    n_users: int = 6000
    n_items: int = 4000
    sparsity: float = 0.02
    n_years: int = 10
    noise_sigma: float = 0.5
    scale: RatingScale = FIVE_STAR
    seed: int = 0
    first_year: int = 2000

    def __post_init__(self):
        if self.n_users < 1 or self.n_items < 1:
            raise DegenerateSizeError("need at least one user and one item")
        if not 0 < self.sparsity <= 1:
            raise ValueError(f"sparsity must lie in (0, 1], got {self.sparsity}")
        if self.n_years < 1:
            raise ValueError("n_years must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def n_links(self) -> int:
        # Fraction(str(...)) keeps 6000*4000*0.02 at exactly 480000
        return math.floor(self.n_users * self.n_items * Fraction(str(self.sparsity)))


@dataclass(frozen=True)
class SpamInjection:
    n_spammers: int
    ratings_per_spammer: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_spammers < 0:
            raise ValueError("n_spammers must be >= 0")


def _ids(prefix: str, n: int) -> list[str]:
    width = len(str(max(n - 1, 0)))
    return [f"{prefix}{j:0{width}d}" for j in range(n)]


def _quantize(values: np.ndarray, scale: RatingScale) -> np.ndarray:
    if scale.integral:
        values = np.rint(values)
    return np.clip(values, scale.min, scale.max)


def generate_artificial(params: SynthParams) -> tuple[list[RatingEvent], GroundTruth]:
    """Random user-item network whose ratings are noisy views of item quality.

    Each item gets a true quality drawn uniformly from the rating scale. Links
    are distinct (user, item) pairs drawn uniformly without replacement, added
    in draw order; a link's rating is ``quality + N(0, noise_sigma)`` rounded
    and clamped to the scale, and its year is uniform over ``n_years``.
    """
    n_links = params.n_links
    if n_links < 1:
        raise DegenerateSizeError(
            f"{params.n_users}x{params.n_items} at sparsity {params.sparsity} has no links"
        )
    rng = np.random.default_rng(params.seed)
    scale = params.scale
    quality = rng.uniform(scale.min, scale.max, params.n_items)
    flat = rng.choice(params.n_users * params.n_items, n_links, replace=False, shuffle=False)
    users, items = np.divmod(flat, params.n_items)
    noise = rng.normal(0.0, params.noise_sigma, n_links) if params.noise_sigma > 0 else 0.0
    ratings = _quantize(quality[items] + noise, scale)
    years = params.first_year + rng.integers(0, params.n_years, n_links)

    user_ids = _ids("u", params.n_users)
    item_ids = _ids("i", params.n_items)
    events = [
        RatingEvent(user_ids[u], item_ids[a], float(r), int(y))
        for u, a, r, y in zip(users.tolist(), items.tolist(), ratings.tolist(), years.tolist())
    ]
    truth = GroundTruth.true_qualities(dict(zip(item_ids, quality.tolist())))
    return events, truth


def inject_random_spammers(
    events: Sequence[RatingEvent],
    items: Sequence[str],
    years: Sequence[int],
    scale: RatingScale,
    injection: SpamInjection,
) -> list[RatingEvent]:
    """Append ``injection.n_spammers`` users who rate uniformly random items at random.

    Each spammer rates ``ratings_per_spammer`` distinct items with ratings
    uniform over the scale's integer levels and years uniform over ``years``.
    When ``ratings_per_spammer`` is None it defaults to the rounded mean user
    degree of ``events``, so spammers look like ordinary users by activity.
    The input events come first and are left untouched.
    """
    out = list(events)
    if injection.n_spammers == 0:
        return out
    items = sorted(set(items))
    years = np.asarray(sorted(set(int(y) for y in years)))
    if len(items) == 0 or len(years) == 0:
        raise InjectionError("need at least one item and one year to inject into")
    per = injection.ratings_per_spammer
    if per is None:
        n_users = len({e.user for e in events})
        per = max(1, round(len(events) / n_users)) if n_users else 1
    if per > len(items):
        raise InjectionError(f"{per} ratings per spammer exceeds the {len(items)} available items")
    if per < 1:
        raise InjectionError("ratings_per_spammer must be >= 1")

    existing = {e.user for e in events}
    prefix = "spam"
    while any(u.startswith(prefix) for u in existing):
        prefix = "_" + prefix
    ids = _ids(prefix, injection.n_spammers)

    rng = np.random.default_rng(injection.seed)
    if scale.integral:
        levels = scale.levels()
    for sid in ids:
        picked = rng.choice(len(items), per, replace=False)
        if scale.integral:
            ratings = levels[rng.integers(0, len(levels), per)]
        else:
            ratings = rng.uniform(scale.min, scale.max, per)
        ys = years[rng.integers(0, len(years), per)]
        out.extend(
            RatingEvent(sid, items[a], float(r), int(y))
            for a, r, y in zip(picked.tolist(), ratings.tolist(), ys.tolist())
        )
    return out
