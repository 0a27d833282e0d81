from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ..model import RatingScale


class NonConvergenceWarning(RuntimeWarning):
    pass


class DegenerateReputationError(ValueError):
    """Every temporary reputation is zero, so redistribution is undefined."""


@dataclass(frozen=True)
class IterConfig:
    """Shared settings of the IR and CR fixed-point loops."""

    threshold: float = 1e-6
    max_iterations: int = 1000
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.threshold <= 0 or self.epsilon <= 0:
            raise ValueError("threshold and epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class IarrConfig(IterConfig):
    phi: float = 2.0

    def __post_init__(self):
        super().__post_init__()
        if self.phi < 1:
            raise ValueError(f"phi must be >= 1, got {self.phi}")


@dataclass(frozen=True)
class BiRankConfig:
    alpha: float = 0.85
    beta: float = 0.85
    threshold: float = 1e-10
    max_iterations: int = 10000
    # query vectors; None selects degree-proportional vectors summing to 1
    query_u: Sequence[float] | None = None
    query_v: Sequence[float] | None = None
    # starting point of the iteration; None starts from the query vectors
    initial_u: Sequence[float] | None = None
    initial_v: Sequence[float] | None = None

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")


@dataclass(frozen=True)
class AtrConfig:
    threshold: float = 1e-4
    max_inner_iterations: int = 1000
    epsilon: float = 1e-6
    clamp_negative_reputation: bool = True
    # "accumulative" is the stable default; "literal" iterates the raw update
    mode: str = "accumulative"
    # step size of the accumulative inner loop; below 1 damps oscillating years
    relaxation: float = 1.0
    # halve the step after this many consecutive direction reversals of Q; 0 keeps it fixed
    stall_patience: int = 4

    def __post_init__(self):
        if self.stall_patience < 0:
            raise ValueError("stall_patience must be >= 0")
        if self.threshold <= 0 or self.epsilon <= 0:
            raise ValueError("threshold and epsilon must be positive")
        if self.max_inner_iterations < 1:
            raise ValueError("max_inner_iterations must be >= 1")
        if not 0 < self.relaxation <= 1:
            raise ValueError(f"relaxation must lie in (0, 1], got {self.relaxation}")
        if self.mode not in ("accumulative", "literal"):
            raise ValueError(f"unknown ATR mode {self.mode!r}")


def config_echo(config) -> dict[str, Any]:
    if config is None:
        return {}
    out = {}
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


@dataclass
class RankingResult:
    """Scores produced by one algorithm run.

    ``quality`` aligns with ``item_ids`` and ``reputation`` with ``user_ids``;
    ``reputation`` is None for methods that define no user score.
    """

    algorithm: str
    item_ids: tuple[str, ...]
    quality: np.ndarray
    user_ids: tuple[str, ...]
    reputation: np.ndarray | None
    iterations: list[int] = field(default_factory=list)
    converged: bool = True
    config: dict[str, Any] = field(default_factory=dict)
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def quality_map(self) -> dict[str, float]:
        return dict(zip(self.item_ids, self.quality.tolist()))

    def reputation_map(self) -> dict[str, float]:
        if self.reputation is None:
            return {}
        return dict(zip(self.user_ids, self.reputation.tolist()))

    def ranking(self) -> list[str]:
        """Items by descending quality, ties by ascending identifier."""
        id_order = np.argsort(np.asarray(self.item_ids, dtype=object), kind="stable")
        id_rank = np.empty(len(id_order), np.int64)
        id_rank[id_order] = np.arange(len(id_order))
        order = np.lexsort((id_rank, -self.quality))
        return [self.item_ids[j] for j in order]

    def rescaled_quality(self, scale: RatingScale) -> np.ndarray:
        """Min-max rescale of quality onto the rating scale (monotone)."""
        q = self.quality
        lo, hi = np.nanmin(q), np.nanmax(q)
        if hi == lo:
            return np.full_like(q, (scale.min + scale.max) / 2)
        return scale.min + (q - lo) * (scale.max - scale.min) / (hi - lo)
