"""The six ranking algorithms behind one call shape: ``f(graph, config) -> RankingResult``."""

from __future__ import annotations

import dataclasses
from typing import Any, Callable, Mapping

from ..model import TemporalBipartiteGraph
from .atr import (
    AtrState,
    EmptyYearError,
    atr_behavioral_factors,
    atr_epoch_update,
    atr_initialize,
    atr_run,
    atr_year_weights,
)
from .baselines import (
    average_score,
    correlation_ranking,
    iarr,
    iterative_refinement,
    pearson_reputation,
    redistribute,
    weighted_quality,
)
from .birank import birank, normalized_adjacency
from .result import (
    AtrConfig,
    BiRankConfig,
    DegenerateReputationError,
    IarrConfig,
    IterConfig,
    NonConvergenceWarning,
    RankingResult,
)

ALGORITHMS = ("avg", "ir", "cr", "iarr", "birank", "atr")

_CONFIGS: dict[str, type | None] = {
    "avg": None,
    "ir": IterConfig,
    "cr": IterConfig,
    "iarr": IarrConfig,
    "birank": BiRankConfig,
    "atr": AtrConfig,
}

_RUNNERS: dict[str, Callable[..., RankingResult]] = {
    "avg": lambda g, c: average_score(g),
    "ir": iterative_refinement,
    "cr": correlation_ranking,
    "iarr": iarr,
    "birank": birank,
    "atr": atr_run,
}


def make_config(algorithm: str, options: Mapping[str, Any] | None = None):
    """Build the config dataclass of ``algorithm`` from loose key/value options.

    String values are coerced to the type of the field's default. Unknown
    keys raise ``KeyError``.
    """
    if algorithm not in _CONFIGS:
        raise KeyError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    cls = _CONFIGS[algorithm]
    options = dict(options or {})
    if cls is None:
        if options:
            raise KeyError(f"avg takes no options, got {sorted(options)}")
        return None
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in options.items():
        if key not in fields:
            raise KeyError(f"{algorithm} has no option {key!r}; known: {', '.join(sorted(fields))}")
        default = fields[key].default
        kwargs[key] = _coerce(value, default)
    return cls(**kwargs)


def _coerce(value: Any, default: Any) -> Any:
    if not isinstance(value, str):
        return value
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def run_algorithm(
    algorithm: str, graph: TemporalBipartiteGraph, options: Mapping[str, Any] | None = None
) -> RankingResult:
    return _RUNNERS[algorithm](graph, make_config(algorithm, options))


__all__ = [
    "ALGORITHMS",
    "AtrConfig",
    "AtrState",
    "BiRankConfig",
    "DegenerateReputationError",
    "EmptyYearError",
    "IarrConfig",
    "IterConfig",
    "NonConvergenceWarning",
    "RankingResult",
    "atr_behavioral_factors",
    "atr_epoch_update",
    "atr_initialize",
    "atr_run",
    "atr_year_weights",
    "average_score",
    "birank",
    "correlation_ranking",
    "iarr",
    "iterative_refinement",
    "make_config",
    "normalized_adjacency",
    "pearson_reputation",
    "redistribute",
    "run_algorithm",
    "weighted_quality",
]
