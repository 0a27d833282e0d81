"""Reputation and quality ranking on temporal bipartite rating networks."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    GroundTruth,
    RatingEvent,
    RatingScale,
    TemporalBipartiteGraph,
    YearSlice,
    build_graph,
    citation_to_bipartite,
    parse_ratings,
    restrict_to_years,
    year_slice,
)
from .algorithms import ALGORITHMS, RankingResult, run_algorithm  # noqa: E402

__all__ = [
    "__version__",
    "ALGORITHMS",
    "GroundTruth",
    "RankingResult",
    "RatingEvent",
    "RatingScale",
    "TemporalBipartiteGraph",
    "YearSlice",
    "build_graph",
    "citation_to_bipartite",
    "parse_ratings",
    "restrict_to_years",
    "run_algorithm",
    "year_slice",
]
