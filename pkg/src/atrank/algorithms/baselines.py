"""Average score, iterative refinement, correlation-based ranking and IARR.

All four pool every year of the graph; each event counts as one rating
r_ia of its user on its item.
"""

from __future__ import annotations

import warnings

import numpy as np

from ..model import TemporalBipartiteGraph
from .result import (
    DegenerateReputationError,
    IarrConfig,
    IterConfig,
    NonConvergenceWarning,
    RankingResult,
    config_echo,
)

__all__ = [
    "average_score",
    "iterative_refinement",
    "correlation_ranking",
    "iarr",
    "pearson_reputation",
    "redistribute",
    "weighted_quality",
]

# relative size below which a standard deviation counts as zero
_FLAT = 1e-12


def average_score(graph: TemporalBipartiteGraph) -> RankingResult:
    """Mean rating per item over all years."""
    k = graph.item_degree
    total = np.bincount(graph.ev_item, graph.ev_rating, minlength=graph.n_items)
    quality = np.full(graph.n_items, np.nan)
    rated = k > 0
    if not rated.all():
        warnings.warn(f"{int((~rated).sum())} item(s) without ratings left unscored", stacklevel=2)
    quality[rated] = total[rated] / k[rated]
    return RankingResult(
        algorithm="avg",
        item_ids=graph.item_ids,
        quality=quality,
        user_ids=graph.user_ids,
        reputation=None,
        iterations=[],
        converged=True,
    )


def weighted_quality(graph: TemporalBipartiteGraph, reputation: np.ndarray) -> tuple[np.ndarray, int]:
    """Reputation-weighted mean rating per item.

    Items whose raters all have zero reputation fall back to their plain
    mean rating; the number of fallbacks is returned alongside.
    """
    w = reputation[graph.ev_user]
    num = np.bincount(graph.ev_item, w * graph.ev_rating, minlength=graph.n_items)
    den = np.bincount(graph.ev_item, w, minlength=graph.n_items)
    ok = den > 0
    q = np.where(ok, num / np.where(ok, den, 1.0), graph.item_mean)
    return q, int((~ok).sum())


def iterative_refinement(graph: TemporalBipartiteGraph, config: IterConfig | None = None) -> RankingResult:
    """Reputation inversely proportional to a user's mean squared rating error.

    Starting from equal reputations, alternate
    ``Q_a = sum_i R_i r_ia / sum_i R_i``,
    ``d_i = mean_a (r_ia - Q_a)^2`` and ``R_i = 1 / (d_i + epsilon)``
    until the largest quality change drops below ``config.threshold``.
    """
    config = config or IterConfig()
    R = np.ones(graph.n_users)
    Q = None
    k = np.maximum(graph.user_degree, 1)
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        Q_new, _ = weighted_quality(graph, R)
        err = graph.ev_rating - Q_new[graph.ev_item]
        d = np.bincount(graph.ev_user, err * err, minlength=graph.n_users) / k
        R = 1.0 / (d + config.epsilon)
        done = Q is not None and np.max(np.abs(Q_new - Q)) < config.threshold
        Q = Q_new
        if done:
            converged = True
            break
    if not converged:
        warnings.warn(f"IR did not converge in {config.max_iterations} iterations", NonConvergenceWarning, stacklevel=2)
    return RankingResult("ir", graph.item_ids, Q, graph.user_ids, R, [it], converged, config_echo(config))


def pearson_reputation(graph: TemporalBipartiteGraph, quality: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation between each user's ratings and the qualities of the rated items.

    Means and standard deviations are taken over the user's own items.
    Returns ``(corr, undefined)``; ``corr`` is 0 wherever ``undefined`` is
    set (a single rating, or constant ratings or qualities).
    """
    u, n = graph.ev_user, graph.n_users
    k = graph.user_degree
    kk = np.maximum(k, 1)
    r = graph.ev_rating
    q = quality[graph.ev_item]
    r_mean, r_std = graph.user_mean, graph.user_std
    q_mean = np.bincount(u, q, minlength=n) / kk
    dq = q - q_mean[u]
    q_std = np.sqrt(np.bincount(u, dq * dq, minlength=n) / kk)
    cov = np.bincount(u, (r - r_mean[u]) * dq, minlength=n) / kk
    undefined = (
        (k < 2)
        | (r_std <= _FLAT * np.maximum(1.0, np.abs(r_mean)))
        | (q_std <= _FLAT * np.maximum(1.0, np.abs(q_mean)))
    )
    corr = np.zeros(n)
    ok = ~undefined
    corr[ok] = cov[ok] / (r_std[ok] * q_std[ok])
    return corr, undefined


def redistribute(temporary: np.ndarray, phi: float) -> np.ndarray:
    """Power-law reweighting of temporary reputations that conserves their sum."""
    tr = np.asarray(temporary, dtype=float)
    powered = tr**phi
    denom = powered.sum()
    if denom <= 0:
        raise DegenerateReputationError("all temporary reputations are zero")
    return powered * (tr.sum() / denom)


def _correlation_loop(graph, config: IterConfig, phi: float | None, name: str) -> RankingResult:
    R = graph.user_degree / graph.n_items
    Q = None
    fallbacks = undefined_count = 0
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        Q_new, fallbacks = weighted_quality(graph, R)
        corr, undefined = pearson_reputation(graph, Q_new)
        undefined_count = int(undefined.sum())
        temporary = np.maximum(corr, 0.0)
        R = temporary if phi is None else redistribute(temporary, phi)
        done = Q is not None and np.max(np.abs(Q_new - Q)) < config.threshold
        Q = Q_new
        if done:
            converged = True
            break
    if not converged:
        warnings.warn(f"{name} did not converge in {config.max_iterations} iterations", NonConvergenceWarning, stacklevel=3)
    diagnostics = {"undefined_correlation_users": undefined_count, "quality_fallback_items": fallbacks}
    return RankingResult(name, graph.item_ids, Q, graph.user_ids, R, [it], converged, config_echo(config), diagnostics)


def correlation_ranking(graph: TemporalBipartiteGraph, config: IterConfig | None = None) -> RankingResult:
    """Correlation-based ranking.

    Reputations start at ``k_i / |O|``. Each round sets quality to the
    reputation-weighted mean rating and reputation to the user's Pearson
    correlation with those qualities, with negative correlations set to 0.
    """
    return _correlation_loop(graph, config or IterConfig(), None, "cr")


def iarr(graph: TemporalBipartiteGraph, config: IarrConfig | None = None) -> RankingResult:
    """CR with reputation redistribution ``R_i = TR_i^phi * sum(TR) / sum(TR^phi)``."""
    config = config or IarrConfig()
    return _correlation_loop(graph, config, config.phi, "iarr")
