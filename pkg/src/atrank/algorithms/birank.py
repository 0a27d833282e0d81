from __future__ import annotations

import warnings

import numpy as np
from scipy import sparse

from ..model import TemporalBipartiteGraph
from .result import BiRankConfig, NonConvergenceWarning, RankingResult, config_echo

__all__ = ["birank", "normalized_adjacency", "default_query_vectors"]


def normalized_adjacency(graph: TemporalBipartiteGraph) -> tuple[sparse.csr_matrix, int, int]:
    """``S = D_u^-1/2 W D_v^-1/2`` with rating-weighted ``W``.

    Ratings of the same pair in different years add up. Returns ``S`` and the
    number of zero-degree users and items, whose rows/columns stay zero.
    """
    W = sparse.csr_matrix(
        (graph.ev_rating, (graph.ev_user, graph.ev_item)), shape=(graph.n_users, graph.n_items)
    )
    W.sum_duplicates()
    du = np.asarray(W.sum(axis=1)).ravel()
    dv = np.asarray(W.sum(axis=0)).ravel()
    inv_u = np.zeros_like(du)
    inv_v = np.zeros_like(dv)
    inv_u[du > 0] = du[du > 0] ** -0.5
    inv_v[dv > 0] = dv[dv > 0] ** -0.5
    S = sparse.diags(inv_u) @ W @ sparse.diags(inv_v)
    return S.tocsr(), int((du <= 0).sum()), int((dv <= 0).sum())


def default_query_vectors(graph: TemporalBipartiteGraph) -> tuple[np.ndarray, np.ndarray]:
    """Degree-proportional query vectors, each summing to 1."""
    ku = graph.user_degree.astype(float)
    kv = graph.item_degree.astype(float)
    return ku / ku.sum(), kv / kv.sum()


def birank(graph: TemporalBipartiteGraph, config: BiRankConfig | None = None) -> RankingResult:
    """Alternate ``v = alpha S^T u + (1-alpha) v0`` and ``u = beta S v + (1-beta) u0``.

    Stops once both vectors move by less than ``config.threshold`` in the
    max norm. Item quality is ``v`` and user reputation is ``u``.
    """
    config = config or BiRankConfig()
    S, zero_u, zero_v = normalized_adjacency(graph)
    if zero_u or zero_v:
        warnings.warn(f"{zero_u} user(s) and {zero_v} item(s) with zero weighted degree excluded", stacklevel=2)
    ST = S.T.tocsr()
    du0, dv0 = default_query_vectors(graph)
    u0 = du0 if config.query_u is None else np.asarray(config.query_u, float)
    v0 = dv0 if config.query_v is None else np.asarray(config.query_v, float)
    u = u0.copy() if config.initial_u is None else np.asarray(config.initial_u, float).copy()
    v = v0.copy() if config.initial_v is None else np.asarray(config.initial_v, float).copy()
    a, b = config.alpha, config.beta

    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        v_new = a * (ST @ u) + (1 - a) * v0
        u_new = b * (S @ v_new) + (1 - b) * u0
        delta = max(np.max(np.abs(v_new - v)), np.max(np.abs(u_new - u)))
        u, v = u_new, v_new
        if delta < config.threshold:
            converged = True
            break
    if not converged:
        warnings.warn(f"BiRank did not converge in {config.max_iterations} iterations", NonConvergenceWarning, stacklevel=2)
    residual = float(np.max(np.abs(v - (a * (ST @ u) + (1 - a) * v0))))
    return RankingResult(
        "birank",
        graph.item_ids,
        v,
        graph.user_ids,
        u,
        [it],
        converged,
        config_echo(config),
        {"fixed_point_residual": residual, "zero_degree_users": zero_u, "zero_degree_items": zero_v},
    )
