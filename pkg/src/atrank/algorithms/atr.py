"""Accumulative time-based ranking (ATR).

Years are processed in chronological order. Inside a year the behavioral
factors and the reputation/quality update are repeated, each pass treating
the previous pass as time ``t-1``, until no item quality moves by ``threshold``
or more. Reputation and quality carry over from one year to the next; users
and items absent from a year keep their values.

Two update modes share the same behavioral factors:

``literal``
    The raw reputation and quality updates. Quality is multiplied by a
    reputation-dependent factor at every pass, so repeated passes drive all
    scores to zero (or overflow). Kept for reference and for checking the
    formulas term by term.

``accumulative`` (default)
    The same ingredients arranged as a well-posed fixed point:

    * yearly reputation is the standardized rating/quality co-deviation sum
      divided by the user's relative behavioral penalty and the year's
      ``log max k`` normalizer, clamped at zero and scaled to ``[0, 1]``;
    * a user's reputation is the ``W_i(t)``-weighted mean of their yearly
      reputations so far;
    * yearly quality is the mean rating weighted by the rater terms of the
      item factor, ``R_i (1 - 1/sqrt(k_i(t)))``, using the reputations just
      updated in the same pass;
    * an item's quality is the weighted mean of its yearly qualities so far,
      a year counting ``W~_a(t)`` times the item's mean rater term, so an item
      whose raters carry no weight fades out of the year instead of dropping
      out abruptly.

    Each pass moves ``relaxation`` of the way to the updated values (default
    1, the plain fixed-point sweep). On small sparse years the plain sweep can
    fall into a sustained oscillation, so once ``stall_patience`` consecutive
    passes each reverse the direction of the previous quality change, the step
    is halved for the rest of the year. The fixed point is the same either way and convergence is judged on
    the full update.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..model import TemporalBipartiteGraph, YearSlice, year_slice
from .result import AtrConfig, NonConvergenceWarning, RankingResult, config_echo

__all__ = [
    "AtrState",
    "EmptyYearError",
    "atr_year_weights",
    "atr_initialize",
    "atr_behavioral_factors",
    "atr_epoch_update",
    "atr_run",
]


class EmptyYearError(ValueError):
    pass


@dataclass
class AtrState:
    """Running ATR state over dense user/item indexes.

    ``item_weight_total`` is ``sum_t W~_a(t)`` over every year of the graph.
    The ``*_sum``/``*_weight`` arrays are the committed yearly accumulations
    of the accumulative mode; ``pending`` holds the current year's terms
    until :func:`commit_year`.
    """

    graph: TemporalBipartiteGraph
    R: np.ndarray
    Q: np.ndarray
    item_weight_total: np.ndarray
    accu_user: np.ndarray
    accu_item: np.ndarray
    reputation_sum: np.ndarray
    reputation_weight: np.ndarray
    quality_sum: np.ndarray
    quality_weight: np.ndarray
    pending: dict = field(default_factory=dict)
    floors: Counter = field(default_factory=Counter)

    def commit_year(self) -> None:
        if not self.pending:
            return
        users, w_u, rep = self.pending["users"], self.pending["w_users"], self.pending["yearly_reputation"]
        self.reputation_sum[users] += w_u * rep
        self.reputation_weight[users] += w_u
        items, w_a, qual = self.pending["items"], self.pending["w_items"], self.pending["yearly_quality"]
        self.quality_sum[items] += w_a * qual
        self.quality_weight[items] += w_a
        self.pending = {}


def atr_year_weights(slc: YearSlice) -> tuple[np.ndarray, np.ndarray]:
    """``W_i(t) = k_i(t)/N(t)`` and ``W~_a(t) = k~_a(t)/N(t)``.

    Aligned with ``slc.active_users`` and ``slc.active_items``.
    """
    if slc.n_ratings <= 0:
        raise EmptyYearError(f"year {slc.t} has no ratings")
    n = float(slc.n_ratings)
    return slc.user_degrees / n, slc.item_degrees / n


def _events_per_year(graph: TemporalBipartiteGraph) -> np.ndarray:
    counts = np.diff(graph.year_offsets)
    return np.repeat(counts, counts).astype(float)


def atr_initialize(graph: TemporalBipartiteGraph) -> AtrState:
    """Degree-weighted starting reputation and quality.

    ``R_i = sum_{t, a in O_i(t)} r_ia W_i(t) / sum_t k_i(t)``, then
    ``Q_a = sum r_ia R_i W~_a(t) / sum R_i W~_a(t)`` over all of the item's
    ratings, reusing that single ``R_i`` for every year. An item whose raters
    all start at zero reputation takes its mean rating instead.
    """
    n_t = _events_per_year(graph)
    w_u = graph.ev_user_degree / n_t
    w_a = graph.ev_item_degree / n_t
    u, a, r = graph.ev_user, graph.ev_item, graph.ev_rating
    R = np.bincount(u, r * w_u, minlength=graph.n_users) / np.maximum(graph.user_degree, 1)
    num = np.bincount(a, r * R[u] * w_a, minlength=graph.n_items)
    den = np.bincount(a, R[u] * w_a, minlength=graph.n_items)
    ok = den != 0
    Q = np.where(ok, num / np.where(ok, den, 1.0), graph.item_mean)
    floors = Counter()
    if not ok.all():
        floors["init_quality_fallback"] = int((~ok).sum())
    # each event adds W~_a(t)/k~_a(t), so an item collects W~_a(t) once per active year
    weight_total = np.bincount(a, w_a / graph.ev_item_degree, minlength=graph.n_items)
    return AtrState(
        graph=graph,
        R=R,
        Q=Q,
        item_weight_total=weight_total,
        accu_user=np.zeros(graph.n_users),
        accu_item=np.zeros(graph.n_items),
        reputation_sum=np.zeros(graph.n_users),
        reputation_weight=np.zeros(graph.n_users),
        quality_sum=np.zeros(graph.n_items),
        quality_weight=np.zeros(graph.n_items),
        floors=floors,
    )


def _local(slc: YearSlice) -> tuple[np.ndarray, np.ndarray]:
    # position of each event's user/item within the slice's active arrays
    return np.searchsorted(slc.active_users, slc.ev_user), np.searchsorted(slc.active_items, slc.ev_item)


def atr_behavioral_factors(
    state: AtrState, slc: YearSlice, epsilon: float = 1e-6, reputation: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """User and item behavioral factors of year ``t`` from the ``t-1`` state.

    ``accu_i(t) = R_i/sqrt(k_i(t)) * sum_{a in O_i(t)} k~_a(t) / (Q_a sqrt(r_ia))``
    with ``Q_a`` and ``sqrt(r_ia)`` floored at ``epsilon`` and the result
    floored at ``epsilon``;
    ``accu_a(t) = sum_{i in U_a(t)} R_i Q_a / k~_a(t) * (1 - 1/sqrt(k_i(t)))``.

    ``reputation`` overrides ``state.R`` (the accumulative mode passes ones
    to get the reputation-free penalty). Results align with the slice's
    active users and items; floor activations are counted in ``state.floors``.
    """
    R = state.R if reputation is None else reputation
    Q = state.Q
    pos_u, pos_a = _local(slc)
    q_ev = Q[slc.ev_item]
    sqrt_r = np.sqrt(np.maximum(slc.ev_rating, 0.0))
    state.floors["quality_floor"] += int((q_ev < epsilon).sum())
    state.floors["sqrt_rating_floor"] += int((sqrt_r < epsilon).sum())
    terms = slc.ev_item_degree / (np.maximum(q_ev, epsilon) * np.maximum(sqrt_r, epsilon))
    n_u = len(slc.active_users)
    accu_user = R[slc.active_users] / np.sqrt(slc.user_degrees) * np.bincount(pos_u, terms, minlength=n_u)
    low = accu_user <= epsilon
    state.floors["accu_user_floor"] += int(low.sum())
    accu_user = np.where(low, epsilon, accu_user)

    item_terms = R[slc.ev_user] * q_ev / slc.ev_item_degree * (1.0 - 1.0 / np.sqrt(slc.ev_user_degree))
    accu_item = np.bincount(pos_a, item_terms, minlength=len(slc.active_items))
    return accu_user, accu_item


def _log_normalizer(slc: YearSlice, state: AtrState, epsilon: float) -> float:
    top = float(np.log(slc.user_degrees.max()))
    if top <= epsilon:
        state.floors["log_normalizer_floor"] += 1
        return epsilon
    return top


def _codeviation(state: AtrState, slc: YearSlice, epsilon: float) -> np.ndarray:
    """Per active user: sum of the standardized rating term times the centered quality term.

    The quality term is centered on the mean current quality of the items
    the user rated this year.
    """
    g = state.graph
    pos_u, _ = _local(slc)
    n_u = len(slc.active_users)
    n = float(slc.n_ratings)
    w_user = slc.ev_user_degree / n
    w_item = slc.ev_item_degree / n
    sigma_u = g.user_std[slc.ev_user]
    sigma_a = g.item_std[slc.ev_item]
    state.floors["sigma_user_floor"] += int((g.user_std[slc.active_users] < epsilon).sum())
    state.floors["sigma_item_floor"] += int((g.item_std[slc.active_items] < epsilon).sum())
    q_ev = state.Q[slc.ev_item]
    q_center = np.bincount(pos_u, q_ev, minlength=n_u) / slc.user_degrees
    rating_term = w_user * (slc.ev_rating - g.user_mean[slc.ev_user]) / np.maximum(sigma_u, epsilon)
    quality_term = w_item * (q_ev - q_center[pos_u]) / np.sqrt(np.maximum(sigma_a, epsilon) / slc.ev_user_degree)
    return np.bincount(pos_u, rating_term * quality_term, minlength=n_u)


def atr_epoch_update(
    state: AtrState,
    slc: YearSlice,
    config: AtrConfig,
    factors: tuple[np.ndarray, np.ndarray],
    relaxation: float | None = None,
) -> AtrState:
    """One reputation/quality pass over year ``t``; updates ``state`` in place.

    Literal mode:
    ``R_i(t) = codev_i / (accu_i(t) * max_j log k_j(t))``, clamped at zero
    when configured, and
    ``Q_a(t) = [sum_{i in U_a(t)} W~_a(t) r_ia / sum_t W~_a(t)] * accu_a(t) * k~_a(t)``.

    Accumulative mode: see the module docstring. ``factors[0]`` must then be
    the reputation-free user factor.
    """
    eps = config.epsilon
    users, items = slc.active_users, slc.active_items
    codev = _codeviation(state, slc, eps)
    log_norm = _log_normalizer(slc, state, eps)
    accu_user, accu_item = factors
    state.accu_user[users] = accu_user
    state.accu_item[items] = accu_item
    _, pos_a = _local(slc)
    n = float(slc.n_ratings)

    if config.mode == "literal":
        R_t = codev / (accu_user * log_norm)
        if config.clamp_negative_reputation:
            R_t = np.maximum(R_t, 0.0)
        w_item = slc.item_degrees / n
        rating_part = w_item * np.bincount(pos_a, slc.ev_rating, minlength=len(items)) / state.item_weight_total[items]
        Q_t = rating_part * accu_item * slc.item_degrees
        state.R[users] = R_t
        state.Q[items] = Q_t
        return state

    penalty = accu_user / accu_user.mean()
    yearly_rep = codev / (penalty * log_norm)
    if config.clamp_negative_reputation:
        yearly_rep = np.maximum(yearly_rep, 0.0)
    top = np.max(np.abs(yearly_rep))
    if top > 0:
        yearly_rep = yearly_rep / top
    else:
        state.floors["zero_reputation_years"] += 1

    lam = config.relaxation if relaxation is None else relaxation
    w_users = slc.user_degrees / n
    R_target = (state.reputation_sum[users] + w_users * yearly_rep) / (state.reputation_weight[users] + w_users)
    state.R[users] += lam * (R_target - state.R[users])

    rater_weight = state.R[slc.ev_user] * (1.0 - 1.0 / np.sqrt(slc.ev_user_degree))
    num = np.bincount(pos_a, rater_weight * slc.ev_rating, minlength=len(items))
    den = np.bincount(pos_a, rater_weight, minlength=len(items))
    has_weight = den > 0
    yearly_q = np.where(has_weight, num / np.where(has_weight, den, 1.0), 0.0)
    # W~_a(t) times the mean rater term
    w_items = den / n

    qw = state.quality_weight[items] + w_items
    upd = qw > 0
    Q_now = state.Q[items]
    Q_target = Q_now.copy()
    Q_target[upd] = (state.quality_sum[items[upd]] + w_items[upd] * yearly_q[upd]) / qw[upd]
    state.Q[items] = Q_now + lam * (Q_target - Q_now)
    state.pending = {
        "users": users,
        "w_users": w_users,
        "yearly_reputation": yearly_rep,
        "items": items,
        "w_items": w_items,
        "yearly_quality": yearly_q,
        "unweighted_items": int((~has_weight).sum()),
        "residual": float(np.max(np.abs(Q_target - Q_now))) if len(items) else 0.0,
    }
    return state


def atr_run(graph: TemporalBipartiteGraph, config: AtrConfig | None = None) -> RankingResult:
    """Run ATR over every year of ``graph``."""
    config = config or AtrConfig()
    state = atr_initialize(graph)
    accumulative = config.mode == "accumulative"
    if accumulative:
        top = np.max(np.abs(state.R))
        if top > 0:
            state.R = state.R / top
    ones = np.ones(graph.n_users) if accumulative else None

    per_year_iterations: dict[int, int] = {}
    per_year_converged: dict[int, bool] = {}
    per_year_delta: dict[int, float] = {}
    per_year_relaxation: dict[int, float] = {}
    unweighted = 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for t in graph.years.tolist():
            slc = year_slice(graph, t)
            done = False
            delta = np.inf
            k = 0
            lam, reversals, last_step = config.relaxation, 0, None
            for k in range(1, config.max_inner_iterations + 1):
                previous = state.Q.copy()
                factors = atr_behavioral_factors(state, slc, config.epsilon, reputation=ones)
                atr_epoch_update(state, slc, config, factors, lam)
                if accumulative:
                    delta = state.pending["residual"]
                else:
                    delta = float(np.max(np.abs(state.Q - previous)))
                if delta < config.threshold:
                    done = True
                    break
                if accumulative and config.stall_patience:
                    step = state.Q[slc.active_items] - previous[slc.active_items]
                    # a pass that undoes the previous one is the mark of a cycle
                    reversals = reversals + 1 if last_step is not None and step @ last_step < 0 else 0
                    last_step = step
                    if reversals >= config.stall_patience:
                        lam, reversals = lam / 2, 0
            per_year_relaxation[t] = lam
            if accumulative:
                unweighted += state.pending.get("unweighted_items", 0)
                state.commit_year()
            per_year_iterations[t] = k
            per_year_converged[t] = done
            per_year_delta[t] = delta

    converged = all(per_year_converged.values())
    if not converged:
        bad = [t for t, ok in per_year_converged.items() if not ok]
        warnings.warn(f"ATR inner loop did not converge in year(s) {bad}", NonConvergenceWarning, stacklevel=2)
    non_finite = int((~np.isfinite(state.Q)).sum() + (~np.isfinite(state.R)).sum())
    diagnostics = {
        "iterations_per_year": {str(t): n for t, n in per_year_iterations.items()},
        "converged_per_year": {str(t): ok for t, ok in per_year_converged.items()},
        "final_delta_per_year": {str(t): d for t, d in per_year_delta.items()},
        "final_relaxation_per_year": {str(t): v for t, v in per_year_relaxation.items()},
        "floor_activations": dict(sorted(state.floors.items())),
        "unweighted_item_years": unweighted,
        "non_finite_scores": non_finite,
    }
    return RankingResult(
        "atr",
        graph.item_ids,
        state.Q.copy(),
        graph.user_ids,
        state.R.copy(),
        list(per_year_iterations.values()),
        converged,
        config_echo(config),
        diagnostics,
    )
