"""Ranking accuracy metrics: AUC, precision/recall/F, matching number M@f, robustness RMSE."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Collection, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "MetricError",
    "MetricReport",
    "RobustnessPoint",
    "auc",
    "parse_auc_mode",
    "precision_recall_f",
    "matching_number",
    "top_count",
    "rmse_auc",
    "evaluate_ranking",
]


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    auc: float
    precision: float
    recall: float
    f_value: float
    m: int
    cutoff_f_percent: float
    cutoff: int
    n_comparisons: int | None = None


@dataclass
class RobustnessPoint:
    n_spammers: int
    auc_real: float
    auc_ran: list[float] = field(default_factory=list)

    @property
    def rmse(self) -> float:
        return rmse_auc(self.auc_ran, self.auc_real)


def parse_auc_mode(text: str) -> tuple[str, int | None, int | None]:
    """``exact`` or ``sampled:N:seed``."""
    if text == "exact":
        return "exact", None, None
    parts = text.split(":")
    if parts[0] == "sampled" and len(parts) == 3:
        return "sampled", int(parts[1]), int(parts[2])
    raise ValueError(f"AUC mode must be 'exact' or 'sampled:N:seed', got {text!r}")


def auc(
    scores: Mapping[str, float],
    positives: Collection[str],
    mode: str = "exact",
    n_samples: int | None = None,
    seed: int | None = None,
) -> float:
    """Probability that a positive item outscores a negative one, ties counting half.

    Negatives are all scored items outside ``positives``. ``exact`` uses the
    rank-sum (Mann-Whitney) statistic over every positive-negative pair;
    ``sampled`` draws ``n_samples`` random pairs with replacement.
    """
    positives = set(positives)
    missing = positives.difference(scores)
    if missing:
        raise MetricError(f"{len(missing)} positive item(s) have no score")
    keys = list(scores)
    values = np.fromiter((scores[k] for k in keys), float, len(keys))
    is_pos = np.fromiter((k in positives for k in keys), bool, len(keys))
    n_pos = int(is_pos.sum())
    n_neg = len(keys) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs at least one positive and one negative item")

    if mode == "exact":
        ranks = rankdata(values)  # average ranks for ties
        u_stat = ranks[is_pos].sum() - n_pos * (n_pos + 1) / 2.0
        return float(u_stat / (n_pos * n_neg))
    if mode == "sampled":
        if not n_samples or n_samples < 1:
            raise MetricError("sampled AUC needs n_samples >= 1")
        rng = np.random.default_rng(seed)
        pos_vals = values[is_pos]
        neg_vals = values[~is_pos]
        p = pos_vals[rng.integers(0, n_pos, n_samples)]
        q = neg_vals[rng.integers(0, n_neg, n_samples)]
        wins = np.count_nonzero(p > q)
        ties = np.count_nonzero(p == q)
        return float((wins + 0.5 * ties) / n_samples)
    raise MetricError(f"unknown AUC mode {mode!r}")


def _check_ranked(ranked: Sequence[str]) -> None:
    if len(set(ranked)) != len(ranked):
        raise MetricError("ranked list contains duplicates")


def precision_recall_f(ranked: Sequence[str], truth: Collection[str], cutoff: int) -> tuple[float, float, float]:
    """Precision, recall and F of the top-``cutoff`` retrieved items."""
    if cutoff < 1:
        raise MetricError("cutoff must be >= 1")
    truth = set(truth)
    if not truth:
        raise MetricError("recall is undefined for an empty truth set")
    _check_ranked(ranked)
    top = ranked[:cutoff]
    hits = sum(1 for a in top if a in truth)
    precision = hits / len(top) if top else 0.0
    recall = hits / len(truth)
    f = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f


def top_count(n_items: int, f_percent: float) -> int:
    """Size of the top ``f_percent`` slice of ``n_items``, rounded up."""
    if not 0 < f_percent <= 100:
        raise MetricError(f"f must lie in (0, 100], got {f_percent}")
    return math.ceil(Fraction(str(f_percent)) * n_items / 100)


def matching_number(ranked: Sequence[str], truth: Collection[str], f_percent: float) -> int:
    """Number of truth items within the top ``f_percent`` of ``ranked``."""
    if len(ranked) == 0:
        raise MetricError("cannot take the top slice of an empty ranking")
    n = top_count(len(ranked), f_percent)
    truth = set(truth)
    return sum(1 for a in ranked[:n] if a in truth)


def rmse_auc(samples: Sequence[float], baseline: float) -> float:
    """Root mean square deviation of perturbed-data AUCs from the clean-data AUC."""
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise MetricError("RMSE needs at least one sample")
    return float(np.sqrt(np.mean((s - baseline) ** 2)))


def evaluate_ranking(
    scores: Mapping[str, float],
    ranked: Sequence[str],
    truth: Collection[str],
    f_percent: float,
    auc_mode: str = "exact",
    n_samples: int | None = None,
    seed: int | None = None,
) -> MetricReport:
    """All metrics of one ranking; precision/recall/F use the same top-f cutoff as M."""
    cutoff = top_count(len(ranked), f_percent)
    p, r, f = precision_recall_f(ranked, truth, cutoff)
    m = matching_number(ranked, truth, f_percent)
    a = auc(scores, truth, auc_mode, n_samples, seed)
    return MetricReport(a, p, r, f, m, float(f_percent), cutoff, n_samples if auc_mode == "sampled" else None)
