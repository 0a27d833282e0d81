"""Temporal bipartite rating graph: ingestion, indexing and yearly slices.

Identifiers are opaque strings at the boundary and dense integer indexes
inside the graph. Every array held by a built graph is read-only, so a graph
can be shared between threads and between algorithm runs.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

import numpy as np

__all__ = [
    "RatingScale",
    "RatingEvent",
    "YearSlice",
    "GroundTruth",
    "TemporalBipartiteGraph",
    "ParseError",
    "RangeError",
    "DuplicateEventError",
    "UnknownYearError",
    "EmptyGraphError",
    "SelfCitationError",
    "parse_ratings",
    "parse_citations",
    "citation_to_bipartite",
    "build_graph",
    "year_slice",
    "restrict_to_years",
    "load_ground_truth",
    "load_true_qualities",
    "write_events",
    "epoch_seconds_to_year",
    "FIVE_STAR",
]


class ParseError(ValueError):
    """Malformed input line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RangeError(ParseError):
    """Rating outside the declared scale."""


class DuplicateEventError(ValueError):
    def __init__(self, user: str, item: str, year: int):
        self.triple = (user, item, year)
        super().__init__(f"duplicate rating for (user={user!r}, item={item!r}, year={year})")


class UnknownYearError(KeyError):
    pass


class EmptyGraphError(ValueError):
    pass


class SelfCitationError(ValueError):
    pass


@dataclass(frozen=True)
class RatingScale:
    min: float = 1.0
    max: float = 5.0
    integral: bool = True

    def __post_init__(self):
        if not self.min < self.max:
            raise ValueError(f"rating scale needs min < max, got [{self.min}, {self.max}]")

    def contains(self, value: float) -> bool:
        return self.min <= value <= self.max

    def levels(self) -> np.ndarray:
        """Integer rating levels on the scale (only for integral scales)."""
        if not self.integral:
            raise ValueError("continuous scale has no discrete levels")
        return np.arange(math.ceil(self.min), math.floor(self.max) + 1, dtype=float)


FIVE_STAR = RatingScale(1.0, 5.0, True)


@dataclass(frozen=True)
class RatingEvent:
    user: str
    item: str
    rating: float
    year: int


@dataclass(frozen=True)
class YearSlice:
    """Events and degrees of one calendar year.

    Entity arrays hold dense indexes into the parent graph. The ``ev_*``
    arrays are aligned per event and already carry each event's year-t user
    and item degree, which is what the ATR updates consume.
    """

    t: int
    active_users: np.ndarray
    active_items: np.ndarray
    user_degrees: np.ndarray
    item_degrees: np.ndarray
    n_ratings: int
    ev_user: np.ndarray
    ev_item: np.ndarray
    ev_rating: np.ndarray
    ev_user_degree: np.ndarray
    ev_item_degree: np.ndarray

    def user_degree_map(self, user_ids: Sequence[str]) -> dict[str, int]:
        return {user_ids[u]: int(k) for u, k in zip(self.active_users, self.user_degrees)}

    def item_degree_map(self, item_ids: Sequence[str]) -> dict[str, int]:
        return {item_ids[a]: int(k) for a, k in zip(self.active_items, self.item_degrees)}


@dataclass(frozen=True)
class GroundTruth:
    """Either a target item set (award winners) or synthetic true qualities."""

    targets: frozenset[str] | None = None
    award_year: Mapping[str, int] | None = None
    qualities: Mapping[str, float] | None = None

    def __post_init__(self):
        if (self.targets is None) == (self.qualities is None):
            raise ValueError("ground truth is either a target set or a quality map")

    @classmethod
    def target_set(cls, items: Iterable[str], award_year: Mapping[str, int] | None = None):
        return cls(targets=frozenset(items), award_year=dict(award_year) if award_year else None)

    @classmethod
    def true_qualities(cls, qualities: Mapping[str, float]):
        return cls(qualities=dict(qualities))

    @property
    def is_target_set(self) -> bool:
        return self.targets is not None

    def positives(self, top_fraction: float = 0.1) -> frozenset[str]:
        """Target items; for true qualities, the top ``top_fraction`` by quality.

        Quality ties at the cutoff are broken by ascending item identifier.
        """
        if self.targets is not None:
            return self.targets
        ranked = sorted(self.qualities.items(), key=lambda kv: (-kv[1], kv[0]))
        n = max(1, math.ceil(top_fraction * len(ranked) - 1e-9))
        return frozenset(k for k, _ in ranked[:n])

    def positives_until(self, horizon: int) -> frozenset[str]:
        """Targets awarded by ``horizon``; all targets when award years are absent."""
        targets = self.positives()
        if self.award_year is None:
            return targets
        return frozenset(a for a in targets if self.award_year.get(a, horizon) <= horizon)


def epoch_seconds_to_year(seconds: float) -> int:
    """Calendar year (UTC) of a Unix timestamp."""
    return int(np.datetime64(int(seconds), "s").astype("datetime64[Y]").astype(int) + 1970)


def _open_text(source: TextIO | str) -> TextIO:
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def _check_header(reader: Iterator[list[str]], expected: tuple[str, ...]) -> None:
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input, expected header " + ",".join(expected), 1) from None
    got = tuple(h.strip().lstrip("﻿") for h in header)
    if got[: len(expected)] != expected:
        raise ParseError(f"expected header {','.join(expected)}, got {','.join(got)}", 1)


def _parse_year(raw: str, time_unit: str, lineno: int) -> int:
    raw = raw.strip()
    if time_unit == "year":
        try:
            return int(raw)
        except ValueError:
            raise ParseError(f"year {raw!r} is not an integer", lineno) from None
    if time_unit == "epoch":
        try:
            return epoch_seconds_to_year(float(raw))
        except ValueError:
            raise ParseError(f"timestamp {raw!r} is not numeric", lineno) from None
    raise ValueError(f"unknown time unit {time_unit!r}")


def parse_ratings(
    source: TextIO | str, scale: RatingScale = FIVE_STAR, time_unit: str = "year"
) -> list[RatingEvent]:
    """Read a ``user,item,rating,year`` CSV into rating events, in file order.

    ``time_unit="epoch"`` reads the last column as Unix seconds and reduces it
    to a calendar year.
    """
    reader = csv.reader(_open_text(source))
    _check_header(reader, ("user", "item", "rating", "year"))
    events = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", lineno)
        user, item, raw_rating, raw_year = row
        try:
            rating = float(raw_rating)
        except ValueError:
            raise ParseError(f"rating {raw_rating!r} is not a number", lineno) from None
        if not math.isfinite(rating) or not scale.contains(rating):
            raise RangeError(f"rating {rating:g} outside [{scale.min:g}, {scale.max:g}]", lineno)
        year = _parse_year(raw_year, time_unit, lineno)
        events.append(RatingEvent(user.strip(), item.strip(), rating, year))
    return events


def parse_citations(source: TextIO | str) -> list[tuple[str, str, int]]:
    """Read a ``citing,cited,year`` CSV of citation edges."""
    reader = csv.reader(_open_text(source))
    _check_header(reader, ("citing", "cited", "year"))
    edges = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", lineno)
        edges.append((row[0].strip(), row[1].strip(), _parse_year(row[2], "year", lineno)))
    return edges


def citation_to_bipartite(
    edges: Iterable[tuple[str, str, int]],
    default_rating: float = 5.0,
    allow_self_loops: bool = False,
    scale: RatingScale = FIVE_STAR,
) -> list[RatingEvent]:
    """Map a citation network onto a user->item rating log.

    The citing paper plays the user and the cited paper the item, so a paper
    can appear on both sides. Every citation carries ``default_rating``.
    """
    if not scale.contains(default_rating):
        raise RangeError(f"default rating {default_rating:g} outside scale")
    events = []
    for citing, cited, year in edges:
        if citing == cited and not allow_self_loops:
            raise SelfCitationError(f"paper {citing!r} cites itself in {year}")
        events.append(RatingEvent(citing, cited, float(default_rating), int(year)))
    return events


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TemporalBipartiteGraph:
    """Dual-indexed sparse rating graph with per-year slices.

    Events are stored sorted by (year, file order). ``year_offsets[j]`` and
    ``year_offsets[j + 1]`` bound the events of ``years[j]``.
    """

    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    scale: RatingScale
    ev_user: np.ndarray
    ev_item: np.ndarray
    ev_rating: np.ndarray
    ev_year: np.ndarray
    years: np.ndarray
    year_offsets: np.ndarray
    ev_user_degree: np.ndarray
    ev_item_degree: np.ndarray
    user_degree: np.ndarray
    item_degree: np.ndarray
    user_mean: np.ndarray
    user_std: np.ndarray
    item_mean: np.ndarray
    item_std: np.ndarray
    _user_index: dict = field(repr=False, compare=False)
    _item_index: dict = field(repr=False, compare=False)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_ratings(self) -> int:
        return len(self.ev_rating)

    def user_index(self, user: str) -> int:
        return self._user_index[user]

    def item_index(self, item: str) -> int:
        return self._item_index[item]

    def year_position(self, t: int) -> int:
        j = int(np.searchsorted(self.years, t))
        if j == len(self.years) or self.years[j] != t:
            raise UnknownYearError(t)
        return j

    def year_bounds(self, t: int) -> tuple[int, int]:
        j = self.year_position(t)
        return int(self.year_offsets[j]), int(self.year_offsets[j + 1])

    def ratings_per_year(self) -> dict[int, int]:
        return {int(t): int(n) for t, n in zip(self.years, np.diff(self.year_offsets))}

    def events(self) -> Iterator[RatingEvent]:
        for u, a, r, y in zip(self.ev_user, self.ev_item, self.ev_rating, self.ev_year):
            yield RatingEvent(self.user_ids[u], self.item_ids[a], float(r), int(y))

    def slices(self) -> Iterator[YearSlice]:
        for t in self.years:
            yield year_slice(self, int(t))


def _group_stats(index: np.ndarray, values: np.ndarray, n: int):
    deg = np.bincount(index, minlength=n)
    mean = np.bincount(index, values, minlength=n) / np.maximum(deg, 1)
    var = np.bincount(index, (values - mean[index]) ** 2, minlength=n) / np.maximum(deg, 1)
    return deg, mean, np.sqrt(var)


def _year_degrees(ent: np.ndarray, year_pos: np.ndarray) -> np.ndarray:
    # degree of each event's entity within the event's year
    key = year_pos.astype(np.int64) * (int(ent.max()) + 1 if len(ent) else 1) + ent
    _, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    return counts[inverse.reshape(-1)]


def build_graph(
    events: Sequence[RatingEvent],
    scale: RatingScale = FIVE_STAR,
    dedupe: str | None = None,
) -> TemporalBipartiteGraph:
    """Index a rating log into a :class:`TemporalBipartiteGraph`.

    A user rates an item at most once per year. Duplicates raise
    :class:`DuplicateEventError` unless ``dedupe="last"``, which keeps the
    last occurrence of each (user, item, year).
    """
    if len(events) == 0:
        raise EmptyGraphError("cannot build a graph from zero events")
    if dedupe not in (None, "last"):
        raise ValueError(f"unknown dedupe policy {dedupe!r}")

    seen: dict[tuple[str, str, int], int] = {}
    for pos, e in enumerate(events):
        key = (e.user, e.item, int(e.year))
        if key in seen and dedupe is None:
            raise DuplicateEventError(*key)
        if not scale.contains(e.rating):
            raise RangeError(f"rating {e.rating:g} of {key} outside [{scale.min:g}, {scale.max:g}]")
        seen[key] = pos
    if dedupe == "last" and len(seen) < len(events):
        keep = sorted(seen.values())
        warnings.warn(f"dropped {len(events) - len(keep)} duplicate rating(s)", stacklevel=2)
        events = [events[p] for p in keep]

    user_ids = tuple(sorted({e.user for e in events}))
    item_ids = tuple(sorted({e.item for e in events}))
    user_index = {u: j for j, u in enumerate(user_ids)}
    item_index = {a: j for j, a in enumerate(item_ids)}

    ev_user = np.fromiter((user_index[e.user] for e in events), np.int64, len(events))
    ev_item = np.fromiter((item_index[e.item] for e in events), np.int64, len(events))
    ev_rating = np.fromiter((e.rating for e in events), np.float64, len(events))
    ev_year = np.fromiter((e.year for e in events), np.int64, len(events))
    return _assemble(user_ids, item_ids, scale, ev_user, ev_item, ev_rating, ev_year)


def _assemble(user_ids, item_ids, scale, ev_user, ev_item, ev_rating, ev_year):
    order = np.argsort(ev_year, kind="stable")
    ev_user, ev_item, ev_rating, ev_year = ev_user[order], ev_item[order], ev_rating[order], ev_year[order]
    years, year_pos, counts = np.unique(ev_year, return_inverse=True, return_counts=True)
    year_pos = year_pos.reshape(-1)
    offsets = np.concatenate([[0], np.cumsum(counts)])

    n_u, n_o = len(user_ids), len(item_ids)
    user_degree, user_mean, user_std = _group_stats(ev_user, ev_rating, n_u)
    item_degree, item_mean, item_std = _group_stats(ev_item, ev_rating, n_o)
    return TemporalBipartiteGraph(
        user_ids=user_ids,
        item_ids=item_ids,
        scale=scale,
        ev_user=_frozen(ev_user),
        ev_item=_frozen(ev_item),
        ev_rating=_frozen(ev_rating),
        ev_year=_frozen(ev_year),
        years=_frozen(years),
        year_offsets=_frozen(offsets),
        ev_user_degree=_frozen(_year_degrees(ev_user, year_pos)),
        ev_item_degree=_frozen(_year_degrees(ev_item, year_pos)),
        user_degree=_frozen(user_degree),
        item_degree=_frozen(item_degree),
        user_mean=_frozen(user_mean),
        user_std=_frozen(user_std),
        item_mean=_frozen(item_mean),
        item_std=_frozen(item_std),
        _user_index={u: j for j, u in enumerate(user_ids)},
        _item_index={a: j for j, a in enumerate(item_ids)},
    )


def year_slice(graph: TemporalBipartiteGraph, t: int) -> YearSlice:
    """The active sets, degrees and events of year ``t``."""
    lo, hi = graph.year_bounds(t)
    eu, ea = graph.ev_user[lo:hi], graph.ev_item[lo:hi]
    users, k_u = np.unique(eu, return_counts=True)
    items, k_a = np.unique(ea, return_counts=True)
    return YearSlice(
        t=int(t),
        active_users=users,
        active_items=items,
        user_degrees=k_u,
        item_degrees=k_a,
        n_ratings=hi - lo,
        ev_user=eu,
        ev_item=ea,
        ev_rating=graph.ev_rating[lo:hi],
        ev_user_degree=graph.ev_user_degree[lo:hi],
        ev_item_degree=graph.ev_item_degree[lo:hi],
    )


def restrict_to_years(graph: TemporalBipartiteGraph, horizon: int) -> TemporalBipartiteGraph:
    """Sub-graph of the events with ``year <= horizon``.

    Users and items that only occur after the horizon are dropped, so global
    statistics are recomputed from the retained events.
    """
    if horizon < graph.years[0]:
        raise EmptyGraphError(f"horizon {horizon} precedes the first year {graph.years[0]}")
    if horizon >= graph.years[-1]:
        return graph
    hi = int(np.searchsorted(graph.ev_year, horizon, side="right"))
    ev_user, ev_item = graph.ev_user[:hi], graph.ev_item[:hi]
    users = np.unique(ev_user)
    items = np.unique(ev_item)
    user_map = np.full(graph.n_users, -1, np.int64)
    user_map[users] = np.arange(len(users))
    item_map = np.full(graph.n_items, -1, np.int64)
    item_map[items] = np.arange(len(items))
    return _assemble(
        tuple(graph.user_ids[u] for u in users),
        tuple(graph.item_ids[a] for a in items),
        graph.scale,
        user_map[ev_user],
        item_map[ev_item],
        graph.ev_rating[:hi].copy(),
        graph.ev_year[:hi].copy(),
    )


def write_events(events: Iterable[RatingEvent], out: TextIO) -> None:
    """Serialize events in the rating-CSV format read by :func:`parse_ratings`."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("user", "item", "rating", "year"))
    for e in events:
        r = int(e.rating) if float(e.rating).is_integer() else repr(float(e.rating))
        w.writerow((e.user, e.item, r, e.year))


def load_ground_truth(source: TextIO | str) -> GroundTruth:
    """Newline-delimited item identifiers, optionally ``<TAB>award_year``."""
    items, years = [], {}
    for lineno, line in enumerate(_open_text(source), start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        item = parts[0].strip()
        items.append(item)
        if len(parts) > 1 and parts[1].strip():
            try:
                years[item] = int(parts[1])
            except ValueError:
                raise ParseError(f"award year {parts[1]!r} is not an integer", lineno) from None
    return GroundTruth.target_set(items, years or None)


def load_true_qualities(source: TextIO | str) -> GroundTruth:
    """``item,quality`` CSV as written by the synthetic generator."""
    reader = csv.reader(_open_text(source))
    _check_header(reader, ("item", "quality"))
    q = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            q[row[0].strip()] = float(row[1])
        except (IndexError, ValueError):
            raise ParseError("expected item,quality", lineno) from None
    return GroundTruth.true_qualities(q)
