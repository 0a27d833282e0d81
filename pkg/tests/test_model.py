import io
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atrank.model import (
    DuplicateEventError,
    EmptyGraphError,
    ParseError,
    RangeError,
    RatingEvent,
    RatingScale,
    SelfCitationError,
    UnknownYearError,
    build_graph,
    citation_to_bipartite,
    epoch_seconds_to_year,
    load_ground_truth,
    load_true_qualities,
    parse_citations,
    parse_ratings,
    restrict_to_years,
    write_events,
    year_slice,
)

from conftest import random_log


def test_parse_single_line():
    events = parse_ratings(io.StringIO("user,item,rating,year\nu1,m1,5,1997\n"))
    assert events == [RatingEvent("u1", "m1", 5.0, 1997)]


def test_parse_out_of_range_reports_line():
    with pytest.raises(RangeError) as err:
        parse_ratings(io.StringIO("user,item,rating,year\nu1,m1,9,1997\n"))
    assert err.value.line == 2


def test_parse_preserves_order_and_crlf():
    text = "user,item,rating,year\r\nb,x,1,2000\r\na,y,2,2001\r\nc,x,3,1999\r\n"
    events = parse_ratings(io.StringIO(text, newline=""))
    assert [e.user for e in events] == ["b", "a", "c"]


@pytest.mark.parametrize(
    "line, exc",
    [("u1,m1,5", ParseError), ("u1,m1,five,2000", ParseError), ("u1,m1,5,19.5", ParseError), ("u1,m1,0,2000", RangeError)],
)
def test_parse_errors(line, exc):
    with pytest.raises(exc) as err:
        parse_ratings(io.StringIO(f"user,item,rating,year\n{line}\n"))
    assert err.value.line == 2


def test_parse_bad_header():
    with pytest.raises(ParseError):
        parse_ratings(io.StringIO("a,b,c,d\nu1,m1,5,2000\n"))


def test_epoch_time_unit():
    events = parse_ratings(io.StringIO("user,item,rating,year\nu,i,3,946684800\n"), time_unit="epoch")
    assert events[0].year == 2000
    assert epoch_seconds_to_year(0) == 1970


def test_citations():
    edges = parse_citations(io.StringIO("citing,cited,year\nP2,P1,2001\n"))
    assert citation_to_bipartite(edges, 5) == [RatingEvent("P2", "P1", 5.0, 2001)]
    assert citation_to_bipartite([], 5) == []
    with pytest.raises(SelfCitationError):
        citation_to_bipartite([("P1", "P1", 2001)], 5)
    assert len(citation_to_bipartite([("P1", "P1", 2001)], 5, allow_self_loops=True)) == 1
    with pytest.raises(RangeError):
        citation_to_bipartite(edges, 7)


def test_citation_node_on_both_sides():
    g = build_graph(citation_to_bipartite([("P2", "P1", 2001), ("P3", "P2", 2002)], 5))
    assert "P2" in g.user_ids and "P2" in g.item_ids


def test_build_small():
    ev = [RatingEvent("a", "x", 1, 2000), RatingEvent("a", "y", 2, 2000), RatingEvent("b", "x", 3, 2001)]
    g = build_graph(ev)
    assert len(g.years) == 2
    assert sum(g.ratings_per_year().values()) == 3


def test_duplicates():
    ev = [RatingEvent("a", "x", 1, 2000), RatingEvent("a", "x", 4, 2000)]
    with pytest.raises(DuplicateEventError) as err:
        build_graph(ev)
    assert "a" in str(err.value) and "2000" in str(err.value)
    with pytest.warns(UserWarning):
        g = build_graph(ev, dedupe="last")
    assert g.n_ratings == 1 and g.ev_rating[0] == 4
    # the same pair in different years is two ratings
    assert build_graph([RatingEvent("a", "x", 1, 2000), RatingEvent("a", "x", 4, 2001)]).n_ratings == 2


def test_empty_graph():
    with pytest.raises(EmptyGraphError):
        build_graph([])


def test_graph_is_read_only():
    g = build_graph([RatingEvent("a", "x", 1, 2000)])
    with pytest.raises(ValueError):
        g.ev_rating[0] = 3


def test_slice_examples():
    g = build_graph([RatingEvent("u1", "m1", 4, 1997)])
    s = year_slice(g, 1997)
    assert s.user_degree_map(g.user_ids) == {"u1": 1}
    assert s.item_degree_map(g.item_ids) == {"m1": 1}
    assert s.n_ratings == 1
    g = build_graph([RatingEvent("u1", "m1", 4, 1997), RatingEvent("u1", "m2", 3, 1997)])
    assert year_slice(g, 1997).user_degree_map(g.user_ids) == {"u1": 2}
    with pytest.raises(UnknownYearError):
        year_slice(g, 1998)


def test_slice_degrees_match_brute_force():
    log = random_log(11, 100, 15, 15, 4)
    g = build_graph([RatingEvent(*e) for e in log])
    for t in g.years.tolist():
        s = year_slice(g, t)
        in_year = [e for e in log if e[3] == t]
        assert s.n_ratings == len(in_year)
        assert s.user_degrees.sum() == s.item_degrees.sum() == len(in_year)
        assert s.user_degree_map(g.user_ids) == dict(Counter(e[0] for e in in_year))
        assert s.item_degree_map(g.item_ids) == dict(Counter(e[1] for e in in_year))
        # per-event degrees agree with the per-entity ones
        k_u = dict(Counter(e[0] for e in in_year))
        assert all(k_u[g.user_ids[u]] == k for u, k in zip(s.ev_user, s.ev_user_degree))


def test_global_stats_cached():
    log = random_log(3, 40)
    g = build_graph([RatingEvent(*e) for e in log])
    for u in g.user_ids:
        r = [e[2] for e in log if e[0] == u]
        j = g.user_index(u)
        assert g.user_mean[j] == pytest.approx(np.mean(r))
        assert g.user_std[j] == pytest.approx(np.std(r))


def test_restrict():
    log = random_log(5, 60, n_years=4)
    g = build_graph([RatingEvent(*e) for e in log])
    assert restrict_to_years(g, 2003) is g
    first = restrict_to_years(g, 2000)
    assert set(first.years.tolist()) == {2000}
    for h in (2000, 2001, 2002):
        r = restrict_to_years(g, h)
        assert r.n_ratings == sum(1 for e in log if e[3] <= h)
        again = restrict_to_years(r, h)
        assert sorted(again.events(), key=repr) == sorted(r.events(), key=repr)
    with pytest.raises(EmptyGraphError):
        restrict_to_years(g, 1999)


def test_ground_truth_files():
    gt = load_ground_truth(io.StringIO("a\t2001\nb\n\n# comment\nc\t2003\n"))
    assert gt.positives() == {"a", "b", "c"}
    assert gt.positives_until(2002) == {"a", "b"}
    with pytest.raises(ParseError):
        load_ground_truth(io.StringIO("a\tsoon\n"))
    tq = load_true_qualities(io.StringIO("item,quality\nx,1.5\ny,4.0\nz,4.0\n"))
    assert tq.positives(0.34) == {"y", "z"}
    assert tq.positives(0.1) == {"y"}


def test_scale():
    s = RatingScale(1, 10)
    assert s.levels().tolist() == list(range(1, 11))
    with pytest.raises(ValueError):
        RatingScale(3, 3)
    with pytest.raises(ValueError):
        RatingScale(0, 1, integral=False).levels()


events_strategy = st.lists(
    st.tuples(
        st.sampled_from(["u1", "u2", "user,3", "ü4"]),
        st.sampled_from(["i1", "i2", "i3"]),
        st.integers(1, 5),
        st.integers(1990, 1994),
    ),
    min_size=1,
    max_size=40,
    unique_by=lambda e: (e[0], e[1], e[3]),
)


@settings(max_examples=60, deadline=None)
@given(events_strategy)
def test_round_trip_and_degree_invariant(raw):
    events = [RatingEvent(u, i, float(r), y) for u, i, r, y in raw]
    buf = io.StringIO()
    write_events(events, buf)
    back = parse_ratings(io.StringIO(buf.getvalue()))
    g = build_graph(back)
    assert Counter(g.events()) == Counter(events)
    for s in g.slices():
        assert s.user_degrees.sum() == s.item_degrees.sum() == s.n_ratings


def test_concurrent_reads():
    from concurrent.futures import ThreadPoolExecutor

    log = random_log(9, 150, 20, 20, 5)
    g = build_graph([RatingEvent(*e) for e in log])
    with ThreadPoolExecutor(4) as ex:
        sums = list(ex.map(lambda t: int(year_slice(g, t).user_degrees.sum()), g.years.tolist() * 4))
    assert sum(sums) == 4 * len(log)


def test_shuffled_input_builds_same_graph():
    log = random_log(2, 50)
    shuffled = list(log)
    random.Random(0).shuffle(shuffled)
    a = build_graph([RatingEvent(*e) for e in log])
    b = build_graph([RatingEvent(*e) for e in shuffled])
    assert a.user_ids == b.user_ids and a.item_ids == b.item_ids
    assert Counter(a.events()) == Counter(b.events())
