import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from atrank.model import RatingEvent, build_graph  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def random_log(seed, n_events, n_users=8, n_items=8, n_years=3, first_year=2000):
    """Distinct (user, item, year) triples with integer ratings, sorted by year."""
    rng = random.Random(seed)
    n_events = min(n_events, n_users * n_items * n_years)
    seen, out = set(), []
    while len(out) < n_events:
        key = (f"u{rng.randrange(n_users)}", f"i{rng.randrange(n_items)}", first_year + rng.randrange(n_years))
        if key in seen:
            continue
        seen.add(key)
        out.append((key[0], key[1], float(rng.randint(1, 5)), key[2]))
    # the package groups events by year with a stable sort; feeding the
    # oracles the same order keeps floating-point summation order identical
    return sorted(out, key=lambda e: e[3])


def graph_of(log):
    return build_graph([RatingEvent(*e) for e in log])


@pytest.fixture
def toy_path():
    return FIXTURES / "toy.csv"


ACCEPTANCE: list[str] = []


def verdict(number: int, ok: bool, detail: str) -> None:
    """Record and print one acceptance line, then fail the test if needed."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
