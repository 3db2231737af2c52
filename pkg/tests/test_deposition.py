import math
from collections import Counter

import numpy as np
import pytest

from zilob.book import Side
from zilob.deposition import (
    Case, ConfigError, EventKind, MechanismConfig, RandomStream, derive_seed,
    next_event_case1, next_event_case2, next_event_case3,
)
from zilob.engine import Engine


class FixedStream:
    """Replays a fixed list of uniforms."""

    def __init__(self, values):
        self._it = iter(values)

    def uniform(self):
        return next(self._it)


def _draws(fn, n, seed=1, **kw):
    rng = RandomStream(seed)
    return [fn(rng, **kw) for _ in range(n)]


def test_case1_quotes_cover_interval_uniformly():
    events = _draws(next_event_case1, 1_000_000, b=100, a=103, pi=1 / 3, L=200)
    sells = Counter(e.quote for e in events if e.kind is EventKind.LIMIT and e.side is Side.SELL)
    buys = Counter(e.quote for e in events if e.kind is EventKind.LIMIT and e.side is Side.BUY)
    assert set(sells) == set(range(100, 301))
    assert set(buys) == set(range(-97, 104))
    # chi-square against 1/201 per value; 200 dof, mean 200, sd 20
    n = sum(sells.values())
    chi2 = sum((c - n / 201) ** 2 / (n / 201) for c in sells.values())
    assert chi2 < 200 + 5 * 20


def test_case1_market_fraction_and_symmetry():
    events = _draws(next_event_case1, 100_000, b=100, a=103, pi=1 / 3, L=200)
    n = len(events)
    frac = sum(e.kind is EventKind.MARKET for e in events) / n
    assert abs(frac - 1 / 3) < 3 * math.sqrt((1 / 3) * (2 / 3) / n)
    buys = sum(e.side is Side.BUY for e in events) / n
    assert abs(buys - 0.5) < 3 * math.sqrt(0.25 / n)
    assert all((e.quote is None) == (e.kind is EventKind.MARKET) for e in events)


def test_case1_boundary_quotes():
    # side=sell (u >= 0.5), limit (u >= pi), lowest quote (u = 0)
    assert next_event_case1(FixedStream([0.9, 0.9, 0.0]), 100, 103).quote == 100
    assert next_event_case1(FixedStream([0.9, 0.9, 0.999999]), 100, 103, L=200).quote == 300
    assert next_event_case1(FixedStream([0.1, 0.9, 0.999999]), 100, 103, L=200).quote == 103


def test_case2_quotes_and_inside_fraction():
    events = _draws(next_event_case2, 1_000_000, b=100, a=103, pi=1 / 3, k=4)
    sells = [e.quote for e in events if e.kind is EventKind.LIMIT and e.side is Side.SELL]
    buys = [e.quote for e in events if e.kind is EventKind.LIMIT and e.side is Side.BUY]
    assert set(sells) == set(range(101, 113))
    assert set(buys) == set(range(91, 103))
    inside = sum(q < 103 for q in sells) / len(sells)
    assert abs(inside - 2 / 12) < 3 * math.sqrt((2 / 12) * (10 / 12) / len(sells))


def test_case2_minimum_spread():
    events = _draws(next_event_case2, 20_000, b=100, a=101, k=4)
    sells = {e.quote for e in events if e.kind is EventKind.LIMIT and e.side is Side.SELL}
    assert sells == {101, 102, 103, 104}
    with pytest.raises(ValueError):
        next_event_case2(RandomStream(0), 100, 100)


def test_case2_long_run_placement_fractions():
    eng = Engine(MechanismConfig(case=Case.CASE2, tau=400, k=4, seed=3))
    eng.warm_up(5000)
    draw = eng._draw
    k = 4
    tally = {"limits": 0, "strict": 0, "upto_best": 0, "expected": 0.0}

    def recording(b, a):
        ev = draw(b, a)
        is_market, is_buy, q = ev
        if not is_market:
            s = a - b
            assert (b < q <= b + k * s) if not is_buy else (a - k * s <= q < a)
            tally["limits"] += 1
            tally["strict"] += b < q < a
            tally["upto_best"] += (b < q <= a) if not is_buy else (b <= q < a)
            tally["expected"] += (s - 1) / (k * s)
        return ev

    eng._draw = recording
    eng.warm_up(1_000_000)
    n = tally["limits"]
    assert eng.book.matched_pairs == 0
    # placement in (b, a] (or [b, a) for buys) has probability exactly 1/k
    assert abs(tally["upto_best"] / n - 1 / k) <= 0.05
    # strictly inside has conditional probability (s-1)/(k s), always below 1/k
    p = tally["expected"] / n
    assert p < 1 / k
    assert abs(tally["strict"] / n - p) < 5 * math.sqrt(p * (1 - p) / n)


def test_case3_market_probability_exact_count():
    L, s = 100, 3
    outcomes = range(-L, L + 1)
    assert sum(xi >= s for xi in outcomes) == 98
    rng = RandomStream(5)
    n = 200_000
    markets = sum(next_event_case3(rng, 100, 103, L=L).kind is EventKind.MARKET for _ in range(n))
    p = 98 / 201
    assert abs(markets / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_case3_boundary_xi():
    L, b, a = 100, 100, 103
    # u so that xi = -L + floor(u * 201) equals s-1 = 2, then s = 3
    u_lim = (L + 2 + 0.5) / 201
    u_mkt = (L + 3 + 0.5) / 201
    ev = next_event_case3(FixedStream([0.9, u_lim]), b, a, L=L)
    assert ev == (EventKind.LIMIT, Side.SELL, b + 1)
    ev = next_event_case3(FixedStream([0.1, u_lim]), b, a, L=L)
    assert ev == (EventKind.LIMIT, Side.BUY, a - 1)
    assert next_event_case3(FixedStream([0.9, u_mkt]), b, a, L=L).kind is EventKind.MARKET
    # negative xi lands behind the book
    ev = next_event_case3(FixedStream([0.9, 0.0]), b, a, L=L)
    assert ev.quote == a + L


def test_case3_quotes_in_range():
    events = _draws(next_event_case3, 1_000_000, b=100, a=103, L=100)
    sells = {e.quote for e in events if e.kind is EventKind.LIMIT and e.side is Side.SELL}
    buys = {e.quote for e in events if e.kind is EventKind.LIMIT and e.side is Side.BUY}
    assert sells == set(range(101, 204))
    assert buys == set(range(0, 103))


def test_determinism_and_seed_sensitivity():
    a = [next_event_case2(r, 100, 103) for r in [RandomStream(9)] for _ in range(1000)]
    b = [next_event_case2(r, 100, 103) for r in [RandomStream(9)] for _ in range(1000)]
    c = [next_event_case2(r, 100, 103) for r in [RandomStream(10)] for _ in range(1000)]
    assert a == b and a != c


def test_block_size_does_not_change_stream():
    r1, r2 = RandomStream(4, block=7), RandomStream(4)
    assert [r1.uniform() for _ in range(100)] == [r2.uniform() for _ in range(100)]
    direct = np.random.Generator(np.random.PCG64(4)).random(5).tolist()
    assert [RandomStream(4).uniform() for _ in range(1)] == direct[:1]


def test_derive_seed():
    assert derive_seed(7, 0) == derive_seed(7, 0)
    seeds = {derive_seed(7, i) for i in range(100)}
    assert len(seeds) == 100 and all(0 <= s < 2**64 for s in seeds)
    assert derive_seed(8, 0) != derive_seed(7, 0)


@pytest.mark.parametrize("changes,field", [
    ({"case": 1, "pi": 0.5}, "pi"),
    ({"case": 2, "pi": 0.0}, "pi"),
    ({"case": 1, "L": 0}, "L"),
    ({"case": 3, "L": 0}, "L"),
    ({"case": 2, "k": 1}, "k"),
    ({"tau": 0}, "tau"),
    ({"steps": -1}, "steps"),
    ({"seed": -1}, "seed"),
])
def test_config_validation(changes, field):
    with pytest.raises(ConfigError) as exc:
        MechanismConfig(**changes).validate()
    assert exc.value.field == field


def test_case3_ignores_pi():
    MechanismConfig(case=3, pi=0.9, L=10).validate()
