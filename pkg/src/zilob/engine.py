"""Event loop: one flow event per step on top of :class:`~zilob.book.Book`.

Within a step the order is fixed: expire orders aged ``>= tau``, draw an
event from the post-cancellation best quotes, apply it, advance the clock
and record. If a side is empty when the event is drawn, or a market order
empties a side, the step is flagged ``depleted`` and the empty side is
re-seeded with one order at its last known best quote.
"""

from __future__ import annotations

import csv
import enum
import logging
from array import array
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Protocol

import numpy as np

from .book import Book, Side
from .deposition import MechanismConfig, RandomStream, make_drawer

log = logging.getLogger(__name__)

CHUNK = 1 << 16
CSV_HEADER = ("time", "mid_halfticks", "spread", "n_bid", "n_ask", "event", "depleted")


class StepEvent(enum.IntEnum):
    LIMIT = 0
    MARKET = 1
    MATCH = 2  # limit order annihilated at the opposite best quote
    SKIPPED = 3  # event dropped on a depleted step

    @property
    def label(self) -> str:
        return self.name.lower()


class StepRecord(NamedTuple):
    time: int
    mid: int  # half-ticks
    spread: int
    n_bid: int
    n_ask: int
    event_kind: StepEvent
    depleted: bool


@dataclass
class Chunk:
    """Column block of consecutive step records."""

    time: np.ndarray
    mid: np.ndarray
    spread: np.ndarray
    n_bid: np.ndarray
    n_ask: np.ndarray
    event: np.ndarray
    depleted: np.ndarray

    def __len__(self) -> int:
        return len(self.time)


class Sink(Protocol):
    def write(self, chunk: Chunk) -> None: ...

    def close(self) -> None: ...


class MemorySink:
    """Keeps every chunk; ``series()`` concatenates them."""

    def __init__(self) -> None:
        self._chunks: list[Chunk] = []

    def write(self, chunk: Chunk) -> None:
        self._chunks.append(chunk)

    def close(self) -> None:
        pass

    def series(self) -> Chunk:
        if not self._chunks:
            e = np.empty(0, dtype=np.int64)
            return Chunk(e, e, e, e, e, e.astype(np.int8), e.astype(bool))
        cols = {}
        for name in ("time", "mid", "spread", "n_bid", "n_ask", "event", "depleted"):
            cols[name] = np.concatenate([getattr(c, name) for c in self._chunks])
        return Chunk(**cols)


class CsvSink:
    """Streams records to CSV, keeping every ``decimation``-th step."""

    def __init__(self, path, decimation: int = 1, header_lines: Iterable[str] = ()):
        if decimation < 1:
            raise ValueError("decimation must be >= 1")
        self.decimation = decimation
        self._fh = open(path, "w", newline="")
        for line in header_lines:
            self._fh.write(f"# {line}\n")
        self._w = csv.writer(self._fh)
        self._w.writerow(CSV_HEADER)

    def write(self, chunk: Chunk) -> None:
        keep = chunk.time % self.decimation == 0
        labels = [e.label for e in StepEvent]
        for t, m, s, nb, na, ev, d in zip(
            chunk.time[keep].tolist(), chunk.mid[keep].tolist(), chunk.spread[keep].tolist(),
            chunk.n_bid[keep].tolist(), chunk.n_ask[keep].tolist(), chunk.event[keep].tolist(),
            chunk.depleted[keep].tolist(),
        ):
            self._w.writerow((t, m, s, nb, na, labels[ev], int(d)))

    def close(self) -> None:
        self._fh.close()


@dataclass
class RunSummary:
    steps: int
    warmup: int
    mean_spread: float
    mean_orders_per_side: float
    mean_bid_orders: float
    mean_ask_orders: float
    market_order_fraction: float
    market_orders: int
    limit_orders: int
    cross_match_count: int
    depletion_count: int
    series: Optional[Chunk] = field(default=None, repr=False)

    @property
    def cross_match_ratio(self) -> float:
        return self.cross_match_count / self.market_orders if self.market_orders else 0.0

    def as_dict(self) -> dict:
        return {
            "steps": self.steps,
            "warmup": self.warmup,
            "mean_spread": self.mean_spread,
            "mean_orders_per_side": self.mean_orders_per_side,
            "mean_bid_orders": self.mean_bid_orders,
            "mean_ask_orders": self.mean_ask_orders,
            "market_order_fraction": self.market_order_fraction,
            "market_orders": self.market_orders,
            "limit_orders": self.limit_orders,
            "cross_match_count": self.cross_match_count,
            "depletion_count": self.depletion_count,
        }


def initialize(config: Optional[MechanismConfig] = None) -> Book:
    """Book with one buy at -1 and one sell at +1, both born at time 0."""
    book = Book()
    book.place_limit(Side.BUY, -1, 0)
    book.place_limit(Side.SELL, 1, 0)
    return book


class Engine:
    """Sequential simulator owning a book, a random stream and its counters.

    ``observer(engine)`` is called after every recorded step when given; the
    impact module uses it to sample the steady-state book.
    """

    def __init__(self, config: MechanismConfig, book: Optional[Book] = None):
        self.config = config.validate()
        self.book = book if book is not None else initialize(config)
        self.rng = RandomStream(config.seed)
        self._draw = make_drawer(config, self.rng)
        self._last_bid = self.book._best_bid if self.book._best_bid is not None else -1
        self._last_ask = self.book._best_ask if self.book._best_ask is not None else 1
        self.depletions = 0

    def _reseed(self) -> None:
        book = self.book
        t = book.time
        if book._best_bid is None:
            q = self._last_bid
            if book._best_ask is not None:
                q = min(q, book._best_ask - 1)
            book._add(True, q, t)
        if book._best_ask is None:
            q = self._last_ask
            if book._best_bid is not None:
                q = max(q, book._best_bid + 1)
            book._add(False, q, t)

    def _advance(self) -> tuple[int, bool]:
        """Run one step; return (event code, depleted flag)."""
        book = self.book
        book._cancel_expired(self.config.tau)
        b = book._best_bid
        a = book._best_ask
        if b is None or a is None:
            self._reseed()
            ev, depleted = 3, True
        else:
            is_market, is_buy, q = self._draw(b, a)
            depleted = False
            if is_market:
                book._pop_best(not is_buy)
                book.executed += 1
                ev = 1
            else:
                ev = 2 if book._add(is_buy, q, book.time) else 0
            if book._best_bid is None or book._best_ask is None:
                self._reseed()
                depleted = True
        if depleted:
            self.depletions += 1
        self._last_bid = book._best_bid
        self._last_ask = book._best_ask
        book.time += 1
        return ev, depleted

    def step(self) -> StepRecord:
        ev, depleted = self._advance()
        book = self.book
        return StepRecord(
            book.time, book._best_ask + book._best_bid, book._best_ask - book._best_bid,
            book.n_bid, book.n_ask, StepEvent(ev), depleted,
        )

    def warm_up(self, steps: int) -> None:
        advance = self._advance
        for _ in range(steps):
            advance()

    def run_steps(self, steps: int, sinks: Iterable[Sink] = (),
                  observer: Optional[Callable[["Engine"], None]] = None) -> None:
        """Advance ``steps`` recorded steps, streaming chunks to ``sinks``."""
        sinks = list(sinks)
        book = self.book
        advance = self._advance
        done = 0
        while done < steps:
            n = min(CHUNK, steps - done)
            t_a, mid_a, s_a = array("q"), array("q"), array("i")
            nb_a, na_a, ev_a, d_a = array("i"), array("i"), array("b"), array("b")
            for _ in range(n):
                ev, dep = advance()
                a, b = book._best_ask, book._best_bid
                t_a.append(book.time)
                mid_a.append(a + b)
                s_a.append(a - b)
                nb_a.append(book.n_bid)
                na_a.append(book.n_ask)
                ev_a.append(ev)
                d_a.append(dep)
                if observer is not None:
                    observer(self)
            chunk = Chunk(
                np.frombuffer(t_a, dtype=np.int64), np.frombuffer(mid_a, dtype=np.int64),
                np.frombuffer(s_a, dtype=np.int32), np.frombuffer(nb_a, dtype=np.int32),
                np.frombuffer(na_a, dtype=np.int32), np.frombuffer(ev_a, dtype=np.int8),
                np.frombuffer(d_a, dtype=np.int8).astype(bool),
            )
            for sink in sinks:
                sink.write(chunk)
            done += n


def summarize(series: Chunk, config: MechanismConfig, keep_series: bool = True) -> RunSummary:
    n = len(series)
    ev = series.event
    markets = int(np.count_nonzero(ev == StepEvent.MARKET))
    limits = int(np.count_nonzero((ev == StepEvent.LIMIT) | (ev == StepEvent.MATCH)))
    matches = int(np.count_nonzero(ev == StepEvent.MATCH))
    flow = markets + limits
    mb = float(series.n_bid.mean()) if n else float("nan")
    ma = float(series.n_ask.mean()) if n else float("nan")
    return RunSummary(
        steps=n,
        warmup=config.warmup,
        mean_spread=float(series.spread.mean()) if n else float("nan"),
        mean_orders_per_side=(mb + ma) / 2,
        mean_bid_orders=mb,
        mean_ask_orders=ma,
        market_order_fraction=markets / flow if flow else float("nan"),
        market_orders=markets,
        limit_orders=limits,
        cross_match_count=matches,
        depletion_count=int(np.count_nonzero(series.depleted)),
        series=series if keep_series else None,
    )


def run(config: MechanismConfig, sinks: Iterable[Sink] = (), book: Optional[Book] = None,
        observer: Optional[Callable[[Engine], None]] = None) -> RunSummary:
    """Warm up, then record ``config.steps`` steps and summarize them."""
    engine = Engine(config, book)
    engine.warm_up(config.warmup)
    mem = MemorySink()
    engine.run_steps(config.steps, [mem, *sinks], observer=observer)
    for sink in sinks:
        sink.close()
    summary = summarize(mem.series(), config)
    log.info("case %d tau=%d: n=%.1f s=%.2f depletions=%d", config.case, config.tau,
             summary.mean_orders_per_side, summary.mean_spread, summary.depletion_count)
    return summary


def returns(mid: np.ndarray, lag: int = 1) -> np.ndarray:
    """Mid-price increments ``p(t+lag) - p(t)`` in half-ticks."""
    if lag < 1:
        raise ValueError(f"lag must be >= 1, got {lag}")
    mid = np.asarray(mid)
    if len(mid) <= lag:
        return np.empty(0, dtype=mid.dtype if mid.dtype.kind in "iuf" else np.float64)
    return mid[lag:] - mid[:-lag]
