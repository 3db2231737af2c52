"""Limit order book with unit-volume orders on an integer tick grid.

Each side maps an integer quote to a FIFO queue of resting orders. All
price arithmetic is integer: the mid-price is kept in half-ticks
(``a + b``) so it never drifts.

Orders are stored internally as plain tuples ``(birth_time, id, is_buy,
quote)``; the same tuple object sits both in its price level and in a
global placement-ordered queue used for age-based cancellation. Because
levels are FIFO and expiry happens in placement order, an expiring order
that is still alive is always at the head of its level.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional


class UndefinedPrice(Exception):
    """A best quote, spread or mid-price was requested on an empty side."""


class Side(enum.Enum):
    BUY = 1
    SELL = -1

    @property
    def opposite(self) -> "Side":
        return Side.SELL if self is Side.BUY else Side.BUY

    @property
    def code(self) -> str:
        return "B" if self is Side.BUY else "A"


class PlacementOutcome(enum.Enum):
    RESTED = "rested"
    MATCHED = "matched"


class Order(NamedTuple):
    id: int
    side: Side
    quote: int
    birth_time: int
    volume: int = 1


@dataclass(frozen=True)
class ExecutionReport:
    filled: int
    old_best: Optional[int]
    new_best: Optional[int]

    @property
    def exhausted(self) -> bool:
        """True when the opposite side ran dry (EmptySide condition)."""
        return self.new_best is None


@dataclass(frozen=True)
class BookSnapshot:
    """Deep copy of a book's state; restoring it is an exact identity."""

    time: int
    next_id: int
    bids: tuple
    asks: tuple
    queue: tuple
    counters: tuple


def _freeze(levels: dict) -> tuple:
    return tuple(sorted((q, tuple(level)) for q, level in levels.items()))


class Book:
    """Two-sided order book of unit orders.

    ``time`` is the integer event clock; it is advanced by the engine, not
    by the book's own operations.
    """

    tick_size = 1

    def __init__(self) -> None:
        self.time = 0
        self._bids: dict[int, deque] = {}
        self._asks: dict[int, deque] = {}
        self._queue: deque = deque()
        self._best_bid: Optional[int] = None
        self._best_ask: Optional[int] = None
        self.n_bid = 0
        self.n_ask = 0
        self._next_id = 0
        # conservation counters
        self.placed = 0
        self.executed = 0
        self.cancelled = 0
        self.matched_pairs = 0

    # ------------------------------------------------------------------
    # quotes

    def best_bid(self) -> int:
        if self._best_bid is None:
            raise UndefinedPrice("bid side is empty")
        return self._best_bid

    def best_ask(self) -> int:
        if self._best_ask is None:
            raise UndefinedPrice("ask side is empty")
        return self._best_ask

    def best(self, side: Side) -> Optional[int]:
        """Best quote on ``side`` or None when that side is empty."""
        return self._best_bid if side is Side.BUY else self._best_ask

    def spread(self) -> int:
        return self.best_ask() - self.best_bid()

    def mid_halfticks(self) -> int:
        """Mid-price in half-ticks, i.e. ``a + b``."""
        return self.best_ask() + self.best_bid()

    def mid_price(self) -> float:
        # (a + b) / 2 with integer a, b is exactly representable
        return self.mid_halfticks() / 2

    def count(self, side: Side) -> int:
        return self.n_bid if side is Side.BUY else self.n_ask

    def is_empty(self, side: Side) -> bool:
        return self.count(side) == 0

    # ------------------------------------------------------------------
    # core mutations (unit volume, bool side flags)

    def _add(self, is_buy: bool, quote: int, birth_time: int) -> bool:
        """Place a unit limit order; return True when it cross-matched."""
        self.placed += 1
        if is_buy:
            ask = self._best_ask
            if ask is not None and quote >= ask:
                self._pop_best(False)
                self.matched_pairs += 1
                return True
            entry = (birth_time, self._next_id, True, quote)
            self._next_id += 1
            level = self._bids.get(quote)
            if level is None:
                self._bids[quote] = deque((entry,))
                if self._best_bid is None or quote > self._best_bid:
                    self._best_bid = quote
            else:
                level.append(entry)
            self.n_bid += 1
        else:
            bid = self._best_bid
            if bid is not None and quote <= bid:
                self._pop_best(True)
                self.matched_pairs += 1
                return True
            entry = (birth_time, self._next_id, False, quote)
            self._next_id += 1
            level = self._asks.get(quote)
            if level is None:
                self._asks[quote] = deque((entry,))
                if self._best_ask is None or quote < self._best_ask:
                    self._best_ask = quote
            else:
                level.append(entry)
            self.n_ask += 1
        self._queue.append(entry)
        return False

    def _pop_best(self, from_bids: bool) -> None:
        """Remove the oldest order at the best quote of one (nonempty) side."""
        if from_bids:
            q = self._best_bid
            level = self._bids[q]
            level.popleft()
            self.n_bid -= 1
            if not level:
                del self._bids[q]
                if self.n_bid == 0:
                    self._best_bid = None
                else:
                    bids = self._bids
                    q -= 1
                    while q not in bids:
                        q -= 1
                    self._best_bid = q
        else:
            q = self._best_ask
            level = self._asks[q]
            level.popleft()
            self.n_ask -= 1
            if not level:
                del self._asks[q]
                if self.n_ask == 0:
                    self._best_ask = None
                else:
                    asks = self._asks
                    q += 1
                    while q not in asks:
                        q += 1
                    self._best_ask = q

    def _cancel_expired(self, tau: int) -> int:
        queue = self._queue
        cutoff = self.time - tau
        n = 0
        while queue and queue[0][0] <= cutoff:
            entry = queue.popleft()
            if entry[2]:
                levels = self._bids
            else:
                levels = self._asks
            q = entry[3]
            level = levels.get(q)
            if level is None or level[0] is not entry:
                continue  # already executed or matched
            n += 1
            if entry[2] and q == self._best_bid:
                self._pop_best(True)
            elif not entry[2] and q == self._best_ask:
                self._pop_best(False)
            else:
                level.popleft()
                if not level:
                    del levels[q]
                if entry[2]:
                    self.n_bid -= 1
                else:
                    self.n_ask -= 1
        self.cancelled += n
        return n

    # ------------------------------------------------------------------
    # public operations

    def place_limit(self, side: Side, quote: int, birth_time: Optional[int] = None) -> PlacementOutcome:
        """Place a unit limit order.

        A sell at or below the best bid (or a buy at or above the best ask)
        annihilates with the oldest order at that best quote. Birth times
        must be non-decreasing across placements, since expiry scans orders
        in placement order.
        """
        if birth_time is None:
            birth_time = self.time
        if self._queue and birth_time < self._queue[-1][0]:
            raise ValueError(f"birth time {birth_time} precedes the last placement ({self._queue[-1][0]})")
        if self._add(side is Side.BUY, int(quote), birth_time):
            return PlacementOutcome.MATCHED
        return PlacementOutcome.RESTED

    def execute_market(self, side: Side, volume: int = 1) -> ExecutionReport:
        """Market order of ``volume`` units; ``side`` is the aggressor.

        Walks the opposite side from its best quote outward. A fill smaller
        than ``volume`` means the opposite side was exhausted.
        """
        if volume < 1:
            raise ValueError(f"market volume must be >= 1, got {volume}")
        from_bids = side is Side.SELL
        old = self._best_bid if from_bids else self._best_ask
        filled = 0
        while filled < volume:
            if (self.n_bid if from_bids else self.n_ask) == 0:
                break
            self._pop_best(from_bids)
            filled += 1
        self.executed += filled
        new = self._best_bid if from_bids else self._best_ask
        return ExecutionReport(filled, old, new)

    def cancel_expired(self, tau: int) -> int:
        """Cancel every order with ``time - birth_time >= tau``."""
        if tau < 1:
            raise ValueError(f"tau must be >= 1, got {tau}")
        return self._cancel_expired(tau)

    def depth_profile(self, side: Side) -> list[tuple[int, int]]:
        """(quote, volume) pairs ordered from the best quote outward."""
        if side is Side.BUY:
            return [(q, len(self._bids[q])) for q in sorted(self._bids, reverse=True)]
        return [(q, len(self._asks[q])) for q in sorted(self._asks)]

    def orders(self, side: Side) -> Iterator[Order]:
        levels = self._bids if side is Side.BUY else self._asks
        for q in sorted(levels, reverse=side is Side.BUY):
            for birth, oid, _, quote in levels[q]:
                yield Order(oid, side, quote, birth)

    def resting(self) -> int:
        return self.n_bid + self.n_ask

    # ------------------------------------------------------------------
    # snapshot / restore

    def snapshot(self) -> BookSnapshot:
        return BookSnapshot(
            time=self.time,
            next_id=self._next_id,
            bids=_freeze(self._bids),
            asks=_freeze(self._asks),
            queue=tuple(self._queue),
            counters=(self.placed, self.executed, self.cancelled, self.matched_pairs),
        )

    def restore(self, snap: BookSnapshot) -> None:
        self.time = snap.time
        self._next_id = snap.next_id
        # the queue holds the identity-checked entries; rebuild levels from
        # the same tuple objects so expiry keeps working after a restore
        self._bids = {q: deque(level) for q, level in snap.bids}
        self._asks = {q: deque(level) for q, level in snap.asks}
        self._queue = deque(snap.queue)
        self.n_bid = sum(len(v) for v in self._bids.values())
        self.n_ask = sum(len(v) for v in self._asks.values())
        self._best_bid = max(self._bids) if self._bids else None
        self._best_ask = min(self._asks) if self._asks else None
        self.placed, self.executed, self.cancelled, self.matched_pairs = snap.counters

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Book):
            return NotImplemented
        return self.snapshot() == other.snapshot()

    __hash__ = None  # mutable

    def check_invariants(self) -> None:
        """Raise AssertionError if any structural invariant is broken."""
        assert self.n_bid == sum(len(v) for v in self._bids.values())
        assert self.n_ask == sum(len(v) for v in self._asks.values())
        assert all(self._bids.values()) and all(self._asks.values())
        assert self._best_bid == (max(self._bids) if self._bids else None)
        assert self._best_ask == (min(self._asks) if self._asks else None)
        if self._best_bid is not None and self._best_ask is not None:
            assert self._best_bid < self._best_ask, (self._best_bid, self._best_ask)
        for levels, is_buy in ((self._bids, True), (self._asks, False)):
            for q, level in levels.items():
                births = [e[0] for e in level]
                assert births == sorted(births), f"FIFO broken at {q}"
                assert all(e[2] is is_buy and e[3] == q for e in level)
                assert all(e[0] <= self.time for e in level)

    # ------------------------------------------------------------------
    # text format

    def to_text(self) -> str:
        """Line-oriented dump: ``time=<t>`` then ``B|A <quote> <births>``."""
        lines = [f"time={self.time}"]
        for side in (Side.BUY, Side.SELL):
            levels = self._bids if side is Side.BUY else self._asks
            for q in sorted(levels, reverse=side is Side.BUY):
                births = ",".join(str(e[0]) for e in levels[q])
                lines.append(f"{side.code} {q} {births}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Book":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("time="):
            raise ValueError("book text must start with a 'time=<t>' line")
        book = cls()
        book.time = int(lines[0][5:])
        entries = []
        for ln in lines[1:]:
            try:
                code, quote, births = ln.split()
                is_buy = {"B": True, "A": False}[code]
                for b in births.split(","):
                    entries.append((int(b), is_buy, int(quote)))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"bad book line: {ln!r}") from exc
        # placement order = birth order; python sort is stable within a birth
        for birth, is_buy, quote in sorted(entries, key=lambda e: e[0]):
            if book._add(is_buy, quote, birth):
                raise ValueError(f"crossed book in text at quote {quote}")
        book.placed = 0
        return book
