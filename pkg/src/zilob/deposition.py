"""Zero-intelligence order deposition: the three placement mechanisms.

Every event consumes uniforms from a :class:`RandomStream` in a fixed
order, so a (seed, config) pair pins the whole event sequence:

* Case 1 and Case 2: side, then market-vs-limit, then (limit only) quote.
* Case 3: side, then the integer ``xi``.

Integers are drawn as ``floor(u * n)`` from a uniform ``u`` in [0, 1).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields, replace
from typing import NamedTuple, Optional

import numpy as np

from .book import Side

RNG_ALGORITHM = "numpy.PCG64"


class Case(enum.IntEnum):
    CASE1 = 1
    CASE2 = 2
    CASE3 = 3


class EventKind(enum.IntEnum):
    LIMIT = 0
    MARKET = 1


class ConfigError(ValueError):
    """A configuration field failed validation."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class MechanismConfig:
    case: Case = Case.CASE2
    pi: float = 1 / 3
    L: int = 200
    k: int = 4
    tau: int = 400
    seed: int = 0
    steps: int = 1_000_000
    warmup: int = 5_000

    def __post_init__(self):
        object.__setattr__(self, "case", Case(int(self.case)))

    def validate(self) -> "MechanismConfig":
        if self.case in (Case.CASE1, Case.CASE2) and not 0 < self.pi < 0.5:
            raise ConfigError("pi", f"must satisfy 0 < pi < 0.5, got {self.pi}")
        if self.case in (Case.CASE1, Case.CASE3) and self.L < 1:
            raise ConfigError("L", f"must be >= 1, got {self.L}")
        if self.case is Case.CASE2 and self.k <= 1:
            raise ConfigError("k", f"must be > 1, got {self.k}")
        if self.tau < 1:
            raise ConfigError("tau", f"must be >= 1, got {self.tau}")
        if self.steps < 0 or self.warmup < 0:
            raise ConfigError("steps", "steps and warmup must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        return self

    def with_(self, **changes) -> "MechanismConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: (int(getattr(self, f.name)) if f.name == "case" else getattr(self, f.name))
                for f in fields(self)}


class EventSpec(NamedTuple):
    kind: EventKind
    side: Side
    quote: Optional[int] = None


def derive_seed(master_seed: int, replica: int) -> int:
    """Stable 64-bit seed for replica ``replica`` of ``master_seed``.

    Uses numpy's SeedSequence hash with the replica index as spawn key.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(replica,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class RandomStream:
    """Buffered uniform stream on top of PCG64.

    Uniforms are generated in blocks and handed out as Python floats, which
    is far cheaper per draw than calling the generator for each scalar.
    """

    def __init__(self, seed: int, block: int = 1 << 16):
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))
        self._block = block
        self._buf: list[float] = []
        self._i = 0

    def uniform(self) -> float:
        i = self._i
        if i >= len(self._buf):
            self._buf = self._gen.random(self._block).tolist()
            i = 0
        self._i = i + 1
        return self._buf[i]

    def integer(self, lo: int, hi: int) -> int:
        """Uniform integer on the closed range [lo, hi]."""
        return lo + int(self.uniform() * (hi - lo + 1))


# Mechanism draws return plain tuples (is_market, is_buy, quote) for the
# engine's hot loop; the next_event_* wrappers build EventSpec values.

def draw_case1(rng: RandomStream, b: int, a: int, pi: float, L: int) -> tuple:
    is_buy = rng.uniform() < 0.5
    if rng.uniform() < pi:
        return True, is_buy, None
    u = rng.uniform()
    if is_buy:
        return False, True, a - L + int(u * (L + 1))
    return False, False, b + int(u * (L + 1))


def draw_case2(rng: RandomStream, b: int, a: int, pi: float, k: int) -> tuple:
    is_buy = rng.uniform() < 0.5
    if rng.uniform() < pi:
        return True, is_buy, None
    width = k * (a - b)
    u = rng.uniform()
    if is_buy:
        return False, True, a - width + int(u * width)
    return False, False, b + 1 + int(u * width)


def draw_case3(rng: RandomStream, b: int, a: int, L: int) -> tuple:
    is_buy = rng.uniform() < 0.5
    xi = -L + int(rng.uniform() * (2 * L + 1))
    if xi < a - b:
        return False, is_buy, (b + xi) if is_buy else (a - xi)
    return True, is_buy, None


def _spec(draw: tuple) -> EventSpec:
    is_market, is_buy, quote = draw
    side = Side.BUY if is_buy else Side.SELL
    if is_market:
        return EventSpec(EventKind.MARKET, side)
    return EventSpec(EventKind.LIMIT, side, quote)


def next_event_case1(rng: RandomStream, b: int, a: int, pi: float = 1 / 3, L: int = 200) -> EventSpec:
    """Sell limits uniform on [b, b+L], buy limits on [a-L, a]."""
    return _spec(draw_case1(rng, b, a, pi, L))


def next_event_case2(rng: RandomStream, b: int, a: int, pi: float = 1 / 3, k: int = 4) -> EventSpec:
    """Sell limits uniform on [b+1, b+k*s], buy limits on [a-k*s, a-1]."""
    if a - b < 1:
        raise ValueError(f"spread must be >= 1, got {a - b}")
    return _spec(draw_case2(rng, b, a, pi, k))


def next_event_case3(rng: RandomStream, b: int, a: int, L: int = 100) -> EventSpec:
    """Draw integer xi on [-L, L]; limit at a-xi (sell) / b+xi (buy) when xi < s."""
    if a - b < 1:
        raise ValueError(f"spread must be >= 1, got {a - b}")
    return _spec(draw_case3(rng, b, a, L))


def make_drawer(config: MechanismConfig, rng: RandomStream):
    """Bind a config to a ``draw(b, a)`` callable for the engine loop."""
    if config.case is Case.CASE1:
        pi, L = config.pi, config.L
        return lambda b, a: draw_case1(rng, b, a, pi, L)
    if config.case is Case.CASE2:
        pi, k = config.pi, config.k
        return lambda b, a: draw_case2(rng, b, a, pi, k)
    L = config.L
    return lambda b, a: draw_case3(rng, b, a, L)
