"""Book observables: granularity, the zero-order impact law, g histograms."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .book import Book, Side, UndefinedPrice


@dataclass(frozen=True)
class GranularitySample:
    time: int
    side: Side
    s: int
    N: int
    Omega: int
    g: Optional[Fraction]
    counts: tuple = ()

    @property
    def valid(self) -> bool:
        return self.N > 2

    @property
    def g_mean_of_densities(self) -> Fraction:
        """(1/N) * sum_j n_j / s, the per-interval average form of g."""
        return sum((Fraction(n, self.s) for n in self.counts), Fraction(0)) / self.N


def partition_counts(profile: Sequence[tuple[int, int]], s: int, keep_partial: bool = False) -> list[int]:
    """Volumes in consecutive ``s``-tick intervals starting at the best quote.

    ``profile`` is ordered from the best quote outward (as returned by
    :meth:`Book.depth_profile`). The trailing partial interval is dropped
    unless ``keep_partial`` is set.
    """
    if not profile:
        return []
    best = profile[0][0]
    far = profile[-1][0]
    span = abs(far - best) + 1
    n_int = -(-span // s) if keep_partial else span // s
    counts = [0] * n_int
    for q, v in profile:
        j = abs(q - best) // s
        if j < n_int:
            counts[j] += v
    return counts


def granularity_from_profile(profile: Sequence[tuple[int, int]], s: int, time: int = 0,
                             side: Side = Side.SELL, keep_partial: bool = False) -> GranularitySample:
    if s < 1:
        raise ValueError(f"spread must be >= 1, got {s}")
    counts = partition_counts(profile, s, keep_partial)
    N = len(counts)
    omega = sum(counts)
    g = Fraction(omega, N * s) if N > 2 else None
    return GranularitySample(time, side, s, N, omega, g, tuple(counts))


def granularity(book: Book, side: Side, keep_partial: bool = False) -> GranularitySample:
    """Average linear order density of one side, over a spread-sized partition.

    Raises :class:`UndefinedPrice` when either side is empty.
    """
    s = book.spread()
    return granularity_from_profile(book.depth_profile(side), s, book.time, side, keep_partial)


def zero_order_impact(omega: float, g: float) -> float:
    """Price change ``omega / g`` of a book with uniform density ``g``."""
    if g <= 0:
        raise ValueError(f"granularity must be positive, got {g}")
    return omega / g


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    density: np.ndarray

    def rows(self):
        for lo, hi, c, d in zip(self.edges[:-1], self.edges[1:], self.counts, self.density):
            yield float(lo), float(hi), int(c), float(d)


def granularity_histogram(samples: Iterable, bins=30) -> Histogram:
    """Normalized PDF of g over valid samples.

    ``samples`` holds GranularitySample objects or plain g values; ``bins``
    is a bin count or an explicit edge array.
    """
    values = []
    for s in samples:
        if isinstance(s, GranularitySample):
            if s.valid:
                values.append(float(s.g))
        elif s is not None:
            values.append(float(s))
    if not values:
        raise ValueError("no valid granularity samples")
    counts, edges = np.histogram(np.asarray(values), bins=bins)
    total = counts.sum()
    if total == 0:
        raise ValueError("no granularity samples fall inside the bin edges")
    density = counts / (total * np.diff(edges))
    return Histogram(edges, counts, density)


def sample_granularity(config, period: int = 10, sides: Sequence[Side] = (Side.BUY, Side.SELL),
                       keep_partial: bool = False) -> list[GranularitySample]:
    """Run the engine and evaluate g on each side every ``period`` steps."""
    from .engine import Engine

    engine = Engine(config)
    engine.warm_up(config.warmup)
    out: list[GranularitySample] = []

    def observe(eng):
        if eng.book.time % period == 0:
            for side in sides:
                try:
                    out.append(granularity(eng.book, side, keep_partial))
                except UndefinedPrice:
                    pass

    engine.run_steps(config.steps, observer=observe)
    return out


def write_granularity_csv(path, samples: Iterable[GranularitySample], header_lines: Iterable[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(("time", "side", "s", "N", "omega", "g", "valid"))
        for smp in samples:
            g = "" if smp.g is None else repr(float(smp.g))
            w.writerow((smp.time, "Bid" if smp.side is Side.BUY else "Ask", smp.s, smp.N,
                        smp.Omega, g, int(smp.valid)))
