"""Instantaneous price impact surface phi(omega, g) from virtual market probes.

A probe fires a market order of volume ``omega`` against a copy of the
current book and records the mid-price change; the live book is never
touched, so a probed run follows exactly the same dynamics as an unprobed
one. Impacts are sign-adjusted so a buy probe on the ask side and a sell
probe on the bid side both count as positive responses.

Standard errors use batch means: every probe carries a (replica, batch)
label, batches being non-overlapping time windows, and cell errors come
from the spread of per-batch sums around the ratio estimate.
"""

from __future__ import annotations

import csv
import math
from array import array
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .book import Book, Side, UndefinedPrice
from .deposition import MechanismConfig
from .fitting import FitError, PowerLawFit, fit_powerlaw
from .metrics import granularity, partition_counts

DEFAULT_OMEGAS = (1, 2, 3, 5, 7, 10, 15, 20, 30, 50, 70, 100)


@dataclass(frozen=True)
class ProbeResult:
    time: int
    omega: int
    side: Side  # aggressor side of the probe
    g: Optional[Fraction]
    delta_p: Optional[int]  # mid change in half-ticks, None when censored
    censored: bool

    @property
    def impact(self) -> Optional[int]:
        """2*dp in ticks with the sign taken along the probe direction."""
        if self.delta_p is None:
            return None
        return self.delta_p if self.side is Side.BUY else -self.delta_p


def probe(book: Book, side: Side, omega: int) -> ProbeResult:
    """Fire a ``side`` market order of volume ``omega`` and undo it.

    ``g`` is measured on the consumed (opposite) side before the order.
    Raises :class:`UndefinedPrice` if the book has an empty side.
    """
    before = book.mid_halfticks()
    gs = granularity(book, side.opposite)
    snap = book.snapshot()
    try:
        report = book.execute_market(side, omega)
        if report.exhausted:
            return ProbeResult(book.time, omega, side, gs.g, None, True)
        return ProbeResult(book.time, omega, side, gs.g, book.mid_halfticks() - before, False)
    finally:
        book.restore(snap)


def profile_impacts(profile: Sequence[tuple[int, int]], omegas: Sequence[int]) -> list[Optional[int]]:
    """Best-quote shift (ticks, >= 0) after consuming each omega; None if exhausted.

    ``profile`` is the consumed side ordered from its best quote outward.
    """
    quotes = [abs(q - profile[0][0]) for q, _ in profile]
    cum = np.cumsum([v for _, v in profile])
    idx = np.searchsorted(cum, omegas, side="right")
    n = len(quotes)
    return [quotes[i] if i < n else None for i in idx.tolist()]


@dataclass
class ProbeSet:
    """Flat arrays of probe records, one row per (sample time, side, omega)."""

    time: np.ndarray
    omega: np.ndarray
    side: np.ndarray  # +1 buy probe, -1 sell probe
    g: np.ndarray
    impact: np.ndarray  # 2*dp in ticks, -1 where censored
    censored: np.ndarray
    batch: np.ndarray
    replica: np.ndarray
    skipped_invalid_g: int = 0
    skipped_undefined: int = 0

    def __len__(self) -> int:
        return len(self.time)

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.mean()) if len(self) else 0.0

    def censored_by_omega(self) -> dict[int, float]:
        return {int(w): float(self.censored[self.omega == w].mean()) for w in np.unique(self.omega)}

    @classmethod
    def concat(cls, sets: Sequence["ProbeSet"]) -> "ProbeSet":
        sets = sorted(sets, key=lambda p: int(p.replica[0]) if len(p) else 0)
        cols = {}
        for name in ("time", "omega", "side", "g", "impact", "censored", "batch", "replica"):
            cols[name] = np.concatenate([getattr(p, name) for p in sets])
        return cls(**cols, skipped_invalid_g=sum(p.skipped_invalid_g for p in sets),
                   skipped_undefined=sum(p.skipped_undefined for p in sets))


class _Prober:
    def __init__(self, omegas, period, steps, n_batches, replica, sides, keep_partial):
        self.omegas = list(omegas)
        self.period = period
        self.steps = steps
        self.n_batches = n_batches
        self.replica = replica
        self.sides = sides
        self.keep_partial = keep_partial
        self.t0: Optional[int] = None
        self._t, self._w, self._side = array("q"), array("q"), array("b")
        self._g, self._imp, self._batch = array("d"), array("q"), array("q")
        self.skipped_invalid_g = 0
        self.skipped_undefined = 0

    def __call__(self, engine) -> None:
        book = engine.book
        t = book.time
        if self.t0 is None:
            self.t0 = t
        if (t - self.t0) % self.period:
            return
        b, a = book._best_bid, book._best_ask
        if b is None or a is None:
            self.skipped_undefined += 1
            return
        s = a - b
        batch = min((t - self.t0) * self.n_batches // max(self.steps, 1), self.n_batches - 1)
        for side in self.sides:
            profile = book.depth_profile(side.opposite)
            counts = partition_counts(profile, s, self.keep_partial)
            n_int = len(counts)
            if n_int <= 2:
                self.skipped_invalid_g += 1
                continue
            g = sum(counts) / (n_int * s)
            k = len(self.omegas)
            self._t.extend([t] * k)
            self._w.extend(self.omegas)
            self._side.extend([side.value] * k)
            self._g.extend([g] * k)
            self._imp.extend([-1 if x is None else x for x in profile_impacts(profile, self.omegas)])
            self._batch.extend([batch] * k)

    def result(self) -> ProbeSet:
        impact = np.array(self._imp, dtype=np.int64)
        return ProbeSet(
            time=np.array(self._t, dtype=np.int64), omega=np.array(self._w, dtype=np.int64),
            side=np.array(self._side, dtype=np.int8), g=np.array(self._g), impact=impact,
            censored=impact < 0, batch=np.array(self._batch, dtype=np.int64),
            replica=np.full(len(impact), self.replica, dtype=np.int64),
            skipped_invalid_g=self.skipped_invalid_g, skipped_undefined=self.skipped_undefined,
        )


def collect_probes(config: MechanismConfig, omega_grid: Sequence[int] = DEFAULT_OMEGAS,
                   probe_period: int = 10, n_batches: int = 50, replica: int = 0,
                   sides: Sequence[Side] = (Side.BUY, Side.SELL), keep_partial: bool = False):
    """Run the engine and probe the book every ``probe_period`` recorded steps.

    Returns ``(ProbeSet, RunSummary)``.
    """
    from .engine import run

    prober = _Prober(omega_grid, probe_period, config.steps, n_batches, replica, tuple(sides), keep_partial)
    summary = run(config, observer=prober)
    return prober.result(), summary


@dataclass
class ImpactSurface:
    omega_grid: np.ndarray
    g_edges: np.ndarray
    sums: np.ndarray  # (omega, g_bin, batch) sums of 2*dp
    counts: np.ndarray  # (omega, g_bin, batch)
    g_sums: np.ndarray  # (omega, g_bin) sums of g, for cell mean g
    probes_by_omega: np.ndarray  # probes fired per omega, censored included
    censored_by_omega: np.ndarray
    min_samples: int = 50
    meta: dict = field(default_factory=dict)

    @property
    def n_gbins(self) -> int:
        return len(self.g_edges) - 1

    @property
    def n_probes(self) -> int:
        return int(self.probes_by_omega.sum())

    @property
    def censored_fraction(self) -> float:
        return float(self.censored_by_omega.sum() / max(self.n_probes, 1))

    def censored_rate(self) -> np.ndarray:
        return self.censored_by_omega / np.maximum(self.probes_by_omega, 1)

    def usable_omegas(self, max_censored: float = 1e-3) -> np.ndarray:
        """Omegas whose censoring stays below ``max_censored``.

        Dropping censored probes conditions the cell on a deep enough book,
        so heavily censored omegas give biased cells and are kept out of fits.
        """
        return self.omega_grid[self.censored_rate() < max_censored]

    def _ratio(self, S: np.ndarray, C: np.ndarray):
        """Ratio estimate and batch-means stderr along the last axis."""
        tot_s, tot_c = S.sum(-1), C.sum(-1)
        nb = np.count_nonzero(C, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = tot_s / tot_c
            dev = S - mean[..., None] * C
            var = nb / np.maximum(nb - 1, 1) * (dev**2).sum(-1) / tot_c**2
            err = np.where(nb >= 2, np.sqrt(var), np.nan)
        return mean, err, tot_c

    def cells(self):
        """(phi, stderr, count, mean g) arrays of shape (omega, g_bin); absent cells are NaN."""
        phi, err, cnt = self._ratio(self.sums, self.counts)
        with np.errstate(invalid="ignore", divide="ignore"):
            gmean = self.g_sums / cnt
        absent = cnt < self.min_samples
        phi = np.where(absent, np.nan, phi)
        err = np.where(absent, np.nan, err)
        gmean = np.where(absent, np.nan, gmean)
        return phi, err, cnt, gmean

    def averaged(self):
        """g-averaged impact per omega over every uncensored probe: (phi, stderr, count)."""
        return self._ratio(self.sums.sum(1), self.counts.sum(1))

    def omega_index(self, omega: int) -> int:
        hits = np.flatnonzero(self.omega_grid == omega)
        if not len(hits):
            raise KeyError(f"omega {omega} not in grid {self.omega_grid.tolist()}")
        return int(hits[0])

    def rows(self):
        phi, err, cnt, _ = self.cells()
        for i, w in enumerate(self.omega_grid.tolist()):
            for j in range(self.n_gbins):
                if not np.isnan(phi[i, j]):
                    yield (w, float(self.g_edges[j]), float(self.g_edges[j + 1]),
                           float(phi[i, j]), float(err[i, j]), int(cnt[i, j]))


def log_g_edges(g: np.ndarray, n_bins: int = 16) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    g = g[g > 0]
    if len(g) == 0:
        raise ValueError("no positive granularity values to bin")
    lo, hi = g.min(), g.max()
    if hi <= lo:
        hi = lo * 1.001
    return np.geomspace(lo, hi * (1 + 1e-9), n_bins + 1)


def build_surface(probes: ProbeSet, omega_grid: Optional[Sequence[int]] = None,
                  g_edges: Optional[np.ndarray] = None, n_gbins: int = 16,
                  min_samples: int = 50) -> ImpactSurface:
    """Bin uncensored probes into (omega, g) cells keyed by (replica, batch)."""
    if omega_grid is None:
        omega_grid = np.unique(probes.omega)
    omega_grid = np.asarray(sorted(omega_grid), dtype=np.int64)
    ok = ~probes.censored & np.isin(probes.omega, omega_grid)
    if g_edges is None:
        g_edges = log_g_edges(probes.g[ok], n_gbins)
    g_edges = np.asarray(g_edges, dtype=float)
    n_g = len(g_edges) - 1
    # batch units: distinct (replica, batch) pairs, in sorted order
    keys = probes.replica[ok] * (int(probes.batch.max(initial=0)) + 1) + probes.batch[ok]
    units, unit_idx = np.unique(keys, return_inverse=True)
    w_idx = np.searchsorted(omega_grid, probes.omega[ok])
    g_ok = probes.g[ok]
    g_idx = np.searchsorted(g_edges, g_ok, side="right") - 1
    inside = (g_idx >= 0) & (g_idx < n_g)
    shape = (len(omega_grid), n_g, max(len(units), 1))
    flat = np.ravel_multi_index((w_idx[inside], g_idx[inside], unit_idx[inside]), shape)
    size = int(np.prod(shape))
    sums = np.bincount(flat, weights=probes.impact[ok][inside], minlength=size).reshape(shape)
    counts = np.bincount(flat, minlength=size).reshape(shape).astype(float)
    flat2 = np.ravel_multi_index((w_idx[inside], g_idx[inside]), shape[:2])
    g_sums = np.bincount(flat2, weights=g_ok[inside], minlength=shape[0] * shape[1]).reshape(shape[:2])
    in_grid = np.isin(probes.omega, omega_grid)
    idx_all = np.searchsorted(omega_grid, probes.omega[in_grid])
    fired = np.bincount(idx_all, minlength=len(omega_grid))
    cens = np.bincount(idx_all, weights=probes.censored[in_grid], minlength=len(omega_grid))
    return ImpactSurface(omega_grid, g_edges, sums, counts, g_sums, fired, cens, min_samples)


def merge_surfaces(surfaces: Sequence[ImpactSurface]) -> ImpactSurface:
    """Cell-wise merge of surfaces on identical grids by pooling their batches."""
    first = surfaces[0]
    for s in surfaces[1:]:
        if not (np.array_equal(s.omega_grid, first.omega_grid) and np.array_equal(s.g_edges, first.g_edges)):
            raise ValueError("can only merge surfaces on identical omega grids and g edges")
    return ImpactSurface(
        first.omega_grid, first.g_edges,
        np.concatenate([s.sums for s in surfaces], axis=2),
        np.concatenate([s.counts for s in surfaces], axis=2),
        sum(s.g_sums for s in surfaces),
        sum(s.probes_by_omega for s in surfaces), sum(s.censored_by_omega for s in surfaces),
        first.min_samples, dict(first.meta),
    )


def measure_surface(config: MechanismConfig, omega_grid: Sequence[int] = DEFAULT_OMEGAS,
                    g_bins=16, probe_period: int = 10, min_samples: int = 50,
                    n_batches: int = 50) -> ImpactSurface:
    """Probe a run of ``config`` and bin the results.

    ``g_bins`` is either a bin count (log-spaced over the observed g range)
    or explicit edges.
    """
    probes, summary = collect_probes(config, omega_grid, probe_period, n_batches)
    if np.ndim(g_bins) == 0:
        surface = build_surface(probes, omega_grid, n_gbins=int(g_bins), min_samples=min_samples)
    else:
        surface = build_surface(probes, omega_grid, g_edges=np.asarray(g_bins), min_samples=min_samples)
    surface.meta.update(probe_period=probe_period, n_batches=n_batches,
                        skipped_invalid_g=probes.skipped_invalid_g, steps=config.steps)
    return surface


# --- slices and fits -------------------------------------------------------

def _fit_cells(x, y, err, label: str, min_cells: int = 4) -> PowerLawFit:
    ok = ~np.isnan(y) & ~np.isnan(x) & (y > 0)
    if np.count_nonzero(ok) < min_cells:
        raise FitError(f"slice {label} has {np.count_nonzero(ok)} populated cells, need {min_cells}")
    e = err[ok]
    sigma = None if np.any(~np.isfinite(e)) or np.any(e <= 0) else e
    return fit_powerlaw(x[ok], y[ok], sigma=sigma, min_points=min_cells)


def _omega_mask(surface: ImpactSurface, omegas: Optional[Sequence[int]]) -> np.ndarray:
    if omegas is None:
        return np.ones(len(surface.omega_grid), dtype=bool)
    return np.isin(surface.omega_grid, np.asarray(omegas))


def slice_fixed_g(surface: ImpactSurface, g_bin: int, omegas: Optional[Sequence[int]] = None) -> PowerLawFit:
    """Power law in omega at one g bin, optionally over a subset of omegas."""
    phi, err, _, _ = surface.cells()
    x = surface.omega_grid.astype(float)
    y, e = phi[:, g_bin].copy(), err[:, g_bin]
    y[~_omega_mask(surface, omegas)] = np.nan
    return _fit_cells(x, y, e, f"g_bin={g_bin}")


def slice_fixed_omega(surface: ImpactSurface, omega: int) -> PowerLawFit:
    """Power law in g at one probe volume, against the cells' mean g."""
    phi, err, _, gmean = surface.cells()
    i = surface.omega_index(omega)
    return _fit_cells(gmean[i], phi[i], err[i], f"omega={omega}")


def averaged_fit(surface: ImpactSurface, omegas: Optional[Sequence[int]] = None) -> PowerLawFit:
    """Power law of the g-averaged impact against omega (the exponent delta)."""
    phi, err, _ = surface.averaged()
    x = surface.omega_grid.astype(float)
    y = phi.copy()
    y[~_omega_mask(surface, omegas)] = np.nan
    return _fit_cells(x, y, err, "g-averaged")


def populated_cells(surface: ImpactSurface, omega: int) -> int:
    phi = surface.cells()[0]
    return int(np.count_nonzero(~np.isnan(phi[surface.omega_index(omega)])))


def pooled_alpha(fits: Sequence[PowerLawFit]) -> tuple[float, float]:
    """Inverse-variance weighted mean of slice exponents and its error."""
    w = np.array([1 / f.stderr_exponent**2 for f in fits])
    a = np.array([f.exponent for f in fits])
    return float((w * a).sum() / w.sum()), float(1 / math.sqrt(w.sum()))


@dataclass
class CollapseResult:
    delta: float
    omega_max: float
    rescaled: np.ndarray  # (omega, g_bin) phi / omega**delta
    rescaled_err: np.ndarray
    bin_stat: np.ndarray  # per g bin: max |R - pooled| / own stderr
    g_centers: np.ndarray
    threshold: float = 2.0

    @property
    def failing_bins(self) -> list[int]:
        return [j for j, z in enumerate(self.bin_stat) if np.isfinite(z) and z > self.threshold]

    @property
    def statistic(self) -> float:
        z = self.bin_stat[np.isfinite(self.bin_stat)]
        return float(z.max()) if len(z) else 0.0

    @property
    def passed(self) -> bool:
        return not self.failing_bins

    def passed_above(self, g_min: float) -> bool:
        """True when every failing bin lies below ``g_min``."""
        return all(self.g_centers[j] < g_min for j in self.failing_bins)


def collapse_test(surface: ImpactSurface, delta: float, omega_max: float = 30,
                  threshold: float = 2.0) -> CollapseResult:
    """Rescale fixed-omega curves by omega**delta and check they coincide per g bin.

    Only omega < ``omega_max`` take part. In each g bin the rescaled values
    are compared with their inverse-variance weighted mean; the bin
    statistic is the largest deviation in units of that value's own
    standard error.
    """
    phi, err, _, _ = surface.cells()
    w = surface.omega_grid.astype(float)
    use = w < omega_max
    scale = w[:, None] ** delta
    R = phi / scale
    E = err / scale
    R[~use] = np.nan
    E[~use] = np.nan
    stat = np.full(surface.n_gbins, np.nan)
    for j in range(surface.n_gbins):
        ok = ~np.isnan(R[:, j])
        if np.count_nonzero(ok) < 2:
            continue
        r, e = R[ok, j], E[ok, j]
        if np.any(~(e > 0)):
            dev = np.abs(r - r.mean())
            stat[j] = 0.0 if np.all(dev < 1e-12 * max(1.0, abs(r.mean()))) else np.inf
            continue
        wt = 1 / e**2
        pooled = (wt * r).sum() / wt.sum()
        stat[j] = float(np.max(np.abs(r - pooled) / e))
    centers = np.sqrt(surface.g_edges[:-1] * surface.g_edges[1:])
    return CollapseResult(delta, omega_max, R, E, stat, centers, threshold)


# --- exports ---------------------------------------------------------------

def write_surface_csv(path, surface: ImpactSurface, header_lines: Iterable[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(("omega", "g_lo", "g_hi", "phi", "stderr", "count"))
        w.writerows(surface.rows())


def write_slices_csv(path, rows: Iterable[tuple], header_lines: Iterable[str] = ()) -> None:
    """Rows are (slice, param, PowerLawFit)."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(("slice", "param", "exponent", "stderr", "amplitude", "range_lo", "range_hi"))
        for name, param, fit in rows:
            w.writerow((name, param, fit.exponent, fit.stderr_exponent, fit.amplitude,
                        fit.fit_range[0], fit.fit_range[1]))


# --- full analysis ---------------------------------------------------------

@dataclass
class ImpactAnalysis:
    surface: ImpactSurface
    usable_omegas: np.ndarray
    delta: PowerLawFit
    alpha_by_omega: dict  # omega -> PowerLawFit, slices with enough populated cells
    alpha_pooled: tuple[float, float]
    beta_by_gbin: dict  # g bin index -> PowerLawFit
    collapse: CollapseResult
    amplification: Optional[dict]
    skipped_slices: list = field(default_factory=list)

    def slice_rows(self):
        yield "averaged", "all_g", self.delta
        for w, f in self.alpha_by_omega.items():
            yield "fixed_omega", w, f
        for j, f in self.beta_by_gbin.items():
            g_lo, g_hi = self.surface.g_edges[j], self.surface.g_edges[j + 1]
            yield "fixed_g", f"{g_lo:.6g}-{g_hi:.6g}", f

    def verdict_lines(self) -> list[str]:
        d = self.delta
        a, ae = self.alpha_pooled
        lines = [
            f"probes={self.surface.n_probes}",
            f"censored_fraction={self.surface.censored_fraction:.6g}",
            "censored_by_omega=" + ",".join(
                f"{w}:{r:.4g}" for w, r in zip(self.surface.omega_grid.tolist(), self.surface.censored_rate())),
            "fit_omegas=" + ",".join(str(w) for w in self.usable_omegas.tolist()),
            f"delta={d.exponent:.6g} stderr={d.stderr_exponent:.3g} r2={d.r_squared:.5f}",
            f"alpha_pooled={a:.6g} stderr={ae:.3g}",
        ]
        for w, f in self.alpha_by_omega.items():
            lines.append(f"alpha[omega={w}]={f.exponent:.6g} stderr={f.stderr_exponent:.3g}")
        c = self.collapse
        lines.append(f"collapse(omega<{c.omega_max:g}, delta={c.delta:.4g})="
                     f"{'PASS' if c.passed else 'FAIL'} statistic={c.statistic:.4g}")
        lines.append("collapse_failing_g=" + ",".join(f"{c.g_centers[j]:.4g}" for j in c.failing_bins))
        if self.amplification:
            amp = self.amplification
            lines.append(f"amplification[omega={amp['omega']}]={amp['ratio']:.4g} "
                         f"(g_low={amp['g_low']:.4g}, g_high={amp['g_high']:.4g})")
        for s in self.skipped_slices:
            lines.append(f"skipped: {s}")
        return lines


def amplification(surface: ImpactSurface, omega: int = 10) -> Optional[dict]:
    """Impact at the lowest populated g bin over the highest one, at ``omega``."""
    phi, err, _, gmean = surface.cells()
    i = surface.omega_index(omega)
    ok = np.flatnonzero(~np.isnan(phi[i]))
    if len(ok) < 2:
        return None
    lo, hi = ok[0], ok[-1]
    return {"omega": omega, "ratio": float(phi[i, lo] / phi[i, hi]), "g_low": float(gmean[i, lo]),
            "g_high": float(gmean[i, hi]), "phi_low": float(phi[i, lo]), "phi_high": float(phi[i, hi])}


def analyze_surface(surface: ImpactSurface, max_censored: float = 1e-3, collapse_omega_max: float = 30,
                    min_alpha_cells: int = 6) -> ImpactAnalysis:
    """Exponent fits, collapse test and amplification ratio for one surface.

    Fits use only omegas whose censoring is below ``max_censored``. Fixed
    omega slices need ``min_alpha_cells`` populated g bins to be fitted.
    """
    usable = surface.usable_omegas(max_censored)
    delta = averaged_fit(surface, usable)
    skipped = []
    alphas = {}
    for w in usable.tolist():
        if populated_cells(surface, w) < min_alpha_cells:
            skipped.append(f"fixed_omega {w}: fewer than {min_alpha_cells} populated g bins")
            continue
        alphas[w] = slice_fixed_omega(surface, w)
    betas = {}
    for j in range(surface.n_gbins):
        try:
            betas[j] = slice_fixed_g(surface, j, usable)
        except FitError as exc:
            skipped.append(str(exc))
    pooled = pooled_alpha(list(alphas.values())) if alphas else (float("nan"), float("nan"))
    collapse = collapse_test(surface, delta.exponent, collapse_omega_max)
    amp = amplification(surface, 10) if 10 in surface.omega_grid else None
    return ImpactAnalysis(surface, usable, delta, alphas, pooled, betas, collapse, amp, skipped)
