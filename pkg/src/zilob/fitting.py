"""Power-law estimators: log-log regression, log-binned PDFs, tail exponents."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


class FitError(ValueError):
    """Not enough usable data for the requested fit."""


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    amplitude: float
    stderr_exponent: float
    fit_range: tuple[float, float]
    r_squared: float
    n_points: int

    def __call__(self, x):
        return self.amplitude * np.asarray(x, dtype=float) ** self.exponent


def fit_powerlaw(x: Sequence[float], y: Sequence[float], sigma: Optional[Sequence[float]] = None,
                 fit_range: Optional[tuple[float, float]] = None, min_points: int = 4) -> PowerLawFit:
    """Weighted least squares of log y on log x.

    ``sigma`` are absolute errors on ``y``; they enter as relative errors
    ``sigma / y`` on ``log y``. The exponent's standard error comes from the
    fit covariance scaled by the residual variance, so it stays meaningful
    when ``sigma`` is only known up to a factor.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sig = None if sigma is None else np.asarray(sigma, dtype=float)
    keep = np.ones(len(x), dtype=bool)
    if fit_range is not None:
        keep &= (x >= fit_range[0]) & (x <= fit_range[1])
    x, y = x[keep], y[keep]
    if sig is not None:
        sig = sig[keep]
    if len(x) < min_points:
        raise FitError(f"need at least {min_points} points in range, got {len(x)}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise FitError("power-law fit needs strictly positive x and y")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise FitError("degenerate fit: all x values are equal")
    if sig is None:
        w = np.ones_like(lx)
    else:
        rel = sig / y
        if np.any(~np.isfinite(rel)) or np.any(rel <= 0):
            w = np.ones_like(lx)
        else:
            w = 1.0 / rel**2
    W = w.sum()
    mx = (w * lx).sum() / W
    my = (w * ly).sum() / W
    sxx = (w * (lx - mx) ** 2).sum()
    slope = (w * (lx - mx) * (ly - my)).sum() / sxx
    intercept = my - slope * mx
    resid = ly - (intercept + slope * lx)
    dof = len(lx) - 2
    chi2 = (w * resid**2).sum()
    stderr = math.sqrt(chi2 / dof / sxx) if dof > 0 else float("inf")
    syy = (w * (ly - my) ** 2).sum()
    r2 = 1.0 - chi2 / syy if syy > 0 else 1.0
    return PowerLawFit(float(slope), float(math.exp(intercept)), float(stderr),
                       (float(x.min()), float(x.max())), float(r2), int(len(x)))


@dataclass(frozen=True)
class LogHistogram:
    edges: np.ndarray
    counts: np.ndarray
    density: np.ndarray
    centers: np.ndarray  # mean of the samples falling in each bin
    total: int

    def rows(self):
        for lo, hi, c, d in zip(self.edges[:-1], self.edges[1:], self.counts, self.density):
            yield float(lo), float(hi), int(c), float(d)


def log_histogram(values, bins_per_decade: int = 10, discrete: bool = False,
                  xmin: Optional[float] = None) -> LogHistogram:
    """PDF estimate on geometric bins.

    With ``discrete`` set the edges are snapped to half-integers so every
    bin holds a whole number of integer values and widths count them.
    """
    v = np.asarray(values, dtype=float)
    v = v[v > 0]
    if len(v) == 0:
        raise FitError("log histogram needs positive values")
    lo = v.min() if xmin is None else xmin
    hi = v.max()
    if discrete:
        lo_e, hi_e = max(lo - 0.5, 0.5), hi + 0.5
    else:
        lo_e, hi_e = lo, hi * (1 + 1e-12)
    n_bins = max(1, int(math.ceil(bins_per_decade * math.log10(hi_e / lo_e))))
    edges = np.geomspace(lo_e, hi_e, n_bins + 1)
    if discrete:
        edges = np.unique(np.floor(edges) + 0.5)
        if edges[-1] < hi + 0.5:
            edges = np.append(edges, hi + 0.5)
        if edges[0] > lo_e:
            edges = np.insert(edges, 0, lo_e)
    else:
        edges[0], edges[-1] = lo_e, hi_e
    counts, _ = np.histogram(v, bins=edges)
    sums, _ = np.histogram(v, bins=edges, weights=v)
    total = int(counts.sum())
    density = counts / (total * np.diff(edges))
    with np.errstate(invalid="ignore", divide="ignore"):
        centers = np.where(counts > 0, sums / np.maximum(counts, 1), np.sqrt(edges[:-1] * edges[1:]))
    return LogHistogram(edges, counts, density, centers, total)


@dataclass(frozen=True)
class TailFit:
    gamma: float
    stderr: float
    tail_fraction: float
    method: str
    n_tail: int
    x_min: float
    r_squared: Optional[float] = None
    fit_range: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class TailReport:
    hill: TailFit
    regression: TailFit
    zero_fraction: float
    n_nonzero: int
    power_law: bool  # regression r^2 at or above the threshold
    histogram: LogHistogram = field(repr=False)

    @property
    def gamma(self) -> float:
        """Primary estimate: the slope of the log-binned PDF tail."""
        return self.regression.gamma

    def rows(self):
        for f in (self.regression, self.hill):
            yield (f.method, f.gamma, f.stderr, f.tail_fraction, f.n_tail, f.x_min,
                   "" if f.r_squared is None else f.r_squared)


def _hill_top(x: np.ndarray, k: int) -> tuple[float, float]:
    # top k values and the (k+1)-th largest, without a full sort
    n = len(x)
    part = np.partition(x, n - k - 1)
    threshold = part[n - k - 1]
    return 1.0 / float(np.mean(np.log(part[n - k:] / threshold))), float(threshold)


def hill_alpha(abs_values, k: int) -> float:
    """Hill estimate of the survival-function exponent from the top ``k`` values."""
    x = np.asarray(abs_values, dtype=float)
    if not 1 <= k < len(x):
        raise FitError(f"Hill estimator needs 1 <= k < n, got k={k}, n={len(x)}")
    if np.partition(x, len(x) - k - 1)[len(x) - k - 1] <= 0:
        raise FitError("Hill threshold order statistic must be positive")
    return _hill_top(x, k)[0]


def hill_tail(abs_values, tail_fraction: float = 0.01, n_boot: int = 200, seed: int = 0) -> TailFit:
    """Hill estimate of the survival exponent, reported as PDF exponent -(alpha+1).

    The error is a bootstrap standard deviation (``n_boot`` resamples drawn
    from a seeded generator); with ``n_boot=0`` the asymptotic alpha/sqrt(k)
    is used instead.
    """
    x = np.asarray(abs_values, dtype=float)
    x = x[x > 0]
    k = int(math.ceil(tail_fraction * len(x)))
    if k < 10 or k >= len(x):
        raise FitError(f"Hill estimator needs at least 10 tail points, got {k} "
                       f"(n={len(x)}, tail_fraction={tail_fraction})")
    alpha, x_k = _hill_top(x, k)
    if n_boot > 0:
        gen = np.random.default_rng(seed)
        boots = np.empty(n_boot)
        for i in range(n_boot):
            boots[i] = _hill_top(x[gen.integers(0, len(x), len(x))], k)[0]
        err = float(np.std(boots, ddof=1))
    else:
        err = alpha / math.sqrt(k)
    return TailFit(-(alpha + 1.0), err, tail_fraction, "hill", k, x_k)


def tail_window(hist: LogHistogram, min_bins: int = 8, min_count: int = 5) -> tuple[float, float]:
    """Outermost one-decade window holding at least ``min_bins`` populated bins."""
    centers = hist.centers[hist.counts >= min_count]
    best = None
    for lo in centers:
        inside = np.count_nonzero((centers >= lo) & (centers <= 10 * lo * (1 + 1e-9)))
        if inside >= min_bins:
            best = lo
    if best is None:
        raise FitError(f"no decade of the tail holds {min_bins} bins with >= {min_count} counts")
    return float(best), float(10 * best * (1 + 1e-9))


def regression_tail(hist: LogHistogram, min_bins: int = 8, min_count: int = 5) -> TailFit:
    lo, hi = tail_window(hist, min_bins, min_count)
    sel = (hist.counts >= min_count) & (hist.centers >= lo) & (hist.centers <= hi)
    counts = hist.counts[sel]
    fit = fit_powerlaw(hist.centers[sel], hist.density[sel],
                       sigma=hist.density[sel] / np.sqrt(counts))
    return TailFit(fit.exponent, fit.stderr_exponent, float(counts.sum()) / hist.total,
                   "loglog_regression", int(counts.sum()), lo, fit.r_squared, fit.fit_range)


def tail_exponent(returns, tail_fraction: float = 0.01, bins_per_decade: int = 10,
                  discrete: Optional[bool] = None, min_bins: int = 8, min_count: int = 5,
                  r2_threshold: float = 0.95, n_boot: int = 200, seed: int = 0,
                  min_nonzero: int = 1000) -> TailReport:
    """Tail exponent of the PDF of |returns| by Hill and by log-binned regression.

    Zero returns are dropped before fitting. ``discrete`` defaults to True
    when every value is integral (returns in half-ticks).
    """
    r = np.abs(np.asarray(returns, dtype=float))
    n_all = len(r)
    nz = r[r > 0]
    if len(nz) < min_nonzero:
        raise FitError(f"tail fit needs at least {min_nonzero} nonzero returns, got {len(nz)}")
    if discrete is None:
        discrete = bool(np.all(nz == np.round(nz)))
    hist = log_histogram(nz, bins_per_decade, discrete=discrete)
    reg = regression_tail(hist, min_bins, min_count)
    hill = hill_tail(nz, tail_fraction, n_boot=n_boot, seed=seed)
    return TailReport(hill, reg, 1.0 - len(nz) / n_all, len(nz),
                      bool(reg.r_squared is not None and reg.r_squared >= r2_threshold), hist)


def batch_means(values, n_batches: int = 20) -> tuple[float, float]:
    """Mean and batch-means standard error of an autocorrelated series."""
    v = np.asarray(values, dtype=float)
    if n_batches < 2 or len(v) < n_batches:
        raise FitError("batch means needs at least two non-empty batches")
    size = len(v) // n_batches
    means = v[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(v.mean()), float(means.std(ddof=1) / math.sqrt(n_batches))


def write_histogram_csv(path, hist, header_lines: Iterable[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(("bin_lo", "bin_hi", "count", "density"))
        w.writerows(hist.rows())
