"""Spectral analysis of halftone patterns.

Periodograms of rectangular windows, three averaged-power-spectrum
estimators (aligned Bartlett stepping, half-overlapped Welch stepping, and
seeded random window sampling), radial statistics, impulse detection, and
the spectral distance functions used by the parameter optimizer.

Halftones enter as ink indicators: value 0 (ink dot) maps to 1.0, value
255 to 0.0.  All estimators average periodograms segment-by-segment in a
fixed order, so results are bit-stable.  The DC bin is zeroed out by
per-segment mean removal (configurable) and excluded from every statistic.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
import scipy.fft

from .imagecore import BinaryImage, GrayImage, save_pgm


class SpectrumCostKind(Enum):
    MAGNITUDE_MSE = "magnitude_mse"
    DBS_NORMALIZED = "dbs_normalized"
    SYMMETRIC_NORMALIZED = "symmetric_normalized"


@dataclass(eq=False)
class APSD:
    """Averaged power spectrum over K window periodograms.

    ``bins`` is (window_rows, window_cols) with DC at index (0, 0);
    display helpers re-center it.
    """

    bins: np.ndarray
    window_rows: int
    window_cols: int
    segments_k: int
    estimator: str
    seed: int | None = None
    mean_removed: bool = True

    def __post_init__(self):
        if self.bins.shape != (self.window_rows, self.window_cols):
            raise ValueError("bins shape does not match window dimensions")
        if not np.all(np.isfinite(self.bins)) or self.bins.min() < 0:
            raise ValueError("APSD bins must be finite and nonnegative")

    def save_csv(self, path) -> None:
        """Row-major full-precision CSV of the power bins (DC at [0,0])."""
        np.savetxt(path, self.bins, fmt="%.17g", delimiter=",")

    def save_pgm_visualization(self, path) -> None:
        """8-bit log-scaled view, DC centered: v = 255*log1p(b)/log1p(max)."""
        centered = np.fft.fftshift(self.bins)
        peak = centered.max()
        if peak > 0:
            img = np.rint(255.0 * np.log1p(centered) / np.log1p(peak))
        else:
            img = np.zeros_like(centered)
        save_pgm(GrayImage(img.astype(np.uint8)), path)


def ink_array(h) -> np.ndarray:
    """Map a halftone to its ink indicator: 0 -> 1.0, 255 -> 0.0."""
    if isinstance(h, BinaryImage):
        return (h.pixels == 0).astype(np.float64)
    arr = np.asarray(h, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array")
    return arr


def periodogram(segment: np.ndarray, remove_mean: bool = True) -> np.ndarray:
    """|DFT|^2 / (M*N) of the (mean-removed) window.

    With this normalization Parseval holds: the bins sum to the squared
    deviation energy of the window.
    """
    seg = np.asarray(segment, dtype=np.float64)
    if seg.ndim != 2 or seg.size == 0:
        raise ValueError("segment must be a non-empty 2-D array")
    if remove_mean:
        seg = seg - seg.mean()
    dft = scipy.fft.fft2(seg)
    return (dft.real * dft.real + dft.imag * dft.imag) / seg.size


def _window_dims(window) -> tuple[int, int]:
    if isinstance(window, int):
        return window, window
    m, n = window
    return int(m), int(n)


def _average(segments, dims, k, estimator, seed=None, remove_mean=True) -> APSD:
    total = np.zeros(dims, dtype=np.float64)
    count = 0
    for seg in segments:
        total += periodogram(seg, remove_mean=remove_mean)
        count += 1
    if count != k:
        raise AssertionError("segment generator yielded an unexpected count")
    return APSD(
        bins=total / k,
        window_rows=dims[0],
        window_cols=dims[1],
        segments_k=k,
        estimator=estimator,
        seed=seed,
        mean_removed=remove_mean,
    )


def bartlett_apsd(h, window, k: int, step: int | None = None, remove_mean: bool = True) -> APSD:
    """Aligned-segment average: K windows stepped vertically at stride
    ``step`` (default: the window height, i.e. contiguous non-overlapping
    segments) from a fixed left edge."""
    ink = ink_array(h)
    m, n = _window_dims(window)
    if step is None:
        step = m
    if step < 1:
        raise ValueError("step must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    rows, cols = ink.shape
    needed = (k - 1) * step + m
    if needed > rows or n > cols:
        raise ValueError(
            f"{k} segments of {m}x{n} at stride {step} do not fit in {rows}x{cols}"
        )
    segs = (ink[r * step : r * step + m, :n] for r in range(k))
    return _average(segs, (m, n), k, "bartlett", remove_mean=remove_mean)


def welch_apsd(h, window, k: int, remove_mean: bool = True) -> APSD:
    """Half-overlapped variant of the aligned average: stride = M // 2."""
    m, _ = _window_dims(window)
    if m < 2:
        raise ValueError("window too small for half-overlap stepping")
    apsd = bartlett_apsd(h, window, k, step=m // 2, remove_mean=remove_mean)
    apsd.estimator = "welch"
    return apsd


def randomized_apsd(h, window=128, k: int = 50, *, seed: int, remove_mean: bool = True) -> APSD:
    """Average over K windows at seeded uniform-random origins.

    Origins are drawn with replacement over all valid top-left positions
    (rows first, then columns, one vectorized draw each), so the estimate
    is bit-identical for a given seed.
    """
    ink = ink_array(h)
    m, n = _window_dims(window)
    rows, cols = ink.shape
    if m > rows or n > cols:
        raise ValueError(f"window {m}x{n} exceeds image {rows}x{cols}")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    top = rng.integers(0, rows - m + 1, size=k)
    left = rng.integers(0, cols - n + 1, size=k)
    segs = (ink[top[i] : top[i] + m, left[i] : left[i] + n] for i in range(k))
    apsd = _average(segs, (m, n), k, "randomized", seed=seed, remove_mean=remove_mean)
    return apsd


# ---------------------------------------------------------------------------
# Radial statistics
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _ring_labels(rows: int, cols: int, ring_width: float) -> tuple:
    """Assign each bin a radial ring label; DC gets -1.

    Rings are floor(radius / ring_width); any ring with fewer than 8 bins
    is merged outward (the outermost small ring merges inward instead).
    Returns (labels array, sorted unique labels).
    """
    fr = np.fft.fftfreq(rows) * rows
    fc = np.fft.fftfreq(cols) * cols
    radius = np.hypot(fr[:, None], fc[None, :])
    labels = np.floor(radius / ring_width).astype(np.int64)
    labels[0, 0] = -1
    uniq = sorted(int(u) for u in np.unique(labels) if u >= 0)
    remap = {u: u for u in uniq}
    counts = {u: int(np.count_nonzero(labels == u)) for u in uniq}
    for i, u in enumerate(uniq):
        if counts[u] < 8 and i + 1 < len(uniq):
            nxt = uniq[i + 1]
            counts[nxt] += counts[u]
            counts[u] = 0
            for key, val in remap.items():
                if val == u:
                    remap[key] = nxt
    survivors = [u for u in uniq if counts[u] > 0]
    if len(survivors) >= 2 and counts[survivors[-1]] < 8:
        tail, prev = survivors[-1], survivors[-2]
        for key, val in remap.items():
            if val == tail:
                remap[key] = prev
        survivors.pop()
    out = labels.copy()
    for key, val in remap.items():
        if key != val:
            out[labels == key] = val
    out.flags.writeable = False
    return out, tuple(survivors)


@dataclass(eq=False)
class RadialStats:
    """Per-ring mean power and anisotropy (variance / squared mean)."""

    radius: np.ndarray       # mean bin radius of each ring, in bin units
    frequency: np.ndarray    # radius / window rows, cycles per pixel
    power: np.ndarray
    anisotropy: np.ndarray
    bin_count: np.ndarray
    ring_width: float


def rapsd_anisotropy(apsd: APSD, ring_width: float = 1.0) -> RadialStats:
    """Radially averaged power and per-ring anisotropy; DC excluded."""
    if ring_width < 1.0:
        raise ValueError("ring_width must be at least one bin")
    labels, rings = _ring_labels(apsd.window_rows, apsd.window_cols, float(ring_width))
    fr = np.fft.fftfreq(apsd.window_rows) * apsd.window_rows
    fc = np.fft.fftfreq(apsd.window_cols) * apsd.window_cols
    radius = np.hypot(fr[:, None], fc[None, :])
    mean_r, power, aniso, count = [], [], [], []
    for ring in rings:
        mask = labels == ring
        vals = apsd.bins[mask]
        mu = float(vals.mean())
        var = float(vals.var(ddof=1)) if vals.size > 1 else 0.0
        mean_r.append(float(radius[mask].mean()))
        power.append(mu)
        aniso.append(var / (mu * mu) if mu > 0 else 0.0)
        count.append(int(vals.size))
    radius_arr = np.array(mean_r)
    return RadialStats(
        radius=radius_arr,
        frequency=radius_arr / apsd.window_rows,
        power=np.array(power),
        anisotropy=np.array(aniso),
        bin_count=np.array(count),
        ring_width=float(ring_width),
    )


def detect_impulses(apsd: APSD, threshold_factor: float) -> list[tuple[int, int, float]]:
    """Bins standing more than threshold_factor above their ring median.

    Returns (signed row frequency, signed col frequency, ratio) triples.
    The DC bin and its 8 neighbors are excluded from both candidacy and
    the ring medians.  A small floor (1e-9 of the global peak, comfortably
    above FFT roundoff leakage) keeps numerical noise from registering
    against an all-zero ring.
    """
    if threshold_factor <= 1.0:
        raise ValueError("threshold_factor must exceed 1")
    rows, cols = apsd.window_rows, apsd.window_cols
    labels, rings = _ring_labels(rows, cols, 1.0)
    excluded = np.zeros((rows, cols), dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            excluded[dr % rows, dc % cols] = True
    eps = 1e-9 * float(apsd.bins.max())
    fr = (np.fft.fftfreq(rows) * rows).astype(np.int64)
    fc = (np.fft.fftfreq(cols) * cols).astype(np.int64)
    found = []
    for ring in rings:
        mask = (labels == ring) & ~excluded
        if not mask.any():
            continue
        vals = apsd.bins[mask]
        floor = float(np.median(vals)) + eps
        hot = mask & (apsd.bins > threshold_factor * floor)
        for r, c in np.argwhere(hot):
            found.append((int(fr[r]), int(fc[c]), float(apsd.bins[r, c] / floor)))
    found.sort(key=lambda t: -t[2])
    return found


# ---------------------------------------------------------------------------
# Spectral distances
# ---------------------------------------------------------------------------

def spectrum_cost(apsd_test: APSD, apsd_ref: APSD, kind: SpectrumCostKind) -> float:
    """Spectral distance between a test APSD and a reference APSD.

    MAGNITUDE_MSE sums squared differences; DBS_NORMALIZED divides each
    term by the squared reference; SYMMETRIC_NORMALIZED divides by the sum
    of both squares (each term then lies in [0, 1] for nonnegative
    spectra).  The DC bin is excluded and zero-denominator bins skipped.
    """
    if apsd_test.bins.shape != apsd_ref.bins.shape:
        raise ValueError("APSD dimensions differ")
    mask = np.ones(apsd_test.bins.shape, dtype=bool)
    mask[0, 0] = False
    a = apsd_test.bins[mask]
    b = apsd_ref.bins[mask]
    diff2 = (a - b) ** 2
    if kind is SpectrumCostKind.MAGNITUDE_MSE:
        return float(diff2.sum())
    if kind is SpectrumCostKind.DBS_NORMALIZED:
        denom = b * b
        good = denom > 0
        return float((diff2[good] / denom[good]).sum())
    if kind is SpectrumCostKind.SYMMETRIC_NORMALIZED:
        denom = a * a + b * b
        good = denom > 0
        return float((diff2[good] / denom[good]).sum())
    raise ValueError(f"unknown cost kind {kind!r}")
