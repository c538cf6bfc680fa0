"""Constrained dual-metric direct binary search.

Two jobs: (a) free toggle+swap binary search that turns a grayscale patch
into a blue-noise halftone under a perceptual quadratic cost, used to
produce ground-truth patterns per tone; (b) the stacked mask family
builder, where each level adds a fixed quota of black dots on white sites
(largest-void placement plus count-preserving swap refinement), giving a
per-pixel first-black level that encodes all 256 masks at once.

The cost is e' C e where e is the normalized halftone error and C the
weighted sum of the two Nasanen autocorrelation kernels; incremental move
deltas and a running filtered-error field make each move O(kernel area).
Extreme mask levels (0..3 and 252..255) switch to a doubled sampling
scale so the kernel support covers the sparse-dot spacing.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

import numpy as np
import scipy.fft
from scipy import ndimage

from .hvs_metrics import (
    DEFAULT_TRUNCATION,
    HVSKernel,
    NASANEN_MODEL_1,
    NASANEN_MODEL_2,
    NasanenParams,
    nasanen_autocorr,
)
from .imagecore import BinaryImage, GrayImage, constant_patch, load_pbm, save_pbm

ACCEPT_EPS = 1e-9

# 8-neighborhood in row-major order; diagonal flags aligned with it.
OFFSETS8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass
class DbsConfig:
    """Knobs of the binary search engine and the mask builder."""

    model1: NasanenParams = NASANEN_MODEL_1
    model2: NasanenParams = NASANEN_MODEL_2
    wraparound: bool = True
    seed: int = 0
    max_sweeps: int = 60
    target_counts: np.ndarray | None = None
    weight1: float = 1.0
    weight2: float = 1.0
    two_s_extremes: bool = True
    truncation: float = DEFAULT_TRUNCATION
    verify: bool | None = None   # None: auto-enable for images <= 128x128
    verify_every: int = 1000

    def kernel(self, scale_multiplier: int = 1) -> HVSKernel:
        """Weighted sum of the two autocorrelation kernels on a common grid."""
        k1 = nasanen_autocorr(self.model1, scale_multiplier, self.truncation)
        k2 = nasanen_autocorr(self.model2, scale_multiplier, self.truncation)
        radius = max(k1.radius, k2.radius)
        side = 2 * radius + 1
        total = np.zeros((side, side))
        for weight, k in ((self.weight1, k1), (self.weight2, k2)):
            pad = radius - k.radius
            total[pad : side - pad, pad : side - pad] += weight * k.samples
        return HVSKernel(radius=radius, samples=total, kind="autocorrelation")


def default_target_counts(size: int) -> np.ndarray:
    """Per-level black-dot quota: round(g * size^2 / 255)."""
    return np.rint(np.arange(256) * (size * size) / 255.0).astype(np.int64)


def _validate_counts(counts: np.ndarray, size: int) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (256,):
        raise ValueError("target_counts must have one entry per level (256)")
    if counts[0] != 0 or counts[255] != size * size:
        raise ValueError("target_counts must start at 0 and end at size^2")
    if (np.diff(counts) < 0).any():
        raise ValueError("infeasible target_counts: black counts must be non-decreasing")
    return counts


# ---------------------------------------------------------------------------
# Incremental cost state
# ---------------------------------------------------------------------------

def _filtered_error(e: np.ndarray, kernel: HVSKernel, wraparound: bool) -> np.ndarray:
    """Apply the quadratic-form kernel to the error field (C e)."""
    if not wraparound:
        return ndimage.convolve(e, kernel.samples, mode="constant", cval=0.0)
    h, w = e.shape
    cache = getattr(kernel, "_rfft_cache", None)
    if cache is None:
        cache = {}
        kernel._rfft_cache = cache
    kf = cache.get((h, w))
    if kf is None:
        offs = np.arange(-kernel.radius, kernel.radius + 1)
        kpad = np.zeros((h, w))
        kpad[np.ix_(offs % h, offs % w)] = kernel.samples
        kf = scipy.fft.rfft2(kpad)
        cache[(h, w)] = kf
    return scipy.fft.irfft2(scipy.fft.rfft2(e) * kf, s=(h, w))


class _CostState:
    """Running halftone error, filtered error, and total cost.

    Every accepted move strictly decreases the cost; an optional spot check
    recomputes the cost from scratch every `verify_every` accepted moves
    and demands agreement within 1e-6 relative.
    """

    def __init__(self, e, kernel: HVSKernel, wraparound: bool,
                 verify_every: int = 0, cost_log=None):
        h, w = e.shape
        if 2 * kernel.radius + 1 > min(h, w):
            raise ValueError("kernel support exceeds the image; use a larger image")
        self.e = e
        self.kernel = kernel
        self.wrap = wraparound
        self.radius = kernel.radius
        self.k0 = kernel.peak
        self.cpe = _filtered_error(e, kernel, wraparound)
        self.cost = float(np.sum(e * self.cpe))
        self.accepted = 0
        self.verify_every = verify_every
        self.cost_log = cost_log
        self._offs = np.arange(-kernel.radius, kernel.radius + 1)

    def _add_kernel(self, r: int, c: int, scale: float) -> None:
        h, w = self.e.shape
        rad = self.radius
        if self.wrap:
            rows = (r + self._offs) % h
            cols = (c + self._offs) % w
            self.cpe[np.ix_(rows, cols)] += scale * self.kernel.samples
        else:
            r0, r1 = max(0, r - rad), min(h, r + rad + 1)
            c0, c1 = max(0, c - rad), min(w, c + rad + 1)
            self.cpe[r0:r1, c0:c1] += scale * self.kernel.samples[
                rad - (r - r0) : rad + (r1 - r), rad - (c - c0) : rad + (c1 - c)
            ]

    def _bump(self, delta: float) -> None:
        self.cost += delta
        self.accepted += 1
        if self.cost_log is not None:
            self.cost_log.append(self.cost)
        if self.verify_every and self.accepted % self.verify_every == 0:
            self.verify()

    def apply_toggle(self, r, c, a, delta) -> None:
        # delta = 2 a cpe[r, c] + a^2 k0, computed at the call site
        self.e[r, c] += a
        self._add_kernel(r, c, a)
        self._bump(delta)

    def apply_swap(self, r1, c1, r2, c2, a, delta) -> None:
        # delta = 2 a (cpe[p] - cpe[q]) + 2 a^2 (k0 - kernel[p - q])
        self.e[r1, c1] += a
        self.e[r2, c2] -= a
        self._add_kernel(r1, c1, a)
        self._add_kernel(r2, c2, -a)
        self._bump(delta)

    def verify(self) -> None:
        cpe_full = _filtered_error(self.e, self.kernel, self.wrap)
        cost_full = float(np.sum(self.e * cpe_full))
        if abs(self.cost - cost_full) > 1e-6 * max(1.0, abs(cost_full)):
            raise AssertionError(
                f"incremental cost {self.cost!r} drifted from recomputed {cost_full!r}"
            )


# ---------------------------------------------------------------------------
# Free binary search (toggle + 3x3 swap)
# ---------------------------------------------------------------------------

def _neighbor_table(h: int, w: int, wraparound: bool) -> np.ndarray:
    """Flat neighbor indices (N, 8); -1 marks out-of-image (plane mode)."""
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    table = np.empty((h * w, 8), dtype=np.int64)
    for j, (dr, dc) in enumerate(OFFSETS8):
        nr, nc = rr + dr, cc + dc
        if wraparound:
            idx = (nr % h) * w + (nc % w)
        else:
            inside = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
            idx = np.where(inside, nr * w + nc, -1)
        table[:, j] = idx.reshape(-1)
    return table


def _serpentine_rank(h: int, w: int) -> np.ndarray:
    cols = np.arange(w)
    rank = np.empty((h, w), dtype=np.int64)
    for r in range(h):
        rank[r] = r * w + (cols if r % 2 == 0 else w - 1 - cols)
    return rank.reshape(-1)


def _screen_candidates(y, state: _CostState, knb) -> np.ndarray:
    """Vectorized lower bound pass: best move delta per pixel."""
    a = 1.0 - 2.0 * y
    best = 2.0 * a * state.cpe + state.k0  # toggle (a^2 = 1)
    h, w = y.shape
    for j, (dr, dc) in enumerate(OFFSETS8):
        if state.wrap:
            y_nb = np.roll(y, (-dr, -dc), axis=(0, 1))
            cpe_nb = np.roll(state.cpe, (-dr, -dc), axis=(0, 1))
            valid = y_nb != y
        else:
            y_nb = np.full_like(y, np.nan)
            cpe_nb = np.full_like(state.cpe, np.nan)
            rs = slice(max(0, -dr), h - max(0, dr))
            cs = slice(max(0, -dc), w - max(0, dc))
            rs_src = slice(max(0, dr), h + min(0, dr))
            cs_src = slice(max(0, dc), w + min(0, dc))
            y_nb[rs, cs] = y[rs_src, cs_src]
            cpe_nb[rs, cs] = state.cpe[rs_src, cs_src]
            valid = np.zeros_like(y, dtype=bool)
            valid[rs, cs] = y[rs_src, cs_src] != y[rs, cs]
        d_swap = 2.0 * a * (state.cpe - cpe_nb) + 2.0 * (state.k0 - knb[j])
        best = np.where(valid, np.minimum(best, d_swap), best)
    return best


def dmdbs_halftone(
    x: GrayImage,
    cfg: DbsConfig,
    scale_multiplier: int = 1,
    cost_log: list | None = None,
) -> BinaryImage:
    """Binary-search halftone of x under the dual-metric cost.

    Starts from a seeded Bernoulli pattern matching the local gray level,
    then sweeps toggle and 3x3 swap moves (visiting improvable pixels in
    serpentine order) until no move lowers the cost.  Deterministic for a
    given seed; the returned pattern is a certified local minimum.
    """
    kernel = cfg.kernel(scale_multiplier)
    xn = x.pixels.astype(np.float64) / 255.0
    h, w = xn.shape
    rng = np.random.default_rng(cfg.seed)
    y = (rng.random((h, w)) < xn).astype(np.float64)
    e = y - xn
    verify_every = cfg.verify_every if (
        cfg.verify if cfg.verify is not None else (h * w <= 128 * 128)
    ) else 0
    state = _CostState(e, kernel, cfg.wraparound, verify_every, cost_log)

    knb = [kernel.value_at(dr, dc) for dr, dc in OFFSETS8]
    neighbors = _neighbor_table(h, w, cfg.wraparound)
    serp = _serpentine_rank(h, w)
    y_flat = y.reshape(-1)
    cpe_flat = state.cpe.reshape(-1)  # shared memory with state.cpe

    for _ in range(cfg.max_sweeps):
        best_map = _screen_candidates(y, state, knb)
        hot = np.flatnonzero(best_map.reshape(-1) < -ACCEPT_EPS)
        if hot.size == 0:
            break
        hot = hot[np.argsort(serp[hot], kind="stable")]
        for p in hot:
            yp = y_flat[p]
            a = 1.0 - 2.0 * yp
            best = 2.0 * a * cpe_flat[p] + state.k0
            best_q = -1
            for j in range(8):
                q = neighbors[p, j]
                if q < 0 or y_flat[q] == yp:
                    continue
                d = 2.0 * a * (cpe_flat[p] - cpe_flat[q]) + 2.0 * (state.k0 - knb[j])
                if d < best:
                    best = d
                    best_q = q
            if best >= -ACCEPT_EPS:
                continue
            r, c = divmod(int(p), w)
            if best_q < 0:
                y_flat[p] = 1.0 - yp
                state.apply_toggle(r, c, a, best)
            else:
                qr, qc = divmod(int(best_q), w)
                y_flat[p] = 1.0 - yp
                y_flat[best_q] = yp
                state.apply_swap(r, c, qr, qc, a, best)
    return BinaryImage((y * 255.0).astype(np.uint8))


# ---------------------------------------------------------------------------
# Stacked mask family
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class MaskStack:
    """Per-pixel first-black level f; mask g is black wherever f <= g.

    The stacking constraint (black stays black as g grows) is a property
    of this representation: a single level per pixel cannot un-black.
    """

    first_black_level: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.first_black_level)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("first_black_level must be square")
        self.first_black_level = arr.astype(np.uint8)

    @property
    def size(self) -> int:
        return self.first_black_level.shape[0]

    def mask(self, g: int) -> BinaryImage:
        """Mask at level g: 0 (ink) where the site has turned black."""
        if not 0 <= g <= 255:
            raise ValueError("level must lie in [0, 255]")
        return BinaryImage(
            np.where(self.first_black_level <= g, 0, 255).astype(np.uint8)
        )

    def black_count(self, g: int) -> int:
        return int(np.count_nonzero(self.first_black_level <= g))

    def save_pgm(self, path) -> None:
        from .imagecore import save_pgm

        save_pgm(GrayImage(self.first_black_level), path)

    @classmethod
    def from_pgm(cls, path) -> "MaskStack":
        from .imagecore import load_pgm

        return cls(load_pgm(path).pixels)


def build_mask_stack(size: int, cfg: DbsConfig, max_level: int = 255) -> MaskStack:
    """Design the stacked mask family level by level.

    Level g adds its quota of black dots on white sites: sequential
    placement at the minima of the filtered dot-density field, then
    count-preserving swap refinement restricted to this level's new dots
    against white sites, until no swap lowers the cost.  Wrap-around
    correlation throughout.  ``max_level`` < 255 builds a truncated stack
    for diagnostics (unplaced sites read 255).
    """
    if size < 64:
        raise ValueError("mask stack size must be >= 64")
    counts = _validate_counts(
        cfg.target_counts if cfg.target_counts is not None else default_target_counts(size),
        size,
    )
    n = size * size
    rng = np.random.default_rng(cfg.seed)
    kernels = {1: cfg.kernel(1), 2: cfg.kernel(2)}
    jitter = rng.random(n) * (kernels[1].peak * 1e-9)
    black = np.zeros((size, size))
    white = np.ones(n, dtype=bool)
    f = np.full(n, 255, dtype=np.uint8)
    scratch = np.zeros(n, dtype=bool)

    for g in range(1, max_level + 1):
        mult = 2 if cfg.two_s_extremes and (g <= 3 or g >= 252) else 1
        kernel = kernels[mult]
        state = _CostState(
            black - counts[g] / n, kernel, wraparound=True, verify_every=0
        )
        cpe = state.cpe.reshape(-1)
        new_dots = _place_level(
            state, cpe, black, white, f, jitter, g,
            int(counts[g] - counts[g - 1]), size,
        )
        _refine_level(state, cpe, black, white, f, new_dots, g, size, scratch,
                      cfg.max_sweeps)
        if int(round(black.sum())) != counts[g]:
            raise AssertionError("level quota violated during refinement")
    return MaskStack(f.reshape(size, size))


def _place_level(state, cpe, black, white, f, jitter, g, quota, size):
    """Sequential largest-void placement of this level's new dots: each dot
    goes to the white site minimizing the filtered dot density (seeded
    jitter breaks exact ties)."""
    black_flat = black.reshape(-1)
    new_dots = []
    for _ in range(quota):
        cand = np.where(white, cpe + jitter, np.inf)
        q = int(np.argmin(cand))
        white[q] = False
        black_flat[q] = 1.0
        state.e.reshape(-1)[q] += 1.0
        r, c = divmod(q, size)
        state._add_kernel(r, c, 1.0)
        f[q] = g
        new_dots.append(q)
    return new_dots


def _refine_level(state, cpe, black, white, f, new_dots, g, size, scratch,
                  max_sweeps):
    """Swap-only refinement: move this level's dots to whichever white site
    lowers the cost most, sweeping until no improving swap remains.

    For each dot the exact best target is the cheaper of (a) the best
    white site inside the kernel window (where the pair term matters) and
    (b) the white site with the smallest filtered error anywhere else; a
    lower bound on (b) lets most dots skip the global scan once the level
    has settled."""
    kernel = state.kernel
    rad = state.radius
    offs = np.arange(-rad, rad + 1)
    ksamples = kernel.samples.reshape(-1)
    k0 = state.k0
    black_flat = black.reshape(-1)
    e_flat = state.e.reshape(-1)

    for _ in range(max_sweeps):
        moved = 0
        for i in range(len(new_dots)):
            p = new_dots[i]
            pr, pc = divmod(p, size)
            win = (((pr + offs) % size)[:, None] * size + ((pc + offs) % size)[None, :]).reshape(-1)
            const = -2.0 * cpe[p] + 2.0 * k0
            d_win = const + 2.0 * cpe[win] - 2.0 * ksamples
            d_win[~white[win]] = np.inf
            j_best = int(np.argmin(d_win))
            best = float(d_win[j_best])
            best_q = int(win[j_best]) if np.isfinite(best) else -1

            cand = np.where(white, cpe, np.inf)
            gmin = float(cand.min())
            if const + 2.0 * gmin < -ACCEPT_EPS:
                n_white = int(white.sum())
                kcount = min(win.size + 1, n_white)
                if kcount > 0:
                    top = np.argpartition(cand, kcount - 1)[:kcount]
                    scratch[win] = True
                    outside = top[~scratch[top]]
                    scratch[win] = False
                    if outside.size:
                        d_out = const + 2.0 * cpe[outside]
                        j = int(np.argmin(d_out))
                        if d_out[j] < best:
                            best = float(d_out[j])
                            best_q = int(outside[j])
            if best < -ACCEPT_EPS and best_q >= 0:
                q = best_q
                white[p] = True
                white[q] = False
                black_flat[p] = 0.0
                black_flat[q] = 1.0
                e_flat[p] -= 1.0
                e_flat[q] += 1.0
                qr, qc = divmod(q, size)
                state._add_kernel(pr, pc, -1.0)
                state._add_kernel(qr, qc, 1.0)
                state.cost += best
                f[p] = 255
                f[q] = g
                new_dots[i] = q
                moved += 1
        if moved == 0:
            break


def groundtruth_pattern(
    g: int, size: int, cfg: DbsConfig, cache_dir: str | None = None
) -> BinaryImage:
    """Blue-noise reference pattern for tone g (wrap-around search).

    Follows the mask-level convention: g counts ink, so the searched input
    patch is the gray level 255 - g and the result carries an ink fraction
    of about g/255 (level 0 is all paper, level 255 all ink).  The power
    spectrum is unchanged by this polarity choice since estimation removes
    the window mean.  Cached on disk as ``gt/<size>/<seed>/<g>.pbm``.
    """
    if not 0 <= g <= 255:
        raise ValueError("tone must lie in [0, 255]")
    path = None
    if cache_dir is not None:
        path = os.path.join(cache_dir, "gt", str(size), str(cfg.seed), f"{g}.pbm")
        if os.path.exists(path):
            return load_pbm(path)
    pattern = dmdbs_halftone(
        constant_patch(255 - g, size, size), dataclasses.replace(cfg, wraparound=True)
    )
    if path is not None:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        save_pbm(pattern, path)
    return pattern
