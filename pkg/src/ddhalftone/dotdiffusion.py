"""Class-order scheduled error diffusion with tone- and order-dependent
weights and thresholds.

Pixels are processed in ascending class order; a pixel adds its incoming
error to its gray level, thresholds against its own gamma, and hands its
quantization error to the in-image 8-neighbors of strictly higher order,
split by the 3x3 diffusion layout (alpha on diagonals, beta on
orthogonals) and normalized at the source so error is conserved.  Pixels
with no eligible neighbor (or alpha = beta = 0) drop their error.

The engine runs in gather/scatter-after-finalize form: a class's pixels
are finalized element-wise (safe to partition across threads) and their
contributions are then scattered in one canonical source-major pass, so
the output is bit-identical for any thread count and matches a naive
sequential scatter simulation exactly.
"""

from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .classtiling import ClassMatrix, ClassTiling, tiled_cm_ct
from .dbs import MaskStack, OFFSETS8
from .imagecore import BinaryImage, GrayImage

#: alpha weights sit on the diagonal neighbors of the 3x3 layout.
DIAGONAL8 = tuple(dr != 0 and dc != 0 for dr, dc in OFFSETS8)

ERROR_RAIL = 1024.0  # sanity bound on any accumulated quantization error


@dataclass(frozen=True)
class DiffusedMatrix:
    """3x3 diffusion weights: alpha at the 4 diagonals, beta at the 4
    orthogonals, zero center."""

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("diffusion weights must be nonnegative")

    def weights(self) -> np.ndarray:
        a, b = self.alpha, self.beta
        return np.array([[a, b, a], [b, 0.0, b], [a, b, a]])


class ParameterTable:
    """Per-(tone, order) diffusion triples for tones 0..127.

    Rows are gray levels g in [0, 127]; columns are unquantized processing
    orders f in [0, 255]; each cell holds (alpha, beta, gamma).  Tones at
    or above 128 reuse row 255 - g.  The CSV format is
    ``g,f,alpha,beta,gamma`` sorted by (g, f), full precision.
    """

    CSV_HEADER = ["g", "f", "alpha", "beta", "gamma"]

    def __init__(self, alpha, beta, gamma):
        self.alpha = np.asarray(alpha, dtype=np.float64)
        self.beta = np.asarray(beta, dtype=np.float64)
        self.gamma = np.asarray(gamma, dtype=np.float64)
        for name, arr in (("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)):
            if arr.shape != (128, 256):
                raise ValueError(f"{name} must have shape (128, 256)")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} must be finite")
        if self.alpha.min() < 0 or self.beta.min() < 0:
            raise ValueError("alpha and beta must be nonnegative")

    def copy(self) -> "ParameterTable":
        return ParameterTable(self.alpha.copy(), self.beta.copy(), self.gamma.copy())

    def triple(self, g: int, f: int) -> tuple[float, float, float]:
        row = g if g <= 127 else 255 - g
        return (
            float(self.alpha[row, f]),
            float(self.beta[row, f]),
            float(self.gamma[row, f]),
        )

    def set_triple(self, g: int, f: int, alpha: float, beta: float, gamma: float) -> None:
        if not 0 <= g <= 127:
            raise ValueError("rows are indexed by g in [0, 127]")
        if alpha < 0 or beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        self.alpha[g, f] = alpha
        self.beta[g, f] = beta
        self.gamma[g, f] = gamma

    def row_digest(self, g: int) -> str:
        """Stable digest of one row's triples (cache keying)."""
        h = hashlib.sha1()
        for arr in (self.alpha, self.beta, self.gamma):
            h.update(arr[g].tobytes())
        return h.hexdigest()

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            for g in range(128):
                for f in range(256):
                    writer.writerow(
                        [
                            g,
                            f,
                            format(self.alpha[g, f], ".17g"),
                            format(self.beta[g, f], ".17g"),
                            format(self.gamma[g, f], ".17g"),
                        ]
                    )

    @classmethod
    def load_csv(cls, path) -> "ParameterTable":
        alpha = np.full((128, 256), np.nan)
        beta = np.full((128, 256), np.nan)
        gamma = np.full((128, 256), np.nan)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != cls.CSV_HEADER:
                raise ValueError(f"bad parameter table header: {header!r}")
            for row in reader:
                if not row:
                    continue
                g, f = int(row[0]), int(row[1])
                if not (0 <= g <= 127 and 0 <= f <= 255):
                    raise ValueError(f"entry ({g}, {f}) out of range")
                alpha[g, f] = float(row[2])
                beta[g, f] = float(row[3])
                gamma[g, f] = float(row[4])
        if np.isnan(alpha).any() or np.isnan(beta).any() or np.isnan(gamma).any():
            missing = int(np.isnan(alpha).sum())
            raise ValueError(f"parameter table incomplete: {missing} missing entries")
        return cls(alpha, beta, gamma)


@dataclass(eq=False)
class ErrorField:
    """Diagnostic view of a finished run: per-pixel quantization error and
    accumulated incoming error."""

    error: np.ndarray
    incoming: np.ndarray


# ---------------------------------------------------------------------------
# Scheduling
# ---------------------------------------------------------------------------

def _tile_map(base: np.ndarray, h: int, w: int) -> np.ndarray:
    t_r, t_c = base.shape
    return base[np.ix_(np.arange(h) % t_r, np.arange(w) % t_c)]


def class_schedule(ct: ClassTiling, dims: tuple[int, int]) -> list[np.ndarray]:
    """Disjoint pixel groups by processing order, covering the image.

    ``dims`` is (height, width); the tiling extends periodically when the
    image is larger.  Group k holds the flat row-major indices of every
    pixel whose order is k.
    """
    h, w = dims
    order_map = _tile_map(ct.orders, h, w).reshape(-1)
    sort_idx = np.argsort(order_map, kind="stable")
    bounds = np.searchsorted(order_map[sort_idx], np.arange(ct.num_orders + 1))
    return [
        sort_idx[bounds[k] : bounds[k + 1]].astype(np.int64)
        for k in range(ct.num_orders)
    ]


class _Schedule:
    """Precomputed per-image scheduling state: class index lists, per-pixel
    counts of higher-order in-image neighbors, and per-class scatter
    targets in canonical source-major order."""

    def __init__(self, ct: ClassTiling, dims: tuple[int, int]):
        h, w = dims
        self.dims = dims
        order = _tile_map(ct.orders, h, w)
        self.order_map = order
        self.classes = class_schedule(ct, dims)

        n_diag = np.zeros((h, w), dtype=np.int16)
        n_orth = np.zeros((h, w), dtype=np.int16)
        higher_maps = []
        target_maps = []
        rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        for (dr, dc), diag in zip(OFFSETS8, DIAGONAL8):
            nr, nc = rr + dr, cc + dc
            inside = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
            nr_c = np.clip(nr, 0, h - 1)
            nc_c = np.clip(nc, 0, w - 1)
            higher = inside & (order[nr_c, nc_c] > order)
            higher_maps.append(higher)
            target_maps.append(nr_c * w + nc_c)
            if diag:
                n_diag += higher
            else:
                n_orth += higher
        self.n_diag = n_diag.reshape(-1).astype(np.float64)
        self.n_orth = n_orth.reshape(-1).astype(np.float64)

        # Per class: compressed (target, source-position, diagonal?) arrays,
        # flattened source-major so scatter order is canonical.
        self.targets = []
        self.src_pos = []
        self.is_diag = []
        flat_higher = np.stack([m.reshape(-1) for m in higher_maps], axis=1)
        flat_target = np.stack([m.reshape(-1) for m in target_maps], axis=1)
        diag_row = np.array(DIAGONAL8, dtype=bool)
        for idx in self.classes:
            if idx.size == 0:
                self.targets.append(np.empty(0, np.int64))
                self.src_pos.append(np.empty(0, np.int64))
                self.is_diag.append(np.empty(0, bool))
                continue
            valid = flat_higher[idx]                  # (n_k, 8)
            tgt = flat_target[idx]
            pos = np.broadcast_to(np.arange(idx.size)[:, None], valid.shape)
            dia = np.broadcast_to(diag_row, valid.shape)
            keep = valid.reshape(-1)
            self.targets.append(tgt.reshape(-1)[keep])
            self.src_pos.append(pos.reshape(-1)[keep])
            self.is_diag.append(dia.reshape(-1)[keep])


_SCHEDULE_CACHE: dict = {}


def _schedule_for(ct: ClassTiling, dims: tuple[int, int]) -> _Schedule:
    key = (hashlib.sha1(np.ascontiguousarray(ct.orders).tobytes()).hexdigest(), dims)
    sched = _SCHEDULE_CACHE.get(key)
    if sched is None:
        sched = _Schedule(ct, dims)
        if len(_SCHEDULE_CACHE) > 8:
            _SCHEDULE_CACHE.clear()
        _SCHEDULE_CACHE[key] = sched
    return sched


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

def _chunked(executor, threads, func, arrays):
    """Apply func to aligned chunks of the given 1-D arrays; results are
    concatenated in chunk order, so the output does not depend on
    scheduling."""
    n = arrays[0].size
    bounds = np.linspace(0, n, threads + 1, dtype=np.int64)
    futures = [
        executor.submit(func, *(a[bounds[i] : bounds[i + 1]] for a in arrays))
        for i in range(threads)
    ]
    parts = [f.result() for f in futures]
    return tuple(np.concatenate([p[j] for p in parts]) for j in range(len(parts[0])))


def _run_engine(x_flat, sched: _Schedule, alpha, beta, gamma, threads: int = 1):
    """Core class-ordered pass.  All parameter arrays are flat per-pixel."""
    n = x_flat.size
    incoming = np.zeros(n)
    out = np.zeros(n, dtype=np.uint8)
    error = np.zeros(n)
    sum_p = alpha * sched.n_diag + beta * sched.n_orth

    def finalize(v, gam, sp):
        white = v >= gam
        e = v - 255.0 * white
        safe = np.where(sp > 0.0, sp, 1.0)
        ratio = np.where(sp > 0.0, e / safe, 0.0)
        return white, e, ratio

    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for k, idx in enumerate(sched.classes):
            if idx.size == 0:
                continue
            v = x_flat[idx] + incoming[idx]
            if executor is not None and idx.size >= 4 * threads:
                white, e, ratio = _chunked(
                    executor, threads, finalize, (v, gamma[idx], sum_p[idx])
                )
            else:
                white, e, ratio = finalize(v, gamma[idx], sum_p[idx])
            if np.abs(e).max(initial=0.0) > ERROR_RAIL:
                raise AssertionError("quantization error exceeded the sanity rail")
            out[idx] = np.where(white, 255, 0)
            error[idx] = e
            tgt = sched.targets[k]
            if tgt.size:
                pos = sched.src_pos[k]
                w_sel = np.where(sched.is_diag[k], alpha[idx][pos], beta[idx][pos])
                incoming += np.bincount(tgt, weights=w_sel * ratio[pos], minlength=n)
    finally:
        if executor is not None:
            executor.shutdown()
    return out, error, incoming


def _parameter_maps(x: GrayImage, prototype: MaskStack, table: ParameterTable,
                    mirror_gamma: bool = False):
    h, w = x.pixels.shape
    f_map = _tile_map(prototype.first_black_level.astype(np.int64), h, w).reshape(-1)
    g = x.pixels.astype(np.int64).reshape(-1)
    row = np.where(g <= 127, g, 255 - g)
    alpha = table.alpha[row, f_map]
    beta = table.beta[row, f_map]
    gamma = table.gamma[row, f_map]
    if mirror_gamma:
        gamma = np.where(g <= 127, gamma, 255.0 - gamma)
    return alpha, beta, gamma, f_map


def halftone(
    x: GrayImage,
    ct: ClassTiling,
    prototype: MaskStack,
    table: ParameterTable,
    threads: int = 1,
    mirror_gamma: bool = False,
) -> BinaryImage:
    """Dot-diffuse x using the tiling's class order and per-(tone, order)
    parameters.  Output is independent of ``threads``."""
    if ct.size != prototype.size:
        raise ValueError("class tiling and prototype sizes differ")
    if threads < 1:
        raise ValueError("threads must be >= 1")
    sched = _schedule_for(ct, x.pixels.shape)
    alpha, beta, gamma, _ = _parameter_maps(x, prototype, table, mirror_gamma)
    out, _, _ = _run_engine(
        x.pixels.astype(np.float64).reshape(-1), sched, alpha, beta, gamma, threads
    )
    return BinaryImage(out.reshape(x.pixels.shape))


def halftone_with_trace(
    x: GrayImage,
    ct: ClassTiling,
    prototype: MaskStack,
    table: ParameterTable,
    mirror_gamma: bool = False,
) -> tuple[BinaryImage, ErrorField]:
    """As :func:`halftone`, also returning the error diagnostics."""
    if ct.size != prototype.size:
        raise ValueError("class tiling and prototype sizes differ")
    sched = _schedule_for(ct, x.pixels.shape)
    alpha, beta, gamma, _ = _parameter_maps(x, prototype, table, mirror_gamma)
    out, error, incoming = _run_engine(
        x.pixels.astype(np.float64).reshape(-1), sched, alpha, beta, gamma, 1
    )
    shape = x.pixels.shape
    return BinaryImage(out.reshape(shape)), ErrorField(
        error.reshape(shape), incoming.reshape(shape)
    )


def halftone_fixed(
    x: GrayImage,
    cm: ClassMatrix,
    dm: DiffusedMatrix,
    gamma: float = 128.0,
    threads: int = 1,
) -> BinaryImage:
    """Classic baseline: one CM tiled periodically, constant weights and
    threshold.  Exists to reproduce the periodic-artifact behavior."""
    t = math.lcm(cm.rows, cm.cols)
    ct = tiled_cm_ct(cm, t)
    sched = _schedule_for(ct, x.pixels.shape)
    n = x.pixels.size
    alpha = np.full(n, dm.alpha)
    beta = np.full(n, dm.beta)
    gamma_map = np.full(n, float(gamma))
    out, _, _ = _run_engine(
        x.pixels.astype(np.float64).reshape(-1), sched, alpha, beta, gamma_map, threads
    )
    return BinaryImage(out.reshape(x.pixels.shape))


def normalization_map(
    x: GrayImage,
    ct: ClassTiling,
    prototype: MaskStack,
    table: ParameterTable,
    mirror_gamma: bool = False,
) -> np.ndarray:
    """Per-pixel source-side weight sum: alpha * (higher-order diagonal
    neighbors) + beta * (higher-order orthogonal neighbors), in-image only.
    Zero means the pixel drops its error."""
    sched = _schedule_for(ct, x.pixels.shape)
    alpha, beta, _, _ = _parameter_maps(x, prototype, table, mirror_gamma)
    return (alpha * sched.n_diag + beta * sched.n_orth).reshape(x.pixels.shape)
