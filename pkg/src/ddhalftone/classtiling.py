"""Class tilings: processing-order maps for parallel dot diffusion.

A class matrix (CM) is a small permutation of processing orders; tiling
one periodically over the image is the classic construction and the
source of periodic halftone artifacts.  The improved construction
quantizes the per-pixel first-black level of a stacked mask family into
M*N order groups, which spreads each order homogeneously instead of
pinning it to one site per block.

Also here: the ideal blue-noise dot spacing as a function of tone, and a
validation report that checks order-population balance and probes each
order's spatial indicator for spectral impulses.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .dbs import MaskStack
from .imagecore import BinaryImage, GrayImage, load_pgm, save_pgm
from .spectrum import detect_impulses, randomized_apsd


def ideal_wavelength(g_bar: float) -> float:
    """Ideal distance between minority dots at normalized tone g_bar.

    1/sqrt(g) below quarter tone, 2 across the midtone band [1/4, 3/4),
    1/sqrt(1-g) above; the endpoints are singular (no dots at all).
    """
    if not 0.0 <= g_bar <= 1.0:
        raise ValueError("normalized tone must lie in [0, 1]")
    if g_bar in (0.0, 1.0):
        raise ValueError("tone endpoints have no dots: spacing is infinite")
    if g_bar < 0.25:
        return 1.0 / math.sqrt(g_bar)
    if g_bar < 0.75:
        return 2.0
    return 1.0 / math.sqrt(1.0 - g_bar)


@dataclass(eq=False)
class ClassMatrix:
    """M x N block of processing orders; must be a permutation of 0..M*N-1."""

    orders: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.orders, dtype=np.int64)
        if arr.ndim != 2:
            raise ValueError("class matrix must be 2-D")
        if not np.array_equal(np.sort(arr.reshape(-1)), np.arange(arr.size)):
            raise ValueError("class matrix orders must be a permutation of 0..M*N-1")
        self.orders = arr

    @property
    def rows(self) -> int:
        return self.orders.shape[0]

    @property
    def cols(self) -> int:
        return self.orders.shape[1]


def bayer_matrix(size: int = 8) -> ClassMatrix:
    """Canonical dispersed-dot index matrix of the given power-of-two size."""
    if size < 1 or size & (size - 1):
        raise ValueError("size must be a power of two")
    m = np.zeros((1, 1), dtype=np.int64)
    while m.shape[0] < size:
        m = np.block([[4 * m, 4 * m + 2], [4 * m + 3, 4 * m + 1]])
    return ClassMatrix(m)


@dataclass(eq=False)
class ClassTiling:
    """Square order map of size T; ``orders`` values lie in [0, M*N-1]."""

    orders: np.ndarray
    cm_rows: int
    cm_cols: int

    def __post_init__(self):
        arr = np.asarray(self.orders, dtype=np.int16)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("class tiling must be square")
        limit = self.cm_rows * self.cm_cols
        if arr.min() < 0 or arr.max() >= limit:
            raise ValueError(f"order values must lie in [0, {limit - 1}]")
        self.orders = arr

    @property
    def size(self) -> int:
        return self.orders.shape[0]

    @property
    def num_orders(self) -> int:
        return self.cm_rows * self.cm_cols

    def save(self, path) -> None:
        """PGM of order values plus a `.meta` sidecar holding the CM size."""
        if self.num_orders > 256:
            raise ValueError("only tilings with <= 256 orders serialize to PGM")
        save_pgm(GrayImage(self.orders.astype(np.uint8)), path)
        with open(str(path) + ".meta", "w", encoding="ascii") as fh:
            fh.write(f"CM {self.cm_rows} {self.cm_cols}\n")

    @classmethod
    def load(cls, path) -> "ClassTiling":
        img = load_pgm(path)
        meta = str(path) + ".meta"
        if not os.path.exists(meta):
            raise FileNotFoundError(f"missing sidecar {meta}")
        with open(meta, encoding="ascii") as fh:
            fields = fh.readline().split()
        if len(fields) != 3 or fields[0] != "CM":
            raise ValueError(f"malformed sidecar line in {meta}")
        return cls(img.pixels.astype(np.int16), int(fields[1]), int(fields[2]))


def quantize_prototype(prototype: MaskStack, m: int, n: int) -> ClassTiling:
    """Quantize first-black levels into M*N processing orders.

    Order = floor(f * (M*N) / 256); monotone in f, so earlier-black sites
    get earlier processing orders.
    """
    if m < 1 or n < 1:
        raise ValueError("CM dimensions must be positive")
    if m * n > 256:
        raise ValueError(f"CM size {m}x{n} exceeds the 256 prototype levels")
    f = prototype.first_black_level.astype(np.int64)
    orders = (f * (m * n)) // 256
    return ClassTiling(orders.astype(np.int16), m, n)


def tiled_cm_ct(cm: ClassMatrix, t: int) -> ClassTiling:
    """Periodic baseline: the CM repeated over a T x T tiling."""
    if t % cm.rows or t % cm.cols:
        raise ValueError(f"tiling size {t} not divisible by CM {cm.rows}x{cm.cols}")
    orders = np.tile(cm.orders, (t // cm.rows, t // cm.cols))
    return ClassTiling(orders.astype(np.int16), cm.rows, cm.cols)


@dataclass(eq=False)
class CtValidationReport:
    """Order-population counts and per-order spectral impulse flags."""

    counts: np.ndarray
    min_count: int
    max_count: int
    impulses: dict
    threshold_factor: float

    @property
    def flagged_orders(self) -> list[int]:
        return sorted(k for k, v in self.impulses.items() if v)


def validate_ct(
    ct: ClassTiling,
    window: int = 128,
    segments: int = 50,
    seed: int = 0,
    threshold_factor: float = 20.0,
) -> CtValidationReport:
    """Check order balance and probe each order's indicator spectrum.

    For every order k, the binary indicator of {c = k} goes through the
    randomized spectrum estimator; bins exceeding threshold_factor times
    their ring median are reported as impulses (a tiled-CM baseline shows
    them on the reciprocal lattice of its block period, a homogeneous
    tiling shows none).
    """
    window = min(window, ct.size)
    counts = np.bincount(ct.orders.reshape(-1), minlength=ct.num_orders)
    impulses = {}
    for k in range(ct.num_orders):
        indicator = BinaryImage(
            np.where(ct.orders == k, 0, 255).astype(np.uint8)
        )
        apsd = randomized_apsd(indicator, window, segments, seed=seed)
        impulses[k] = detect_impulses(apsd, threshold_factor)
    return CtValidationReport(
        counts=counts,
        min_count=int(counts.min()),
        max_count=int(counts.max()),
        impulses=impulses,
        threshold_factor=threshold_factor,
    )
