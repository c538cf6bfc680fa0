"""Human-visual-system models and perceptual error metrics.

Two kernel families live here:

* the two-component Gaussian autocorrelation of the Nasanen contrast
  sensitivity model, used as the quadratic-form weighting of the binary
  search engine, and
* plain Gaussian lowpass kernels used by HMSE/HPSNR scoring.

The autocorrelation is sampled on a pixel grid through a viewing-scale
factor S (samples per degree basis).  ``DEFAULT_SCALE_S`` is chosen so the
truncated support radius of both stock parameter sets is 8 pixels at unit
scale (and about twice that when the scale multiplier is 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imagecore import L

DEFAULT_SCALE_S = 2080.0
DEFAULT_TRUNCATION = 1e-4

CM_PER_INCH = 0.393700787


@dataclass(frozen=True)
class NasanenParams:
    """Gains (k1, k2) and widths in degrees (sigma1, sigma2) of the
    two-Gaussian autocorrelation, plus the sampling scale basis S."""

    k1: float
    k2: float
    sigma1: float
    sigma2: float
    scale_s: float = DEFAULT_SCALE_S

    def __post_init__(self):
        if min(self.k1, self.k2, self.sigma1, self.sigma2, self.scale_s) <= 0:
            raise ValueError("all Nasanen parameters must be positive")

    def autocorrelation(self, u: float, v: float) -> float:
        """Continuous two-Gaussian autocorrelation at angular offset (u, v) degrees."""
        r2 = u * u + v * v
        return self.k1 * math.exp(-r2 / (2.0 * self.sigma1**2)) + self.k2 * math.exp(
            -r2 / (2.0 * self.sigma2**2)
        )


#: Stock parameter sets of the dual-metric search.
NASANEN_MODEL_1 = NasanenParams(43.2, 38.7, 0.0219, 0.0598)
NASANEN_MODEL_2 = NasanenParams(19.1, 42.7, 0.0330, 0.0569)


@dataclass(eq=False)
class HVSKernel:
    """Discrete kernel on a (2*radius+1)^2 grid centered at the origin.

    ``kind`` is "autocorrelation" (quadratic-form weights) or "lowpass"
    (unit-sum filter).
    """

    radius: int
    samples: np.ndarray
    kind: str

    def __post_init__(self):
        side = 2 * self.radius + 1
        if self.samples.shape != (side, side):
            raise ValueError("samples grid does not match radius")
        if self.kind not in ("autocorrelation", "lowpass"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")

    @property
    def peak(self) -> float:
        return float(self.samples[self.radius, self.radius])

    def value_at(self, dm: int, dn: int) -> float:
        """Sample at integer offset (dm, dn); zero outside the support."""
        if abs(dm) > self.radius or abs(dn) > self.radius:
            return 0.0
        return float(self.samples[self.radius + dm, self.radius + dn])

    def to_csv(self, path) -> None:
        """Full-precision CSV dump, one row per kernel row."""
        np.savetxt(path, self.samples, fmt="%.17g", delimiter=",")


def nasanen_autocorr(
    params: NasanenParams,
    scale_multiplier: int = 1,
    truncation: float = DEFAULT_TRUNCATION,
) -> HVSKernel:
    """Sample the two-Gaussian autocorrelation on the pixel grid.

    The sample at offset (m, n) is ``(180 / (pi S'))^2 *
    autocorrelation(180 m / (pi S'), 180 n / (pi S'))`` with
    ``S' = scale_multiplier * scale_s``.  The radius is the smallest r such
    that every sample outside it falls below ``truncation`` times the peak.
    """
    if not 0.0 < truncation < 1.0:
        raise ValueError("truncation must lie in (0, 1)")
    if scale_multiplier not in (1, 2):
        raise ValueError("scale_multiplier must be 1 or 2")
    s_eff = scale_multiplier * params.scale_s
    ang = 180.0 / (math.pi * s_eff)  # degrees per pixel step
    peak = params.autocorrelation(0.0, 0.0)
    radius = 0
    while params.autocorrelation(ang * (radius + 1), 0.0) >= truncation * peak:
        radius += 1
    offs = np.arange(-radius, radius + 1, dtype=np.float64)
    u = ang * offs
    r2 = u[:, None] ** 2 + u[None, :] ** 2
    pref = ang * ang
    samples = pref * (
        params.k1 * np.exp(-r2 / (2.0 * params.sigma1**2))
        + params.k2 * np.exp(-r2 / (2.0 * params.sigma2**2))
    )
    return HVSKernel(radius=radius, samples=samples, kind="autocorrelation")


def gaussian_lowpass(size: int) -> HVSKernel:
    """Isotropic unit-sum Gaussian on a size x size grid (size odd, >= 3).

    sigma = size / 6, so the grid spans +-3 sigma.
    """
    if size % 2 == 0:
        raise ValueError("kernel size must be odd")
    if size < 3:
        raise ValueError("kernel size must be >= 3")
    radius = size // 2
    sigma = size / 6.0
    offs = np.arange(-radius, radius + 1, dtype=np.float64)
    r2 = offs[:, None] ** 2 + offs[None, :] ** 2
    samples = np.exp(-r2 / (2.0 * sigma * sigma))
    samples /= samples.sum()
    return HVSKernel(radius=radius, samples=samples, kind="lowpass")


def kernel_size_for(viewing_distance_cm: float, resolution_dpi: float) -> int:
    """Odd pixel count spanned by one visual degree at the given geometry.

    Computes ``N_v = 2 D tan(0.5 deg) * R * cm_per_inch`` and returns the
    largest odd integer not exceeding round(N_v).
    """
    if viewing_distance_cm <= 0 or resolution_dpi <= 0:
        raise ValueError("distance and resolution must be positive")
    viewed_width_cm = 2.0 * viewing_distance_cm * math.tan(math.radians(0.5))
    n_v = viewed_width_cm * resolution_dpi * CM_PER_INCH
    n = round(n_v)
    if n % 2 == 0:
        n -= 1
    return max(n, 1)


def _check_pair(x, y):
    if x.pixels.shape != y.pixels.shape:
        raise ValueError(
            f"image dimensions differ: {x.pixels.shape} vs {y.pixels.shape}"
        )


def hmse(x, y, kernel: HVSKernel) -> float:
    """Mean squared perceptually-filtered difference between x and y.

    Each output sample is the kernel-weighted sum of (x - y) around the
    pixel, squared; the result is the mean over all pixels.  Out-of-bounds
    samples use mirror (symmetric) extension so borders are not penalized.
    """
    if kernel.kind != "lowpass":
        raise ValueError("hmse expects a lowpass kernel")
    _check_pair(x, y)
    diff = x.pixels.astype(np.float64) - y.pixels.astype(np.float64)
    filtered = ndimage.correlate(diff, kernel.samples, mode="reflect")
    return float(np.mean(filtered * filtered))


def hpsnr(x, y, kernel: HVSKernel) -> float:
    """10 log10(255^2 / HMSE) in dB; +inf when the filtered error is zero."""
    err = hmse(x, y, kernel)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(L * L / err)
