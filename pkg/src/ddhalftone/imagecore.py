"""Image containers, Netpbm file I/O, and synthetic test-image generators.

Grayscale images hold 8-bit levels in [0, 255]; halftones hold exactly
{0, 255} where 0 is a black ink dot.  File formats are PGM (P2/P5, maxval
255) and PBM (P4).  PBM polarity follows printing convention: a halftone
value of 0 (ink) is written as bit 1 (PBM black), 255 as bit 0.  PBM rows
are padded to byte boundaries per the Netpbm specification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

L = 255  # dynamic range of 8-bit grayscale


class PnmError(Exception):
    """Base class for Netpbm parse/write failures."""


class PnmHeaderError(PnmError):
    """Malformed magic number or header fields."""


class PnmMaxvalError(PnmError):
    """Unsupported maxval (only 255 is accepted)."""


class PnmTruncatedError(PnmError):
    """Pixel payload shorter than the header promises."""


def _as_pixel_array(data, allowed=None) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D pixel array, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("image must not be empty")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.rint(arr)):
            raise ValueError("pixel values must be integral")
    if arr.min() < 0 or arr.max() > L:
        raise ValueError("pixel values must lie in [0, 255]")
    arr = arr.astype(np.uint8)
    if allowed is not None and not np.isin(arr, allowed).all():
        raise ValueError(f"pixel values must be in {allowed}")
    return arr


@dataclass(eq=False)
class GrayImage:
    """Continuous-tone image; ``pixels`` is (height, width) uint8 in [0, 255]."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = _as_pixel_array(self.pixels)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the pixel levels."""
        return self.pixels.reshape(-1)


@dataclass(eq=False)
class BinaryImage:
    """Halftone image; every pixel is exactly 0 (ink) or 255 (paper)."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = _as_pixel_array(self.pixels, allowed=np.array([0, 255], np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def to_gray(self) -> GrayImage:
        """Promote to a GrayImage (values stay 0/255)."""
        return GrayImage(self.pixels.copy())

    def ink_fraction(self) -> float:
        """Fraction of black (value 0) pixels."""
        return float(np.mean(self.pixels == 0))


# ---------------------------------------------------------------------------
# Netpbm parsing
# ---------------------------------------------------------------------------

def _tokenize_header(raw: bytes, count: int):
    """Pull `count` whitespace-separated header tokens, honoring '#' comments.

    Returns (tokens, offset_past_single_whitespace) suitable for locating a
    binary payload.
    """
    tokens = []
    i = 0
    n = len(raw)
    while len(tokens) < count:
        while i < n and raw[i : i + 1].isspace():
            i += 1
        if i < n and raw[i : i + 1] == b"#":
            while i < n and raw[i] != 0x0A:
                i += 1
            continue
        if i >= n:
            raise PnmHeaderError("unexpected end of header")
        start = i
        while i < n and not raw[i : i + 1].isspace() and raw[i : i + 1] != b"#":
            i += 1
        tokens.append(raw[start:i])
    # exactly one whitespace byte separates the header from a binary payload
    if i < n and raw[i : i + 1].isspace():
        i += 1
    return tokens, i


def _parse_dims(tokens):
    try:
        values = [int(t) for t in tokens]
    except ValueError as exc:
        raise PnmHeaderError(f"non-integer header field: {exc}") from None
    if any(v <= 0 for v in values[:2]):
        raise PnmHeaderError("image dimensions must be positive")
    return values


def load_pgm(path) -> GrayImage:
    """Read a PGM file (P2 ASCII or P5 raw, maxval 255), bit-exactly."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] not in (b"P2", b"P5"):
        raise PnmHeaderError(f"not a PGM file (magic {raw[:2]!r})")
    magic = raw[:2]
    tokens, offset = _tokenize_header(raw[2:], 3)
    width, height, maxval = _parse_dims(tokens)
    if maxval != 255:
        raise PnmMaxvalError(f"unsupported maxval {maxval} (only 255)")
    count = width * height
    if magic == b"P5":
        payload = raw[2 + offset : 2 + offset + count]
        if len(payload) < count:
            raise PnmTruncatedError(
                f"payload holds {len(payload)} bytes, header promises {count}"
            )
        arr = np.frombuffer(payload, dtype=np.uint8, count=count)
    else:
        fields = raw[2 + offset - 1 :].split()
        if len(fields) < count:
            raise PnmTruncatedError(
                f"payload holds {len(fields)} samples, header promises {count}"
            )
        try:
            arr = np.array([int(v) for v in fields[:count]], dtype=np.int64)
        except ValueError as exc:
            raise PnmHeaderError(f"non-integer sample: {exc}") from None
        if arr.min() < 0 or arr.max() > maxval:
            raise PnmError("sample value outside [0, maxval]")
        arr = arr.astype(np.uint8)
    return GrayImage(arr.reshape(height, width))


def save_pgm(img, path) -> None:
    """Write a GrayImage (or any 0/255 image) as raw PGM P5."""
    pixels = img.pixels
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pixels.astype(np.uint8).tobytes())


def load_pbm(path) -> BinaryImage:
    """Read a PBM P4 file; bit 1 (PBM black) maps to halftone value 0."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] != b"P4":
        raise PnmHeaderError(f"not a raw PBM file (magic {raw[:2]!r})")
    tokens, offset = _tokenize_header(raw[2:], 2)
    width, height = _parse_dims(tokens)
    row_bytes = (width + 7) // 8
    count = row_bytes * height
    payload = raw[2 + offset : 2 + offset + count]
    if len(payload) < count:
        raise PnmTruncatedError(
            f"payload holds {len(payload)} bytes, header promises {count}"
        )
    bits = np.unpackbits(
        np.frombuffer(payload, dtype=np.uint8).reshape(height, row_bytes), axis=1
    )[:, :width]
    return BinaryImage(np.where(bits == 1, 0, 255).astype(np.uint8))


def save_pbm(img: BinaryImage, path) -> None:
    """Write a BinaryImage as PBM P4 (ink dot = bit 1, rows byte-padded)."""
    bits = (img.pixels == 0).astype(np.uint8)
    packed = np.packbits(bits, axis=1)
    header = f"P4\n{img.width} {img.height}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(packed.tobytes())


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------

def constant_patch(g: int, width: int, height: int) -> GrayImage:
    """Uniform patch at grayscale level g."""
    if not 0 <= g <= L:
        raise ValueError(f"grayscale level {g} outside [0, 255]")
    if width <= 0 or height <= 0:
        raise ValueError("dimensions must be positive")
    return GrayImage(np.full((height, width), g, dtype=np.uint8))


def ramp(width: int, height: int, direction: str = "horizontal") -> GrayImage:
    """Linear tone ramp covering all 256 levels along the given direction.

    Horizontal ramps assign column j the level ``floor(j * 256 / width)``
    clamped to 255; all rows are identical.  Vertical ramps transpose that.
    """
    if width <= 0 or height <= 0:
        raise ValueError("dimensions must be positive")
    if direction == "horizontal":
        if width < 256:
            raise ValueError("horizontal ramp needs width >= 256 to cover all tones")
        col = np.minimum(np.arange(width) * 256 // width, 255).astype(np.uint8)
        return GrayImage(np.tile(col, (height, 1)))
    if direction == "vertical":
        if height < 256:
            raise ValueError("vertical ramp needs height >= 256 to cover all tones")
        row = np.minimum(np.arange(height) * 256 // height, 255).astype(np.uint8)
        return GrayImage(np.tile(row[:, None], (1, width)))
    raise ValueError(f"unknown ramp direction {direction!r}")
