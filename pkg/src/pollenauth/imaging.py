"""Image I/O, grayscale conversion and sRGB -> CIE L*u*v* conversion.

Rasters are thin immutable wrappers around numpy arrays. Colors are
converted with sRGB gamma decoding, the sRGB/D65 primaries matrix and the
CIE 1976 u'v' chromaticity formulation.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageError(ValueError):
    """Raised when an image cannot be read or has an unsupported layout."""


class Luv(NamedTuple):
    L: float
    u: float
    v: float


@dataclass(frozen=True)
class RGBRaster:
    """Row-major 8-bit RGB image, ``pixels`` has shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ImageError(f"expected (height, width, 3) pixels, got {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ImageError("zero-dimension image")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ImageError("pixel values must lie in 0..255")
            px = px.astype(np.uint8)
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class GrayRaster:
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 2 or 0 in vals.shape:
            raise ImageError(f"expected non-empty 2-D gray values, got {vals.shape}")
        vals = vals.astype(np.uint8, copy=True)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


# --------------------------------------------------------------------------
# I/O

_SUPPORTED_FORMATS = {"PNG", "PPM", "BMP"}


def load_image(path) -> RGBRaster:
    """Read a PNG, PPM (P3/P6, maxval 255) or 24-bit BMP into an RGBRaster.

    Any alpha channel is dropped. Grayscale and palette images are expanded
    to RGB; 16-bit images are rejected.
    """
    if not os.path.exists(path):
        raise ImageError(f"unreadable file: {path} does not exist")
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in _SUPPORTED_FORMATS:
                raise ImageError(f"unsupported image format {fmt!r} in {path}")
            if im.mode not in ("RGB", "RGBA", "L", "LA", "P", "1"):
                raise ImageError(f"unsupported bit depth (mode {im.mode}) in {path}")
            im.load()
            rgb = im.convert("RGB")
            pixels = np.array(rgb, dtype=np.uint8)
    except ImageError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageError(f"unreadable file: {path}: {exc}") from exc
    return RGBRaster(pixels)


def write_ppm(path, pixels) -> None:
    """Write an (h, w, 3) uint8 array, or an (h, w) bool/gray array, as binary PPM."""
    arr = np.asarray(pixels)
    if arr.dtype == bool:
        arr = np.where(arr, 255, 0).astype(np.uint8)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


# --------------------------------------------------------------------------
# Grayscale

def to_grayscale(img: RGBRaster) -> GrayRaster:
    """BT.601 luma, rounded half-up and clamped to 0..255."""
    px = img.pixels.astype(np.float64)
    luma = 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]
    return GrayRaster(np.clip(np.floor(luma + 0.5), 0, 255))


# --------------------------------------------------------------------------
# Color conversion

SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)

# White of the primaries matrix on the 0-100 scale: (95.047, 100.000, 108.883)
# to 5 significant digits; taking it from the matrix puts sRGB white at
# exactly L=100, u=v=0.
WHITE_XYZ = SRGB_TO_XYZ.sum(axis=1) * 100.0
_WHITE_DENOM = WHITE_XYZ[0] + 15.0 * WHITE_XYZ[1] + 3.0 * WHITE_XYZ[2]
WHITE_U = 4.0 * WHITE_XYZ[0] / _WHITE_DENOM
WHITE_V = 9.0 * WHITE_XYZ[1] / _WHITE_DENOM

_EPSILON = (6.0 / 29.0) ** 3
_KAPPA = (29.0 / 3.0) ** 3
_BLACK_DENOM = 1e-9


def _srgb_decode(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _srgb_encode(c):
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055)


def _apply_matrix(m, vecs):
    # explicit per-element sums: BLAS rounding depends on batch shape
    a, b, c = vecs[..., 0], vecs[..., 1], vecs[..., 2]
    return tuple(m[i, 0] * a + m[i, 1] * b + m[i, 2] * c for i in range(3))


def rgb_to_luv_array(rgb) -> np.ndarray:
    """Vectorised sRGB (0..255, shape (..., 3)) -> L*u*v* (shape (..., 3))."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise ValueError(f"last axis must have length 3, got {rgb.shape}")
    linear = _srgb_decode(rgb / 255.0)
    X, Y, Z = _apply_matrix(SRGB_TO_XYZ * 100.0, linear)

    yr = Y / WHITE_XYZ[1]
    L = np.where(yr > _EPSILON, 116.0 * np.cbrt(yr) - 16.0, _KAPPA * yr)

    denom = X + 15.0 * Y + 3.0 * Z
    black = denom < _BLACK_DENOM
    safe = np.where(black, 1.0, denom)
    up = 4.0 * X / safe
    vp = 9.0 * Y / safe
    u = np.where(black, 0.0, 13.0 * L * (up - WHITE_U))
    v = np.where(black, 0.0, 13.0 * L * (vp - WHITE_V))
    return np.stack([L, u, v], axis=-1)


def rgb_to_luv(r, g, b) -> Luv:
    for c in (r, g, b):
        if not 0 <= c <= 255:
            raise ValueError(f"channel value {c} outside 0..255")
    L, u, v = rgb_to_luv_array([r, g, b])
    return Luv(float(L), float(u), float(v))


def luv_to_rgb_array(luv) -> np.ndarray:
    """Inverse conversion, clipped to the sRGB gamut and rounded to uint8."""
    luv = np.asarray(luv, dtype=np.float64)
    L, u, v = luv[..., 0], luv[..., 1], luv[..., 2]
    Y = np.where(L > 8.0, ((L + 16.0) / 116.0) ** 3, L / _KAPPA) * WHITE_XYZ[1]
    dark = L <= 1e-12
    safeL = np.where(dark, 1.0, L)
    up = u / (13.0 * safeL) + WHITE_U
    vp = v / (13.0 * safeL) + WHITE_V
    vp = np.where(np.abs(vp) < 1e-12, 1e-12, vp)
    X = Y * 9.0 * up / (4.0 * vp)
    Z = Y * (12.0 - 3.0 * up - 20.0 * vp) / (4.0 * vp)
    xyz = np.stack([X, Y, Z], axis=-1)
    xyz = np.where(dark[..., None], 0.0, xyz)
    linear = np.stack(_apply_matrix(XYZ_TO_SRGB, xyz / 100.0), axis=-1)
    return np.floor(_srgb_encode(linear) * 255.0 + 0.5).astype(np.uint8)


def luv_distance(a, b) -> float:
    """Euclidean distance between two L*u*v* triples."""
    dL = a[0] - b[0]
    du = a[1] - b[1]
    dv = a[2] - b[2]
    return math.sqrt(dL * dL + du * du + dv * dv)
