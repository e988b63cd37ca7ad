"""Foreground extraction: Otsu thresholding and small-component removal."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .imaging import GrayRaster, RGBRaster, rgb_to_luv_array, to_grayscale
from .meanshift import PixelSample

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class OtsuThreshold(NamedTuple):
    level: int
    degenerate: bool


def histogram(img: GrayRaster) -> np.ndarray:
    """256-bin count histogram of a gray raster."""
    return np.bincount(img.values.ravel(), minlength=256).astype(np.int64)


def otsu_threshold(hist) -> OtsuThreshold:
    """Threshold maximising the between-class variance.

    Foreground is ``value > level``. Candidates are the levels 0..254 that
    leave both classes non-empty; ties go to the smallest level. The
    comparison is done in exact integer arithmetic, using

        w0 * w1 * (mu0 - mu1)**2 = (N*S0 - n0*S)**2 / (N**2 * n0 * n1)

    with ``n0``/``S0`` the count and level-sum at or below the candidate.

    If every pixel sits on a single level the histogram cannot be split and
    that level is returned with ``degenerate=True``.
    """
    counts = [int(c) for c in np.asarray(hist).ravel()]
    if len(counts) != 256:
        raise ValueError(f"histogram must have 256 bins, got {len(counts)}")
    if any(c < 0 for c in counts):
        raise ValueError("histogram counts must be non-negative")
    total = sum(counts)
    if total == 0:
        raise ValueError("empty histogram")
    level_sum = sum(i * c for i, c in enumerate(counts))

    best_t = None
    best_num, best_den = 0, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (total * s0 - n0 * level_sum) ** 2
        den = n0 * n1
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den

    if best_t is None:
        occupied = [i for i, c in enumerate(counts) if c]
        return OtsuThreshold(occupied[0], True)
    return OtsuThreshold(best_t, False)


def binarize(img: GrayRaster, t: int) -> np.ndarray:
    return img.values > t


def remove_small_components(mask, min_pixels: int = 50) -> np.ndarray:
    """Clear 8-connected foreground components smaller than ``min_pixels``."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return mask.copy()
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_pixels
    keep[0] = False
    return keep[labels]


def segment_foreground(img: RGBRaster, min_pixels: int = 50, invert: bool = False):
    """Otsu + area opening on ``img``; returns ``(mask, OtsuThreshold)``.

    Loads are assumed brighter than the stage; ``invert`` flips that.
    A degenerate (single-level) frame yields an empty mask.
    """
    gray = to_grayscale(img)
    otsu = otsu_threshold(histogram(gray))
    if otsu.degenerate:
        return np.zeros(gray.values.shape, dtype=bool), otsu
    mask = binarize(gray, otsu.level)
    if invert:
        mask = ~mask
    return remove_small_components(mask, min_pixels), otsu


def foreground_arrays(img: RGBRaster, mask):
    """Coordinates (col, row) and L*u*v* colors of the foreground pixels.

    Pixels are returned in row-major order.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (img.height, img.width):
        raise ValueError(
            f"mask shape {mask.shape} does not match image {(img.height, img.width)}"
        )
    rows, cols = np.nonzero(mask)
    coords = np.column_stack([cols, rows]).astype(np.int64)
    luv = rgb_to_luv_array(img.pixels[rows, cols])
    return coords, luv


def extract_foreground(img: RGBRaster, mask) -> list[PixelSample]:
    coords, luv = foreground_arrays(img, mask)
    return [PixelSample((int(c), int(r)), tuple(map(float, color)))
            for (c, r), color in zip(coords, luv)]
