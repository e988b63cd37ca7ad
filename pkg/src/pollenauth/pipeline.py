"""Image -> color instance extraction as a scikit-learn transformer."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .imaging import RGBRaster, load_image, luv_to_rgb_array, write_ppm
from .meanshift import (
    MeanShiftParams,
    extract_segments_arrays,
    ms_filter_arrays,
    representative_instances,
)
from .segmentation import OtsuThreshold, foreground_arrays, segment_foreground


@dataclass
class Extraction:
    instances: list
    segments: list
    mask: np.ndarray
    otsu: OtsuThreshold
    filtered: Optional[np.ndarray] = None
    coords: Optional[np.ndarray] = None


class LoadColorExtractor(TransformerMixin, BaseEstimator):
    """Segment pollen loads and reduce them to representative colors.

    ``transform`` takes a sequence of images (paths, RGBRaster objects or
    (h, w, 3) uint8 arrays) and returns one list of ColorInstance per image.

    Parameters
    ----------
    hs, hr : float, default=15, 20
        Spatial (pixels) and range (L*u*v*) bandwidths.
    min_segment_area : int, default=20
    min_component_pixels : int, default=50
        Foreground components below this size are discarded before filtering.
    invert_mask : bool, default=False
        Treat the dark side of the Otsu threshold as foreground.
    label : str or None
        Label attached to every produced instance.
    """

    def __init__(self, hs=15.0, hr=20.0, min_segment_area=20, min_component_pixels=50,
                 invert_mask=False, max_iterations=100, convergence_eps=0.01, label=None):
        self.hs = hs
        self.hr = hr
        self.min_segment_area = min_segment_area
        self.min_component_pixels = min_component_pixels
        self.invert_mask = invert_mask
        self.max_iterations = max_iterations
        self.convergence_eps = convergence_eps
        self.label = label

    @property
    def params(self) -> MeanShiftParams:
        return MeanShiftParams(self.hs, self.hr, self.min_segment_area,
                               self.max_iterations, self.convergence_eps)

    def fit(self, X=None, y=None):
        self.params_ = self.params
        return self

    def extract(self, image) -> Extraction:
        img = _as_raster(image)
        params = self.params
        mask, otsu = segment_foreground(img, self.min_component_pixels, self.invert_mask)
        if not mask.any():
            return Extraction([], [], mask, otsu)
        coords, colors = foreground_arrays(img, mask)
        zr = ms_filter_arrays(coords, colors, params)
        segments = extract_segments_arrays(coords, zr, params)
        instances = representative_instances(segments, self.label)
        return Extraction(instances, segments, mask, otsu, zr, coords)

    def transform(self, X):
        return [self.extract(image).instances for image in X]


def _as_raster(image) -> RGBRaster:
    if isinstance(image, RGBRaster):
        return image
    if isinstance(image, (str, os.PathLike)):
        return load_image(image)
    return RGBRaster(np.asarray(image))


def write_debug(ex: Extraction, shape, stem) -> None:
    """Mask PPM, filtered-image PPM and segment CSV next to ``stem``."""
    write_ppm(f"{stem}_mask.ppm", ex.mask)
    img = np.zeros(tuple(shape) + (3,), dtype=np.uint8)
    if ex.filtered is not None:
        rgb = luv_to_rgb_array(ex.filtered)
        img[ex.coords[:, 1], ex.coords[:, 0]] = rgb
    write_ppm(f"{stem}_filtered.ppm", img)
    with open(f"{stem}_segments.csv", "w") as fh:
        fh.write("segment_id,area,L,u,v\n")
        for i, seg in enumerate(ex.segments):
            L, u, v = seg.mean_color
            fh.write(f"{i},{seg.area},{L!r},{u!r},{v!r}\n")
