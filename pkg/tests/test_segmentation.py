import numpy as np
import pytest

from oracles import area_open_oracle, flood_fill_components, otsu_bruteforce
from pollenauth.imaging import GrayRaster, RGBRaster, rgb_to_luv
from pollenauth.segmentation import (
    binarize,
    extract_foreground,
    histogram,
    otsu_threshold,
    remove_small_components,
    segment_foreground,
)


def gray(values):
    return GrayRaster(np.asarray(values, dtype=np.uint8))


# -- histogram ---------------------------------------------------------------

def test_histogram_all_zero():
    h = histogram(gray(np.zeros((2, 2))))
    assert h[0] == 4 and h[1:].sum() == 0


def test_histogram_three_levels():
    h = histogram(gray([[0, 128, 255]]))
    assert h[0] == h[128] == h[255] == 1
    assert h.sum() == 3


def test_histogram_conserves_pixels():
    vals = np.random.default_rng(0).integers(0, 256, (17, 23))
    assert histogram(gray(vals)).sum() == 17 * 23


# -- Otsu --------------------------------------------------------------------

def test_single_level_is_degenerate():
    h = np.zeros(256, dtype=int)
    h[77] = 500
    assert otsu_threshold(h) == (77, True)


def test_two_peaks_pick_smallest_tie():
    h = np.zeros(256, dtype=int)
    h[50] = h[200] = 100
    assert otsu_bruteforce(h) == 50
    assert otsu_threshold(h) == (50, False)


def test_empty_histogram():
    with pytest.raises(ValueError, match="empty"):
        otsu_threshold(np.zeros(256))


def test_random_histograms_match_bruteforce():
    rng = np.random.default_rng(42)
    for _ in range(100):
        h = rng.integers(0, 1000, 256) * (rng.random(256) < rng.random())
        if h.sum() == 0:
            h[rng.integers(256)] = 1
        want = otsu_bruteforce(h)
        got = otsu_threshold(h)
        if want is None:
            assert got.degenerate
        else:
            assert got == (want, False)


def test_level_255_mass_only():
    h = np.zeros(256, dtype=int)
    h[255] = 3
    assert otsu_threshold(h) == (255, True)


# -- binarize ----------------------------------------------------------------

def test_binarize_top_level_is_all_background():
    assert not binarize(gray([[255, 3, 0]]), 255).any()


def test_binarize_zero_threshold():
    img = gray([[0, 1, 1, 0]])
    assert binarize(img, 0).tolist() == [[False, True, True, False]]


def test_binarize_with_otsu_marks_bright():
    img = gray([[10, 200, 10], [200, 10, 200]])
    t = otsu_threshold(histogram(img)).level
    assert binarize(img, t).tolist() == [[False, True, False], [True, False, True]]


# -- area opening ------------------------------------------------------------

def _blob(n, shape=(20, 20), origin=(1, 1)):
    m = np.zeros(shape, dtype=bool)
    r0, c0 = origin
    for i in range(n):
        m[r0 + i // 7, c0 + i % 7] = True
    return m


def test_49_pixels_removed():
    assert not remove_small_components(_blob(49), 50).any()


def test_50_pixels_kept():
    m = _blob(50)
    assert np.array_equal(remove_small_components(m, 50), m)


def test_diagonal_touching_blobs_join():
    m = np.zeros((12, 12), dtype=bool)
    m[0:5, 0:5] = True
    m[5:10, 5:10] = True
    assert len(flood_fill_components(m)) == 1
    assert np.array_equal(remove_small_components(m, 50), m)


def test_area_opening_matches_flood_fill_oracle():
    rng = np.random.default_rng(7)
    for _ in range(40):
        h, w = rng.integers(1, 65, 2)
        m = rng.random((h, w)) < rng.uniform(0.2, 0.6)
        k = int(rng.integers(1, 30))
        out = remove_small_components(m, k)
        assert np.array_equal(out, area_open_oracle(m, k))
        # idempotent and never adds pixels
        assert np.array_equal(remove_small_components(out, k), out)
        assert not np.any(out & ~m)


# -- foreground --------------------------------------------------------------

def test_extract_foreground_empty_and_full():
    img = RGBRaster(np.full((3, 4, 3), 9, dtype=np.uint8))
    assert extract_foreground(img, np.zeros((3, 4), bool)) == []
    assert len(extract_foreground(img, np.ones((3, 4), bool))) == 12


def test_extract_foreground_colors():
    px = np.random.default_rng(2).integers(0, 256, (4, 4, 3)).astype(np.uint8)
    img = RGBRaster(px)
    mask = np.zeros((4, 4), bool)
    mask[0, 1] = mask[2, 3] = mask[3, 0] = True
    samples = extract_foreground(img, mask)
    assert len(samples) == 3
    for s in samples:
        col, row = s.xs
        assert mask[row, col]
        assert s.xr == rgb_to_luv(*px[row, col])


def test_extract_foreground_dimension_mismatch():
    img = RGBRaster(np.zeros((3, 3, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        extract_foreground(img, np.zeros((2, 3), bool))


def test_segment_foreground_blank_frame_is_empty():
    img = RGBRaster(np.zeros((10, 10, 3), dtype=np.uint8))
    mask, otsu = segment_foreground(img)
    assert otsu.degenerate and not mask.any()


def test_segment_foreground_invert():
    px = np.full((20, 20, 3), 220, dtype=np.uint8)
    px[5:15, 5:15] = 20
    img = RGBRaster(px)
    mask, _ = segment_foreground(img, min_pixels=50, invert=True)
    assert mask.sum() == 100 and mask[10, 10]
    bright, _ = segment_foreground(img, min_pixels=50)
    assert bright.sum() == 300 and not bright[10, 10]
