"""Joint spatial-range mean-shift filtering and segment reduction.

Every foreground pixel ``x = (xs, xr)`` (pixel position, L*u*v* color) is
moved to the mode of the joint kernel density it climbs to. The kernel is
the product of two Gaussian profiles ``k(d) = exp(-d / 2)`` evaluated on the
squared normalised distances ``|dxs / hs|**2`` and ``|dxr / hr|**2``; each
profile is cut off at normalised radius 3. Filtered pixels keep their
position and take the range part of their mode. Neighbouring filtered
pixels of similar color are then grouped into segments, and each segment is
reduced to a single weighted color instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .imaging import Luv

KERNEL_CUTOFF = 3.0
# Upper bound on (start, neighbour) pairs evaluated at once.
_PAIR_BUDGET = 2_000_000


class PixelSample(NamedTuple):
    xs: tuple
    xr: tuple


class FilteredSample(NamedTuple):
    xs: tuple
    zr: tuple


@dataclass(frozen=True)
class MeanShiftParams:
    """Bandwidths and stopping rule.

    ``convergence_eps`` bounds the length of the last shift measured in the
    normalised joint space (spatial offsets divided by ``hs``, color offsets
    divided by ``hr``).
    """

    hs: float = 15.0
    hr: float = 20.0
    min_segment_area: int = 20
    max_iterations: int = 100
    convergence_eps: float = 0.01

    def __post_init__(self):
        if not self.hs > 0:
            raise ValueError(f"hs must be > 0, got {self.hs}")
        if not self.hr > 0:
            raise ValueError(f"hr must be > 0, got {self.hr}")
        if self.min_segment_area < 1:
            raise ValueError(f"min_segment_area must be >= 1, got {self.min_segment_area}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.convergence_eps > 0:
            raise ValueError(f"convergence_eps must be > 0, got {self.convergence_eps}")


@dataclass(frozen=True)
class Segment:
    member_indices: tuple
    mean_color: Luv
    area: int


@dataclass(frozen=True)
class ColorInstance:
    color: Luv
    label: Optional[str] = None
    weight: int = 1

    def __post_init__(self):
        if self.weight < 1:
            raise ValueError(f"weight must be >= 1, got {self.weight}")
        object.__setattr__(self, "color", Luv(*map(float, self.color)))


def _as_arrays(samples):
    coords = np.array([s[0] for s in samples], dtype=np.float64).reshape(-1, 2)
    colors = np.array([s[1] for s in samples], dtype=np.float64).reshape(-1, 3)
    return coords, colors


class _JointData:
    """Read-only data set with a spatial index for the truncated kernel."""

    def __init__(self, coords, colors, params: MeanShiftParams):
        self.coords = np.asarray(coords, dtype=np.float64)
        self.colors = np.asarray(colors, dtype=np.float64)
        self.params = params
        self.tree = cKDTree(self.coords)
        r = KERNEL_CUTOFF * params.hs
        self.radius = r * (1 + 1e-9) + 1e-9

    def step(self, ys, yr):
        """One mean-shift update for a batch of joint points."""
        p = self.params
        neigh = self.tree.query_ball_point(ys, self.radius, return_sorted=True)
        lengths = np.fromiter((len(n) for n in neigh), dtype=np.int64, count=len(neigh))
        idx = np.concatenate([np.asarray(n, dtype=np.int64) for n in neigh]) \
            if lengths.sum() else np.empty(0, dtype=np.int64)
        owner = np.repeat(np.arange(len(neigh)), lengths)

        ds2 = ((ys[owner] - self.coords[idx]) ** 2).sum(axis=1) / p.hs ** 2
        dr2 = ((yr[owner] - self.colors[idx]) ** 2).sum(axis=1) / p.hr ** 2
        cut = KERNEL_CUTOFF ** 2
        w = np.exp(-0.5 * (ds2 + dr2)) * ((ds2 <= cut) & (dr2 <= cut))

        n = len(ys)
        wsum = np.bincount(owner, weights=w, minlength=n)
        new_s = np.column_stack([
            np.bincount(owner, weights=w * self.coords[idx, k], minlength=n)
            for k in range(2)
        ])
        new_r = np.column_stack([
            np.bincount(owner, weights=w * self.colors[idx, k], minlength=n)
            for k in range(3)
        ])
        empty = wsum <= 0
        safe = np.where(empty, 1.0, wsum)[:, None]
        new_s = np.where(empty[:, None], ys, new_s / safe)
        new_r = np.where(empty[:, None], yr, new_r / safe)
        return new_s, new_r

    def climb(self, start_s, start_r):
        """Iterate every start point to convergence; returns (ys, yr, iterations)."""
        p = self.params
        ys = np.array(start_s, dtype=np.float64).reshape(-1, 2)
        yr = np.array(start_r, dtype=np.float64).reshape(-1, 3)
        iters = np.zeros(len(ys), dtype=np.int64)
        active = np.arange(len(ys))
        for _ in range(p.max_iterations):
            if active.size == 0:
                break
            still = []
            for chunk in self._chunks(ys[active]):
                ids = active[chunk]
                ns, nr = self.step(ys[ids], yr[ids])
                shift = np.sqrt(((ns - ys[ids]) ** 2).sum(axis=1) / p.hs ** 2
                                + ((nr - yr[ids]) ** 2).sum(axis=1) / p.hr ** 2)
                ys[ids], yr[ids] = ns, nr
                iters[ids] += 1
                still.append(ids[shift >= p.convergence_eps])
            active = np.concatenate(still)
        return ys, yr, iters

    def _chunks(self, ys):
        # neighbour counts are estimated from the starting positions
        counts = np.fromiter(
            (len(n) for n in self.tree.query_ball_point(ys, self.radius)),
            dtype=np.int64, count=len(ys))
        bounds, acc, lo = [], 0, 0
        for i, c in enumerate(counts):
            if acc + c > _PAIR_BUDGET and i > lo:
                bounds.append(slice(lo, i))
                lo, acc = i, 0
            acc += c
        bounds.append(slice(lo, len(ys)))
        return bounds


def ms_iterate(start: PixelSample, data: Sequence[PixelSample],
               params: MeanShiftParams = MeanShiftParams()):
    """Climb from ``start`` to a mode of the joint density of ``data``.

    Returns the converged joint point as ``(xs, xr)`` float tuples.
    """
    if len(data) == 0:
        raise ValueError("data must be non-empty")
    coords, colors = _as_arrays(data)
    joint = _JointData(coords, colors, params)
    ys, yr, _ = joint.climb([start[0]], [start[1]])
    return tuple(ys[0].tolist()), tuple(yr[0].tolist())


def ms_filter_arrays(coords, colors, params: MeanShiftParams = MeanShiftParams()):
    """Array form of :func:`ms_filter`; returns the filtered range values."""
    coords = np.asarray(coords, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    if len(coords) == 0:
        raise ValueError("samples must be non-empty")
    joint = _JointData(coords, colors, params)
    _, yr, _ = joint.climb(coords, colors)
    return yr


def ms_filter(samples: Sequence[PixelSample],
              params: MeanShiftParams = MeanShiftParams()) -> list[FilteredSample]:
    if len(samples) == 0:
        raise ValueError("samples must be non-empty")
    coords, colors = _as_arrays(samples)
    zr = ms_filter_arrays(coords, colors, params)
    return [FilteredSample(s[0], tuple(z.tolist())) for s, z in zip(samples, zr)]


# --------------------------------------------------------------------------
# Segments

_HALF_NEIGHBOURHOOD = ((0, 1), (1, -1), (1, 0), (1, 1))


def _neighbour_pairs(coords):
    """All unordered 8-adjacent index pairs among integer pixel positions."""
    coords = np.asarray(coords).astype(np.int64)
    cols, rows = coords[:, 0], coords[:, 1]
    c0, r0 = cols.min(), rows.min()
    grid = np.full((rows.max() - r0 + 1, cols.max() - c0 + 1), -1, dtype=np.int64)
    rr, cc = rows - r0, cols - c0
    if len(np.unique(rr * grid.shape[1] + cc)) != len(rr):
        raise ValueError("duplicate pixel positions")
    grid[rr, cc] = np.arange(len(coords))
    h, w = grid.shape
    a_all, b_all = [], []
    for dr, dc in _HALF_NEIGHBOURHOOD:
        nr, nc = rr + dr, cc + dc
        ok = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
        src = np.nonzero(ok)[0]
        dst = grid[nr[ok], nc[ok]]
        hit = dst >= 0
        a_all.append(src[hit])
        b_all.append(dst[hit])
    return np.concatenate(a_all), np.concatenate(b_all)


@dataclass
class _Region:
    total: np.ndarray
    members: list
    neighbours: set = field(default_factory=set)

    @property
    def area(self):
        return len(self.members)

    @property
    def mean(self):
        return self.total / len(self.members)


def extract_segments_arrays(coords, zr, params: MeanShiftParams = MeanShiftParams()):
    """Group filtered pixels into segments; see :func:`extract_segments`."""
    coords = np.asarray(coords)
    zr = np.asarray(zr, dtype=np.float64)
    n = len(coords)
    if n == 0:
        raise ValueError("filtered samples must be non-empty")
    a, b = _neighbour_pairs(coords)
    close = np.sqrt(((zr[a] - zr[b]) ** 2).sum(axis=1)) < params.hr
    graph = coo_matrix((np.ones(int(close.sum())), (a[close], b[close])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)

    # renumber by smallest member index so output order is data-order stable
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    labels = remap[labels]

    regions = {}
    for i, lab in enumerate(labels.tolist()):
        reg = regions.get(lab)
        if reg is None:
            regions[lab] = _Region(zr[i].copy(), [i])
        else:
            reg.total += zr[i]
            reg.members.append(i)
    la, lb = labels[a], labels[b]
    differ = la != lb
    for p, q in zip(la[differ].tolist(), lb[differ].tolist()):
        regions[p].neighbours.add(q)
        regions[q].neighbours.add(p)

    min_area = params.min_segment_area
    while True:
        small = [k for k, r in regions.items() if r.area < min_area and r.neighbours]
        if not small:
            break
        k = min(small, key=lambda k: (regions[k].area, k))
        src = regions[k]
        target = min(src.neighbours,
                     key=lambda j: (float(np.linalg.norm(regions[j].mean - src.mean)), j))
        dst = regions[target]
        dst.total = dst.total + src.total
        dst.members.extend(src.members)
        for j in src.neighbours:
            regions[j].neighbours.discard(k)
            if j != target:
                regions[j].neighbours.add(target)
                dst.neighbours.add(j)
        dst.neighbours.discard(target)
        del regions[k]

    segments = []
    for k in sorted(regions, key=lambda k: min(regions[k].members)):
        reg = regions[k]
        if reg.area < min_area:
            continue
        members = tuple(sorted(reg.members))
        mean = zr[list(members)].mean(axis=0)
        segments.append(Segment(members, Luv(*map(float, mean)), len(members)))
    return segments


def extract_segments(filtered: Sequence[FilteredSample],
                     params: MeanShiftParams = MeanShiftParams()) -> list[Segment]:
    """Group filtered pixels into segments.

    Two pixels are linked when they are 8-adjacent and their filtered colors
    are closer than ``hr``. Segments smaller than ``min_segment_area`` are
    merged, smallest first, into the adjacent segment with the nearest mean
    color; undersized segments with no neighbour are dropped.
    """
    if len(filtered) == 0:
        raise ValueError("filtered samples must be non-empty")
    coords, zr = _as_arrays(filtered)
    return extract_segments_arrays(coords, zr, params)


def representative_instances(segments: Sequence[Segment],
                             label: Optional[str] = None) -> list[ColorInstance]:
    return [ColorInstance(seg.mean_color, label, seg.area) for seg in segments]
