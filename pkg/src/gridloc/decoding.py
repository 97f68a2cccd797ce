"""Heatmap decoding: peak estimation, neighbor fusion and box assembly."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import (
    Box,
    GridIndex,
    GridSpec,
    Point,
    grid_point,
    representation_region,
)


class NoPeak(ValueError):
    """Heatmap has no positive value to decode."""


class IncompleteGrid(ValueError):
    """A border of the grid has no decodable point."""


class Estimator(str, enum.Enum):
    ARGMAX = "argmax"
    EXPECTATION = "expectation"


class FusionAlign(str, enum.Enum):
    # shift neighbor maps so the neighbor's expected peak lands on this point's
    # expected peak (zero shift in quarter mode)
    POINT = "point"
    # shift by the difference of region origins (pure change of frame)
    ORIGIN = "origin"


@dataclass(frozen=True)
class Heatmap:
    grid_index: GridIndex
    values: np.ndarray  # (R, R), indexed [cy, cx]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.size == 0:
            raise ValueError(f"heatmap must be a non-empty square array, got {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() > 1:
            raise ValueError("heatmap values must be finite and in [0, 1]")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "grid_index", GridIndex(*self.grid_index))

    @classmethod
    def trusted(cls, grid_index: GridIndex, values: np.ndarray) -> Heatmap:
        """Skip validation for maps already known to be clipped to [0, 1]."""
        h = object.__new__(cls)
        object.__setattr__(h, "grid_index", grid_index)
        object.__setattr__(h, "values", values)
        return h

    @property
    def resolution(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DecodedPoint:
    location: Point
    confidence: float


@dataclass(frozen=True)
class DecodeOptions:
    fuse: bool = True
    estimator: Estimator = Estimator.EXPECTATION
    support: float = 0.5
    w_self: float = 1.0
    w_nbr: float = 0.25
    align: FusionAlign = FusionAlign.POINT

    def __post_init__(self):
        object.__setattr__(self, "estimator", Estimator(self.estimator))
        object.__setattr__(self, "align", FusionAlign(self.align))
        if not 0 < self.support <= 1:
            raise ValueError("support must be in (0, 1]")
        if self.w_self < 0 or self.w_nbr < 0 or self.w_self + self.w_nbr <= 0:
            raise ValueError("fusion weights must be non-negative and not both zero")

    def to_dict(self) -> dict:
        return {
            "fuse": self.fuse,
            "estimator": self.estimator.value,
            "support": self.support,
            "w_self": self.w_self,
            "w_nbr": self.w_nbr,
            "align": self.align.value,
        }


def decode_point(
    values: np.ndarray,
    region: Box,
    estimator: Estimator | str = Estimator.EXPECTATION,
    support: float = 0.5,
) -> DecodedPoint:
    """Locate the peak of one heatmap in image coordinates.

    Argmax returns the center of the maximal cell (first in row-major order).
    Expectation returns the value-weighted mean of cell centers over cells
    with value >= ``support`` * max.
    """
    v = np.asarray(values, dtype=np.float64)
    estimator = Estimator(estimator)
    peak = float(v.max()) if v.size else 0.0
    if peak <= 0:
        raise NoPeak("heatmap has no positive cell")
    res_y, res_x = v.shape
    cw, ch = region.width / res_x, region.height / res_y
    if estimator is Estimator.ARGMAX:
        cy, cx = np.unravel_index(int(np.argmax(v)), v.shape)
        return DecodedPoint(
            (region.x1 + (cx + 0.5) * cw, region.y1 + (cy + 0.5) * ch), peak
        )
    if not 0 < support <= 1:
        raise ValueError("support must be in (0, 1]")
    ys, xs = np.nonzero(v >= support * peak)
    w = v[ys, xs]
    mx = float(np.dot(w, xs + 0.5) / w.sum())
    my = float(np.dot(w, ys + 0.5) / w.sum())
    return DecodedPoint((region.x1 + mx * cw, region.y1 + my * ch), peak)


def region_origin_offset(
    proposal: Box, a: GridIndex, b: GridIndex, spec: GridSpec
) -> tuple[int, int]:
    """Cell offset (dx, dy) from the region origin of ``a`` to that of ``b``."""
    ra = representation_region(proposal, a, spec)
    rb = representation_region(proposal, b, spec)
    return _origin_offset(ra, rb, spec.heatmap_resolution)


def _origin_offset(ra: Box, rb: Box, res: int) -> tuple[int, int]:
    return (
        int(round((rb.x1 - ra.x1) * res / ra.width)),
        int(round((rb.y1 - ra.y1) * res / ra.height)),
    )


def _offset(rt: Box, rs: Box, pt: Point, ps: Point, res: int, align: FusionAlign):
    dx, dy = _origin_offset(rt, rs, res)
    if align is FusionAlign.ORIGIN:
        return (dx, dy)
    # proposal-level displacement between the two points, in cells
    px = (pt[0] - ps[0]) * res / rt.width
    py = (pt[1] - ps[1]) * res / rt.height
    return (int(round(px + dx)), int(round(py + dy)))


def fusion_offset(
    proposal: Box,
    target: GridIndex,
    source: GridIndex,
    spec: GridSpec,
    align: FusionAlign | str = FusionAlign.POINT,
) -> tuple[int, int]:
    """Integer cell shift applied to ``source``'s map before adding it to
    ``target``'s map.

    ORIGIN expresses the source map in the target's frame. POINT additionally
    moves the source's expected peak onto the target's expected peak, which
    is a zero shift in quarter mode where every window is centered on its own
    grid point.
    """
    n = spec.points_per_side
    return _offset(
        representation_region(proposal, target, spec),
        representation_region(proposal, source, spec),
        grid_point(proposal, target, n),
        grid_point(proposal, source, n),
        spec.heatmap_resolution,
        FusionAlign(align),
    )


def shift_map(values: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate a map by (dx, dy) cells, zero-filling vacated cells."""
    out = np.zeros_like(values)
    h, w = values.shape
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_y = slice(max(-dy, 0), h - max(dy, 0))
    src_x = slice(max(-dx, 0), w - max(dx, 0))
    dst_y = slice(max(dy, 0), h - max(-dy, 0))
    dst_x = slice(max(dx, 0), w - max(-dx, 0))
    out[dst_y, dst_x] = values[src_y, src_x]
    return out


def _neighbors(idx: GridIndex, n: int) -> list[GridIndex]:
    out = []
    for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        i, j = idx.row + di, idx.col + dj
        if 0 <= i < n and 0 <= j < n:
            out.append(GridIndex(i, j))
    return out


def fuse_heatmaps(
    heatmaps: Sequence[Heatmap],
    proposal: Box,
    spec: GridSpec,
    w_self: float = 1.0,
    w_nbr: float = 0.25,
    align: FusionAlign | str = FusionAlign.POINT,
) -> list[Heatmap]:
    """Single pass of first-order neighbor fusion.

    Each output is (w_self * H_i + w_nbr * sum of shifted 4-neighbors) divided
    by the total weight used, so values stay in [0, 1].
    """
    n, res = spec.points_per_side, spec.heatmap_resolution
    align = FusionAlign(align)
    by_index = _index_heatmaps(heatmaps, spec)
    if w_self < 0 or w_nbr < 0:
        raise ValueError("fusion weights must be non-negative")
    regions = {i: representation_region(proposal, i, spec) for i in spec.indices()}
    points = {i: grid_point(proposal, i, n) for i in spec.indices()}
    fused = []
    for idx in spec.indices():
        acc = w_self * by_index[idx].values
        nbrs = _neighbors(idx, n)
        for nb in nbrs:
            dx, dy = _offset(regions[idx], regions[nb], points[idx], points[nb], res, align)
            acc = acc + w_nbr * shift_map(by_index[nb].values, dx, dy)
        total = w_self + len(nbrs) * w_nbr
        if total > 0:
            acc = acc / total
        peak = acc.max()
        if peak > 1:
            acc = acc / peak
        fused.append(Heatmap.trusted(idx, np.clip(acc, 0.0, 1.0)))
    return fused


def _index_heatmaps(heatmaps: Sequence[Heatmap], spec: GridSpec) -> dict:
    res = spec.heatmap_resolution
    by_index = {}
    for h in heatmaps:
        if h.resolution != res:
            raise ValueError(
                f"heatmap resolution {h.resolution} does not match spec {res}"
            )
        by_index[h.grid_index] = h
    missing = set(spec.indices()) - set(by_index)
    if missing:
        raise ValueError(f"missing heatmaps for grid points {sorted(missing)}")
    return by_index


def points_to_box(points: Sequence[DecodedPoint | None], n: int) -> Box:
    """Assemble a box from decoded grid points (row-major, None = no peak).

    Each edge is the confidence-weighted mean of the matching coordinate over
    the points on that border of the grid.
    """
    if len(points) != n * n:
        raise ValueError(f"expected {n * n} points, got {len(points)}")

    def edge(cells, axis, name):
        pts = [points[i * n + j] for i, j in cells]
        pts = [p for p in pts if p is not None and p.confidence > 0]
        if not pts:
            raise IncompleteGrid(f"no decodable point on the {name} border")
        w = np.array([p.confidence for p in pts])
        c = np.array([p.location[axis] for p in pts])
        return float(np.dot(w, c) / w.sum())

    x1 = edge([(i, 0) for i in range(n)], 0, "left")
    x2 = edge([(i, n - 1) for i in range(n)], 0, "right")
    y1 = edge([(0, j) for j in range(n)], 1, "top")
    y2 = edge([(n - 1, j) for j in range(n)], 1, "bottom")
    if x1 > x2:
        x1, x2 = x2, x1
    if y1 > y2:
        y1, y2 = y2, y1
    return Box(x1, y1, x2, y2)


def decode_grid_points(
    heatmaps: Sequence[Heatmap],
    proposal: Box,
    spec: GridSpec,
    opts: DecodeOptions = DecodeOptions(),
) -> list[DecodedPoint | None]:
    """Decode every grid point in its own representation region (row-major)."""
    if opts.fuse:
        heatmaps = fuse_heatmaps(
            heatmaps, proposal, spec, opts.w_self, opts.w_nbr, opts.align
        )
    by_index = _index_heatmaps(heatmaps, spec)
    points: list[DecodedPoint | None] = []
    for idx in spec.indices():
        region = representation_region(proposal, idx, spec)
        try:
            points.append(
                decode_point(by_index[idx].values, region, opts.estimator, opts.support)
            )
        except NoPeak:
            points.append(None)
    return points


def decode_detection(
    heatmaps: Sequence[Heatmap],
    proposal: Box,
    spec: GridSpec,
    opts: DecodeOptions = DecodeOptions(),
) -> Box:
    points = decode_grid_points(heatmaps, proposal, spec, opts)
    return points_to_box(points, spec.points_per_side)
