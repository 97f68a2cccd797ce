"""Box geometry, grid point layout and heatmap representation regions.

Coordinates are continuous image pixels (x1, y1, x2, y2). Rounding only
happens when a point is quantized into a heatmap cell.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

Point = tuple[float, float]


class OutOfRegion(ValueError):
    """A point falls outside the representation region of its heatmap."""


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = tuple(float(c) for c in (self.x1, self.y1, self.x2, self.y2))
        for name, c in zip(("x1", "y1", "x2", "y2"), coords):
            object.__setattr__(self, name, c)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates: {coords}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"inverted box: {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    @property
    def is_degenerate(self) -> bool:
        return self.width <= 0 or self.height <= 0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def translate(self, dx: float, dy: float) -> Box:
        return Box(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def scale(self, s: float) -> Box:
        return Box(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)

    def contains(self, p: Point) -> bool:
        """Half-open containment: right and bottom edges are exclusive."""
        return self.x1 <= p[0] < self.x2 and self.y1 <= p[1] < self.y2

    def contains_box(self, other: Box) -> bool:
        return (
            self.x1 <= other.x1
            and self.y1 <= other.y1
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )


class RepresentationMode(str, enum.Enum):
    WHOLE_EXTENDED = "whole"
    POINT_SPECIFIC_QUARTER = "quarter"


@dataclass(frozen=True)
class GridSpec:
    """Grid layout and heatmap representation settings.

    ``points_per_side`` is n (n x n grid points), ``heatmap_resolution`` is
    the number of cells per heatmap side, ``extension_factor`` scales the
    RoI per dimension to get the extended region.
    """

    points_per_side: int = 3
    heatmap_resolution: int = 28
    mode: RepresentationMode = RepresentationMode.POINT_SPECIFIC_QUARTER
    extension_factor: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "mode", RepresentationMode(self.mode))
        if self.points_per_side < 2:
            raise ValueError("points_per_side must be >= 2")
        if self.heatmap_resolution < 2 or self.heatmap_resolution % 2:
            raise ValueError("heatmap_resolution must be even and >= 2")
        if not self.extension_factor >= 1:
            raise ValueError("extension_factor must be >= 1")

    @property
    def num_points(self) -> int:
        return self.points_per_side**2

    def indices(self) -> list[GridIndex]:
        n = self.points_per_side
        return [GridIndex(i, j) for i in range(n) for j in range(n)]

    @property
    def label(self) -> str:
        label = f"{self.mode.value}@{self.heatmap_resolution}"
        if self.extension_factor != 2.0:
            label += f"x{self.extension_factor:g}"
        return label

    def to_dict(self) -> dict:
        return {
            "points_per_side": self.points_per_side,
            "heatmap_resolution": self.heatmap_resolution,
            "mode": self.mode.value,
            "extension_factor": self.extension_factor,
        }


class GridIndex(NamedTuple):
    row: int
    col: int

    def flat(self, n: int) -> int:
        return self.row * n + self.col


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for disjoint or degenerate boxes."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def extend_region(roi: Box, factor: float) -> Box:
    """Scale ``roi`` about its center by ``factor`` per dimension."""
    if factor < 1:
        raise ValueError("extension factor must be >= 1")
    cx, cy = roi.center
    hw = 0.5 * roi.width * factor
    hh = 0.5 * roi.height * factor
    return Box(cx - hw, cy - hh, cx + hw, cy + hh)


def grid_point_locations(box: Box, n: int) -> list[Point]:
    """Uniform n x n grid over ``box`` in row-major order."""
    if n < 2:
        raise ValueError("n must be >= 2")
    pts = []
    for i in range(n):
        y = box.y1 + i * box.height / (n - 1)
        for j in range(n):
            pts.append((box.x1 + j * box.width / (n - 1), y))
    return pts


def grid_point(box: Box, idx: GridIndex, n: int) -> Point:
    return (
        box.x1 + idx.col * box.width / (n - 1),
        box.y1 + idx.row * box.height / (n - 1),
    )


def representation_region(roi: Box, idx: GridIndex, spec: GridSpec) -> Box:
    """Image-space window that the heatmap for grid point ``idx`` covers.

    Whole mode: the extended region shared by every grid point.
    Quarter mode: a window with half the extended region's width and height,
    centered on the RoI's own grid point ``idx``. For n=3 and factor 2 the
    corner windows are exactly the corner quarters of the extended region.
    """
    n = spec.points_per_side
    if not (0 <= idx.row < n and 0 <= idx.col < n):
        raise IndexError(f"grid index {idx} out of range for n={n}")
    ext = extend_region(roi, spec.extension_factor)
    if spec.mode is RepresentationMode.WHOLE_EXTENDED:
        return ext
    cx, cy = grid_point(roi, idx, n)
    hw = 0.25 * ext.width
    hh = 0.25 * ext.height
    return Box(cx - hw, cy - hh, cx + hw, cy + hh)


def point_to_cell(p: Point, region: Box, resolution: int) -> tuple[int, int]:
    """Quantize ``p`` to the (cx, cy) cell of ``region`` split into R x R cells.

    Raises OutOfRegion when ``p`` lies outside the half-open region.
    """
    if region.is_degenerate:
        raise ValueError("cannot quantize into a degenerate region")
    if not region.contains(p):
        raise OutOfRegion(f"point {p} outside region {region.as_tuple()}")
    cx = math.floor((p[0] - region.x1) * resolution / region.width)
    cy = math.floor((p[1] - region.y1) * resolution / region.height)
    return (min(max(cx, 0), resolution - 1), min(max(cy, 0), resolution - 1))


def cell_to_point(cell: tuple[int, int], region: Box, resolution: int) -> Point:
    """Center of cell (cx, cy) in image coordinates."""
    cx, cy = cell
    if not (0 <= cx < resolution and 0 <= cy < resolution):
        raise IndexError(f"cell {cell} out of range for resolution {resolution}")
    return (
        region.x1 + (cx + 0.5) * region.width / resolution,
        region.y1 + (cy + 0.5) * region.height / resolution,
    )


def cell_size(region: Box, resolution: int) -> tuple[float, float]:
    return (region.width / resolution, region.height / resolution)
