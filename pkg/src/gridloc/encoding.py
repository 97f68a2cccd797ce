"""Binary supervision targets for grid point heatmaps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .geometry import (
    Box,
    GridIndex,
    GridSpec,
    OutOfRegion,
    grid_point,
    point_to_cell,
    representation_region,
)

DEFAULT_RADIUS = 2


@dataclass(frozen=True)
class SupervisionTarget:
    grid_index: GridIndex
    map: np.ndarray  # (R, R), indexed [cy, cx]
    covered: bool
    cell: tuple[int, int] | None = None


def encode_targets(
    gt: Box, proposal: Box, spec: GridSpec, radius: int = DEFAULT_RADIUS
) -> list[SupervisionTarget]:
    """One target per grid point; positives form a Chebyshev ball of ``radius``
    cells around the quantized ground-truth grid point."""
    if gt.is_degenerate or proposal.is_degenerate:
        raise ValueError("gt and proposal must have positive width and height")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    n, res = spec.points_per_side, spec.heatmap_resolution
    targets = []
    for idx in spec.indices():
        region = representation_region(proposal, idx, spec)
        target = np.zeros((res, res), dtype=np.uint8)
        try:
            cx, cy = point_to_cell(grid_point(gt, idx, n), region, res)
        except OutOfRegion:
            targets.append(SupervisionTarget(idx, target, False))
            continue
        target[
            max(cy - radius, 0) : cy + radius + 1,
            max(cx - radius, 0) : cx + radius + 1,
        ] = 1
        targets.append(SupervisionTarget(idx, target, True, (cx, cy)))
    return targets


def is_covered(gt: Box, proposal: Box, idx: GridIndex, spec: GridSpec) -> bool:
    region = representation_region(proposal, idx, spec)
    return region.contains(grid_point(gt, idx, spec.points_per_side))


def coverage_rate(pairs: Iterable[tuple[Box, Box]], spec: GridSpec) -> float:
    """Fraction of (pair, grid point) combinations whose ground-truth point
    falls inside its representation region. ``pairs`` are (proposal, gt)."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("coverage_rate needs at least one pair")
    hits = sum(
        is_covered(gt, proposal, idx, spec)
        for proposal, gt in pairs
        for idx in spec.indices()
    )
    return hits / (len(pairs) * spec.num_points)
