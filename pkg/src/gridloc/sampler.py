"""Positive-proposal sampling for grid-branch batches.

Two modes: a per-image cap, and a single cap shared across the images of a
batch where sparse images hand their unused quota to the others.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Sequence

import numpy as np


class SampleMode(str, enum.Enum):
    ACROSS_IMAGES = "across"
    PER_IMAGE = "per_image"


class Allocation(str, enum.Enum):
    # equal share per image, leftovers redistributed to images with spare positives
    FILL = "fill"
    # one uniform draw from the pooled positives
    POOLED = "pooled"


@dataclass(frozen=True)
class SampleBudget:
    images_per_batch: int = 2
    cap_total: int = 192
    cap_per_image: int = 96
    mode: SampleMode = SampleMode.ACROSS_IMAGES
    allocation: Allocation = Allocation.FILL

    def __post_init__(self):
        object.__setattr__(self, "mode", SampleMode(self.mode))
        object.__setattr__(self, "allocation", Allocation(self.allocation))
        for name in ("images_per_batch", "cap_total", "cap_per_image"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def with_mode(self, mode: SampleMode | str) -> SampleBudget:
        return SampleBudget(
            self.images_per_batch,
            self.cap_total,
            self.cap_per_image,
            SampleMode(mode),
            self.allocation,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        d["allocation"] = self.allocation.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> SampleBudget:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise KeyError(f"unknown sampler keys: {sorted(unknown)}")
        return cls(**d)


def _fill_quota(available: Sequence[int], cap_total: int) -> list[int]:
    """Water-filling: visit images from sparsest to richest, each taking at
    most an equal share of the budget still unassigned."""
    take = [0] * len(available)
    budget = min(cap_total, sum(available))
    order = sorted(range(len(available)), key=lambda i: (available[i], i))
    for k, i in enumerate(order):
        share = budget // (len(order) - k)
        take[i] = min(available[i], share)
        budget -= take[i]
    # integer shares can strand a remainder; hand it out in visiting order
    for i in reversed(order):
        if budget == 0:
            break
        extra = min(available[i] - take[i], budget)
        take[i] += extra
        budget -= extra
    return take


def allocate(
    available: Sequence[int], budget: SampleBudget, rng: np.random.Generator | None = None
) -> list[int]:
    """Number of positives drawn from each image."""
    if budget.mode is SampleMode.PER_IMAGE:
        return [min(a, budget.cap_per_image) for a in available]
    if budget.allocation is Allocation.FILL:
        return _fill_quota(available, budget.cap_total)
    total = sum(available)
    k = min(budget.cap_total, total)
    if rng is None:
        raise ValueError("pooled allocation needs an rng")
    owners = np.repeat(np.arange(len(available)), available)
    picked = rng.choice(total, size=k, replace=False) if k else np.array([], int)
    return np.bincount(owners[picked], minlength=len(available)).tolist()


def sample_positives(
    per_image_positives: Sequence[Sequence[int]], budget: SampleBudget, seed: int
) -> list[list[int]]:
    """Select positive proposal ids for one batch, deterministically per seed."""
    if len(per_image_positives) != budget.images_per_batch:
        raise ValueError(
            f"expected {budget.images_per_batch} images, got {len(per_image_positives)}"
        )
    rng = np.random.default_rng(seed)
    pools = [list(p) for p in per_image_positives]
    counts = allocate([len(p) for p in pools], budget, rng)
    out = []
    for pool, k in zip(pools, counts):
        if k == 0:
            out.append([])
            continue
        picked = rng.choice(len(pool), size=k, replace=False)
        out.append([pool[i] for i in sorted(picked)])
    return out


CountSource = Sequence[int] | Callable[[np.random.Generator, int], np.ndarray]


def _draw_counts(source: CountSource, rng: np.random.Generator, size: int) -> np.ndarray:
    if callable(source):
        return np.asarray(source(rng, size), dtype=np.int64)
    pool = np.asarray(source, dtype=np.int64)
    return pool[rng.integers(0, len(pool), size=size)]


def batch_count_variance(
    counts: CountSource, budget: SampleBudget, trials: int, seed: int
) -> dict:
    """Monte Carlo mean/variance of positives selected per batch, per mode.

    ``counts`` is either an empirical list of per-image positive counts
    (resampled uniformly) or a callable ``(rng, size) -> counts``. Both modes
    see the same simulated batches.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    drawn = _draw_counts(counts, rng, trials * budget.images_per_batch)
    drawn = drawn.reshape(trials, budget.images_per_batch)
    if np.any(drawn < 0):
        raise ValueError("positive counts must be non-negative")
    report = {}
    for mode in SampleMode:
        b = budget.with_mode(mode)
        alloc_rng = np.random.default_rng(seed + 1)
        totals = np.array(
            [sum(allocate(row.tolist(), b, alloc_rng)) for row in drawn], dtype=float
        )
        report[mode.value] = {
            "mean": float(totals.mean()),
            "variance": float(totals.var()),
            "min": float(totals.min()),
            "max": float(totals.max()),
        }
    return report


def make_count_source(kind: str, **params) -> CountSource:
    """Per-image positive-count distributions for ``batch_count_variance``.

    mixture:   with prob ``sparse_prob`` uniform in ``sparse_range`` (inclusive
               low, exclusive high), else uniform in ``dense_range``.
    lognormal: floor of a log-normal with the given ``median`` and ``sigma``.
    empirical: resample the listed ``counts``.
    """
    if kind == "mixture":
        p = float(params["sparse_prob"])
        lo_s, hi_s = params["sparse_range"]
        lo_d, hi_d = params["dense_range"]
        if not 0 <= p <= 1 or lo_s >= hi_s or lo_d >= hi_d or min(lo_s, lo_d) < 0:
            raise ValueError("invalid mixture parameters")

        def draw(rng, size):
            sparse = rng.random(size) < p
            return np.where(
                sparse, rng.integers(lo_s, hi_s, size), rng.integers(lo_d, hi_d, size)
            )

        return draw
    if kind == "lognormal":
        median, sigma = float(params["median"]), float(params["sigma"])
        if median <= 0 or sigma < 0:
            raise ValueError("lognormal needs median > 0 and sigma >= 0")
        return lambda rng, size: np.floor(
            np.exp(rng.normal(np.log(median), sigma, size))
        ).astype(np.int64)
    if kind == "empirical":
        counts = [int(c) for c in params["counts"]]
        if not counts or min(counts) < 0:
            raise ValueError("empirical counts must be non-empty and non-negative")
        return counts
    raise ValueError(f"unknown count distribution {kind!r}")
