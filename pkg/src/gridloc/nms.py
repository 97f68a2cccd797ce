"""Per-class greedy NMS and the two post-processing pipelines.

``pipeline_plus`` thresholds, suppresses once and keeps the top-k; the kept
proposals go to grid decoding and are final. ``pipeline_original`` keeps the
historical second suppression pass over the decoded boxes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import Box


@dataclass(frozen=True)
class ScoredBox:
    box: Box
    class_id: int
    score: float

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError("class_id must be >= 0")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class PipelineConfig:
    score_thresh: float = 0.03
    nms_iou: float = 0.3
    top_k: int = 100
    second_nms_iou: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.score_thresh <= 1.0:
            raise ValueError("score_thresh must be in [0, 1]")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ValueError("nms_iou must be in [0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.second_nms_iou is not None and not 0.0 <= self.second_nms_iou <= 1.0:
            raise ValueError("second_nms_iou must be in [0, 1]")

    @classmethod
    def original(cls) -> PipelineConfig:
        return cls(score_thresh=0.03, nms_iou=0.5, top_k=125, second_nms_iou=0.5)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> PipelineConfig:
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise KeyError(f"unknown pipeline keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class PipelineRun:
    """Outcome of one pipeline invocation.

    ``selected`` holds indices into the input list, ``detections`` the final
    boxes (decoded ones for the original pipeline).
    """

    selected: list[int]
    detections: list[ScoredBox]
    iou_evals: int = 0
    nms_passes: list[int] = field(default_factory=list)


def _as_arrays(items: Sequence[ScoredBox]):
    boxes = np.array([b.box.as_tuple() for b in items], dtype=np.float64).reshape(-1, 4)
    scores = np.array([b.score for b in items], dtype=np.float64)
    classes = np.array([b.class_id for b in items], dtype=np.int64)
    return boxes, scores, classes


def iou_one_to_many(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    """IoU of one (4,) box against (m, 4) boxes, same arithmetic as geometry.iou."""
    iw = np.minimum(box[2], others[:, 2]) - np.maximum(box[0], others[:, 0])
    ih = np.minimum(box[3], others[:, 3]) - np.maximum(box[1], others[:, 1])
    inter = iw * ih
    area = (box[2] - box[0]) * (box[3] - box[1])
    areas = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    union = area + areas - inter
    valid = (iw > 0) & (ih > 0) & (union > 0)
    out = np.zeros(len(others))
    out[valid] = inter[valid] / union[valid]
    return out


def _score_order(scores: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # descending score, ties to the lower original index
    return idx[np.lexsort((idx, -scores[idx]))]


def _nms_arrays(boxes, scores, classes, iou_thresh) -> tuple[list[int], int]:
    kept: list[int] = []
    evals = 0
    for c in np.unique(classes):
        remaining = _score_order(scores, np.flatnonzero(classes == c))
        while remaining.size:
            top, rest = remaining[0], remaining[1:]
            kept.append(int(top))
            if rest.size:
                evals += rest.size
                ious = iou_one_to_many(boxes[top], boxes[rest])
                rest = rest[ious < iou_thresh]
            remaining = rest
    order = _score_order(scores, np.array(kept, dtype=np.int64))
    return [int(i) for i in order], evals


def greedy_nms_counted(
    items: Sequence[ScoredBox], iou_thresh: float
) -> tuple[list[int], int]:
    """Greedy NMS returning (kept indices, number of pairwise IoU evaluations)."""
    if not items:
        return [], 0
    return _nms_arrays(*_as_arrays(items), iou_thresh)


def greedy_nms(items: Sequence[ScoredBox], iou_thresh: float) -> list[int]:
    """Per-class greedy NMS.

    An item survives iff its IoU with every higher-ranked kept item of the same
    class is strictly below ``iou_thresh``. Ranking is by score descending,
    ties broken by input position. Returns kept indices in that ranking.
    """
    return greedy_nms_counted(items, iou_thresh)[0]


def _top_k(items: Sequence[ScoredBox], idx: Sequence[int], k: int) -> list[int]:
    ranked = sorted(idx, key=lambda i: (-items[i].score, i))
    return ranked[:k]


def pipeline_plus(
    proposals: Sequence[ScoredBox], config: PipelineConfig = PipelineConfig()
) -> PipelineRun:
    """Score threshold, one NMS pass, top-k. No suppression after decoding."""
    cand = [i for i, p in enumerate(proposals) if p.score >= config.score_thresh]
    kept, evals = greedy_nms_counted([proposals[i] for i in cand], config.nms_iou)
    selected = _top_k(proposals, [cand[i] for i in kept], config.top_k)
    return PipelineRun(
        selected=selected,
        detections=[proposals[i] for i in selected],
        iou_evals=evals,
        nms_passes=[evals],
    )


def pipeline_original(
    proposals: Sequence[ScoredBox],
    decoded: Mapping[int, Box],
    config: PipelineConfig = PipelineConfig.original(),
) -> PipelineRun:
    """NMS, top-k, swap in grid-decoded boxes, then a second NMS pass.

    ``decoded`` maps input indices to their decoded boxes and must cover every
    proposal that survives the first stage.
    """
    first = pipeline_plus(
        proposals,
        PipelineConfig(config.score_thresh, config.nms_iou, config.top_k),
    )
    missing = [i for i in first.selected if i not in decoded]
    if missing:
        raise KeyError(f"no decoded box for selected proposals {missing[:10]}")
    refined = [
        ScoredBox(decoded[i], proposals[i].class_id, proposals[i].score)
        for i in first.selected
    ]
    second_iou = 0.5 if config.second_nms_iou is None else config.second_nms_iou
    kept, evals = greedy_nms_counted(refined, second_iou)
    selected = [first.selected[k] for k in kept]
    return PipelineRun(
        selected=selected,
        detections=[refined[k] for k in kept],
        iou_evals=first.iou_evals + evals,
        nms_passes=[first.iou_evals, evals],
    )


def count_pairwise_iou_evals(run: PipelineRun) -> int:
    return run.iou_evals
