"""COCO-style box AP: greedy matching, 101-point interpolated precision,
IoU thresholds 0.50:0.05:0.95 and small/medium/large area buckets."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import Box, iou

IOU_THRESHOLDS = np.linspace(0.5, 0.95, 10)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
AREA_RANGES = {
    "all": (0.0, float("inf")),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, float("inf")),
}


@dataclass(frozen=True)
class Detection:
    image_id: int
    class_id: int
    score: float
    box: Box


@dataclass(frozen=True)
class GroundTruth:
    image_id: int
    class_id: int
    box: Box


@dataclass
class EvalResult:
    ap: float | None
    ap50: float | None
    ap75: float | None
    ap_small: float | None
    ap_medium: float | None
    ap_large: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def _in_range(box: Box, area_range) -> bool:
    lo, hi = area_range
    return lo <= box.area <= hi


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_thresh: float,
    area_range=None,
    iou_table: dict | None = None,
) -> list[bool | None]:
    """Greedy score-ordered matching per (image, class).

    Returns one flag per detection: True (TP), False (FP), or None when the
    detection is ignored because of ``area_range`` (it matched an
    out-of-range gt, or is unmatched and itself out of range).
    ``iou_table`` optionally caches IoU values keyed by (det index, gt index).
    """
    flags: list[bool | None] = [False] * len(dets)
    gt_groups = defaultdict(list)
    for k, g in enumerate(gts):
        gt_groups[(g.image_id, g.class_id)].append(k)
    det_groups = defaultdict(list)
    for k, d in enumerate(dets):
        det_groups[(d.image_id, d.class_id)].append(k)

    for key, det_idx in det_groups.items():
        det_idx = sorted(det_idx, key=lambda k: (-dets[k].score, k))
        cand = gt_groups.get(key, [])
        ignore = {
            k: area_range is not None and not _in_range(gts[k].box, area_range)
            for k in cand
        }
        used: set[int] = set()
        for d in det_idx:
            best = None
            # in-range gts are preferred; ignored ones only absorb leftovers
            for want_ignored in (False, True):
                best_v = -1.0
                for g in cand:
                    if g in used or ignore[g] != want_ignored:
                        continue
                    if iou_table is None:
                        v = iou(dets[d].box, gts[g].box)
                    else:
                        v = iou_table.get((d, g))
                        if v is None:
                            v = iou_table[(d, g)] = iou(dets[d].box, gts[g].box)
                    if v >= iou_thresh and v > best_v:
                        best, best_v = g, v
                if best is not None:
                    break
            if best is not None:
                used.add(best)
                flags[d] = None if ignore[best] else True
            elif area_range is not None and not _in_range(dets[d].box, area_range):
                flags[d] = None
    return flags


def average_precision(
    flags: Sequence[bool], scores: Sequence[float], n_gt: int
) -> float | None:
    """101-point interpolated AP from TP/FP flags.

    Returns None when there is nothing to score (no gts and no detections),
    and 0 when there are detections but no gts.
    """
    flags = np.asarray(flags, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    if n_gt == 0:
        return None if flags.size == 0 else 0.0
    if flags.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    pos = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(pos < len(envelope), envelope[np.minimum(pos, len(envelope) - 1)], 0.0)
    return float(q.mean())


def _class_ap(dets, gts, thresh, area_range, iou_table=None) -> dict[int, float | None]:
    flags = match_detections(dets, gts, thresh, area_range, iou_table)
    classes = sorted({g.class_id for g in gts} | {d.class_id for d in dets})
    out = {}
    for c in classes:
        f = [fl for d, fl in zip(dets, flags) if d.class_id == c and fl is not None]
        s = [d.score for d, fl in zip(dets, flags) if d.class_id == c and fl is not None]
        n_gt = sum(
            1
            for g in gts
            if g.class_id == c and (area_range is None or _in_range(g.box, area_range))
        )
        out[c] = average_precision(f, s, n_gt)
    return out


def _mean_defined(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    area_ranges: dict | None = None,
) -> EvalResult:
    """AP averaged over classes, then over IoU thresholds; area buckets are
    undefined when they contain no gt."""
    ranges = AREA_RANGES if area_ranges is None else area_ranges
    table: dict = {}

    def bucket(area_range, thresholds):
        if area_range is not None and not any(_in_range(g.box, area_range) for g in gts):
            return None
        per_t = [_mean_defined(_class_ap(dets, gts, t, area_range, table).values()) for t in thresholds]
        return _mean_defined(per_t)

    return EvalResult(
        ap=bucket(None, IOU_THRESHOLDS),
        ap50=bucket(None, [0.5]),
        ap75=bucket(None, [0.75]),
        ap_small=bucket(ranges["small"], IOU_THRESHOLDS),
        ap_medium=bucket(ranges["medium"], IOU_THRESHOLDS),
        ap_large=bucket(ranges["large"], IOU_THRESHOLDS),
    )


def _parse_box(rec: dict) -> Box:
    return Box(float(rec["x1"]), float(rec["y1"]), float(rec["x2"]), float(rec["y2"]))


def load_records(path, kind: str) -> list:
    """Read line-delimited JSON records.

    Detections: {"image_id", "class_id", "score", "x1", "y1", "x2", "y2"};
    ground truth: the same without "score". Blank lines are skipped.
    """
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                if kind == "det":
                    out.append(
                        Detection(int(rec["image_id"]), int(rec["class_id"]), float(rec["score"]), _parse_box(rec))
                    )
                else:
                    out.append(GroundTruth(int(rec["image_id"]), int(rec["class_id"]), _parse_box(rec)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad {kind} record: {exc}") from exc
    return out


def record_line(item: Detection | GroundTruth) -> str:
    rec = {"image_id": item.image_id, "class_id": item.class_id}
    if isinstance(item, Detection):
        rec["score"] = item.score
    rec.update(dict(zip(("x1", "y1", "x2", "y2"), item.box.as_tuple())))
    return json.dumps(rec)
