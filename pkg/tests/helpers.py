"""Random instance generators and brute-force oracles shared by the tests.

The oracles deliberately avoid the package's own code paths: plain loops
over Python floats with their own IoU arithmetic.
"""

from __future__ import annotations

import numpy as np

from gridloc.evaluation import Detection, GroundTruth
from gridloc.geometry import Box, iou


def random_box(rng, lo=0.0, hi=500.0, min_size=4.0, max_size=150.0) -> Box:
    w = rng.uniform(min_size, max_size)
    h = rng.uniform(min_size, max_size)
    x1 = rng.uniform(lo, hi - w)
    y1 = rng.uniform(lo, hi - h)
    return Box(x1, y1, x1 + w, y1 + h)


def positive_pairs(rng, count, jitter=0.15, min_iou=0.5, **box_kw):
    """(proposal, gt) pairs with IoU > ``min_iou``; each proposal edge moves
    by at most ``jitter`` times the gt size."""
    pairs = []
    while len(pairs) < count:
        gt = random_box(rng, **box_kw)
        e = rng.uniform(-jitter, jitter, size=4)
        prop = Box(
            gt.x1 + e[0] * gt.width,
            gt.y1 + e[1] * gt.height,
            gt.x2 + e[2] * gt.width,
            gt.y2 + e[3] * gt.height,
        )
        if iou(prop, gt) > min_iou:
            pairs.append((prop, gt))
    return pairs


def oracle_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter <= 0:
        return 0.0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def brute_force_nms(items, thresh) -> set[int]:
    """Keep an item iff it overlaps no higher-ranked kept item of its class.

    Each candidate is compared with the kept items of its class, one by one."""
    order = sorted(range(len(items)), key=lambda i: (-items[i].score, i))
    kept: dict[int, list[int]] = {}
    for i in order:
        same = kept.setdefault(items[i].class_id, [])
        box = items[i].box.as_tuple()
        if all(oracle_iou(box, items[k].box.as_tuple()) < thresh for k in same):
            same.append(i)
    return {i for ks in kept.values() for i in ks}


def reference_match(dets, gts, thresh) -> list[bool]:
    """Exhaustive greedy matcher: for each detection in global score order,
    scan every gt and take the unmatched same-image same-class one with the
    highest IoU >= thresh."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    used = [False] * len(gts)
    flags = [False] * len(dets)
    for d in order:
        best, best_v = None, None
        for g in range(len(gts)):
            if used[g]:
                continue
            if gts[g].image_id != dets[d].image_id or gts[g].class_id != dets[d].class_id:
                continue
            v = oracle_iou(dets[d].box.as_tuple(), gts[g].box.as_tuple())
            if v >= thresh and (best_v is None or v > best_v):
                best, best_v = g, v
        if best is not None:
            used[best] = True
            flags[d] = True
    return flags


def reference_ap(flags, scores, n_gt) -> float | None:
    """101-point AP straight from the definition: at each recall level r, the
    best precision over every rank whose recall reaches r."""
    if n_gt == 0:
        return None if len(flags) == 0 else 0.0
    order = sorted(range(len(flags)), key=lambda i: -scores[i])
    tp = fp = 0
    curve = []
    for i in order:
        if flags[i]:
            tp += 1
        else:
            fp += 1
        curve.append((tp / n_gt, tp / (tp + fp)))
    total = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        total += max((p for rec, p in curve if rec >= r), default=0.0)
    return total / 101


def random_scene(rng, max_gts=8, max_dets=12, images=2, classes=3):
    gts = [
        GroundTruth(int(rng.integers(images)), int(rng.integers(classes)), random_box(rng, 0, 200, 4, 90))
        for _ in range(rng.integers(0, max_gts + 1))
    ]
    dets = []
    for _ in range(rng.integers(0, max_dets + 1)):
        if gts and rng.random() < 0.7:
            g = gts[rng.integers(len(gts))]
            e = rng.normal(0, 0.12, 4)
            b = g.box
            box = Box(b.x1 + e[0] * b.width, b.y1 + e[1] * b.height,
                      max(b.x2 + e[2] * b.width, b.x1 + e[0] * b.width),
                      max(b.y2 + e[3] * b.height, b.y1 + e[1] * b.height))
            cls = g.class_id if rng.random() < 0.85 else int(rng.integers(classes))
            dets.append(Detection(g.image_id, cls, float(rng.integers(1, 8)) / 8, box))
        else:
            dets.append(Detection(int(rng.integers(images)), int(rng.integers(classes)),
                                  float(rng.integers(1, 8)) / 8, random_box(rng, 0, 200, 4, 90)))
    return dets, gts


def reference_evaluate(dets, gts, thresholds) -> float | None:
    """Mean over classes, then over thresholds, using only the oracles above."""
    classes = sorted({g.class_id for g in gts} | {d.class_id for d in dets})
    per_t = []
    for t in thresholds:
        flags = reference_match(dets, gts, t)
        aps = []
        for c in classes:
            idx = [k for k, d in enumerate(dets) if d.class_id == c]
            n_gt = sum(g.class_id == c for g in gts)
            ap = reference_ap([flags[k] for k in idx], [dets[k].score for k in idx], n_gt)
            if ap is not None:
                aps.append(ap)
        if aps:
            per_t.append(sum(aps) / len(aps))
    return sum(per_t) / len(per_t) if per_t else None


# criterion number -> "ACCEPTANCE n PASS|FAIL ..." line, filled by test_acceptance
ACCEPTANCE_RESULTS: dict[int, str] = {}


def report(number: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
