"""Synthetic stand-in for a trained grid branch.

Heatmaps are rendered as Gaussian bumps around (optionally jittered) true grid
points plus background and spurious peaks. Scenes pair random ground truth
with perturbed proposals whose scores track their IoU, so the full
select -> render -> decode -> evaluate loop can run without a network.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .decoding import DecodeOptions, Heatmap, IncompleteGrid, decode_detection
from .evaluation import Detection, GroundTruth, evaluate
from .geometry import (
    Box,
    GridSpec,
    OutOfRegion,
    grid_point_locations,
    iou,
    point_to_cell,
    representation_region,
)
from .nms import (
    PipelineConfig,
    ScoredBox,
    count_pairwise_iou_evals,
    pipeline_original,
    pipeline_plus,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseModel:
    peak_sigma: float = 0.0  # cells
    jitter_sigma: float = 0.0  # image pixels
    background: float = 0.0
    false_peak_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.peak_sigma, self.jitter_sigma, self.background, self.false_peak_prob) < 0:
            raise ValueError("noise parameters must be non-negative")
        if self.background >= 1:
            raise ValueError("background must be < 1")
        if self.false_peak_prob > 1:
            raise ValueError("false_peak_prob must be <= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Proposal:
    box: Box
    scores: tuple[float, ...]  # per class, in [0, 1]


@dataclass(frozen=True)
class Scene:
    image_id: int
    width: float
    height: float
    gts: tuple[tuple[Box, int], ...]
    proposals: tuple[Proposal, ...]

    def ground_truth(self) -> list[GroundTruth]:
        return [GroundTruth(self.image_id, c, b) for b, c in self.gts]

    def scored_boxes(self) -> tuple[list[ScoredBox], list[int]]:
        """Flatten proposals into one ScoredBox per (proposal, class); the
        second list maps each item back to its proposal index."""
        items, owners = [], []
        for k, p in enumerate(self.proposals):
            for c, s in enumerate(p.scores):
                items.append(ScoredBox(p.box, c, float(s)))
                owners.append(k)
        return items, owners

    def best_gt(self, box: Box) -> tuple[int, float]:
        best, best_v = -1, -1.0
        for k, (g, _) in enumerate(self.gts):
            v = iou(box, g)
            if v > best_v:
                best, best_v = k, v
        return best, best_v


def _bump(res: int, cell: tuple[int, int], sigma: float, amplitude: float = 1.0) -> np.ndarray:
    out = np.zeros((res, res))
    cx, cy = cell
    if sigma <= 0:
        out[cy, cx] = amplitude
        return out
    ax = np.arange(res)
    gy = np.exp(-((ax - cy) ** 2) / (2 * sigma**2))
    gx = np.exp(-((ax - cx) ** 2) / (2 * sigma**2))
    return amplitude * np.outer(gy, gx)


def render_heatmaps(
    gt: Box,
    proposal: Box,
    spec: GridSpec,
    noise: NoiseModel = NoiseModel(),
    rng: np.random.Generator | None = None,
) -> list[Heatmap]:
    """Heatmaps the grid branch would ideally emit for ``proposal`` around ``gt``.

    Random draws happen in a fixed order independent of the noise levels, so
    the same generator state gives pointwise comparable maps across settings.
    """
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    n, res = spec.points_per_side, spec.heatmap_resolution
    k = n * n
    jitter = rng.standard_normal((k, 2)) * noise.jitter_sigma
    background = rng.random((k, res, res)) * noise.background
    spurious = rng.random(k) < noise.false_peak_prob
    spurious_cells = rng.integers(0, res, size=(k, 2))
    spurious_amp = rng.uniform(0.4, 0.8, size=k)

    maps = []
    for flat, (idx, pt) in enumerate(zip(spec.indices(), grid_point_locations(gt, n))):
        region = representation_region(proposal, idx, spec)
        values = background[flat].copy()
        try:
            cell = point_to_cell((pt[0] + jitter[flat, 0], pt[1] + jitter[flat, 1]), region, res)
            values += _bump(res, cell, noise.peak_sigma)
        except OutOfRegion:
            pass
        if spurious[flat]:
            values += _bump(res, tuple(spurious_cells[flat]), noise.peak_sigma, spurious_amp[flat])
        maps.append(Heatmap.trusted(idx, np.clip(values, 0.0, 1.0)))
    return maps


def _clip_box(b: Box, width: float, height: float, min_size: float = 1.0) -> Box:
    x1 = min(max(b.x1, 0.0), width - min_size)
    y1 = min(max(b.y1, 0.0), height - min_size)
    x2 = min(max(b.x2, x1 + min_size), width)
    y2 = min(max(b.y2, y1 + min_size), height)
    return Box(x1, y1, x2, y2)


def perturb_box(gt: Box, noise: float, rng: np.random.Generator) -> Box:
    """Move each edge by a Gaussian fraction (std ``noise``) of the box size."""
    e = rng.standard_normal(4) * noise
    x1 = gt.x1 + e[0] * gt.width
    y1 = gt.y1 + e[1] * gt.height
    x2 = gt.x2 + e[2] * gt.width
    y2 = gt.y2 + e[3] * gt.height
    if x2 - x1 < 1:
        x1, x2 = min(x1, x2), max(x1, x2) + 1
    if y2 - y1 < 1:
        y1, y2 = min(y1, y2), max(y1, y2) + 1
    return Box(x1, y1, x2, y2)


def generate_scenes(
    count: int,
    image_size: tuple[float, float] = (640.0, 480.0),
    objects_per_image: int = 3,
    proposal_noise: float = 0.1,
    seed: int = 0,
    proposals_per_object: int = 6,
    distractors: int = 4,
    num_classes: int = 3,
    score_blend: float = 0.8,
    min_size: float = 16.0,
    max_size: float = 200.0,
) -> list[Scene]:
    """Random scenes; scene ``k`` depends only on (seed, k)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if objects_per_image < 1:
        raise ValueError("objects_per_image must be >= 1")
    width, height = image_size
    scenes = []
    for image_id in range(count):
        rng = np.random.default_rng([seed, image_id])
        gts = []
        for _ in range(objects_per_image):
            w = float(np.exp(rng.uniform(np.log(min_size), np.log(max_size))))
            h = float(np.clip(w * np.exp(rng.normal(0, 0.3)), min_size, height - 1))
            w = min(w, width - 1)
            x1 = float(rng.uniform(0, width - w))
            y1 = float(rng.uniform(0, height - h))
            gts.append((Box(x1, y1, x1 + w, y1 + h), int(rng.integers(num_classes))))

        boxes = []
        for g, _ in gts:
            for _ in range(proposals_per_object):
                boxes.append(_clip_box(perturb_box(g, proposal_noise, rng), width, height))
        for _ in range(distractors):
            w = float(rng.uniform(min_size, max_size))
            h = float(rng.uniform(min_size, max_size))
            x1 = float(rng.uniform(0, max(width - w, 1)))
            y1 = float(rng.uniform(0, max(height - h, 1)))
            boxes.append(_clip_box(Box(x1, y1, x1 + w, y1 + h), width, height))

        proposals = []
        for b in boxes:
            ious = [iou(b, g) for g, _ in gts]
            best = int(np.argmax(ious))
            # off-class scores cluster near zero; a few clear the 0.03 threshold
            scores = 0.05 * rng.random(num_classes) ** 4
            scores[gts[best][1]] = score_blend * ious[best] + (1 - score_blend) * rng.random()
            proposals.append(Proposal(b, tuple(np.clip(scores, 0.0, 1.0).tolist())))
        scenes.append(Scene(image_id, width, height, tuple(gts), tuple(proposals)))
    return scenes


def edge_errors(decoded: Box, gt: Box) -> np.ndarray:
    return np.abs(np.subtract(decoded.as_tuple(), gt.as_tuple()))


def localize_pairs(
    pairs: Sequence[tuple[Box, Box]],
    spec: GridSpec,
    noise: NoiseModel = NoiseModel(),
    opts: DecodeOptions = DecodeOptions(),
) -> list[Box | None]:
    """Render and decode each (proposal, gt) pair; None where the grid is
    incomplete. Pair ``k`` draws from the stream (noise.seed, k)."""
    out = []
    for k, (proposal, gt) in enumerate(pairs):
        rng = np.random.default_rng([noise.seed, k])
        maps = render_heatmaps(gt, proposal, spec, noise, rng)
        try:
            out.append(decode_detection(maps, proposal, spec, opts))
        except IncompleteGrid:
            out.append(None)
    return out


@dataclass
class ProposalRecord:
    variant: str
    image_id: int
    proposal: int
    class_id: int
    score: float
    gt_index: int
    proposal_iou: float
    decoded_iou: float
    status: str
    proposal_box: tuple
    decoded_box: tuple
    gt_box: tuple

    def row(self) -> dict:
        d = asdict(self)
        for key in ("proposal_box", "decoded_box", "gt_box"):
            for name, v in zip(("x1", "y1", "x2", "y2"), d.pop(key)):
                d[f"{key.removesuffix('_box')}_{name}"] = v
        return d


@dataclass
class ExperimentResult:
    variants: dict[str, dict]
    baseline: dict
    records: list[ProposalRecord] = field(default_factory=list)

    def metrics(self) -> dict:
        return {"variants": self.variants, "baseline": self.baseline}


def _scene_work(scene: Scene, variants, noise, pipeline, opts):
    items, owners = scene.scored_boxes()
    run = pipeline_plus(items, pipeline)
    out = {"selected": [], "records": {s.label: [] for s in variants}}
    for k in run.selected:
        p_idx = owners[k]
        item = items[k]
        g_idx, p_iou = scene.best_gt(item.box)
        gt = scene.gts[g_idx][0]
        out["selected"].append((item, g_idx, p_iou))
        for spec in variants:
            # same stream for every variant: jitter draws are shared
            rng = np.random.default_rng([noise.seed, scene.image_id, p_idx])
            maps = render_heatmaps(gt, item.box, spec, noise, rng)
            try:
                decoded = decode_detection(maps, item.box, spec, opts)
                status = "ok"
            except IncompleteGrid:
                decoded, status = item.box, "incomplete"
            out["records"][spec.label].append(
                ProposalRecord(
                    spec.label, scene.image_id, p_idx, item.class_id, item.score,
                    g_idx, p_iou, iou(decoded, gt), status,
                    item.box.as_tuple(), decoded.as_tuple(), gt.as_tuple(),
                )
            )
    return out


def _error_stats(records: Sequence[ProposalRecord], positive_iou: float) -> dict:
    pos = [r for r in records if r.proposal_iou > positive_iou]
    ok = [r for r in pos if r.status == "ok"]
    errs = np.array([edge_errors(Box(*r.decoded_box), Box(*r.gt_box)) for r in ok]).reshape(-1, 4)
    stats = {
        "num_positive": len(pos),
        "num_decoded": len(ok),
        "num_incomplete": len(pos) - len(ok),
        "mean_iou": float(np.mean([r.decoded_iou for r in ok])) if ok else None,
        "mean_edge_error": float(errs.mean()) if errs.size else None,
        "max_edge_error": float(errs.max()) if errs.size else None,
        "per_edge_mean_error": errs.mean(axis=0).tolist() if errs.size else None,
    }
    return stats


def run_experiment(
    scenes: Sequence[Scene],
    variants: Sequence[GridSpec],
    noise: NoiseModel = NoiseModel(),
    pipeline: PipelineConfig = PipelineConfig(),
    opts: DecodeOptions = DecodeOptions(),
    positive_iou: float = 0.5,
    workers: int = 1,
) -> ExperimentResult:
    """Select with the NMS-once pipeline, render, decode, evaluate.

    Metrics per variant: AP (COCO-style) of the decoded detections, and edge
    error / IoU statistics over selected proposals that are positives
    (IoU > ``positive_iou`` with their best gt). The baseline entry scores the
    selected proposal boxes unchanged. Grids that cannot be completed fall
    back to the proposal box and are counted as incomplete.
    """
    if not scenes or not variants:
        raise ValueError("need at least one scene and one variant")
    labels = [v.label for v in variants]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate variant labels: {labels}")

    def work(scene):
        return _scene_work(scene, variants, noise, pipeline, opts)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, scenes))
    else:
        results = [work(s) for s in scenes]

    gts = [g for s in scenes for g in s.ground_truth()]
    baseline_dets, baseline_records = [], []
    for scene, res in zip(scenes, results):
        for item, g_idx, p_iou in res["selected"]:
            baseline_dets.append(Detection(scene.image_id, item.class_id, item.score, item.box))
            gt = scene.gts[g_idx][0]
            baseline_records.append(
                ProposalRecord(
                    "proposal", scene.image_id, -1, item.class_id, item.score, g_idx,
                    p_iou, p_iou, "ok", item.box.as_tuple(), item.box.as_tuple(), gt.as_tuple(),
                )
            )
    baseline = _error_stats(baseline_records, positive_iou)
    baseline["eval"] = evaluate(baseline_dets, gts).to_dict()

    metrics, records = {}, []
    for spec in variants:
        recs = [r for res in results for r in res["records"][spec.label]]
        records.extend(recs)
        dets = [Detection(r.image_id, r.class_id, r.score, Box(*r.decoded_box)) for r in recs]
        stats = _error_stats(recs, positive_iou)
        stats["spec"] = spec.to_dict()
        stats["eval"] = evaluate(dets, gts).to_dict()
        metrics[spec.label] = stats
        log.info("variant %s: %s", spec.label, {k: stats[k] for k in ("num_decoded", "mean_edge_error")})
    return ExperimentResult(metrics, baseline, records)


def compare_pipelines(
    scenes: Sequence[Scene],
    spec: GridSpec,
    noise: NoiseModel = NoiseModel(),
    plus: PipelineConfig = PipelineConfig(),
    original: PipelineConfig = PipelineConfig.original(),
    opts: DecodeOptions = DecodeOptions(),
) -> list[dict]:
    """Run both post-processing pipelines on each scene.

    The original pipeline's second pass sees grid-decoded boxes rendered with
    ``noise``. Wall times cover the NMS pipelines only, not decoding.
    """
    rows = []
    for scene in scenes:
        items, owners = scene.scored_boxes()
        t0 = time.perf_counter()
        run_plus = pipeline_plus(items, plus)
        t_plus = time.perf_counter() - t0

        first = pipeline_plus(
            items, PipelineConfig(original.score_thresh, original.nms_iou, original.top_k)
        )
        by_owner: dict[int, Box] = {}
        decoded = {}
        for k in first.selected:
            p_idx = owners[k]
            if p_idx not in by_owner:
                box = items[k].box
                gt = scene.gts[scene.best_gt(box)[0]][0]
                rng = np.random.default_rng([noise.seed, scene.image_id, p_idx])
                maps = render_heatmaps(gt, box, spec, noise, rng)
                try:
                    by_owner[p_idx] = decode_detection(maps, box, spec, opts)
                except IncompleteGrid:
                    by_owner[p_idx] = box
            decoded[k] = by_owner[p_idx]
        t0 = time.perf_counter()
        run_orig = pipeline_original(items, decoded, original)
        t_orig = time.perf_counter() - t0
        rows.append(
            {
                "image_id": scene.image_id,
                "num_items": len(items),
                "plus_selected": len(run_plus.selected),
                "original_selected": len(run_orig.selected),
                "plus_iou_evals": count_pairwise_iou_evals(run_plus),
                "original_iou_evals": count_pairwise_iou_evals(run_orig),
                "original_second_pass_evals": run_orig.nms_passes[1],
                "plus_seconds": t_plus,
                "original_seconds": t_orig,
            }
        )
    return rows
