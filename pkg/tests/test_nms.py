import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridloc.geometry import Box
from gridloc.nms import (
    PipelineConfig,
    ScoredBox,
    count_pairwise_iou_evals,
    greedy_nms,
    greedy_nms_counted,
    pipeline_original,
    pipeline_plus,
)

from helpers import brute_force_nms, random_box


def sb(x1, y1, x2, y2, cls=0, score=0.5):
    return ScoredBox(Box(x1, y1, x2, y2), cls, score)


def random_items(rng, n, classes, lo=0.0, hi=300.0):
    # coarse score grid forces plenty of ties
    return [
        ScoredBox(random_box(rng, lo, hi, 5, 80), int(rng.integers(classes)),
                  float(rng.integers(0, 20)) / 20)
        for _ in range(n)
    ]


def grid_boxes(count, size=10.0, gap=5.0):
    per_row = 20
    return [
        Box((k % per_row) * (size + gap), (k // per_row) * (size + gap),
            (k % per_row) * (size + gap) + size, (k // per_row) * (size + gap) + size)
        for k in range(count)
    ]


class TestGreedyNms:
    def test_duplicates_same_class(self):
        items = [sb(0, 0, 10, 10, 0, 0.8), sb(0, 0, 10, 10, 0, 0.9)]
        assert greedy_nms(items, 0.5) == [1]

    def test_duplicates_different_class(self):
        items = [sb(0, 0, 10, 10, 0, 0.9), sb(0, 0, 10, 10, 1, 0.8)]
        assert sorted(greedy_nms(items, 0.5)) == [0, 1]

    def test_threshold_is_strict(self):
        # IoU exactly 0.5: suppressed at 0.5, kept just above it
        items = [sb(0, 0, 10, 10, 0, 0.9), sb(0, 0, 10, 5, 0, 0.8)]
        assert greedy_nms(items, 0.5) == [0]
        assert greedy_nms(items, 0.5 + 1e-12) == [0, 1]

    def test_tie_goes_to_lower_index(self):
        items = [sb(0, 0, 10, 10, 0, 0.7), sb(1, 0, 11, 10, 0, 0.7)]
        assert greedy_nms(items, 0.5) == [0]

    def test_empty(self):
        assert greedy_nms([], 0.5) == []

    def test_chain_suppression_depends_on_kept_only(self):
        # B overlaps A and C, A and C disjoint: suppressing B must not save or kill C wrongly
        a, b, c = sb(0, 0, 10, 10, 0, 0.9), sb(4, 0, 14, 10, 0, 0.8), sb(9, 0, 19, 10, 0, 0.7)
        assert greedy_nms([a, b, c], 0.3) == [0, 2]

    def test_brute_force_200(self):
        rng = np.random.default_rng(0)
        items = random_items(rng, 200, 5)
        assert set(greedy_nms(items, 0.5)) == brute_force_nms(items, 0.5)

    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 60), st.integers(1, 80),
           st.sampled_from([0.0, 0.1, 0.3, 0.5, 0.7, 1.0]))
    def test_matches_oracle(self, seed, n, classes, thresh):
        rng = np.random.default_rng(seed)
        items = random_items(rng, n, classes, hi=150.0)
        assert set(greedy_nms(items, thresh)) == brute_force_nms(items, thresh)

    def test_kept_count_not_monotone_in_threshold(self):
        # B survives at 0.2 and then removes C and D, which survive at 0.1
        a, b = Box(0, 0, 10, 10), Box(7, 0, 17, 20)
        c, d = Box(11, 0, 21, 10), Box(11, 10, 21, 20)
        items = [ScoredBox(x, 0, s) for x, s in zip((a, b, c, d), (0.9, 0.8, 0.7, 0.6))]
        assert greedy_nms(items, 0.1) == [0, 2, 3]
        assert greedy_nms(items, 0.2) == [0, 1]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    def test_threshold_endpoints(self, seed, classes):
        rng = np.random.default_rng(seed)
        items = random_items(rng, 40, classes, hi=120.0)
        # IoU >= 0 always holds, so one survivor per class; nothing reaches 1.01
        assert len(greedy_nms(items, 0.0)) == len({i.class_id for i in items})
        assert len(greedy_nms(items, 1.01)) == len(items)

    def test_output_sorted_by_score(self):
        rng = np.random.default_rng(9)
        items = random_items(rng, 120, 4)
        kept = greedy_nms(items, 0.4)
        keys = [(-items[i].score, i) for i in kept]
        assert keys == sorted(keys)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        items = random_items(rng, 80, 2)
        assert greedy_nms(items, 0.3) == greedy_nms(list(items), 0.3)


class TestEvalCounting:
    def test_single_box(self):
        run = pipeline_plus([sb(0, 0, 10, 10, 0, 0.9)])
        assert count_pairwise_iou_evals(run) == 0

    @pytest.mark.parametrize("n", [2, 5, 17])
    def test_disjoint_same_class_is_n_choose_2(self, n):
        items = [ScoredBox(b, 0, 0.5 + k / 100) for k, b in enumerate(grid_boxes(n))]
        assert greedy_nms_counted(items, 0.5)[1] == n * (n - 1) // 2

    def test_overlapping_decoded_boxes_plus_fewer(self):
        rng = np.random.default_rng(2)
        items = random_items(rng, 60, 2)
        items = [ScoredBox(i.box, i.class_id, 0.1 + i.score * 0.8) for i in items]
        plus = pipeline_plus(items)
        first = pipeline_plus(items, PipelineConfig(0.03, 0.5, 125))
        # decoded boxes collapse onto one location per class
        decoded = {k: Box(50, 50, 90, 90) for k in first.selected}
        orig = pipeline_original(items, decoded)
        assert orig.nms_passes[1] > 0
        assert count_pairwise_iou_evals(plus) < count_pairwise_iou_evals(orig)


class TestPipelines:
    def test_config_round_trip(self):
        cfg = PipelineConfig(0.03, 0.3, 100)
        assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
        assert PipelineConfig.from_dict(PipelineConfig.original().to_dict()) == PipelineConfig.original()

    def test_config_rejects_unknown(self):
        with pytest.raises(KeyError):
            PipelineConfig.from_dict({"nms": 0.3})

    def test_all_below_threshold(self):
        items = [sb(0, 0, 10, 10, 0, 0.02), sb(20, 0, 30, 10, 0, 0.0299)]
        assert pipeline_plus(items).selected == []

    def test_threshold_inclusive(self):
        assert pipeline_plus([sb(0, 0, 10, 10, 0, 0.03)]).selected == [0]

    def test_top_100_of_150_disjoint(self):
        rng = np.random.default_rng(1)
        scores = rng.permutation(150) / 160 + 0.05
        items = [ScoredBox(b, 0, float(s)) for b, s in zip(grid_boxes(150), scores)]
        run = pipeline_plus(items)
        assert run.selected == [int(i) for i in np.argsort(-scores)[:100]]

    def test_original_identity_decode_is_superset(self):
        rng = np.random.default_rng(3)
        scores = rng.permutation(150) / 160 + 0.05
        items = [ScoredBox(b, 0, float(s)) for b, s in zip(grid_boxes(150), scores)]
        decoded = {k: it.box for k, it in enumerate(items)}
        plus = pipeline_plus(items)
        orig = pipeline_original(items, decoded)
        assert len(orig.selected) == 125
        assert orig.selected[:100] == plus.selected

    def test_same_decoded_box_removed_only_by_original(self):
        items = [sb(0, 0, 10, 10, 0, 0.9), sb(30, 0, 40, 10, 0, 0.8)]
        decoded = {0: Box(15, 0, 25, 10), 1: Box(15, 0, 25, 10)}
        assert len(pipeline_plus(items).selected) == 2
        orig = pipeline_original(items, decoded)
        assert orig.selected == [0]
        assert orig.detections[0].box == Box(15, 0, 25, 10)

    def test_original_empty(self):
        run = pipeline_original([], {})
        assert run.selected == [] and run.iou_evals == 0

    def test_original_missing_decoded(self):
        with pytest.raises(KeyError):
            pipeline_original([sb(0, 0, 10, 10, 0, 0.9)], {})

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 30))
    def test_output_bounded_and_sorted(self, seed, k):
        rng = np.random.default_rng(seed)
        items = random_items(rng, 80, 3)
        run = pipeline_plus(items, PipelineConfig(0.1, 0.5, k))
        assert len(run.selected) <= k
        s = [items[i].score for i in run.selected]
        assert s == sorted(s, reverse=True)


def test_scored_box_validation():
    with pytest.raises(ValueError):
        ScoredBox(Box(0, 0, 1, 1), 0, float("nan"))
