import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from geoanchor.camera import DomainError
from geoanchor.evaluation import (
    CategoryScore,
    PipelineConfig,
    detection_f1,
    evaluate_corpus,
    grounding_accuracy,
    load_category_set,
    match_boxes,
    rescale_sweep,
)
from geoanchor.geometry import Box3D
from geoanchor.reasoner import CategoryPriorEstimator, build_priors

import oracles


def cube(dx, dy=0.0, s=1.0):
    return Box3D(dx, dy, 3.0, s, s, s)


def shift_for(iou):
    # unit cubes shifted along x: IoU = (1 - d) / (1 + d)
    return (1 - iou) / (1 + iou)


def aligned_iou(a, b):
    lo = np.maximum(np.array(a.center) - a.dims / 2, np.array(b.center) - b.dims / 2)
    hi = np.minimum(np.array(a.center) + a.dims / 2, np.array(b.center) + b.dims / 2)
    inter = float(np.prod(np.clip(hi - lo, 0, None)))
    return inter / (a.volume + b.volume - inter)


def bruteforce_counts(pred_frames, gt_frames, tau):
    """Per-category (tp, fp, fn) from an exhaustive maximum matching per frame."""
    counts = {}
    for p, g in zip(pred_frames, gt_frames):
        for c in {x[0] for x in p} | {x[0] for x in g}:
            pc = [b for k, b in p if k == c]
            gc = [b for k, b in g if k == c]
            ious = np.array([[aligned_iou(a, b) for b in gc] for a in pc]).reshape(len(pc), len(gc))
            tp = oracles.best_matching_tp(ious, tau)
            row = counts.setdefault(c, [0, 0, 0])
            row[0] += tp
            row[1] += len(pc) - tp
            row[2] += len(gc) - tp
    return counts


class TestMatch:
    def test_identity(self):
        m = match_boxes([("a", cube(0))], [("a", cube(0))])
        assert m.pairs == ((0, 0, 1.0),)

    def test_below_threshold(self):
        m = match_boxes([("a", cube(shift_for(0.2)))], [("a", cube(0))])
        assert m.pairs == () and m.unmatched_preds == (0,) and m.unmatched_gts == (0,)

    def test_two_preds_one_gt(self):
        preds = [("a", cube(shift_for(0.5))), ("a", cube(-shift_for(0.3)))]
        m = match_boxes(preds, [("a", cube(0))])
        assert len(m.pairs) == 1 and m.pairs[0][:2] == (0, 0)
        assert m.pairs[0][2] == pytest.approx(0.5)
        assert m.unmatched_preds == (1,)
        ious = np.array([[0.5], [0.3]])
        assert oracles.best_matching_tp(ious, 0.25) == 1

    def test_category_boundary(self):
        m = match_boxes([("a", cube(0))], [("b", cube(0))])
        assert m.pairs == ()

    def test_threshold_inclusive(self):
        # a unit cube inside a 2x2x1 box: IoU is exactly 1/4
        m = match_boxes([("a", cube(0))], [("a", Box3D(0, 0, 3, 2, 2, 1))])
        assert m.pairs == ((0, 0, 0.25),)

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.1])
    def test_bad_tau(self, tau):
        with pytest.raises(DomainError):
            match_boxes([], [], tau)

    @given(st.lists(st.tuples(st.sampled_from("ab"), st.floats(-1.2, 1.2), st.floats(-1.2, 1.2)), max_size=5),
           st.lists(st.tuples(st.sampled_from("ab"), st.floats(-1.2, 1.2), st.floats(-1.2, 1.2)), max_size=5),
           st.randoms())
    def test_one_to_one_and_order_free(self, p, g, rnd):
        preds = [(c, cube(x, y)) for c, x, y in p]
        gts = [(c, cube(x, y)) for c, x, y in g]
        m = match_boxes(preds, gts)
        assert len({i for i, _, _ in m.pairs}) == len(m.pairs) == len({j for _, j, _ in m.pairs})
        assert all(v >= 0.25 and preds[i][0] == gts[j][0] for i, j, v in m.pairs)
        shuffled = preds[:]
        rnd.shuffle(shuffled)
        r1 = detection_f1(preds, gts).per_category
        r2 = detection_f1(shuffled, gts).per_category
        assert r1 == r2
        # greedy never beats the exhaustive optimum
        bf = bruteforce_counts([preds], [gts], 0.25)
        assert all(r1[c].tp <= bf[c][0] for c in r1)


class TestDetectionF1:
    def test_perfect(self):
        frame = [("a", cube(0)), ("b", cube(5)), ("b", cube(9))]
        assert detection_f1(frame, frame).avg_f1 == 1.0

    def test_one_tp_one_fp(self):
        rep = detection_f1([("a", cube(0)), ("a", cube(7))], [("a", cube(0))])
        assert rep.per_category["a"] == CategoryScore(1, 1, 0)
        assert rep.avg_f1 == pytest.approx(2 / 3)

    def test_mixed_three_categories(self):
        d3, d2 = shift_for(0.3), shift_for(0.2)
        gts = [[("chair", cube(0)), ("chair", cube(4)), ("table", cube(8)), ("lamp", cube(12))],
               [("chair", cube(0)), ("table", cube(3, 3)), ("table", cube(8))]]
        preds = [[("chair", cube(d3)), ("chair", cube(4 + d2)), ("table", cube(8)), ("table", cube(20)),
                  ("lamp", cube(12.1))],
                 [("chair", cube(0)), ("chair", cube(0.05)), ("table", cube(8 + d3))]]
        # hand count: chair TP 2, FP 2, FN 1; table TP 2, FP 1, FN 1; lamp TP 1
        rep = detection_f1(preds, gts)
        assert rep.per_category["chair"] == CategoryScore(2, 2, 1)
        assert rep.per_category["table"] == CategoryScore(2, 1, 1)
        assert rep.per_category["lamp"] == CategoryScore(1, 0, 0)
        assert {c: [s.tp, s.fp, s.fn] for c, s in rep.per_category.items()} == bruteforce_counts(preds, gts, 0.25)
        expect = (Fraction(4, 7) + Fraction(2, 3) + 1) / 3
        assert rep.avg_f1 == pytest.approx(float(expect), abs=1e-15)

    def test_category_set(self):
        gts = [("a", cube(0)), ("b", cube(4))]
        preds = [("a", cube(0)), ("c", cube(9))]
        rep = detection_f1(preds, gts, category_set=["a", "c", "z"])
        # c has predictions only and scores 0; z never appears and is not evaluated
        assert rep.evaluated == ("a", "c") and rep.avg_f1 == 0.5
        assert detection_f1(preds, gts).evaluated == ("a", "b")

    def test_frames_do_not_cross(self):
        rep = detection_f1([[("a", cube(0))], []], [[], [("a", cube(0))]])
        assert rep.per_category["a"] == CategoryScore(0, 1, 1)

    @given(st.integers(0, 10**6))
    def test_f1_range(self, seed):
        rng = np.random.default_rng(seed)
        gts = [(str(rng.integers(3)), cube(*rng.uniform(-2, 2, 2))) for _ in range(rng.integers(1, 6))]
        preds = [(str(rng.integers(3)), cube(*rng.uniform(-2, 2, 2))) for _ in range(rng.integers(0, 6))]
        rep = detection_f1(preds, gts)
        for s in rep.per_category.values():
            assert 0 <= s.f1 <= 1
            assert (s.f1 == 1) == (s.fp == 0 and s.fn == 0 and s.tp > 0)

    def test_empty_everything(self):
        assert detection_f1([], []).avg_f1 == 0.0


class TestGrounding:
    def test_examples(self):
        g = [cube(0), cube(3), cube(6), cube(9)]
        assert grounding_accuracy(g, g) == 1.0
        assert grounding_accuracy([cube(50)] * 4, g) == 0.0
        assert grounding_accuracy([cube(0), cube(3), cube(6), None], g) == 0.75
        assert grounding_accuracy([cube(0), cube(3), cube(6), cube(9 + shift_for(0.2))], g) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            grounding_accuracy([], [cube(0)])


class TestCategorySet(object):
    def test_load(self, tmp_path):
        (tmp_path / "s.txt").write_text("# eight\nchair\n\ntable  # trailing\n")
        assert load_category_set(tmp_path / "s.txt") == ["chair", "table"]

    def test_empty(self, tmp_path):
        (tmp_path / "s.txt").write_text("# nothing\n")
        with pytest.raises(DomainError):
            load_category_set(tmp_path / "s.txt")


class TestCorpus:
    def test_oracle_pipeline_perfect(self, small_corpus):
        for task in ("detection", "grounding"):
            res = evaluate_corpus(small_corpus, task, PipelineConfig())
            assert res["metric"] == 1.0 and res["failures"] == []

    def test_prior_estimator_runs(self, small_corpus):
        pc = PipelineConfig(estimator=CategoryPriorEstimator(build_priors(i for s in small_corpus for i in s.instances)))
        res = evaluate_corpus(small_corpus, "detection", pc)
        assert 0.0 <= res["metric"] <= 1.0

    def test_sweep_flat_and_frozen(self, small_corpus):
        flat = rescale_sweep(small_corpus, "detection", PipelineConfig())
        assert len(flat.entries) == 11
        assert max(flat.metrics()) - min(flat.metrics()) <= 1e-9
        frozen = rescale_sweep(small_corpus, "detection", PipelineConfig(frozen_intrinsics=True), (0.5, 1.0, 1.5))
        m = dict(zip((0.5, 1.0, 1.5), frozen.metrics()))
        assert m[0.5] < m[1.0] and m[1.5] < m[1.0]

    def test_empty_corpus(self):
        rep = rescale_sweep([], "grounding", PipelineConfig())
        assert len(rep.entries) == 11
        assert all(e.n_scenes == 0 and e.n_targets == 0 for e in rep.entries)

    def test_table_layout(self, small_corpus):
        rep = rescale_sweep(small_corpus[:2], "grounding", PipelineConfig(), (0.5, 1.0))
        head, row = rep.table().splitlines()
        assert head.split() == ["Method", "0.5", "1.0"]
        assert row.split() == ["equation-anchored", "100.00", "100.00"]
