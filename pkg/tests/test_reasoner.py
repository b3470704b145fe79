import json
import statistics

import numpy as np
import pytest
from hypothesis import given, strategies as st

from geoanchor.camera import CameraIntrinsics, DomainError, ImageMeta, back_project
from geoanchor.geometry import Box2D, Box3D
from geoanchor.reasoner import (
    Anchor,
    CategoryPriorEstimator,
    ConfigurationError,
    GTOracleEstimator,
    PriorTable,
    build_priors,
    build_priors_from_rows,
    estimate_dims_category_prior,
    mean_depth,
    run_pipeline,
    write_deductions,
)
from geoanchor.scene import InstanceGT, SceneRecord, project_box_to_2d, rescale_scene
from geoanchor.tools import SamplingConfig

K0 = CameraIntrinsics(500, 500, 320, 240)
META = ImageMeta(640, 480)


def block_scene(mask_slice=np.s_[220:260, 400:440], depth_value=2.0):
    depth = np.full((480, 640), depth_value, np.float32)
    mask = np.zeros((480, 640), np.uint8)
    mask[mask_slice] = 1
    inst = InstanceGT(1, "cube", Box3D(0.4, 0, 2, 1, 1, 1), "mask_1.raw")
    return SceneRecord("blk", META, K0, depth, (inst,), {1: mask})


ANCHOR = Anchor("cube", Box2D(370, 190, 470, 290), instance_id=1)


class TestPipeline:
    def test_direct_substitution(self):
        sc = block_scene(np.s_[230:231, 400:403])  # exactly three valid pixels
        boxes, recs = run_pipeline(sc, [ANCHOR], SamplingConfig(), GTOracleEstimator())
        assert len(recs[0].samples) == 3 and recs[0].z_bar == 2.0
        assert (recs[0].u_c, recs[0].v_c) == (420, 240)
        assert boxes[0].to_list() == pytest.approx([0.4, 0, 2, 1, 1, 1, 0, 0, 0], abs=1e-15)

    def test_rescale_gives_identical_box(self):
        sc = block_scene()
        base, _ = run_pipeline(sc, [ANCHOR], SamplingConfig(), GTOracleEstimator())
        half = rescale_scene(sc, 0.5)
        anchor = Anchor("cube", ANCHOR.box2d.scaled(0.5), instance_id=1)
        got, _ = run_pipeline(half, [anchor], SamplingConfig(), GTOracleEstimator())
        assert got == base

    def test_no_depth_flagged_and_skipped(self):
        sc = block_scene(np.s_[0:0, 0:0])
        other = Anchor("cube", Box2D(0, 0, 10, 10), instance_id=1)
        boxes, recs = run_pipeline(block_scene(np.s_[0:5, 0:5]), [ANCHOR, other], SamplingConfig(),
                                   GTOracleEstimator())
        assert recs[0].no_depth and recs[0].center_hat is None
        assert not recs[1].no_depth and len(boxes) == 1
        assert run_pipeline(sc, [ANCHOR], SamplingConfig(), GTOracleEstimator())[0] == []

    def test_normalized_anchor(self):
        sc = block_scene()
        norm = Anchor("cube", norm_box=(578, 396, 734, 604), instance_id=1)
        assert norm.absolute(sc) == Box2D(370, 190, 470, 290)

    def test_anchor_needs_one_box(self):
        with pytest.raises(DomainError):
            Anchor("x")
        with pytest.raises(DomainError):
            Anchor("x", Box2D(0, 0, 1, 1), (0, 0, 1, 1))

    def test_oracle_needs_instance(self):
        with pytest.raises(DomainError):
            run_pipeline(block_scene(), [Anchor("cube", ANCHOR.box2d)], SamplingConfig(), GTOracleEstimator())

    def test_matches_manual_chain(self, small_corpus):
        # independent recomputation of steps 3-5 from the record's own samples
        for sc in small_corpus:
            anchors = [Anchor(i.category, project_box_to_2d(i.box3d, sc.intrinsics, sc.meta), instance_id=i.instance_id)
                       for i in sc.instances]
            boxes, recs = run_pipeline(sc, anchors, SamplingConfig(), GTOracleEstimator())
            for b, r in zip(boxes, [r for r in recs if not r.no_depth]):
                u_c = (r.box2d.u_min + r.box2d.u_max) / 2
                v_c = (r.box2d.v_min + r.box2d.v_max) / 2
                z = statistics.fmean(s.z for s in r.samples)
                x = (u_c - sc.intrinsics.cx) * z / sc.intrinsics.fx
                y = (v_c - sc.intrinsics.cy) * z / sc.intrinsics.fy
                assert (b.x, b.y, b.z) == pytest.approx((x, y, z), abs=1e-12)
                gt = sc.instance(r.instance_id).box3d
                assert (b.l, b.w, b.h, b.yaw) == (gt.l, gt.w, gt.h, gt.yaw)

    def test_depth_decimals(self):
        sc = block_scene(depth_value=2.004)
        _, recs = run_pipeline(sc, [ANCHOR], SamplingConfig(), GTOracleEstimator(), depth_decimals=2)
        assert all(s.z == 2.0 for s in recs[0].samples)

    def test_deductions_jsonl(self, tmp_path):
        _, recs = run_pipeline(block_scene(), [ANCHOR], SamplingConfig(), GTOracleEstimator())
        write_deductions(recs, tmp_path / "d.jsonl", "blk")
        row = json.loads((tmp_path / "d.jsonl").read_text())
        assert row["scene_id"] == "blk" and row["bbox_2d"] == [370, 190, 470, 290]
        assert row["no_depth"] is False and len(row["samples"]) == 5


class TestMeanDepth:
    @given(st.lists(st.floats(0.1, 100), min_size=1, max_size=10), st.randoms())
    def test_permutation_invariant(self, zs, rnd):
        shuffled = zs[:]
        rnd.shuffle(shuffled)
        assert mean_depth(zs) == mean_depth(shuffled)

    def test_value(self):
        assert mean_depth([4.32] * 5) == 4.32


class TestPriors:
    FIXTURE = [("chair", (0.5, 0.5, 0.9)), ("chair", (0.6, 0.4, 1.0)), ("chair", (0.55, 0.7, 0.8)),
               ("table", (1.2, 0.8, 0.75)), ("table", (1.6, 0.9, 0.7)), ("lamp", (0.3, 0.3, 1.5)),
               ("chair", (0.45, 0.45, 0.95))]

    def instances(self):
        return [InstanceGT(k, c, Box3D(0, 0, 3, *d)) for k, (c, d) in enumerate(self.FIXTURE)]

    def test_medians_match_bruteforce(self):
        pt = build_priors(self.instances())
        for cat in ("chair", "table", "lamp"):
            rows = [d for c, d in self.FIXTURE if c == cat]
            assert pt.rows[cat] == tuple(statistics.median(r[k] for r in rows) for k in range(3))
        assert pt.global_median == tuple(statistics.median(d[k] for _, d in self.FIXTURE) for k in range(3))

    def test_lookup_and_fallback(self):
        pt = build_priors(self.instances())
        est = estimate_dims_category_prior("table", pt)
        assert (est.l, est.w, est.h) == pytest.approx((1.4, 0.85, 0.725)) and not est.unknown
        assert (est.yaw, est.pitch, est.roll) == (0, 0, 0)
        unk = estimate_dims_category_prior("piano", pt)
        assert unk.unknown and (unk.l, unk.w, unk.h) == pt.global_median

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            build_priors([])
        with pytest.raises(ConfigurationError):
            build_priors_from_rows({})
        with pytest.raises(ConfigurationError):
            CategoryPriorEstimator(PriorTable({}, (1, 1, 1)))

    def test_csv_round_trip(self, tmp_path):
        pt = build_priors(self.instances())
        pt.to_csv(tmp_path / "p.csv")
        back = PriorTable.from_csv(tmp_path / "p.csv")
        assert back.rows == pt.rows

    def test_estimator_in_pipeline(self):
        pt = build_priors_from_rows({"cube": (2.0, 3.0, 4.0)})
        boxes, _ = run_pipeline(block_scene(), [ANCHOR], SamplingConfig(), CategoryPriorEstimator(pt))
        assert (boxes[0].l, boxes[0].w, boxes[0].h) == (2.0, 3.0, 4.0)
        assert (boxes[0].x, boxes[0].y, boxes[0].z) == pytest.approx(tuple(back_project(420, 240, 2.0, K0)))
