import math

import numpy as np
import pytest

from fieldnav.cropsense import (
    CropClass,
    DetectorProfile,
    DiseaseMap,
    DiseaseObservation,
    UNRESOLVED,
    disease_csv_lines,
    evaluate,
    frames_elapsed,
    fuse,
    measured_profile,
    observe,
)
from fieldnav.simworld import CellKind, Pose, make_world

IDENTITY = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


def crop_field(kind=CellKind.CROP_HEALTHY, size=20, res=0.25):
    w = make_world(size, size, res)
    w.cells[:] = kind
    return w


class TestMeasuredProfile:
    def test_frame_rate(self):
        assert measured_profile().rate_hz == 42.3

    def test_brown_recall_rounds_to_099(self):
        conf = measured_profile().confusion_matrix()
        assert conf[0, 0] == pytest.approx(111 / 112)
        assert round(conf[0, 0], 2) == 0.99
        assert conf[0, 2] == 0.0

    def test_rows_stochastic(self):
        conf = measured_profile().confusion_matrix()
        assert np.allclose(conf.sum(axis=1), 1.0, atol=1e-9)
        assert (conf >= 0).all()

    def test_single_error_reconstruction(self):
        # one brown->yellow mistake over a 112/116/140 test split
        conf = measured_profile().confusion_matrix()
        errors = (112 * conf[0, 1] + 112 * conf[0, 2]
                  + 116 * conf[1, 0] + 116 * conf[1, 2]
                  + 140 * conf[2, 0] + 140 * conf[2, 1])
        assert errors == pytest.approx(1.0)

    def test_invalid_rows_rejected(self):
        with pytest.raises(ValueError):
            DetectorProfile(confusion=((0.5, 0.0, 0.0), (0, 1, 0), (0, 0, 1)))


class TestFramesElapsed:
    def test_exact_cadence_over_long_run(self):
        rate, dt = 42.3, 0.05
        total = sum(frames_elapsed(rate, k * dt, (k + 1) * dt) for k in range(2000))
        # 100 s of simulated time -> 4230 frames -> exactly 42.30 Hz
        assert total == 4230
        assert abs(total / 100.0 - rate) <= 0.1

    def test_multiple_frames_per_tick(self):
        assert frames_elapsed(42.3, 0.0, 0.05) in (2, 3)


class TestObserve:
    def test_no_crop_in_footprint_empty(self):
        w = make_world(20, 20, 0.25)
        w.cells[0, 0] = CellKind.CROP_BROWN  # far corner, outside footprint
        profile = DetectorProfile(leaf_recall=1.0, confusion=IDENTITY)
        obs = observe(w, Pose(4.0, 4.0, 0), profile, 0, np.random.default_rng(0))
        assert obs == []

    def test_identity_profile_full_recall(self):
        w = crop_field(CellKind.CROP_YELLOW)
        profile = DetectorProfile(leaf_recall=1.0, confusion=IDENTITY, fov_radius=1.0)
        pose = Pose(2.5, 2.5, 0)
        obs = observe(w, pose, profile, 7, np.random.default_rng(0))
        # exactly the crop cells whose centers fall inside the disc
        expected = 0
        for cy in range(w.height):
            for cx in range(w.width):
                x, y = w.cell_center(cx, cy)
                if (x - pose.x) ** 2 + (y - pose.y) ** 2 <= 1.0:
                    expected += 1
        assert len(obs) == expected
        assert all(o.predicted == CropClass.YELLOW for o in obs)
        assert all(o.tick == 7 for o in obs)

    def test_brown_misclassification_rate(self):
        w = crop_field(CellKind.CROP_BROWN, size=9, res=0.25)
        profile = measured_profile()
        rng = np.random.default_rng(42)
        pose = Pose(9 * 0.25 / 2, 9 * 0.25 / 2, 0)
        counts = np.zeros(3)
        n = 0
        while n < 100_000:
            for o in observe(w, pose, DetectorProfile(
                    leaf_recall=1.0, confusion=profile.confusion), 0, rng):
                counts[o.predicted] += 1
                n += 1
        p_yellow = counts[1] / n
        expected = 1 / 112
        sigma = math.sqrt(expected * (1 - expected) / n)
        assert abs(p_yellow - expected) <= 3 * sigma
        assert counts[2] == 0

    def test_empirical_confusion_convergence(self):
        rng = np.random.default_rng(3)
        profile = measured_profile()
        conf = profile.confusion_matrix()
        for cls, kind in [(0, CellKind.CROP_BROWN), (1, CellKind.CROP_YELLOW),
                          (2, CellKind.CROP_HEALTHY)]:
            w = crop_field(kind, size=9, res=0.25)
            pose = Pose(1.125, 1.125, 0)
            counts = np.zeros(3)
            n = 0
            while n < 100_000:
                for o in observe(w, pose, DetectorProfile(
                        leaf_recall=1.0, confusion=profile.confusion), 0, rng):
                    counts[o.predicted] += 1
                    n += 1
            emp = counts / n
            assert np.abs(emp - conf[cls]).max() < 0.01


def obs(cell, predicted, tick=0):
    return DiseaseObservation(cell=cell, predicted=predicted, tick=tick,
                              observer_pose=Pose(0, 0, 0))


class TestFuse:
    def test_unanimous_brown(self):
        w = crop_field(CellKind.CROP_BROWN, size=4)
        d = DiseaseMap(w)
        fuse(d, [obs((1, 1), CropClass.BROWN)] * 3)
        assert d.fused_labels()[1, 1] == CropClass.BROWN

    def test_tie_unresolved(self):
        w = crop_field(CellKind.CROP_BROWN, size=4)
        d = DiseaseMap(w)
        fuse(d, [obs((1, 1), CropClass.BROWN)] * 2 +
                [obs((1, 1), CropClass.YELLOW)] * 2)
        assert d.fused_labels()[1, 1] == UNRESOLVED

    def test_below_min_obs_no_label(self):
        w = crop_field(CellKind.CROP_BROWN, size=4)
        d = DiseaseMap(w, min_obs=3)
        fuse(d, [obs((1, 1), CropClass.BROWN)] * 2)
        assert d.fused_labels()[1, 1] == -2

    def test_non_crop_cell_rejected(self):
        w = make_world(4, 4, 0.25)
        w.cells[1, 1] = CellKind.CROP_BROWN
        d = DiseaseMap(w)
        fuse(d, [obs((2, 2), CropClass.BROWN), obs((9, 9), CropClass.BROWN)])
        assert d.rejected == 2
        assert d.observation_total() == 0


class TestEvaluate:
    def test_identity_profile_perfect_metrics(self):
        w = make_world(12, 12, 0.25)
        w.cells[0:4, :] = CellKind.CROP_BROWN
        w.cells[4:8, :] = CellKind.CROP_YELLOW
        w.cells[8:12, :] = CellKind.CROP_HEALTHY
        d = DiseaseMap(w, min_obs=1)
        truth = {CellKind.CROP_BROWN: CropClass.BROWN,
                 CellKind.CROP_YELLOW: CropClass.YELLOW,
                 CellKind.CROP_HEALTHY: CropClass.HEALTHY}
        for cy in range(12):
            for cx in range(12):
                d = fuse(d, [obs((cx, cy), truth[CellKind(w.cells[cy, cx])])])
        rep = evaluate(d, w)
        for m in rep.per_class.values():
            assert m.precision == 1.0 and m.recall == 1.0 and m.f1 == 1.0
        assert rep.accuracy == 1.0 and rep.coverage == 1.0

    def test_empty_field(self):
        w = make_world(6, 6, 0.25)
        rep = evaluate(DiseaseMap(w), w)
        assert rep.coverage == 0.0 and rep.crop_cells == 0
        assert rep.accuracy == 0.0

    def test_measured_profile_reproduces_published_metrics(self):
        # 1e5 fused single-observation decisions per class
        rng = np.random.default_rng(9)
        conf = measured_profile().confusion_matrix()
        n = 100_000
        tp = np.zeros(3)
        pred_totals = np.zeros(3)
        for cls in range(3):
            draws = rng.choice(3, size=n, p=conf[cls])
            for k in range(3):
                pred_totals[k] += (draws == k).sum()
            tp[cls] = (draws == cls).sum()
        recall = tp / n
        precision = tp / pred_totals
        target_precision = (1.00, 0.99, 1.00)
        target_recall = (0.99, 1.00, 1.00)
        for k in range(3):
            assert abs(precision[k] - target_precision[k]) <= 0.01
            assert abs(recall[k] - target_recall[k]) <= 0.01

    def test_fusion_monotone_in_observations(self):
        # majority vote amplifies a diagonal-dominant profile
        rng = np.random.default_rng(11)
        conf = np.array([[0.8, 0.15, 0.05], [0.1, 0.8, 0.1], [0.05, 0.15, 0.8]])
        w = make_world(40, 40, 0.25)
        w.cells[:] = CellKind.CROP_BROWN
        w.cells[:20] = CellKind.CROP_YELLOW
        accs = []
        for n_obs in (1, 3, 9):
            d = DiseaseMap(w, min_obs=1)
            for cy in range(40):
                for cx in range(40):
                    cls = CropClass.YELLOW if cy < 20 else CropClass.BROWN
                    draws = rng.choice(3, size=n_obs, p=conf[cls])
                    fuse(d, [obs((cx, cy), int(k)) for k in draws])
            accs.append(evaluate(d, w).accuracy)
        assert accs[0] <= accs[1] + 0.02 and accs[1] <= accs[2] + 0.02
        assert accs[2] > accs[0]


def test_disease_csv_deterministic():
    w = crop_field(CellKind.CROP_BROWN, size=3)
    d = DiseaseMap(w, min_obs=1)
    fuse(d, [obs((0, 0), CropClass.BROWN), obs((2, 1), CropClass.YELLOW)])
    lines = disease_csv_lines(d, w)
    assert lines[0].startswith("cell_x,cell_y")
    assert lines[1] == "0,0,0.125,0.125,brown,brown,1,1,0,0"
    assert lines[2] == "2,1,0.625,0.375,brown,yellow,1,0,1,0"
