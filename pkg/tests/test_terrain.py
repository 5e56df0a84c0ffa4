import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evora.model import TrainConfig, init_model, calibrate, empirical_pmf
from evora.terrain import (
    DIRT,
    KINDS,
    VEGETATION,
    CollectionPath,
    PlanningMap,
    TerrainConfig,
    auc_pr,
    auc_roc,
    circular_path,
    collect_training_data,
    gen_dataset,
    gen_terrain,
    gt_traction_dist,
    load_samples_jsonl,
    ood_detection_metrics,
    planning_from_dict,
    planning_to_dict,
    predict_map,
    save_samples_jsonl,
    simulate_collection,
    slope_from_elevation,
    terrain_from_dict,
    terrain_to_dict,
)


@pytest.fixture(scope="module")
def maps():
    return {kind: gen_terrain(TerrainConfig(kind=kind), 3) for kind in KINDS}


def local_maxima(p):
    return [i for i in range(1, len(p) - 1) if p[i] > p[i - 1] and p[i] > p[i + 1]]


class TestGeneration:
    def test_train_ranges(self, maps):
        m = maps["train"]
        dirt = m.semantic == DIRT
        assert m.shape == (60, 60)
        assert m.elevation[dirt].min() >= -0.2 and m.elevation[dirt].max() <= 0.0
        assert m.slope[dirt].max() <= 0.3
        veg = ~dirt
        assert m.elevation[veg].min() >= 0.3 and m.elevation[veg].max() <= 0.7
        assert m.slope[veg].max() <= 0.4
        assert abs(veg.mean() - 0.2) <= 0.05
        assert not m.ood.any()

    @pytest.mark.parametrize("kind", list(KINDS))
    def test_kind_ranges_and_ratios(self, maps, kind):
        m, spec = maps[kind], KINDS[kind]
        assert abs((m.semantic == VEGETATION).mean() - spec.veg_ratio) <= 0.05
        for cls in (DIRT, VEGETATION):
            sel = m.semantic == cls
            if not sel.any():
                continue
            lo, hi = spec.elevation_range(cls)
            assert lo - 1e-12 <= m.elevation[sel].min() and m.elevation[sel].max() <= hi + 1e-12
            assert m.slope[sel].max() <= spec.max_slope(cls) + 1e-12
        if spec.ood_ratio is not None:
            assert abs(m.ood.mean() - spec.ood_ratio) <= 0.05

    @pytest.mark.parametrize("seed", range(4))
    def test_ood_ratio_across_seeds(self, seed):
        for kind in ("ood1", "ood2"):
            assert abs(gen_terrain(TerrainConfig(kind=kind), 50 + seed).ood.mean() - 0.5) <= 0.05

    def test_ood2_has_no_vegetation(self, maps):
        assert (maps["ood2"].semantic == VEGETATION).sum() == 0

    def test_slope_recomputes(self, maps):
        for m in maps.values():
            assert np.max(np.abs(slope_from_elevation(m.elevation, m.semantic, m.resolution) - m.slope)) <= 1e-9

    def test_gt_pmfs_valid(self, maps):
        for m in maps.values():
            assert np.all(m.gt_lin >= 0)
            assert np.allclose(m.gt_lin.sum(-1), 1.0, atol=1e-9)
            assert np.array_equal(m.gt_lin, m.gt_ang)

    def test_deterministic(self):
        a = gen_terrain(TerrainConfig(kind="ood1"), 9)
        b = gen_terrain(TerrainConfig(kind="ood1"), 9)
        for field in ("semantic", "elevation", "slope", "gt_lin", "ood"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_infeasible_ratio_rejected(self):
        with pytest.raises(ValueError):
            TerrainConfig(kind="train", veg_ratio=1.5)
        with pytest.raises(ValueError):
            TerrainConfig(kind="ood2", veg_ratio=0.3)

    def test_dataset_sizes(self):
        assert len(gen_dataset("train")) == 5


def test_slope_of_plane():
    rows, cols = np.mgrid[0:6, 0:5]
    elev = 0.2 * cols * 0.5 + 0.1 * rows * 0.5  # gradient (0.2, 0.1) per metre
    slope = slope_from_elevation(elev, np.zeros((6, 5), int), 0.5)
    assert np.allclose(slope, np.hypot(0.2, 0.1), atol=1e-12)


def test_slope_ignores_class_steps():
    elev = np.zeros((4, 4))
    sem = np.zeros((4, 4), int)
    sem[:, 2:] = 1
    elev[:, 2:] = 5.0
    assert np.all(slope_from_elevation(elev, sem, 0.5) == 0.0)


class TestGroundTruth:
    def test_flat_dirt_peak_at_high_traction(self):
        pmf, ang = gt_traction_dist(DIRT, -0.1, 0.0, KINDS["train"])
        assert np.array_equal(pmf, ang)
        assert int(np.argmax(pmf)) == 18  # bin [0.90, 0.95)
        assert len(local_maxima(pmf)) == 1

    def test_dirt_mean_drops_with_slope(self):
        edges = np.linspace(0, 1, 21)
        centres = 0.5 * (edges[1:] + edges[:-1])
        means = [gt_traction_dist(DIRT, 0.0, s, KINDS["train"])[0] @ centres for s in (0.0, 0.1, 0.2, 0.3)]
        assert means == sorted(means, reverse=True)

    def test_vegetation_midpoint_bimodal(self):
        pmf, _ = gt_traction_dist(VEGETATION, 0.5, 0.0, KINDS["train"])
        peaks = local_maxima(pmf)
        assert len(peaks) == 2
        assert peaks[0] <= 3 and peaks[1] >= 16

    def test_vegetation_extremes_unimodal(self):
        for elev in (0.3, 0.7):
            assert len(local_maxima(gt_traction_dist(VEGETATION, elev, 0.0, KINDS["train"])[0])) == 1

    def test_gaussian_bin_masses(self):
        # oracle: Normal CDF via erf at a few edges
        from math import erf, sqrt

        pmf, _ = gt_traction_dist(DIRT, 0.0, 0.0, KINDS["train"])
        cdf = lambda x: 0.5 * (1 + erf((x - 0.9) / (0.05 * sqrt(2))))  # noqa: E731
        total = cdf(1.0) - cdf(0.0)
        assert pmf[18] == pytest.approx((cdf(0.95) - cdf(0.90)) / total, rel=1e-9)


class TestCollection:
    def test_counting(self, maps):
        m = maps["train"]
        pts = np.column_stack([0.25 + 0.5 * np.arange(10), np.full(10, 0.25)])
        path = CollectionPath(pts, samples_per_cell=3)
        assert len(path.cells(m)) == 10
        samples = simulate_collection(m, path, multiplier=1, seed=0)
        assert len(samples) == 30
        assert samples.psi_lin.min() >= 0 and samples.psi_lin.max() <= 1

    def test_path_must_stay_on_map(self, maps):
        with pytest.raises(ValueError):
            CollectionPath(np.array([[1.0, 1.0], [40.0, 1.0]])).cells(maps["train"])

    def test_law_of_large_numbers(self, maps):
        m = maps["test"]
        r, c = np.argwhere(m.semantic == VEGETATION)[0]
        pt = np.array([[(c + 0.5) * 0.5, (r + 0.5) * 0.5]] * 2)
        samples = simulate_collection(m, CollectionPath(pt, 10_000), 1, seed=4)
        pmf, count = empirical_pmf(samples.psi_lin, 20)
        assert count == 10_000
        assert 0.5 * np.abs(pmf.probs - m.gt_lin[r, c]).sum() <= 0.05

    def test_deterministic_and_iterable(self, maps):
        m = maps["train"]
        path = circular_path(m)
        a = simulate_collection(m, path, 1, seed=2)
        b = simulate_collection(m, path, 1, seed=2)
        assert np.array_equal(a.psi_lin, b.psi_lin)
        first = next(iter(a))
        assert first.cell == (int(a.rows[0]), int(a.cols[0]))

    def test_multiplier_scales_counts(self, maps):
        m = maps["train"]
        tr1, _ = collect_training_data([m], multiplier=1)
        tr10, _ = collect_training_data([m], multiplier=10)
        assert np.array_equal(tr10.weights, 10 * tr1.weights)

    def test_halves_split_by_column(self, maps):
        tr, va = collect_training_data([maps["train"]])
        assert np.all(tr.cells[:, 2] < 30) and np.all(va.cells[:, 2] >= 30)

    def test_jsonl_round_trip(self, maps, tmp_path):
        m = maps["train"]
        s = simulate_collection(m, circular_path(m), 1, seed=0)
        save_samples_jsonl(s, tmp_path / "s.jsonl")
        back = load_samples_jsonl(tmp_path / "s.jsonl")
        assert np.array_equal(back.psi_lin, s.psi_lin) and np.array_equal(back.cols, s.cols)


class TestMetrics:
    def test_perfect_separation(self):
        labels = np.array([0, 0, 1, 1, 1], bool)
        scores = np.array([0.1, 0.2, 0.7, 0.8, 0.9])
        assert auc_roc(scores, labels) == 1.0 and auc_pr(scores, labels) == 1.0

    def test_hand_auc(self):
        # pairs (pos, neg): 0.8>0.3, 0.8>0.5, 0.4>0.3, 0.4<0.5 -> 3/4
        assert auc_roc([0.8, 0.4, 0.3, 0.5], [1, 1, 0, 0]) == 0.75
        # ranking 0.8(+) 0.5(-) 0.4(+) 0.3(-): AP = 0.5*1 + 0.5*(2/3)
        assert auc_pr([0.8, 0.4, 0.3, 0.5], [1, 1, 0, 0]) == pytest.approx(0.5 + 1 / 3)

    def test_random_null(self):
        rng = np.random.default_rng(0)
        labels = rng.random(10_000) < 0.5
        assert abs(auc_roc(rng.random(10_000), labels) - 0.5) <= 0.02

    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=40))
    @settings(max_examples=60, deadline=None)
    def test_duplication_invariant(self, pairs):
        scores = np.array([p[0] for p in pairs])
        labels = np.array([p[1] for p in pairs])
        if labels.all() or not labels.any():
            return
        assert auc_roc(np.r_[scores, scores], np.r_[labels, labels]) == pytest.approx(auc_roc(scores, labels), abs=1e-12)
        assert auc_pr(np.r_[scores, scores], np.r_[labels, labels]) == pytest.approx(auc_pr(scores, labels), abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auc_roc([0.1, 0.2], [1, 1])
        with pytest.raises(ValueError):
            auc_pr([0.1, 0.2], [0, 0])


class TestPlanningMap:
    def test_predict_map_dims_and_serialisation(self, maps):
        m = maps["ood1"]
        model = calibrate(init_model(TrainConfig()), m.features())
        pm = predict_map(model, m)
        assert pm.shape == m.shape and pm.post_lin.shape == m.gt_lin.shape
        assert np.allclose(pm.post_lin.sum(-1), 1.0)
        assert np.all(pm.aux_penalty == 0)
        back = planning_from_dict(planning_to_dict(pm))
        for f in ("post_lin", "post_ang", "confidence", "aux_penalty", "semantic", "elevation"):
            assert np.array_equal(getattr(back, f), getattr(pm, f))
        roc, pr = ood_detection_metrics(pm, m)
        assert 0 <= roc <= 1 and 0 <= pr <= 1

    def test_terrain_round_trip(self, maps):
        m = maps["ood1"]
        back = terrain_from_dict(terrain_to_dict(m))
        for f in ("semantic", "elevation", "slope", "gt_lin", "gt_ang", "ood"):
            assert np.array_equal(getattr(back, f), getattr(m, f))
        assert back.kind == "ood1" and back.seed == m.seed

    def test_validation(self):
        with pytest.raises(ValueError):
            PlanningMap(np.ones((2, 2, 3)) / 3, np.ones((2, 2, 3)) / 3, np.zeros((2, 2)), -np.ones((2, 2)))
