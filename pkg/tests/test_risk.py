import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evora.dynamics import DynamicsConfig
from evora.evidential import bin_centers, uniform_edges
from evora.risk import (
    ElevationPenalty,
    GoalSpec,
    OodPenalty,
    OodZeroTraction,
    RiskConfig,
    SemanticPenalty,
    apply_aux_penalties,
    batch_costs,
    cvar_cost_cost,
    cvar_dyn_cost,
    left_cvar,
    left_var,
    nominal_cost,
    objective_cost,
    pmf_left_cvar,
    right_cvar,
    right_var,
    sample_traction_maps,
    worst_case_traction_map,
)
from evora.terrain import PlanningMap

VALUES = np.array([0.0, 0.5, 1.0])
PROBS = np.array([0.2, 0.3, 0.5])


def brute_left_var(v, p, a):
    return max(z for z, pz in zip(v, p) if pz > 0 and p[v < z].sum() <= a + 1e-12)


def brute_right_var(v, p, a):
    return min(z for z, pz in zip(v, p) if pz > 0 and p[v > z].sum() <= a + 1e-12)


def integrated_cvar(var_fn, v, p, a, n=20_000):
    taus = (np.arange(n) + 0.5) * a / n
    return float(np.mean([var_fn(v, p, t) for t in taus]))


class TestVar:
    def test_point_mass(self):
        for a in (0.1, 0.5, 1.0):
            assert left_var([0.5], [1.0], a) == 0.5 and right_var([0.5], [1.0], a) == 0.5

    def test_hand_case_boundary(self):
        assert left_var(VALUES, PROBS, 0.2) == 0.5
        assert left_var(VALUES, PROBS, 0.19) == 0.0

    def test_alpha_one(self):
        v = np.array([0.1, 0.2, 0.3, 0.4])
        p = np.array([0.0, 0.5, 0.5, 0.0])
        assert left_var(v, p, 1.0) == 0.3 and right_var(v, p, 1.0) == 0.2

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=8), st.floats(0.01, 1.0))
    @settings(max_examples=100)
    def test_matches_definition(self, weights, a):
        p = np.array(weights) + 1e-3
        p /= p.sum()
        v = np.linspace(0, 1, len(p))
        assert left_var(v, p, a) == brute_left_var(v, p, a)
        assert right_var(v, p, a) == brute_right_var(v, p, a)


class TestCvar:
    def test_hand_case(self):
        assert left_cvar(VALUES, PROBS, 0.4) == pytest.approx(0.25, abs=1e-12)
        assert right_cvar(VALUES, PROBS, 0.4) == pytest.approx(1.0, abs=1e-12)
        assert right_cvar(VALUES, PROBS, 0.6) == pytest.approx((0.5 + 0.05) / 0.6, abs=1e-12)

    def test_alpha_one_is_mean(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = rng.dirichlet(np.ones(20))
            v = bin_centers(uniform_edges(20))
            assert abs(left_cvar(v, p, 1.0) - p @ v) <= 1e-12
            assert abs(right_cvar(v, p, 1.0) - p @ v) <= 1e-12

    def test_point_mass(self):
        p = np.zeros(20)
        p[7] = 1
        v = bin_centers(uniform_edges(20))
        for a in (0.05, 0.3, 1.0):
            assert left_cvar(v, p, a) == pytest.approx(v[7], abs=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_integrated_var(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(6))
        v = np.sort(rng.uniform(0, 1, 6))
        for a in (0.07, 0.3, 0.85):
            assert left_cvar(v, p, a) == pytest.approx(integrated_cvar(left_var, v, p, a), abs=2e-3)
            assert right_cvar(v, p, a) == pytest.approx(integrated_cvar(right_var, v, p, a), abs=2e-3)

    def test_monotone_and_bracketing(self):
        rng = np.random.default_rng(1)
        v = bin_centers(uniform_edges(20))
        alphas = np.linspace(0.1, 1.0, 10)
        probs = rng.dirichlet(np.full(20, 0.5), 1000)
        left = np.stack([left_cvar(v, probs, a) for a in alphas])
        right = np.stack([right_cvar(v, probs, a) for a in alphas])
        mean = probs @ v
        assert np.all(np.diff(left, axis=0) >= -1e-12)
        assert np.all(np.diff(right, axis=0) <= 1e-12)
        assert np.all(left <= mean + 1e-12) and np.all(mean <= right + 1e-12)

    def test_batched_matches_scalar(self):
        rng = np.random.default_rng(2)
        p = rng.dirichlet(np.ones(5), (3, 4))
        v = np.linspace(0.1, 0.9, 5)
        out = left_cvar(v, p, 0.3)
        assert out.shape == (3, 4)
        assert out[1, 2] == pytest.approx(left_cvar(v, p[1, 2], 0.3), abs=1e-15)

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            left_cvar(VALUES, PROBS, 0.0)
        with pytest.raises(ValueError):
            right_var(VALUES, PROBS, 1.5)


class TestObjective:
    goal = GoalSpec((10.0, 0.0), 0.5, 1.0)

    def test_start_in_goal(self):
        states = np.array([[10.0, 0.0, 0.0]] * 4)
        assert objective_cost(states, self.goal, 0.1) == 0.0

    def test_first_hit_at_three(self):
        xs = [7.0, 8.0, 9.0, 9.8, 10.0, 10.1]
        states = np.array([[x, 0.0, 0.0] for x in xs])
        assert objective_cost(states, self.goal, 0.1) == pytest.approx(0.3, abs=1e-12)

    def test_never_reaches(self):
        states = np.array([[x, 0.0, 0.0] for x in (3, 4, 5, 6, 7, 8.0)])
        assert objective_cost(states, self.goal, 0.1) == pytest.approx(0.5 + 2.0, abs=1e-12)

    @given(st.floats(0.1, 3.0), st.floats(0.0, 3.0))
    @settings(max_examples=50)
    def test_nonincreasing_in_radius(self, r, extra):
        states = np.array([[x, 0.3, 0.0] for x in np.linspace(0, 9, 11)])
        small = objective_cost(states, GoalSpec((10.0, 0.0), r, 1.0), 0.1)
        big = objective_cost(states, GoalSpec((10.0, 0.0), r + extra, 1.0), 0.1)
        assert big <= small + 1e-12


def make_map(post, aux=None, res=0.5, semantic=None, elevation=None, conf=None):
    post = np.asarray(post, dtype=float)
    shape = post.shape[:2]
    return PlanningMap(
        post, post.copy(), np.ones(shape) if conf is None else conf,
        np.zeros(shape) if aux is None else aux, res, semantic, elevation,
    )


def toy_veg_map(bins=5):
    """Row of dirt-veg-dirt columns; veg cells are 0.1/0.9 bimodal."""
    rows, cols = 6, 30
    dirt = np.zeros(bins)
    dirt[-1] = 1.0
    veg = np.zeros(bins)
    veg[0] = veg[-1] = 0.5
    post = np.broadcast_to(dirt, (rows, cols, bins)).copy()
    post[:, 10:20] = veg
    return make_map(post, semantic=np.where(np.arange(cols) >= 10, 1, 0)[None].repeat(rows, 0) * (np.arange(cols) < 20))


class TestTractionMaps:
    def test_alpha_one_is_mean(self):
        pm = toy_veg_map()
        lin, ang = worst_case_traction_map(pm, 1.0)
        assert np.allclose(lin, pm.post_lin @ bin_centers(uniform_edges(5)), atol=1e-12)

    def test_bimodal_tail(self):
        pm = toy_veg_map()
        lin, _ = worst_case_traction_map(pm, 0.5)
        assert lin[0, 15] == pytest.approx(0.1, abs=1e-12)
        assert lin[0, 0] == pytest.approx(0.9, abs=1e-12)

    def test_cached(self):
        pm = toy_veg_map()
        assert worst_case_traction_map(pm, 0.3)[0] is worst_case_traction_map(pm, 0.3)[0]


START = np.array([1.0, 1.5, 0.0])
GOAL = GoalSpec((14.0, 1.5), 0.5, 3.0)
CFG = DynamicsConfig()
STRAIGHT = np.tile([3.0, 0.0], (60, 1))


class TestCosts:
    def test_full_traction_equals_nominal(self):
        full = np.zeros((6, 30, 20))
        full[..., -1] = 1.0
        pm = make_map(full)
        # top bin centre is 0.975, so nominal (traction 1) is strictly faster
        assert nominal_cost(START, STRAIGHT, pm, GOAL, CFG) < cvar_dyn_cost(START, STRAIGHT, pm, GOAL, 0.5, CFG)
        assert cvar_dyn_cost(START, STRAIGHT, pm, GOAL, 0.5, CFG) == pytest.approx(
            cvar_dyn_cost(START, STRAIGHT, pm, GOAL, 1.0, CFG), abs=1e-12)

    def test_alpha_one_is_expected_traction(self):
        pm = toy_veg_map()
        a = cvar_dyn_cost(START, STRAIGHT, pm, GOAL, 1.0, CFG)
        b = batch_costs(START, STRAIGHT[None], pm, GOAL, RiskConfig("expected"), CFG)[0]
        assert a == pytest.approx(b, abs=1e-12)

    def test_lower_alpha_never_cheaper(self):
        pm = toy_veg_map()
        costs = [cvar_dyn_cost(START, STRAIGHT, pm, GOAL, a, CFG) for a in (1.0, 0.8, 0.6, 0.4, 0.2, 0.05)]
        assert all(b >= a - 1e-12 for a, b in zip(costs, costs[1:]))
        assert costs[-1] > costs[0]

    def test_batch_kernel_matches_reference(self):
        pm = apply_aux_penalties(toy_veg_map(), SemanticPenalty(1, 0.2))
        rng = np.random.default_rng(3)
        controls = np.stack([np.column_stack([rng.uniform(0, 3, 60), rng.uniform(-1, 1, 60)]) for _ in range(8)])
        for alpha in (0.2, 1.0):
            batch = batch_costs(START, controls, pm, GOAL, RiskConfig("cvar_dyn", alpha), CFG)
            ref = [cvar_dyn_cost(START, u, pm, GOAL, alpha, CFG) for u in controls]
            assert np.allclose(batch, ref, atol=1e-12, rtol=0)
        maps = sample_traction_maps(pm, 6, np.random.default_rng(0))
        batch = batch_costs(START, controls, pm, GOAL, RiskConfig("cvar_cost", 0.3, 6), CFG, maps)
        ref = [cvar_cost_cost(START, u, pm, GOAL, 0.3, 6, 0, CFG, maps=maps) for u in controls]
        assert np.allclose(batch, ref, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("seed", range(5))
    def test_cvar_cost_equals_cvar_dyn_on_point_masses(self, seed):
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, 20, (6, 30))
        post = np.eye(20)[idx]
        pm = make_map(post)
        u = np.column_stack([rng.uniform(-3, 3, 60), rng.uniform(-3, 3, 60)])
        for alpha in (0.1, 0.5, 1.0):
            dyn = cvar_dyn_cost(START, u, pm, GOAL, alpha, CFG)
            cost = cvar_cost_cost(START, u, pm, GOAL, alpha, 7, seed, CFG)
            assert abs(dyn - cost) <= 1e-9

    def test_single_map_is_the_sample(self):
        pm = toy_veg_map()
        maps = sample_traction_maps(pm, 1, np.random.default_rng(4))
        a = cvar_cost_cost(START, STRAIGHT, pm, GOAL, 0.1, 1, 0, CFG, maps=maps)
        b = cvar_cost_cost(START, STRAIGHT, pm, GOAL, 1.0, 1, 0, CFG, maps=maps)
        assert a == b

    def test_monte_carlo_expected_cost(self):
        # one big cell; straight drive never reaches the goal, so cost is affine in the drawn traction
        p = np.array([0.1, 0.2, 0.3, 0.4])
        pm = make_map(p[None, None], res=100.0)
        goal = GoalSpec((50.0, 1.0), 0.5, 0.5)
        u = np.tile([1.0, 0.0], (10, 1))
        x0 = np.array([1.0, 1.0, 0.0])
        centres = bin_centers(uniform_edges(4))
        expected = 10 * 0.1 + (49.0 - (p @ centres) * 1.0) / 0.5
        got = cvar_cost_cost(x0, u, pm, goal, 1.0, 10_000, 1, CFG)
        assert got == pytest.approx(expected, rel=0.02)

    def test_sampled_maps_follow_pmf(self):
        p = np.array([0.1, 0.2, 0.3, 0.4])
        pm = make_map(np.broadcast_to(p, (2, 2, 4)).copy())
        lin, _ = sample_traction_maps(pm, 5000, np.random.default_rng(0))
        centres = bin_centers(uniform_edges(4))
        freq = np.array([(lin[:, 0, 0] == c).mean() for c in centres])
        assert np.allclose(freq, p, atol=0.03)


class TestPenalties:
    def test_minus_infinity_is_identity(self):
        pm = toy_veg_map()
        out = apply_aux_penalties(pm, OodZeroTraction(-math.inf))
        assert np.array_equal(out.post_lin, pm.post_lin)
        out = apply_aux_penalties(pm, OodPenalty(-math.inf, 5.0))
        assert np.array_equal(out.aux_penalty, pm.aux_penalty)

    def test_plus_infinity_zero_traction(self):
        out = apply_aux_penalties(toy_veg_map(), OodZeroTraction(math.inf))
        assert np.all(out.post_lin[..., 0] == 1.0) and np.all(out.post_ang[..., 0] == 1.0)

    def test_penalty_is_additive_per_step(self):
        rows, cols = 4, 40
        post = np.zeros((rows, cols, 20))
        post[..., -1] = 1.0
        conf = np.ones((rows, cols))
        conf[:, 5] = 0.0  # one flagged column
        pm = make_map(post, conf=conf)
        flagged = apply_aux_penalties(pm, OodPenalty(0.5, 0.7))
        u = np.tile([1.0, 0.0], (80, 1))
        x0 = np.array([2.3, 1.2, 0.0])
        goal = GoalSpec((19.0, 1.2), 0.5, 3.0)
        base = cvar_dyn_cost(x0, u, pm, goal, 0.5, CFG)
        states_in_cell = sum(1 for t in range(80) if 2.5 <= 2.3 + 0.1 * 0.975 * t < 3.0)
        assert cvar_dyn_cost(x0, u, flagged, goal, 0.5, CFG) - base == pytest.approx(states_in_cell * 0.7, abs=1e-9)

    def test_semantic_and_elevation_rules(self):
        pm = toy_veg_map()
        out = apply_aux_penalties(pm, SemanticPenalty(1, 2.0))
        assert np.array_equal(out.aux_penalty > 0, pm.semantic == 1)
        elev = np.zeros(pm.shape)
        elev[:, :3] = 1.0
        out = apply_aux_penalties(make_map(pm.post_lin, elevation=elev), ElevationPenalty(0.5, 1.0))
        assert out.aux_penalty.sum() == 3 * pm.shape[0]
        with pytest.raises(ValueError):
            apply_aux_penalties(make_map(pm.post_lin), SemanticPenalty(1, 1.0))

    def test_left_cvar_on_pmf_helper(self):
        p = np.array([0.5, 0, 0, 0, 0.5])
        assert pmf_left_cvar(p, 0.5) == pytest.approx(0.1)
