import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evora.dynamics import DynamicsConfig, rollout, TractionGrid
from evora.mppi import MppiConfig, mppi_weights, plan_step, run_closed_loop, shift_sequence
from evora.risk import GoalSpec, RiskConfig, batch_costs, objective_cost
from evora.terrain import PlanningMap, TerrainMap

BINS = 20


def point_mass_grid(rows, cols, idx):
    p = np.zeros(BINS)
    p[idx] = 1.0
    return np.broadcast_to(p, (rows, cols, BINS)).copy()


def flat_world(rows, cols, idx=BINS - 1, res=0.5):
    gt = point_mass_grid(rows, cols, idx)
    z = np.zeros((rows, cols))
    return TerrainMap(z.astype(int), z, z, gt, gt.copy(), z.astype(bool), res)


def flat_plan(rows, cols, idx=BINS - 1, res=0.5):
    post = point_mass_grid(rows, cols, idx)
    return PlanningMap(post, post.copy(), np.ones((rows, cols)), np.zeros((rows, cols)), res)


SMALL = MppiConfig(horizon=30, n_rollouts=128)


class TestShift:
    def test_examples(self):
        assert np.array_equal(shift_sequence([[1.0, 2.0]]), [[1.0, 2.0]])
        assert np.array_equal(shift_sequence([[1, 0], [2, 0], [3, 0]]), [[2, 0], [3, 0], [3, 0]])

    @given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=12))
    def test_shifting_t_times_is_constant(self, seq):
        u = np.array(seq)
        for _ in range(len(u)):
            u = shift_sequence(u)
        assert np.array_equal(u, np.tile(seq[-1], (len(seq), 1)))


class TestPlanStep:
    pm = flat_plan(12, 20)
    goal = GoalSpec((8.0, 3.0), 0.5)
    x0 = np.array([1.0, 3.0, 0.0])

    def test_vanishing_noise_returns_nominal(self):
        cfg = MppiConfig(horizon=20, n_rollouts=16, noise_std=(1e-300, 1e-300))
        nominal = np.random.default_rng(0).uniform(-1, 1, (20, 2))
        out, _ = plan_step(self.x0, nominal, self.pm, self.goal, cfg, np.random.default_rng(1))
        assert np.array_equal(out, nominal)

    def test_single_rollout_is_clamped_candidate(self):
        cfg = MppiConfig(horizon=20, n_rollouts=1)
        nominal = np.full((20, 2), 2.5)
        out, _ = plan_step(self.x0, nominal, self.pm, self.goal, cfg, np.random.default_rng(5))
        noise = np.random.default_rng(5).standard_normal((1, 20, 2)) * 2.0
        expected = np.clip(nominal + noise[0], -cfg.dynamics.limits, cfg.dynamics.limits)
        assert np.allclose(out, expected, atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_output_within_limits(self, seed):
        nominal = np.random.default_rng(seed).uniform(-10, 10, (30, 2))
        out, diag = plan_step(self.x0, nominal, self.pm, self.goal, SMALL, np.random.default_rng(seed))
        assert np.all(np.abs(out) <= SMALL.dynamics.limits)
        assert 1.0 <= diag.ess <= SMALL.n_rollouts and diag.min_cost <= diag.mean_cost

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=50), st.floats(0.01, 10))
    def test_weights_normalised(self, costs, temp):
        w = mppi_weights(costs, temp)
        assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-9

    def test_candidate_order_does_not_matter(self):
        rng = np.random.default_rng(7)
        cand = np.clip(rng.normal(1.0, 2.0, (64, 30, 2)), -3, 3)
        noise = rng.standard_normal((64, 30, 2))
        perm = rng.permutation(64)
        risk = RiskConfig("cvar_dyn", 0.5)
        costs = batch_costs(self.x0, cand, self.pm, self.goal, risk, DynamicsConfig())
        costs_perm = batch_costs(self.x0, cand[perm], self.pm, self.goal, risk, DynamicsConfig())
        assert np.array_equal(costs[perm], costs_perm)
        a = np.tensordot(mppi_weights(costs, 0.3), noise, axes=(0, 0))
        b = np.tensordot(mppi_weights(costs_perm, 0.3), noise[perm], axes=(0, 0))
        assert np.allclose(a, b, atol=1e-12)

    def test_config_validation(self):
        for bad in (dict(horizon=0), dict(n_rollouts=0), dict(temperature=0), dict(noise_std=(0.0, 1.0))):
            with pytest.raises(ValueError):
                MppiConfig(**bad)


class TestClosedLoop:
    def test_goal_at_start(self):
        res = run_closed_loop(flat_world(6, 6), flat_plan(6, 6), GoalSpec((1.0, 1.0), 0.5), SMALL, (1.0, 1.0, 0.0), 5.0, 0)
        assert res.success and res.time_to_goal == 0.0 and res.steps == 0

    def test_three_metres_ahead(self):
        world = flat_world(24, 40)
        res = run_closed_loop(world, flat_plan(24, 40), GoalSpec((6.0, 6.0), 0.5), MppiConfig(n_rollouts=256),
                              (3.0, 6.0, 0.0), 15.0, 0)
        assert res.success and res.time_to_goal <= 2.0

    def test_zero_traction_world_fails(self):
        world = flat_world(12, 20, idx=0)
        world_traction = (np.zeros((12, 20)), np.zeros((12, 20)))
        res = run_closed_loop(world, flat_plan(12, 20), GoalSpec((6.0, 3.0), 0.5), SMALL, (2.0, 3.0, 0.0), 2.0, 0,
                              world_traction=world_traction)
        assert not res.success and res.steps == 20
        assert np.all(res.trajectory == res.trajectory[0])

    def test_corridor_descent(self):
        # two cells wide; leaving the corridor strands the vehicle
        rows, cols = 2, 20
        world, pm = flat_world(rows, cols), flat_plan(rows, cols)
        goal = GoalSpec((9.0, 0.5), 0.4)
        x0 = np.array([0.5, 0.5, 0.0])
        cfg = MppiConfig(horizon=40, n_rollouts=256)
        initial = objective_cost(rollout(x0, np.zeros((cfg.horizon, 2)), TractionGrid(np.ones((rows, cols)), np.ones((rows, cols)), 0.5), cfg.dynamics), goal, cfg.dt)
        res = run_closed_loop(world, pm, goal, cfg, x0, 20.0, 3)
        executed = objective_cost(res.trajectory, goal, cfg.dt)
        assert res.success and executed < initial

    def test_bitwise_reproducible(self):
        world = flat_world(12, 20, idx=14)
        pm = flat_plan(12, 20, idx=14)
        cfg = MppiConfig(horizon=30, n_rollouts=64, risk=RiskConfig("cvar_cost", 0.5, 8))
        runs = [run_closed_loop(world, pm, GoalSpec((6.0, 3.0), 0.5), cfg, (2.0, 3.0, 0.0), 3.0, 11) for _ in range(2)]
        assert np.array_equal(runs[0].trajectory, runs[1].trajectory)
        assert runs[0].time_to_goal == runs[1].time_to_goal

    def test_per_step_traction_mode_runs(self):
        world = flat_world(12, 20, idx=14)
        res = run_closed_loop(world, flat_plan(12, 20), GoalSpec((6.0, 3.0), 0.5), SMALL, (2.0, 3.0, 0.0), 5.0, 2,
                              per_step_traction=True)
        assert res.success
