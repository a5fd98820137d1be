import numpy as np
import pytest

from conftest import make_loop_scenario
from dhnopt.errors import ValidationError
from dhnopt.fixtures import minimal_loop
from dhnopt.objective import (ConstraintSet, J_PER_MWH, PriceModel,
                              constraint_violations, loss_energy,
                              max_violation, objective_loss, penalty,
                              price_weight, project_control, tikhonov,
                              tikhonov_gradient, total_objective)
from dhnopt.thermal import StateTrajectory, TimeGrid

CP = 4186.0


def _loop_traj(plant_c, plant_return_c, consumer_supply_c=90.0,
               consumer_return_c=60.0, n_steps=4, dt_s=900.0):
    """Hand-built trajectory on the four-node loop (SP, SC, RC, RP)."""
    graph, flow = minimal_loop(mdot_kg_s=1.0)
    grid = TimeGrid(dt_s=dt_s, n_steps=n_steps)
    y = np.empty((4, n_steps + 1))
    y[0] = plant_c
    y[1] = consumer_supply_c
    y[2] = consumer_return_c
    y[3] = plant_return_c
    return graph, flow, StateTrajectory(values_c=y, grid=grid)


class TestLossEnergy:
    def test_hand_integrated_value(self):
        # cp * mdot * dT * time = 4186 * 1 * 40 * 3600 J = 602.784 MJ
        graph, flow, traj = _loop_traj(80.0, 40.0)
        loss = loss_energy(traj, graph, flow, PriceModel.static_price())
        assert loss == pytest.approx(602.784e6, rel=1e-12)
        assert loss / 3.6e6 == pytest.approx(167.44, rel=1e-12)  # kWh

    def test_zero_when_supply_equals_return(self):
        graph, flow, traj = _loop_traj(60.0, 60.0)
        assert loss_energy(traj, graph, flow, PriceModel.static_price()) == 0.0

    def test_rectangle_rule_step_consistency(self):
        g1, f1, coarse = _loop_traj(80.0, 40.0, n_steps=2, dt_s=1800.0)
        g2, f2, fine = _loop_traj(80.0, 40.0, n_steps=4, dt_s=900.0)
        price = PriceModel.static_price()
        assert loss_energy(coarse, g1, f1, price) == pytest.approx(
            loss_energy(fine, g2, f2, price), rel=1e-14)

    def test_static_loss_invariant_under_time_shift(self):
        graph, flow, traj = _loop_traj(80.0, 40.0, n_steps=8)
        traj.values_c[0, 1:] = 80.0 + np.arange(8)
        rolled = StateTrajectory(
            values_c=np.concatenate(
                [traj.values_c[:, :1], np.roll(traj.values_c[:, 1:], 3, axis=1)],
                axis=1),
            grid=traj.grid)
        price = PriceModel.static_price()
        assert loss_energy(rolled, graph, flow, price) == pytest.approx(
            loss_energy(traj, graph, flow, price), rel=1e-14)

    def test_dynamic_loss_is_in_euros(self):
        graph, flow, traj = _loop_traj(80.0, 40.0)  # one hour, 167.44 kWh
        price = PriceModel.from_curve([0.0, 3600.0], [50.0, 50.0], alpha=1.0)
        loss = loss_energy(traj, graph, flow, price)
        assert loss == pytest.approx(0.16744 * 50.0, rel=1e-12)


class TestPriceWeight:
    def test_static_is_one(self):
        model = PriceModel.static_price(alpha=3.0)
        assert price_weight(1234.0, 90.0, 50.0, model) == 1.0

    def test_generation_case(self):
        model = PriceModel.from_curve([0.0, 3600.0], [10.0, 20.0], alpha=2.0,
                                      beta=0.5)
        assert price_weight(1800.0, 90.0, 50.0, model) == pytest.approx(30.0)

    def test_recovery_case_and_free_recovery(self):
        model = PriceModel.from_curve([0.0, 3600.0], [10.0, 20.0], alpha=2.0,
                                      beta=0.5)
        assert price_weight(1800.0, 50.0, 90.0, model) == pytest.approx(7.5)
        free = PriceModel.from_curve([0.0, 3600.0], [10.0, 20.0], beta=0.0)
        assert price_weight(1800.0, 50.0, 90.0, free) == 0.0

    def test_curve_must_cover_query(self):
        model = PriceModel.from_curve([0.0, 3600.0], [10.0, 20.0])
        with pytest.raises(ValidationError, match="covers"):
            model.price_at(7200.0)


class TestTikhonov:
    GRID = TimeGrid(dt_s=900.0, n_steps=3)

    def test_constant_control_is_zero(self):
        assert tikhonov(np.full((2, 3), 95.0), self.GRID) == 0.0

    def test_single_jump(self):
        u = np.array([[90.0, 93.0, 93.0]])
        assert tikhonov(u, self.GRID) == pytest.approx((3.0 / 900.0) ** 2)

    def test_quadratic_scaling_about_constant_shift(self):
        rng = np.random.default_rng(7)
        u = 90.0 + rng.random((1, 16))
        grid = TimeGrid(dt_s=900.0, n_steps=16)
        base = tikhonov(u, grid)
        scaled = tikhonov(50.0 + 3.0 * (u - 50.0), grid)
        assert scaled == pytest.approx(9.0 * base, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        u = 90.0 + rng.random((2, 12))
        grid = TimeGrid(dt_s=900.0, n_steps=12)
        g = tikhonov_gradient(u, grid)
        h = 1e-6
        for i, j in [(0, 0), (0, 5), (1, 11), (1, 6)]:
            up, um = u.copy(), u.copy()
            up[i, j] += h
            um[i, j] -= h
            fd = (tikhonov(up, grid) - tikhonov(um, grid)) / (2 * h)
            assert g[i, j] == pytest.approx(fd, rel=1e-6, abs=1e-12)

    def test_needs_two_steps(self):
        with pytest.raises(ValidationError):
            tikhonov(np.array([[90.0]]), TimeGrid(dt_s=900.0, n_steps=1))


class TestConstraints:
    def test_violation_signs(self):
        constraints = ConstraintSet()
        graph, flow, traj = _loop_traj(110.0, 40.0, consumer_supply_c=85.0,
                                       consumer_return_c=30.0, n_steps=1)
        c = constraint_violations(traj, graph, constraints)
        assert c.shape == (2, 1)
        assert c[0, 0] == pytest.approx(-5.0)   # supply 85: satisfied by 5
        assert c[1, 0] == pytest.approx(0.0)    # return at the boundary

    def test_violation_magnitude(self):
        graph, flow, traj = _loop_traj(110.0, 40.0, consumer_supply_c=78.0,
                                       n_steps=1)
        c = constraint_violations(traj, graph, ConstraintSet())
        assert c[0, 0] == pytest.approx(2.0)
        assert max_violation(c) == pytest.approx(2.0)

    def test_ordering_invariant(self):
        with pytest.raises(ValidationError):
            ConstraintSet(consumer_supply_min_c=20.0)


class TestPenalty:
    def test_feasible_is_zero(self):
        assert penalty(np.array([-1.0, 0.0, -5.0]), 100.0) == 0.0

    def test_hand_value(self):
        assert penalty(np.array([2.0]), 100.0) == pytest.approx(200.0)

    def test_scale_invariance(self):
        c = np.array([0.5, -1.0, 2.0])
        assert penalty(c, 10.0) / 10.0 == pytest.approx(
            penalty(c, 1e6) / 1e6, rel=1e-14)

    def test_requires_positive_weight(self):
        with pytest.raises(ValidationError):
            penalty(np.array([1.0]), 0.0)


class TestProjection:
    BOUNDS = (30.0, 140.0)

    def test_clamps_above(self):
        assert project_control(np.array([150.0]), self.BOUNDS)[0] == 140.0

    def test_identity_inside(self):
        u = np.array([31.0, 100.0, 139.9])
        np.testing.assert_array_equal(project_control(u, self.BOUNDS), u)

    def test_idempotent(self):
        u = np.array([-50.0, 100.0, 500.0])
        once = project_control(u, self.BOUNDS)
        np.testing.assert_array_equal(project_control(once, self.BOUNDS), once)


class TestTotalObjective:
    def test_feasible_static_reduces_to_loss_term(self):
        scenario = make_loop_scenario(n_steps=12, tikhonov_weight=0.0)
        u = np.full((1, 12), 105.0)
        total = total_objective(scenario, u, lambda_p=100.0)
        from dhnopt.thermal import simulate
        traj = simulate(scenario.graph, scenario.flow, scenario, u)
        assert total == pytest.approx(objective_loss(traj, scenario), rel=1e-14)
        loss_j = loss_energy(traj, scenario.graph, scenario.flow,
                             scenario.price)
        assert total == pytest.approx(loss_j / J_PER_MWH, rel=1e-14)

    def test_monotone_in_penalty_weight_when_infeasible(self):
        scenario = make_loop_scenario(n_steps=12)
        u = np.full((1, 12), 70.0)  # consumer supply forced below 80
        values = [total_objective(scenario, u, lambda_p=lam)
                  for lam in (10.0, 1e3, 1e5)]
        assert values[0] < values[1] < values[2]


class TestObjectiveConfig:
    def test_bundles_validated_weights(self):
        from dhnopt.objective import ObjectiveConfig
        cfg = ObjectiveConfig(tikhonov_weight=300.0, penalty_weight=10.0,
                              price=PriceModel.static_price(),
                              constraints=ConstraintSet())
        assert cfg.penalty_weight == 10.0
        with pytest.raises(ValidationError):
            ObjectiveConfig(tikhonov_weight=-1.0, penalty_weight=10.0,
                            price=PriceModel.static_price(),
                            constraints=ConstraintSet())
        with pytest.raises(ValidationError):
            ObjectiveConfig(tikhonov_weight=0.0, penalty_weight=0.0,
                            price=PriceModel.static_price(),
                            constraints=ConstraintSet())
