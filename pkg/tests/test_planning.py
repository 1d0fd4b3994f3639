import numpy as np
import pytest

from svbp.graph import central_difference, relative_error
from svbp.planning.dynamics import DynamicsModel, shift_controls
from svbp.planning.environment import Circle, Environment2D, Rect
from svbp.planning.metrics import evaluate_run, pass_rate_curve
from svbp.planning.mpc import RunLog, SvbpPlanner, StepRecord, mpc_step, run_episode
from svbp.planning.potentials import (CollisionParams, CollisionPotential, CostWeights,
                                      TrajectoryCost, collision_log_potential, unary_log_potential)
from svbp.planning.scenario import (PlanningScenario, canonical, line_swap, validate_planning)
from svbp.svgd import mean_pairwise_distance


MODEL = DynamicsModel()


# dynamics

def test_zero_controls_from_rest_stay_put():
    theta = np.array([1.0, 2.0, 0.0, 0.0])
    states, clamped = MODEL.rollout(theta, np.zeros(40))
    assert states.shape == (21, 4)
    assert np.all(states == theta)
    assert not clamped


def test_constant_acceleration_closed_form():
    u = np.tile([1.0, 0.0], 20)
    states, _ = MODEL.rollout(np.zeros(4), u)
    assert states[-1, 2:] == pytest.approx([2.0, 0.0], abs=1e-12)
    assert states[-1, 0] == pytest.approx(1.9, abs=1e-12)
    assert MODEL.positions(np.zeros(4), u)[0, -1, 0] == pytest.approx(1.9, abs=1e-12)


@pytest.mark.parametrize("model", [DynamicsModel(), DynamicsModel.single_integrator()])
def test_closed_form_positions_match_stepwise_rollout(model, rng):
    for _ in range(5):
        theta = rng.normal(size=model.state_dim)
        u = rng.uniform(-model.control_limit, model.control_limit, size=model.control_dim)
        states, _ = model.rollout(theta, u)
        assert np.allclose(model.positions(theta, u)[0], states[1:, :2], atol=1e-12)


def test_rollout_jacobian_matches_finite_differences(rng):
    theta = rng.normal(size=4)
    u = rng.normal(size=40)
    fd = np.stack([central_difference(lambda y: MODEL.positions(theta, y)[0].ravel()[i], u)
                   for i in range(40)])
    assert relative_error(MODEL.position_jacobian, fd) < 1e-6


def test_out_of_bound_controls_are_clamped_and_flagged():
    states, clamped = MODEL.rollout(np.zeros(4), np.full(40, 10.0))
    assert clamped
    assert states[1, 2] == pytest.approx(MODEL.control_limit * MODEL.dt)


def test_shifting_zero_controls_keeps_them_zero():
    assert np.all(shift_controls(np.zeros((3, 40))) == 0)
    seq = np.arange(8.0)[None]
    assert shift_controls(seq).tolist() == [[2, 3, 4, 5, 6, 7, 6, 7]]


# environment

def test_signed_distance_signs():
    env = Environment2D(obstacles=(Circle((5, 5), 1.0), Rect((1, 1), (2, 2))))
    d, _ = env.sdf(np.array([[5, 5], [5, 6.5], [1.5, 1.5], [3, 1.5]], dtype=float))
    assert d[0] < 0 and d[2] < 0
    assert d[1] == pytest.approx(0.5)
    assert d[3] == pytest.approx(1.0)


def test_signed_distance_gradient_is_unit_and_matches_fd(rng):
    env = Environment2D(obstacles=(Circle((5, 5), 1.0), Rect((1, 1), (2, 3))))
    pts = rng.uniform(0, 10, size=(100, 2))
    _, g = env.sdf(pts)
    assert np.allclose(np.linalg.norm(g, axis=1), 1.0)
    for p, gp in zip(pts[:30], g[:30]):
        fd = central_difference(lambda y: float(env.sdf(y)[0]), p, 1e-6)
        assert relative_error(gp, fd) < 1e-5


# unary potential

def test_unary_at_goal_with_zero_controls_is_optimal():
    lp, g = unary_log_potential(MODEL, [3.0, 3.0, 0, 0], [3.0, 3.0], Environment2D(), np.zeros(40))
    assert lp == 0.0
    assert np.all(g == 0)


def test_obstacle_cost_vanishes_beyond_margin():
    far = Environment2D(obstacles=(Circle((9, 9), 0.5),))
    args = (MODEL, [1.0, 1.0, 0, 0], [2.0, 1.0])
    u = np.tile([0.5, 0.0], 20)
    assert unary_log_potential(*args, far, u)[0] == unary_log_potential(*args, Environment2D(), u)[0]


def test_unary_gradient_matches_finite_differences(rng):
    env = Environment2D(obstacles=(Circle((4.0, 4.0), 0.8), Circle((6.0, 5.0), 0.5)))
    weights = CostWeights(discount=0.95)
    worst = 0.0
    for _ in range(100):
        theta = np.concatenate([rng.uniform(2, 6, 2), rng.normal(scale=0.5, size=2)])
        goal = rng.uniform(1, 9, 2)
        u = rng.normal(scale=2.0, size=40)  # some coordinates exceed the limit
        pot = TrajectoryCost(MODEL, theta, goal, env, weights)
        g = pot.log_and_grad(u[None])[1][0]
        fd = central_difference(lambda y: pot.log_and_grad(y[None])[0][0], u, 1e-6)
        worst = max(worst, relative_error(g, fd))
    assert worst <= 1e-4


# collision potential

def test_collision_zero_when_always_apart():
    lp, g = collision_log_potential(MODEL, [0, 0, 0, 0], np.zeros(40), [3, 0, 0, 0], np.zeros(40))
    assert lp == 0.0 and np.all(g == 0)


@pytest.mark.parametrize("offset", [0.0, 1e-9])
def test_collision_continuous_at_radius(offset):
    r = CollisionParams().radius
    lp, _ = collision_log_potential(MODEL, [0, 0, 0, 0], np.zeros(40), [r + offset, 0, 0, 0], np.zeros(40))
    assert abs(lp) <= 1e-9


def test_collision_just_inside_radius_is_bounded_by_slope():
    # the inner branch has slope sum(alpha) * beta / r at d = r, so 1e-9 inside gives ~1e-6 here
    p = CollisionParams()
    eps = 1e-9
    lp, _ = collision_log_potential(MODEL, [0, 0, 0, 0], np.zeros(40), [p.radius - eps, 0, 0, 0], np.zeros(40))
    bound = p.alphas(MODEL.horizon).sum() * p.beta / p.radius * eps
    assert 0 < -lp <= bound * (1 + 1e-6)


def test_collision_full_overlap_at_one_step_contributes_alpha():
    params = CollisionParams()
    T = MODEL.horizon
    # b moves 1 m per step along the x axis and meets a at exactly one predicted position
    theta_b = np.array([-(10 + 1) * MODEL.dt * 10.0, 0.0, 10.0, 0.0])
    pa = MODEL.positions(np.zeros(4), np.zeros(40))[0]
    pb = MODEL.positions(theta_b, np.zeros(40))[0]
    d = np.linalg.norm(pa - pb, axis=1)
    k = int(np.argmin(d))
    assert d[k] == pytest.approx(0.0, abs=1e-12)
    assert np.sum(d < params.radius) == 1
    lp, _ = collision_log_potential(MODEL, np.zeros(4), np.zeros(40), theta_b, np.zeros(40), params)
    assert lp == pytest.approx(-params.alphas(T)[k], rel=1e-12)


def _close_pairs(rng, n, params):
    out = []
    while len(out) < n:
        ta = np.concatenate([rng.uniform(4, 6, 2), rng.normal(scale=0.3, size=2)])
        tb = ta + np.concatenate([rng.normal(scale=0.3, size=2), rng.normal(scale=0.3, size=2)])
        ua, ub = rng.normal(size=40), rng.normal(size=40)
        d = np.linalg.norm(MODEL.positions(ta, ua)[0] - MODEL.positions(tb, ub)[0], axis=1)
        # stay away from the non-smooth points d = 0 and d = r
        if d.min() > 0.02 and np.abs(d - params.radius).min() > 1e-3 and (d < params.radius).any():
            out.append((ta, ua, tb, ub))
    return out


def test_collision_gradient_matches_finite_differences(rng):
    params = CollisionParams()
    worst = 0.0
    for ta, ua, tb, ub in _close_pairs(rng, 100, params):
        pot = CollisionPotential(MODEL, ta, tb, params)
        ev = pot.evaluate(ua[None], ub[None])
        g = ev.full_grad()[0, 0]
        fd = central_difference(lambda y: pot.evaluate(y[None], ub[None]).log_psi[0, 0], ua, 1e-7)
        worst = max(worst, relative_error(g, fd))
        ev2 = pot.evaluate_second(ua[None], ub[None])
        g2 = ev2.full_grad()[0, 0]
        fd2 = central_difference(lambda y: pot.evaluate(ua[None], y[None]).log_psi[0, 0], ub, 1e-7)
        worst = max(worst, relative_error(g2, fd2))
    assert worst <= 1e-4


def test_collision_gradient_bounded_near_contact():
    params = CollisionParams()
    base = collision_log_potential(MODEL, [0, 0, 0, 0], np.zeros(40), [1e-3, 0, 0, 0], np.zeros(40), params)[1]
    closer = collision_log_potential(MODEL, [0, 0, 0, 0], np.zeros(40), [1e-8, 0, 0, 0], np.zeros(40), params)[1]
    assert np.all(np.isfinite(closer))
    assert np.linalg.norm(closer) <= np.linalg.norm(base) * (1 + 1e-9)


# scenarios

def test_canonical_scenarios_validate():
    for name in ("circle8", "corridor4", "central_obstacle4", "scattered4", "crossing6", "swap2", "swap3",
                 "single"):
        assert validate_planning(canonical(name)) == [], name


def test_validation_names_offending_robot():
    sc = canonical("central_obstacle4")
    sc.goals[2] = [5.0, 5.0]
    assert "robot 2: goal inside obstacle" in validate_planning(sc)


def test_scenario_dict_round_trip():
    sc = canonical("scattered4")
    back = PlanningScenario.from_dict(sc.to_dict())
    assert back.to_dict() == sc.to_dict()


# MPC loop

def test_robot_at_goal_stays_put():
    sc = PlanningScenario("idle", [[5.0, 5.0]], [[5.0, 5.0]])
    run = run_episode(sc, SvbpPlanner(sc, np.random.default_rng(0)), max_steps=30, stop_when_settled=False)
    # the best particle is a posterior sample, so controls jitter around zero rather than vanish
    assert np.abs(run.controls()).mean() < sc.model.control_limit / 4
    drift = np.linalg.norm(run.states()[:, 0, :2] - sc.goals[0], axis=1)
    assert np.all(drift <= sc.success_threshold)


def test_single_robot_reaches_goal():
    sc = canonical("single")
    run = run_episode(sc, SvbpPlanner(sc, np.random.default_rng(1)))
    m = evaluate_run(run)
    assert m.pass_rate([0.3])[0] == 1.0


def test_replaying_logged_controls_reproduces_states():
    sc = line_swap(2)
    run = run_episode(sc, SvbpPlanner(sc, np.random.default_rng(3)), max_steps=25)
    states = run.states()
    for k, rec in enumerate(run.records):
        for r in range(sc.num_robots):
            nxt = sc.model.step(states[k, r], rec.controls[r])
            assert np.max(np.abs(nxt - states[k + 1, r])) <= 1e-12


def test_swap_keeps_particle_diversity():
    sc = line_swap(2)
    planner = SvbpPlanner(sc, np.random.default_rng(5))
    J = np.asarray(sc.model.position_jacobian)
    spread = lambda: mean_pairwise_distance(planner.particles[0] @ J.T)
    initial = spread()
    states = sc.starts.copy()
    lowest = np.inf
    for _ in range(40):
        states, *_ = mpc_step(sc, states, planner)
        lowest = min(lowest, mean_pairwise_distance(planner.state.particles(0) @ J.T))
    assert lowest >= 0.1 * initial


def test_two_robot_swap_passes_at_safe_distance():
    sc = line_swap(2)
    good = 0
    for seed in range(10):
        m = evaluate_run(run_episode(sc, SvbpPlanner(sc, np.random.default_rng(seed)), seed=seed))
        good += (m.min_separation >= sc.collision.radius - 0.05) and m.pass_rate([0.3])[0] == 1.0
    assert good >= 9


# metrics

def _log(scenario, positions):
    """Run log whose executed states follow ``positions`` (steps, R, 2)."""
    vel = np.zeros_like(positions)
    states = np.concatenate([positions, vel], axis=2)
    run = RunLog(scenario, "svbp", 0, states[0])
    for k in range(1, len(states)):
        R = positions.shape[1]
        run.records.append(StepRecord(k - 1, states[k], np.zeros((R, 2)), np.zeros(R), np.zeros(R, bool)))
    return run


def test_exact_arrival_passes_everywhere():
    sc = canonical("central_obstacle4")
    m = evaluate_run(_log(sc, np.array([sc.starts[:, :2], sc.goals, sc.goals])))
    assert np.all(m.pass_rate([0.0, 0.1, 0.3, 1.0]) == 1.0)


def test_one_collision_caps_pass_rate():
    sc = PlanningScenario("four", [[1, 1], [3, 1], [1, 9], [9, 9]], [[5, 5.1], [5, 4.9], [1, 8], [9, 8]])
    pos = np.array([sc.starts[:, :2], sc.goals])
    m = evaluate_run(_log(sc, pos))
    assert m.collided.tolist() == [True, True, False, False]
    assert np.all(m.pass_rate(np.linspace(0, 10, 11)) <= 0.5)


def test_obstacle_penetration_counts_as_collision():
    sc = canonical("central_obstacle4")
    pos = np.array([sc.starts[:, :2], sc.goals])
    pos[1, 0] = [5.0, 5.0]
    m = evaluate_run(_log(sc, np.concatenate([pos, sc.goals[None]])))
    assert m.collided[0]
    assert np.all(m.pass_rate(np.linspace(0, 10, 11)) <= 0.75)


def test_stationary_robot_never_passes_below_its_distance():
    sc = PlanningScenario("far", [[0.0, 5.0]], [[5.0, 5.0]])
    m = evaluate_run(_log(sc, np.array([[[0.0, 5.0]]] * 3)))
    assert np.all(m.pass_rate([0.0, 1.0, 4.99]) == 0.0)
    assert m.pass_rate([5.0])[0] == 1.0


def test_path_time_counts_steps_to_stay_in_goal():
    sc = PlanningScenario("walk", [[0.0, 5.0]], [[1.0, 5.0]])
    xs = [0.0, 0.5, 0.8, 1.0, 1.0]
    m = evaluate_run(_log(sc, np.array([[[x, 5.0]] for x in xs])))
    assert m.path_time[0] == pytest.approx(2 * sc.model.dt)
    assert pass_rate_curve([m, m], [0.3]).tolist() == [1.0]
