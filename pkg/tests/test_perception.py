import math

import numpy as np
import pytest

from svbp.graph import check_pairwise_gradient, check_unary_gradient
from svbp.inference import map_estimate
from svbp.perception import (DistancePairwise, GmmObservation, GmmUnary, PerceptionScenario,
                             PerceptionSettings, distance_pairwise, generate_scenario,
                             gmm_log_density_and_grad, is_connected, radius_edges, run_sweep,
                             solve)


def test_zero_noise_scenario_has_single_true_components():
    sc = generate_scenario(8, 0, seed=4)
    for obs, p in zip(sc.observations, sc.true_positions):
        assert obs.means.shape == (1, 2)
        np.testing.assert_array_equal(obs.means[0], p)


@pytest.mark.parametrize("noise", [0, 8, 16, 24, 32])
def test_noise_component_total(noise):
    sc = generate_scenario(8, noise, seed=11)
    assert sum(len(o.means) - 1 for o in sc.observations) == noise
    for obs, p in zip(sc.observations, sc.true_positions):
        assert any(np.array_equal(m, p) for m in obs.means)


def test_scenario_determinism():
    a = generate_scenario(8, 16, seed=5).to_dict()
    b = generate_scenario(8, 16, seed=5).to_dict()
    assert a == b
    assert a != generate_scenario(8, 16, seed=6).to_dict()


def test_scenarios_are_connected():
    for seed in range(200):
        sc = generate_scenario(8, 4, seed=seed)
        assert is_connected(8, radius_edges(sc.true_positions, 2.0))
        assert set(sc.edges) == set(radius_edges(sc.true_positions, 2.0))
        lo, hi = np.array(sc.region.low), np.array(sc.region.high)
        assert np.all(sc.true_positions >= lo) and np.all(sc.true_positions <= hi)


def test_scenario_dict_round_trip():
    sc = generate_scenario(8, 8, seed=2)
    back = PerceptionScenario.from_dict(sc.to_dict())
    assert back.to_dict() == sc.to_dict()


def test_distances_are_true_distances():
    sc = generate_scenario(8, 0, seed=9)
    for (a, b), L in sc.distances.items():
        assert L == pytest.approx(np.linalg.norm(sc.true_positions[a] - sc.true_positions[b]), abs=1e-12)


def test_gmm_gradient_examples():
    _, g = gmm_log_density_and_grad(GmmObservation([[1.0, 2.0]], 0.3), np.array([1.0, 2.0]))
    np.testing.assert_array_equal(g, [0.0, 0.0])
    _, g = gmm_log_density_and_grad(GmmObservation([[0.0, 0.0]], 1.0), np.array([1.0, 0.0]))
    np.testing.assert_allclose(g, [-1.0, 0.0], atol=1e-15)
    _, g = gmm_log_density_and_grad(GmmObservation([[-1.0, 0.5], [1.0, -0.5]], 0.4), np.zeros(2))
    np.testing.assert_allclose(g, [0.0, 0.0], atol=1e-12)


def test_gmm_density_is_normalized_mixture():
    obs = GmmObservation([[0.0, 0.0], [3.0, 0.0]], 0.5)
    val, _ = gmm_log_density_and_grad(obs, np.array([0.0, 0.0]))
    direct = 0.5 * (1 / (2 * math.pi * 0.25)) * (1 + math.exp(-9 / 0.5))
    assert val == pytest.approx(math.log(direct), rel=1e-12)


def test_gmm_gradient_finite_differences(rng):
    obs = GmmObservation(rng.uniform(0, 10, size=(5, 2)), 0.25)
    probes = obs.means[rng.integers(5, size=100)] + rng.normal(scale=0.4, size=(100, 2))
    assert check_unary_gradient(GmmUnary(obs), probes) <= 1e-4


def test_distance_pairwise_examples():
    lp, g = distance_pairwise([0.0, 0.0], [3.0, 4.0], 5.0, 25.0)
    assert lp == 0.0
    np.testing.assert_array_equal(g, [0.0, 0.0])
    lp, _ = distance_pairwise([1.0, 0.0], [0.0, 0.0], 0.0, 2.0)
    assert math.exp(lp) == pytest.approx(math.exp(-2.0), abs=1e-15)
    _, g = distance_pairwise([1.0, 1.0], [1.0, 1.0], 0.7, 25.0)
    np.testing.assert_array_equal(g, [0.0, 0.0])


def test_distance_pairwise_gradient_and_symmetry(backend, rng):
    pot = DistancePairwise(1.3, 25.0)
    a = rng.uniform(0, 3, size=(150, 2))
    b = rng.uniform(0, 3, size=(150, 2))
    keep = np.linalg.norm(a - b, axis=1) > 1e-3
    assert check_pairwise_gradient(pot, a[keep][:100], b[keep][:100]) <= 1e-4
    for x, y in zip(a, b):
        assert abs(pot.log_psi(x, y) - pot.log_psi(y, x)) <= 1e-9


def test_pairwise_maximal_on_circle(rng):
    pot = DistancePairwise(1.5, 25.0)
    for ang in rng.uniform(0, 2 * math.pi, size=20):
        on = np.array([math.cos(ang), math.sin(ang)]) * 1.5
        assert pot.log_psi(on, [0.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
        assert pot.log_psi(on * 1.1, [0.0, 0.0]) < 0.0


def test_zero_noise_estimates_within_two_sigma():
    settings = PerceptionSettings()
    hits = 0
    for r in range(10):
        sc = generate_scenario(8, 0, seed=100 + r)
        graph, state = solve(sc, "svbp", 50, 100 + r, settings)
        est = np.array([map_estimate(graph, state, s) for s in range(8)])
        hits += bool(np.all(np.linalg.norm(est - sc.true_positions, axis=1) <= 2 * sc.sigma))
    assert hits >= 9


def test_zero_noise_sweep_errors_below_sigma():
    cells = run_sweep(noise_levels=(0,), runs=3, seed=1, with_mmd=False)
    assert {c.method for c in cells} == {"svbp", "pbp"}
    for m in ("svbp", "pbp"):
        assert np.mean([c.error for c in cells if c.method == m]) < 0.25


def test_sweep_independent_of_job_count():
    kw = dict(noise_levels=(8,), runs=2, seed=3, with_mmd=False,
              settings=PerceptionSettings(svbp_iterations=10, pbp_iterations=5))
    a = run_sweep(jobs=1, **kw)
    b = run_sweep(jobs=2, **kw)
    assert [(c.method, c.run, c.error) for c in a] == [(c.method, c.run, c.error) for c in b]
