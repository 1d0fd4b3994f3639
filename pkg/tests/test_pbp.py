import numpy as np
import pytest

from svbp.graph import (ConstantPairwise, ConstantUnary, GaussianDifferencePairwise,
                        GaussianUnary, MrfGraph)
from svbp.inference import init_state, map_estimate
from svbp.pbp import PbpConfig, pbp_iterate, run_pbp, systematic_resample


def test_resample_uniform_weights_is_identity(rng):
    idx = systematic_resample(np.full(7, 1 / 7), rng)
    assert sorted(idx.tolist()) == list(range(7))


def test_resample_point_mass(rng):
    assert systematic_resample([1.0, 0.0, 0.0], rng).tolist() == [0, 0, 0]


def test_resample_integer_expectations(rng):
    for _ in range(20):
        idx = systematic_resample([0.5, 0.5, 0.0, 0.0], rng)
        assert sorted(idx.tolist()) == [0, 0, 1, 1]


def test_resample_rejects_unnormalized(rng):
    with pytest.raises(ValueError):
        systematic_resample([0.5, 0.6], rng)
    with pytest.raises(ValueError):
        systematic_resample([1.5, -0.5], rng)


def test_resample_is_unbiased(rng):
    w = rng.dirichlet(np.ones(6))
    n, trials = 6, 10_000
    counts = np.zeros((trials, n))
    for k in range(trials):
        counts[k] = np.bincount(systematic_resample(w, rng), minlength=n)
    mean = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / np.sqrt(trials)
    # a copy count with zero spread is exact; otherwise allow 3 standard errors
    tol = np.where(se > 0, 3 * se, 1e-12)
    assert np.all(np.abs(mean - n * w) <= tol + 1e-12)


def test_resample_deterministic_given_rng():
    w = np.array([0.1, 0.2, 0.3, 0.4])
    a = systematic_resample(w, np.random.default_rng(3))
    b = systematic_resample(w, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_zero_jitter_uniform_potentials_preserve_multiset(rng):
    g = MrfGraph.build([ConstantUnary(2), ConstantUnary(2)], [(0, 1)], ConstantPairwise((2, 2)))
    init = {0: rng.normal(size=(9, 2)), 1: rng.normal(size=(9, 2))}
    state = init_state(g, init)
    cfg = PbpConfig(num_particles=9, jitter_scale=0.0)
    for _ in range(5):
        pbp_iterate(g, state, cfg, rng)
    for s in (0, 1):
        got = sorted(map(tuple, state.particles(s)))
        assert got == sorted(map(tuple, init[s]))


def test_single_particle_random_walk(rng):
    g = MrfGraph.build([GaussianUnary([0.0], 1.0)])
    state = init_state(g, [np.array([[0.0]])])
    cfg = PbpConfig(num_particles=1, jitter_scale=0.5)
    path = []
    for _ in range(20):
        pbp_iterate(g, state, cfg, rng)
        path.append(state.particles(0)[0, 0])
    steps = np.diff(path)
    assert np.all(steps != 0.0)
    assert 0.2 < steps.std() < 1.0


def _chain():
    # prior N(0, 1) on node 0, observation N(2, 0.5) on node 1, unit coupling
    g = MrfGraph.build([GaussianUnary([0.0], 1.0), GaussianUnary([2.0], 0.5)], [(0, 1)],
                       GaussianDifferencePairwise(1))
    lam = np.array([[2.0, -1.0], [-1.0, 3.0]])
    truth = np.linalg.solve(lam, [0.0, 4.0])
    return g, truth


def test_gaussian_chain_posterior_means(rng):
    g, truth = _chain()
    cfg = PbpConfig(num_particles=500, num_iterations=50, jitter_scale=0.05)
    state = run_pbp(g, cfg, {s: rng.uniform(-5, 5, size=(500, 1)) for s in range(2)}, rng=rng)
    for s in range(2):
        assert abs(state.particles(s).mean() - truth[s]) <= 0.1


def test_zero_jitter_error_decreases():
    g, truth = _chain()
    first, last = [], []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        cfg = PbpConfig(num_particles=30, num_iterations=50, jitter_scale=0.0)
        errors = []

        def record(state, k):
            errors.append(np.mean([abs(map_estimate(g, state, s, strict=False)[0] - truth[s])
                                   for s in range(2)]))

        run_pbp(g, cfg, {s: rng.uniform(-5, 5, size=(30, 1)) for s in range(2)}, rng=rng,
                callback=record)
        first.append(errors[0])
        last.append(errors[-1])
    assert np.median(last) < np.median(first)


def test_config_validation():
    with pytest.raises(ValueError):
        PbpConfig(jitter_scale=-0.1)
    with pytest.raises(ValueError):
        PbpConfig(num_particles=0)
