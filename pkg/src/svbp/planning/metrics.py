"""Outcome metrics for executed planning runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mpc import RunLog


@dataclass
class RunMetrics:
    final_error: np.ndarray      # (R,) distance to goal at the last executed state
    collided: np.ndarray         # (R,) bool
    path_time: np.ndarray        # (R,) seconds, nan unless the robot succeeded
    min_separation: float
    min_clearance: float
    threshold: float

    def passed(self, threshold: float | None = None) -> np.ndarray:
        t = self.threshold if threshold is None else threshold
        return (self.final_error <= t) & ~self.collided

    def pass_rate(self, thresholds) -> np.ndarray:
        """Fraction of robots passing at each threshold; colliding robots never pass."""
        return np.array([self.passed(t).mean() for t in np.atleast_1d(thresholds)])


def _collisions(pos: np.ndarray, env, diameter: float):
    steps, R, _ = pos.shape
    collided = np.zeros(R, dtype=bool)
    min_sep = np.inf
    for a in range(R):
        for b in range(a + 1, R):
            d = np.linalg.norm(pos[:, a] - pos[:, b], axis=1).min()
            min_sep = min(min_sep, float(d))
            if d < diameter:
                collided[[a, b]] = True
    clearance = np.inf
    if env.obstacles:
        sd = env.sdf(pos)[0]
        clearance = float(sd.min())
        collided |= (sd < 0).any(axis=0)
    return collided, min_sep, clearance


def evaluate_run(log: RunLog, threshold: float | None = None) -> RunMetrics:
    sc = log.scenario
    t = sc.success_threshold if threshold is None else threshold
    pos = log.states()[:, :, :2]
    collided, min_sep, clearance = _collisions(pos, sc.env, 2 * sc.robot_radius)
    err_t = np.linalg.norm(pos - sc.goals[None], axis=2)
    final = err_t[-1]
    path_time = np.full(len(final), np.nan)
    for r in np.flatnonzero((final <= t) & ~collided):
        outside = np.flatnonzero(err_t[:, r] > t)
        # first state index from which the robot stays inside the threshold
        k = outside[-1] + 1 if len(outside) else 0
        path_time[r] = k * sc.model.dt
    return RunMetrics(final, collided, path_time, min_sep, clearance, t)


def pass_rate_curve(metrics: list[RunMetrics], thresholds) -> np.ndarray:
    """Pass rate pooled over all robots of all runs."""
    th = np.atleast_1d(thresholds)
    passed = np.array([[m.passed(t) for t in th] for m in metrics])  # runs, thresholds, robots
    return passed.mean(axis=(0, 2))


def path_times(metrics: list[RunMetrics]) -> np.ndarray:
    times = np.concatenate([m.path_time for m in metrics]) if metrics else np.array([])
    return times[~np.isnan(times)]
