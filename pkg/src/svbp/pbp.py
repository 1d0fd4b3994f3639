"""Particle belief propagation by iterated importance sampling.

Each round jitters every particle, refreshes all message tables with the same
estimator SVBP uses, weights particles by unary times incoming messages, and
resamples systematically back to equal weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .graph import MrfGraph, ParticleBelief, neighbors
from .inference import SvbpState, init_state, log_belief, refresh_messages


class DegeneracyError(FloatingPointError):
    pass


@dataclass
class PbpConfig:
    num_particles: int = 50
    num_iterations: int = 50
    jitter_scale: float | np.ndarray = 0.05
    rng_seed: int = 0
    proposal: str = "uniform"
    message_passes: int = 1
    damping: float = 0.0
    workers: int = 1

    def __post_init__(self):
        if self.num_particles < 1:
            raise ValueError("num_particles must be >= 1")
        if self.num_iterations < 0:
            raise ValueError("num_iterations must be >= 0")
        if np.any(np.asarray(self.jitter_scale) < 0):
            raise ValueError("jitter_scale must be non-negative")


def systematic_resample(weights, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Indices drawn by systematic resampling; copy counts have expectation ``n * w_i``."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be non-negative and sum to 1")
    n = w.size if n is None else n
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    positions = (np.arange(n) + rng.uniform()) / n
    idx = np.searchsorted(cdf, positions, side="right")
    return np.minimum(idx, w.size - 1)


def _reindex_incoming(graph, state, s, idx):
    # tables are keyed by particle identity, so they follow the resampled copies
    for t in neighbors(graph, s):
        table = state.messages[(t, s)]
        table.log_values = table.log_values[idx]
        table.grad = table.grad[idx]


def pbp_iterate(graph: MrfGraph, state: SvbpState, config: PbpConfig,
                rng: np.random.Generator) -> SvbpState:
    """One round: jitter, refresh messages, weight, resample. Mutates and returns ``state``."""
    scale = np.asarray(config.jitter_scale, dtype=float)
    for s in range(graph.num_nodes):
        x = state.particles(s)
        if np.any(scale > 0):
            x = x + rng.normal(size=x.shape) * scale
        state.beliefs[s] = ParticleBelief(x)
    refresh_messages(graph, state, config)
    for s in range(graph.num_nodes):
        lb = log_belief(graph, state, s)
        if not np.any(np.isfinite(lb)):
            raise DegeneracyError(f"node {s}: every particle has zero weight")
        w = np.exp(lb - lb.max())
        w /= w.sum()
        idx = systematic_resample(w, rng)
        state.beliefs[s] = ParticleBelief(state.particles(s)[idx])
        _reindex_incoming(graph, state, s, idx)
    state.iteration += 1
    return state


def run_pbp(graph: MrfGraph, config: PbpConfig, init_particles, *,
            rng: np.random.Generator | None = None,
            callback: Callable[[SvbpState, int], None] | None = None) -> SvbpState:
    """Run ``config.num_iterations`` rounds and refresh tables once more for the final weights."""
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng
    state = init_state(graph, init_particles)
    for k in range(config.num_iterations):
        pbp_iterate(graph, state, config, rng)
        if callback is not None:
            callback(state, k)
    refresh_messages(graph, state, config)
    return state
