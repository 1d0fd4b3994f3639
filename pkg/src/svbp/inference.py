"""Stein variational belief propagation.

Each node keeps a particle set. Messages are particle estimates evaluated at
the recipient's particles,

    m_{t->s}(x_s^i) = 1/M sum_j phi_t(x_t^j) / W_t(x_t^j) psi(x_t^j, x_s^i) prod_{u != s} m_{u->t}(x_t^j),

computed in log space. Their gradients in ``x_s`` are softmax-weighted
averages of ``grad log psi`` over the sender's particles, which is the
quotient ``grad m / m`` without ever forming either term. One iteration
refreshes every directed message from the frozen particle sets, then moves
every node's particles one SVGD step.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .graph import MrfGraph, ParticleBelief, neighbors, sync_schedule
from .svgd import (AdaptiveState, KernelSpec, NumericError, StepPolicy, apply_step,
                   stein_direction)


class StaleMessageError(RuntimeError):
    pass


@dataclass
class MessageTable:
    """``log m_{t->s}`` and its gradient at each of the recipient's particles."""

    log_values: np.ndarray
    grad: np.ndarray
    stamp: int = 0


@dataclass
class SvbpConfig:
    """Solver settings.

    ``proposal`` selects ``W_t`` in the message estimate: ``"uniform"`` treats
    the sender's particles as equally weighted sample locations (``W = 1/M``),
    ``"belief"`` divides by the sender's current unnormalized belief at each
    particle, which is the importance-correct choice when the particles are
    distributed as that belief.
    """

    num_particles: int = 50
    num_iterations: int = 100
    kernel: KernelSpec | Mapping[int, KernelSpec] = field(default_factory=KernelSpec)
    step: StepPolicy = field(default_factory=StepPolicy)
    rng_seed: int = 0
    message_passes: int = 1
    damping: float = 0.0
    proposal: str = "uniform"
    workers: int = 1

    def __post_init__(self):
        if self.num_particles < 1:
            raise ValueError("num_particles must be >= 1")
        if self.num_iterations < 0:
            raise ValueError("num_iterations must be >= 0")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.proposal not in ("uniform", "belief"):
            raise ValueError(f"unknown proposal {self.proposal!r}")
        if self.message_passes < 1:
            raise ValueError("message_passes must be >= 1")

    def kernel_for(self, s: int) -> KernelSpec:
        if isinstance(self.kernel, KernelSpec):
            return self.kernel
        return self.kernel[s]


@dataclass
class SvbpState:
    beliefs: dict[int, ParticleBelief]
    messages: dict[tuple[int, int], MessageTable]
    iteration: int = 0
    step_states: dict[int, AdaptiveState] = field(default_factory=dict)

    def particles(self, s: int) -> np.ndarray:
        return self.beliefs[s].particles


def init_state(graph: MrfGraph, init_particles: Mapping[int, np.ndarray] | Iterable) -> SvbpState:
    """Wrap initial particles and attach uninformative (all-zero) messages."""
    if not isinstance(init_particles, Mapping):
        init_particles = dict(enumerate(init_particles))
    beliefs = {}
    for s in range(graph.num_nodes):
        x = np.array(init_particles[s], dtype=float, copy=True)
        if x.ndim == 1:
            x = x[:, None]
        if graph.node_dim.get(s) not in (None, x.shape[1]):
            raise ValueError(f"node {s}: particles have dim {x.shape[1]}, node expects {graph.node_dim[s]}")
        beliefs[s] = ParticleBelief(x)
    messages = {}
    for t, s in sync_schedule(graph):
        x_s = beliefs[s].particles
        messages[(t, s)] = MessageTable(np.zeros(len(x_s)), np.zeros_like(x_s), 0)
    return SvbpState(beliefs, messages, 0, {s: AdaptiveState() for s in range(graph.num_nodes)})


def _incoming_sum(graph, state, t, exclude, strict=True):
    """Sum of log m_{u->t} over u in nbrs(t) minus ``exclude``, at t's particles."""
    n_t = len(state.particles(t))
    total = np.zeros(n_t)
    for u in neighbors(graph, t):
        if u == exclude:
            continue
        table = state.messages[(u, t)]
        if len(table.log_values) != n_t:
            raise StaleMessageError(f"message {u}->{t} has {len(table.log_values)} entries, node {t} has {n_t} particles")
        if strict and table.stamp < state.iteration - 1:
            raise StaleMessageError(f"message {u}->{t} stamped {table.stamp}, state at iteration {state.iteration}")
        total += table.log_values
    return total


def _sender_weights(graph, state, t, s, proposal, log_proposal):
    """Per-particle log-weights of sender ``t``: log phi_t - log W_t + incoming (except from s)."""
    x_t = state.particles(t)
    m = len(x_t)
    log_phi = graph.unary[t].log(x_t)
    incoming = _incoming_sum(graph, state, t, exclude=s)
    if log_proposal is not None:
        log_w = np.asarray(log_proposal, dtype=float)
    elif proposal == "belief":
        back = state.messages.get((s, t))
        log_w = log_phi + incoming + (back.log_values if back is not None else 0.0)
    else:
        log_w = np.full(m, -np.log(m))
    return log_phi - log_w + incoming - np.log(m)


def compute_message(graph: MrfGraph, state: SvbpState, t: int, s: int, *,
                    proposal: str = "uniform", log_proposal=None) -> MessageTable:
    """Estimate ``m_{t->s}`` at node s's particles.

    Returns the table (log values and gradients) without storing it. The
    log values are the raw estimate, not normalized. ``log_proposal``
    overrides ``W_t`` with explicit log-densities at t's particles.
    """
    x_s = state.particles(s)
    x_t = state.particles(t)
    sender = _sender_weights(graph, state, t, s, proposal, log_proposal)
    ev = graph.potential_for(s, t).evaluate(x_s, x_t)
    log_psi = ev.log_psi
    if np.isnan(log_psi).any() or np.isposinf(log_psi).any():
        raise NumericError(f"non-finite pairwise potential on edge {t}->{s}")
    logits = log_psi + sender[None, :]
    grads = ev.grad
    if grads.ndim == 2:
        grads = grads[..., None]
    log_m, grad = kernels.message_reduce(logits, grads)
    if ev.jacobian is not None:
        grad = grad @ ev.jacobian
    if not np.all(np.isfinite(log_m)):
        raise NumericError(f"message {t}->{s} has no support at some recipient particle")
    return MessageTable(log_m, grad, state.iteration)


def update_message(graph: MrfGraph, state: SvbpState, t: int, s: int, **kw) -> np.ndarray:
    """Log message vector ``log m_{t->s}(x_s^i)`` for every particle i of s."""
    return compute_message(graph, state, t, s, **kw).log_values


def refresh_messages(graph: MrfGraph, state: SvbpState, config: SvbpConfig) -> None:
    """Recompute every directed message synchronously, ``message_passes`` times.

    All new tables in a pass read only the previous pass's tables, so the
    result does not depend on evaluation order or worker count.
    """
    schedule = sync_schedule(graph)
    for _ in range(config.message_passes):
        def job(edge):
            t, s = edge
            return compute_message(graph, state, t, s, proposal=config.proposal)

        if config.workers > 1 and len(schedule) > 1:
            with ThreadPoolExecutor(config.workers) as pool:
                fresh = list(pool.map(job, schedule))
        else:
            fresh = [job(e) for e in schedule]
        for edge, table in zip(schedule, fresh):
            # constant shifts leave beliefs and gradients unchanged
            n = len(table.log_values)
            table.log_values = table.log_values - (logsumexp(table.log_values) - np.log(n))
            old = state.messages.get(edge)
            if config.damping > 0 and old is not None and len(old.log_values) == n:
                lam = config.damping
                table.log_values = (1 - lam) * table.log_values + lam * old.log_values
                table.grad = (1 - lam) * table.grad + lam * old.grad
            state.messages[edge] = table


def _check_current(graph, state, s):
    n_s = len(state.particles(s))
    for t in neighbors(graph, s):
        table = state.messages[(t, s)]
        if table.stamp != state.iteration or len(table.log_values) != n_s:
            raise StaleMessageError(f"message {t}->{s} is not current (stamp {table.stamp}, iteration {state.iteration})")


def belief_log_grad(graph: MrfGraph, state: SvbpState, s: int) -> np.ndarray:
    """``grad log phi_s + sum_t grad log m_{t->s}`` at each particle of s."""
    _check_current(graph, state, s)
    g = np.array(graph.unary[s].grad(state.particles(s)), dtype=float)
    for t in neighbors(graph, s):
        g += state.messages[(t, s)].grad
    return g


def log_belief(graph: MrfGraph, state: SvbpState, s: int, strict: bool = True) -> np.ndarray:
    if strict:
        _check_current(graph, state, s)
    out = np.array(graph.unary[s].log(state.particles(s)), dtype=float)
    for t in neighbors(graph, s):
        out += state.messages[(t, s)].log_values
    return out


def particle_weights(graph: MrfGraph, state: SvbpState, s: int, strict: bool = True) -> np.ndarray:
    lb = log_belief(graph, state, s, strict)
    w = np.exp(lb - lb.max())
    return w / w.sum()


def map_estimate(graph: MrfGraph, state: SvbpState, s: int, strict: bool = True) -> np.ndarray:
    """Highest-weight particle of ``s``; ties go to the lowest index."""
    return state.particles(s)[int(np.argmax(particle_weights(graph, state, s, strict)))].copy()


def svbp_iteration(graph: MrfGraph, state: SvbpState, config: SvbpConfig, nodes=None) -> None:
    """One synchronous iteration: refresh all messages, then one SVGD step per node."""
    refresh_messages(graph, state, config)
    nodes = range(graph.num_nodes) if nodes is None else nodes

    def step(s):
        x = state.particles(s)
        direction = stein_direction(x, belief_log_grad(graph, state, s), config.kernel_for(s))
        return apply_step(x, direction, config.step, state.iteration, state.step_states[s])

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            moved = list(pool.map(step, nodes))
    else:
        moved = [step(s) for s in nodes]
    for s, x in zip(nodes, moved):
        if not np.all(np.isfinite(x)):
            raise NumericError(f"iteration {state.iteration}: node {s} particles became non-finite")
        state.beliefs[s] = ParticleBelief(x)
    state.iteration += 1


def run(graph: MrfGraph, config: SvbpConfig, init_particles, *,
        state: SvbpState | None = None,
        callback: Callable[[SvbpState, int], None] | None = None) -> SvbpState:
    """Run ``config.num_iterations`` SVBP iterations.

    Messages are refreshed once more at the end so weights and estimates
    read current tables. Pass ``state`` to continue from a previous run
    (``init_particles`` is then ignored).
    """
    if state is None:
        state = init_state(graph, init_particles)
    for k in range(config.num_iterations):
        try:
            svbp_iteration(graph, state, config)
        except NumericError as exc:
            raise NumericError(f"iteration {k}: {exc}") from exc
        if callback is not None:
            callback(state, k)
    refresh_messages(graph, state, config)
    return state


def snapshot_records(graph: MrfGraph, state: SvbpState, method: str = "svbp") -> list[dict]:
    """One JSON-ready record per node: iteration, node, particles, weights."""
    out = []
    for s in range(graph.num_nodes):
        out.append({
            "method": method,
            "iteration": int(state.iteration),
            "node": int(s),
            "particles": state.particles(s).tolist(),
            "weights": particle_weights(graph, state, s, strict=False).tolist(),
        })
    return out


def write_snapshots(fh, records: Iterable[dict]) -> None:
    for rec in records:
        fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_snapshots(fh) -> list[dict]:
    return [json.loads(line) for line in fh if line.strip()]
