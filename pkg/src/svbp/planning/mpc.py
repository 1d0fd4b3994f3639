"""Receding-horizon execution with a pluggable trajectory planner.

Every MPC step the planner refines each robot's plan from the current world
state, the first control of each robot's best plan is executed through the
dynamics, and plans are shifted one step to warm-start the next solve.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ..graph import MrfGraph
from ..inference import (SvbpConfig, SvbpState, init_state, map_estimate, particle_weights,
                         refresh_messages, svbp_iteration)
from ..svgd import KernelSpec, NumericError, StepPolicy
from .dynamics import shift_controls
from .potentials import CollisionPotential, TrajectoryCost
from .scenario import PlanningScenario

log = logging.getLogger(__name__)


def planning_graph(scenario: PlanningScenario, states: np.ndarray) -> MrfGraph:
    """Fully connected robot graph for the current world state."""
    R = len(states)
    unary = [TrajectoryCost(scenario.model, states[r], scenario.goals[r], scenario.env, scenario.weights)
             for r in range(R)]
    edges = [(a, b) for a in range(R) for b in range(a + 1, R)]
    pairwise = {(a, b): CollisionPotential(scenario.model, states[a], states[b], scenario.collision)
                for a, b in edges}
    return MrfGraph.build(unary, edges, pairwise, node_dim={r: scenario.model.control_dim for r in range(R)})


def solver_config(scenario: PlanningScenario, workers: int = 1) -> SvbpConfig:
    p = scenario.planner
    # plans are compared by their rolled-out positions, not raw controls
    kernel = KernelSpec(metric=np.asarray(scenario.model.position_jacobian))
    return SvbpConfig(num_particles=p.num_particles, num_iterations=p.iterations_per_step,
                      kernel=kernel, step=StepPolicy("adaptive", p.step_size), damping=p.damping,
                      workers=workers)


def initial_particles(scenario: PlanningScenario, rng: np.random.Generator) -> dict[int, np.ndarray]:
    p, m = scenario.planner, scenario.model
    scale = p.init_scale if p.init_scale is not None else m.control_limit / 2
    return {r: rng.normal(scale=scale, size=(p.num_particles, m.control_dim))
            for r in range(scenario.num_robots)}


def plan_costs(scenario, states, controls) -> np.ndarray:
    return np.array([TrajectoryCost(scenario.model, states[r], scenario.goals[r], scenario.env,
                                    scenario.weights).costs(controls[r][None])[0][0]
                     for r in range(len(states))])


class SvbpPlanner:
    """Centralized SVBP over all robots' trajectory particles."""

    method = "svbp"

    def __init__(self, scenario: PlanningScenario, rng: np.random.Generator, workers: int = 1):
        self.scenario = scenario
        self.config = solver_config(scenario, workers)
        self.particles = initial_particles(scenario, rng)
        self.state: SvbpState | None = None
        self.steps_done = 0

    def plan(self, states: np.ndarray):
        sc = self.scenario
        graph = planning_graph(sc, states)
        if self.state is None:
            self.state = init_state(graph, self.particles)
            iters = sc.planner.warmup_iterations
        else:
            iters = sc.planner.iterations_per_step
        events = []
        try:
            for _ in range(iters):
                svbp_iteration(graph, self.state, self.config)
            refresh_messages(graph, self.state, self.config)
            best = np.array([map_estimate(graph, self.state, r) for r in range(sc.num_robots)])
        except NumericError as exc:
            log.warning("solver failure at MPC step %d: %s", self.steps_done, exc)
            events.append(f"numeric failure: {exc}")
            best = np.zeros((sc.num_robots, sc.model.control_dim))
        return best, plan_costs(sc, states, best), events

    def snapshot(self, states) -> list:
        graph = planning_graph(self.scenario, states)
        return [{"robot": r, "particles": self.state.particles(r).tolist(),
                 "weights": particle_weights(graph, self.state, r, strict=False).tolist()}
                for r in range(self.scenario.num_robots)]

    def advance(self):
        for r, belief in self.state.beliefs.items():
            belief.particles = shift_controls(belief.particles)
        self.steps_done += 1


@dataclass
class StepRecord:
    step: int
    states: np.ndarray
    controls: np.ndarray
    best_cost: np.ndarray
    clamped: np.ndarray
    events: list = field(default_factory=list)
    snapshots: list | None = None

    def to_json(self) -> dict:
        out = {"step": self.step, "states": self.states.tolist(), "controls": self.controls.tolist(),
               "best_cost": self.best_cost.tolist(), "clamped": self.clamped.tolist(),
               "events": self.events}
        if self.snapshots is not None:
            out["particles"] = self.snapshots
        return out


@dataclass
class RunLog:
    scenario: PlanningScenario
    method: str
    seed: int
    starts: np.ndarray
    records: list[StepRecord] = field(default_factory=list)

    def states(self) -> np.ndarray:
        """Executed states, shape (steps + 1, R, state_dim), starting with the start states."""
        return np.array([self.starts] + [r.states for r in self.records])

    def controls(self) -> np.ndarray:
        return np.array([r.controls for r in self.records])

    def write_jsonl(self, fh) -> None:
        header = {"kind": "header", "method": self.method, "seed": self.seed,
                  "scenario": self.scenario.name, "starts": self.starts.tolist()}
        fh.write(json.dumps(header) + "\n")
        for rec in self.records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")


def mpc_step(scenario: PlanningScenario, states: np.ndarray, planner):
    """Plan, execute each robot's first control, then warm-start. Returns (next states, record parts)."""
    plans, costs, events = planner.plan(states)
    model = scenario.model
    executed = np.zeros((len(states), 2))
    clamped = np.zeros(len(states), dtype=bool)
    for r in range(len(states)):
        executed[r], clamped[r] = model.clamp(plans[r, :2])
    nxt = np.array([model.step(states[r], executed[r]) for r in range(len(states))])
    planner.advance()
    return nxt, executed, costs, clamped, events


def settled(scenario: PlanningScenario, states: np.ndarray, speed_tol: float = 0.1) -> bool:
    err = np.linalg.norm(states[:, :2] - scenario.goals, axis=1)
    speed = np.linalg.norm(states[:, 2:4], axis=1) if states.shape[1] == 4 else np.zeros(len(states))
    return bool(np.all(err <= scenario.success_threshold) and np.all(speed <= speed_tol))


def run_episode(scenario: PlanningScenario, planner, seed: int = 0, max_steps: int | None = None,
                snapshot_stride: int = 0, stop_when_settled: bool = True) -> RunLog:
    states = scenario.starts.copy()
    run = RunLog(scenario, planner.method, seed, states.copy())
    for step in range(max_steps or scenario.max_steps):
        snaps = None
        nxt, executed, costs, clamped, events = mpc_step(scenario, states, planner)
        if snapshot_stride and step % snapshot_stride == 0 and hasattr(planner, "snapshot"):
            snaps = planner.snapshot(states)
        run.records.append(StepRecord(step, nxt, executed, costs, clamped, events, snaps))
        states = nxt
        if stop_when_settled and settled(scenario, states):
            break
    return run
