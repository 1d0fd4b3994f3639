"""Planning scenarios: world, robots, cost settings and solver settings."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dynamics import DynamicsModel
from .environment import Circle, Environment2D, Rect
from .potentials import CollisionParams, CostWeights


@dataclass(frozen=True)
class PlannerSettings:
    num_particles: int = 32
    iterations_per_step: int = 5
    warmup_iterations: int = 15
    step_size: float = 0.05
    init_scale: float | None = None
    damping: float = 0.0
    gabp_iterations: int = 10
    gabp_damping: float = 0.4


@dataclass(frozen=True)
class HarnessSettings:
    transport: str = "in_process"
    latency: int = 0
    drop_probability: float = 0.0


@dataclass
class PlanningScenario:
    name: str
    starts: np.ndarray
    goals: np.ndarray
    env: Environment2D = field(default_factory=Environment2D)
    model: DynamicsModel = field(default_factory=DynamicsModel)
    weights: CostWeights = field(default_factory=CostWeights)
    collision: CollisionParams = field(default_factory=CollisionParams)
    robot_radius: float = 0.2
    success_threshold: float = 0.3
    max_steps: int = 150
    planner: PlannerSettings = field(default_factory=PlannerSettings)
    harness: HarnessSettings = field(default_factory=HarnessSettings)

    def __post_init__(self):
        self.starts = np.atleast_2d(np.asarray(self.starts, dtype=float))
        self.goals = np.atleast_2d(np.asarray(self.goals, dtype=float))
        if self.starts.shape[1] == 2 and self.model.state_dim == 4:
            self.starts = np.hstack([self.starts, np.zeros_like(self.starts)])

    @property
    def num_robots(self) -> int:
        return len(self.starts)

    def with_robots(self, idx) -> PlanningScenario:
        return replace(self, starts=self.starts[idx], goals=self.goals[idx])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dynamics": asdict(self.model),
            "environment": self.env.to_dict(),
            "robots": [{"start": s.tolist(), "goal": g.tolist()} for s, g in zip(self.starts, self.goals)],
            "weights": asdict(self.weights),
            "collision": asdict(self.collision),
            "robot_radius": self.robot_radius,
            "success_threshold": self.success_threshold,
            "max_steps": self.max_steps,
            "solver": asdict(self.planner),
            "harness": asdict(self.harness),
        }

    @classmethod
    def from_dict(cls, d: dict) -> PlanningScenario:
        robots = d["robots"]
        return cls(
            name=d.get("name", "unnamed"),
            starts=np.array([r["start"] for r in robots], dtype=float),
            goals=np.array([r["goal"] for r in robots], dtype=float),
            env=Environment2D.from_dict(d.get("environment", {})),
            model=DynamicsModel(**d.get("dynamics", {})),
            weights=CostWeights(**d.get("weights", {})),
            collision=CollisionParams(**d.get("collision", {})),
            robot_radius=float(d.get("robot_radius", 0.2)),
            success_threshold=float(d.get("success_threshold", 0.3)),
            max_steps=int(d.get("max_steps", 150)),
            planner=PlannerSettings(**d.get("solver", {})),
            harness=HarnessSettings(**d.get("harness", {})),
        )


def validate_planning(s: PlanningScenario) -> list[str]:
    """Every geometric violation, named by robot index."""
    problems = []
    if len(s.starts) != len(s.goals):
        problems.append(f"robots: {len(s.starts)} starts but {len(s.goals)} goals")
    if len(s.starts) == 0:
        problems.append("robots: at least one robot is required")
    for i, (st, g) in enumerate(zip(s.starts, s.goals)):
        for label, p in (("start", st[:2]), ("goal", g[:2])):
            if not s.env.in_bounds(p):
                problems.append(f"robot {i}: {label} outside bounds")
            elif s.env.obstacles and float(s.env.sdf(p)[0]) <= 0.0:
                problems.append(f"robot {i}: {label} inside obstacle")
    for i in range(len(s.starts)):
        for j in range(i + 1, len(s.starts)):
            if np.linalg.norm(s.starts[i, :2] - s.starts[j, :2]) < 2 * s.robot_radius:
                problems.append(f"robots {i},{j}: starts overlap")
            if np.linalg.norm(s.goals[i] - s.goals[j]) < 2 * s.robot_radius:
                problems.append(f"robots {i},{j}: goals overlap")
    if s.starts.shape[1] != s.model.state_dim:
        problems.append(f"robots: start states have dim {s.starts.shape[1]}, dynamics expect {s.model.state_dim}")
    if not 0 < s.collision.beta <= 1 or s.collision.radius <= 0:
        problems.append("collision: need radius > 0 and 0 < beta <= 1")
    if s.harness.transport not in ("in_process", "loopback_sockets"):
        problems.append(f"harness: unknown transport {s.harness.transport!r}")
    if not 0 <= s.harness.drop_probability < 1:
        problems.append("harness: drop_probability must lie in [0, 1)")
    return problems


def _ring(n, radius, center=(5.0, 5.0), phase=0.0):
    ang = phase + 2 * math.pi * np.arange(n) / n
    return np.stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)], axis=1)


def antipodal_circle(n: int = 8, radius: float = 4.0, **kw) -> PlanningScenario:
    starts = _ring(n, radius)
    return PlanningScenario(f"circle{n}", starts, 2 * np.array([5.0, 5.0]) - starts, **kw)


def line_swap(n: int = 2, **kw) -> PlanningScenario:
    """Robots on a horizontal line exchanging ends; with three, the middle one crosses vertically."""
    if n == 1:
        return PlanningScenario("single", [[3.0, 5.0]], [[7.0, 5.0]], **kw)
    starts = [[2.0, 5.0], [8.0, 5.0]]
    goals = [[8.0, 5.0], [2.0, 5.0]]
    if n == 3:
        starts.append([5.0, 2.0])
        goals.append([5.0, 8.0])
    return PlanningScenario(f"swap{n}", starts, goals, **kw)


def corridor(**kw) -> PlanningScenario:
    walls = (Rect((3.5, 0.0), (6.5, 4.1)), Rect((3.5, 5.9), (6.5, 10.0)))
    starts = [[1.5, 4.4], [1.5, 5.6], [8.5, 4.4], [8.5, 5.6]]
    goals = [[8.5, 4.4], [8.5, 5.6], [1.5, 4.4], [1.5, 5.6]]
    return PlanningScenario("corridor4", starts, goals, env=Environment2D(obstacles=walls), **kw)


def central_obstacle(n: int = 4, radius: float = 4.0, **kw) -> PlanningScenario:
    s = antipodal_circle(n, radius)
    return PlanningScenario(f"central_obstacle{n}", s.starts[:, :2], s.goals,
                            env=Environment2D(obstacles=(Circle((5.0, 5.0), 1.2),)), **kw)


def scattered(**kw) -> PlanningScenario:
    obstacles = (Circle((4.0, 4.0), 0.5), Circle((6.0, 6.2), 0.6), Circle((3.6, 6.6), 0.4),
                 Circle((6.5, 3.5), 0.45), Circle((5.0, 5.1), 0.3), Rect((7.6, 4.6), (8.4, 5.4)))
    starts = [[1.0, 1.0], [9.0, 1.0], [1.0, 9.0], [9.0, 9.0]]
    goals = [[9.0, 9.0], [1.0, 9.0], [9.0, 1.0], [1.0, 1.0]]
    return PlanningScenario("scattered4", starts, goals, env=Environment2D(obstacles=obstacles), **kw)


def crossing(**kw) -> PlanningScenario:
    starts = [[1.0, 4.0], [1.0, 5.0], [1.0, 6.0], [4.0, 1.0], [5.0, 1.0], [6.0, 1.0]]
    goals = [[9.0, 4.0], [9.0, 5.0], [9.0, 6.0], [4.0, 9.0], [5.0, 9.0], [6.0, 9.0]]
    return PlanningScenario("crossing6", starts, goals, **kw)


CANONICAL = {
    "circle8": antipodal_circle,
    "corridor4": corridor,
    "central_obstacle4": central_obstacle,
    "scattered4": scattered,
    "crossing6": crossing,
    "swap2": lambda **kw: line_swap(2, **kw),
    "swap3": lambda **kw: line_swap(3, **kw),
    "single": lambda **kw: line_swap(1, **kw),
}


def canonical(name: str, **kw) -> PlanningScenario:
    try:
        return CANONICAL[name](**kw)
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(CANONICAL)}") from None
