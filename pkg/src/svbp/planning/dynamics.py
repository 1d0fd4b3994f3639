"""Linear point-robot dynamics with closed-form rollout Jacobians."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class DynamicsModel:
    """``double_integrator``: state (px, py, vx, vy), control = acceleration.
    ``single_integrator``: state (px, py), control = velocity.

    Controls are flattened time-major, ``[u0x, u0y, u1x, u1y, ...]``.
    """

    kind: str = "double_integrator"
    dt: float = 0.1
    horizon: int = 20
    control_limit: float = 3.0

    def __post_init__(self):
        if self.kind not in ("double_integrator", "single_integrator"):
            raise ValueError(f"unknown dynamics kind {self.kind!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.control_limit > 0:
            raise ValueError("control_limit must be positive")

    @classmethod
    def single_integrator(cls, dt=0.25, horizon=10, control_limit=1.0):
        return cls("single_integrator", dt, horizon, control_limit)

    @property
    def state_dim(self) -> int:
        return 4 if self.kind == "double_integrator" else 2

    @property
    def control_dim(self) -> int:
        return 2 * self.horizon

    @cached_property
    def _steps(self) -> np.ndarray:
        # per-axis (T, T) map from controls to positions p_1..p_T
        T, dt = self.horizon, self.dt
        k = np.arange(1, T + 1)[:, None]
        j = np.arange(T)[None, :]
        if self.kind == "double_integrator":
            return np.where(j < k, dt * dt * (k - 1 - j), 0.0)
        return np.where(j < k, dt, 0.0)

    @cached_property
    def position_jacobian(self) -> np.ndarray:
        """``d vec(p_1..p_T) / d controls``, shape (2T, 2T). Constant because the dynamics are linear."""
        J = np.kron(self._steps, np.eye(2))
        J.setflags(write=False)
        return J

    def free_positions(self, theta0) -> np.ndarray:
        """Positions p_1..p_T under zero control, shape (T, 2)."""
        theta0 = np.asarray(theta0, dtype=float)
        k = np.arange(1, self.horizon + 1)[:, None]
        if self.kind == "double_integrator":
            return theta0[None, :2] + k * self.dt * theta0[None, 2:4]
        return np.repeat(theta0[None, :2], self.horizon, axis=0)

    def positions(self, theta0, controls) -> np.ndarray:
        """Positions p_1..p_T for a batch (n, 2T) of control sequences, shape (n, T, 2)."""
        u = np.atleast_2d(np.asarray(controls, dtype=float))
        flat = u @ self.position_jacobian.T
        return flat.reshape(len(u), self.horizon, 2) + self.free_positions(theta0)[None]

    def terminal_velocity(self, theta0, controls) -> np.ndarray:
        if self.kind != "double_integrator":
            raise ValueError("single integrator has no velocity state")
        u = np.atleast_2d(np.asarray(controls, dtype=float)).reshape(-1, self.horizon, 2)
        return np.asarray(theta0, dtype=float)[None, 2:4] + self.dt * u.sum(axis=1)

    def clamp(self, controls) -> tuple[np.ndarray, bool]:
        u = np.asarray(controls, dtype=float)
        c = np.clip(u, -self.control_limit, self.control_limit)
        return c, bool(np.any(c != u))

    def step(self, state, control) -> np.ndarray:
        """Advance one Euler step with a single (clamped) 2-D control."""
        x = np.asarray(state, dtype=float)
        u, _ = self.clamp(control)
        if self.kind == "double_integrator":
            return np.concatenate([x[:2] + x[2:4] * self.dt, x[2:4] + u * self.dt])
        return x[:2] + u * self.dt

    def rollout(self, theta0, controls):
        """Full state sequence including ``theta0``, shape (T+1, state_dim), and a clamp flag."""
        u, clamped = self.clamp(np.asarray(controls, dtype=float).reshape(self.horizon, 2))
        out = [np.asarray(theta0, dtype=float)]
        for k in range(self.horizon):
            out.append(self.step(out[-1], u[k]))
        return np.array(out), clamped


def shift_controls(controls: np.ndarray) -> np.ndarray:
    """Drop the first control of each sequence and repeat the last one."""
    u = np.asarray(controls, dtype=float)
    n = u.shape[0]
    seq = u.reshape(n, -1, 2)
    return np.concatenate([seq[:, 1:], seq[:, -1:]], axis=1).reshape(n, -1)
