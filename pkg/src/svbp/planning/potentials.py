"""Trajectory potentials over control sequences.

The unary scores one robot's plan by its running and terminal cost, the
pairwise penalizes two plans that come within the collision radius at the
same timestep. Both differentiate through the (linear) rollout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..graph import PairwiseEval, PairwisePotential, UnaryPotential
from .dynamics import DynamicsModel
from .environment import Environment2D


@dataclass(frozen=True)
class CostWeights:
    control: float = 0.1
    goal: float = 0.5
    terminal: float = 10.0
    terminal_velocity: float = 1.0
    obstacle: float = 100.0
    obstacle_margin: float = 0.3
    limit_penalty: float = 10.0
    discount: float = 1.0


@dataclass(frozen=True)
class CollisionParams:
    radius: float = 0.5
    beta: float = 0.3
    alpha0: float = 500.0
    min_distance: float = 1e-3

    def alphas(self, horizon: int) -> np.ndarray:
        """Linearly decreasing weights for future states 1..T: ``alpha0 (1 - k/T)``, k = 0..T-1."""
        return self.alpha0 * (1.0 - np.arange(horizon) / horizon)


class TrajectoryCost(UnaryPotential):
    """``log phi = -(terminal cost + sum_k gamma_k * running cost_k)`` over control sequences.

    The running cost at step k charges the control u_k, goal distance and
    obstacle clearance of the resulting state p_{k+1}, and any excess of
    |u_k| over the control limit (per coordinate).
    """

    def __init__(self, model: DynamicsModel, theta0, goal, env: Environment2D,
                 weights: CostWeights = CostWeights()):
        self.model = model
        self.theta0 = np.asarray(theta0, dtype=float)
        self.goal = np.asarray(goal, dtype=float)
        self.env = env
        self.w = weights
        self.dim = model.control_dim
        self.gamma = weights.discount ** np.arange(model.horizon)

    def costs(self, controls):
        """Total cost and its gradient for a batch (n, 2T)."""
        m, w = self.model, self.w
        u = np.atleast_2d(np.asarray(controls, dtype=float))
        n, T = len(u), m.horizon
        uu = u.reshape(n, T, 2)
        pos = m.positions(self.theta0, u)
        gam = self.gamma[None, :, None]

        off = pos - self.goal
        cost = (self.gamma * (w.control * (uu ** 2).sum(-1) + w.goal * (off ** 2).sum(-1))).sum(1)
        g_pos = 2 * w.goal * gam * off
        g_u = 2 * w.control * gam * uu

        excess = np.abs(uu) - m.control_limit
        over = np.maximum(excess, 0.0)
        cost += w.limit_penalty * (self.gamma[None, :, None] * over ** 2).sum((1, 2))
        g_u += 2 * w.limit_penalty * gam * over * np.sign(uu)

        if self.env.obstacles:
            sd, sd_grad = self.env.sdf(pos)
            hinge = np.maximum(w.obstacle_margin - sd, 0.0)
            cost += w.obstacle * (self.gamma * hinge ** 2).sum(1)
            g_pos += -2 * w.obstacle * gam * hinge[..., None] * sd_grad

        term = pos[:, -1] - self.goal
        cost += w.terminal * (term ** 2).sum(-1)
        g_pos[:, -1] += 2 * w.terminal * term
        if m.kind == "double_integrator":
            vT = m.terminal_velocity(self.theta0, u)
            cost += w.terminal_velocity * (vT ** 2).sum(-1)
            g_u += (2 * w.terminal_velocity * m.dt * vT)[:, None, :]

        grad = g_pos.reshape(n, 2 * T) @ m.position_jacobian + g_u.reshape(n, 2 * T)
        return cost, grad

    def log_and_grad(self, x):
        c, g = self.costs(x)
        return -c, -g


class CollisionPotential(PairwisePotential):
    """Truncated power-law collision factor between robots ``a`` (first arg) and ``b``."""

    symmetric = False

    def __init__(self, model: DynamicsModel, theta_a, theta_b, params: CollisionParams = CollisionParams()):
        self.model = model
        self.theta_a = np.asarray(theta_a, dtype=float)
        self.theta_b = np.asarray(theta_b, dtype=float)
        self.params = params
        self.dims = (model.control_dim, model.control_dim)
        self.alphas = params.alphas(model.horizon)

    def _eval(self, first, second, theta_first, theta_second):
        m, p = self.model, self.params
        pa = m.positions(theta_first, first)
        pb = m.positions(theta_second, second)
        logp, g = kernels.collision_pairwise(pa, pb, self.alphas, p.radius, p.beta, p.min_distance)
        n, k = g.shape[0], g.shape[1]
        return PairwiseEval(logp, g.reshape(n, k, -1), m.position_jacobian)

    def evaluate(self, a, b):
        return self._eval(a, b, self.theta_a, self.theta_b)

    def evaluate_second(self, a, b):
        ev = self._eval(b, a, self.theta_b, self.theta_a)
        return PairwiseEval(ev.log_psi.T, np.swapaxes(ev.grad, 0, 1), ev.jacobian)


def collision_log_potential(model: DynamicsModel, theta_t, controls_t, theta_s, controls_s,
                            params: CollisionParams = CollisionParams()):
    """``log psi`` for one pair of plans and its gradient in ``controls_s``."""
    pot = CollisionPotential(model, theta_s, theta_t, params)
    ev = pot.evaluate(np.atleast_2d(controls_s), np.atleast_2d(controls_t))
    return float(ev.log_psi[0, 0]), ev.full_grad()[0, 0]


def unary_log_potential(model, theta0, goal, env, controls, weights: CostWeights = CostWeights()):
    lp, g = TrajectoryCost(model, theta0, goal, env, weights).log_and_grad(np.atleast_2d(controls))
    return float(lp[0]), g[0]
