"""Gaussian belief propagation over linearized least-squares factors.

Factors have energy ``0.5 (h(x) - b)^T Sigma^-1 (h(x) - b)`` over one or two
variables. Each is linearized to a canonical (information-form) Gaussian
and messages are exchanged synchronously between pairwise factors and
variables. The planning adapter at the bottom builds the factor set for
one MPC solve and exposes the same planner interface as the SVBP planner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .planning.dynamics import shift_controls
from .planning.scenario import PlanningScenario


class FactorError(ValueError):
    pass


class ConditioningError(np.linalg.LinAlgError):
    pass


@dataclass
class CanonicalGaussian:
    eta: np.ndarray
    lam: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> CanonicalGaussian:
        return cls(np.zeros(dim), np.zeros((dim, dim)))

    def __add__(self, other: CanonicalGaussian) -> CanonicalGaussian:
        return CanonicalGaussian(self.eta + other.eta, self.lam + other.lam)

    def __sub__(self, other: CanonicalGaussian) -> CanonicalGaussian:
        return CanonicalGaussian(self.eta - other.eta, self.lam - other.lam)

    def mean_cov(self):
        cov = np.linalg.inv(self.lam)
        return cov @ self.eta, cov


@dataclass
class GaussianFactor:
    """Least-squares factor over ``variables``.

    ``residual(x)`` takes the stacked variables and returns ``(h, J)``.
    ``sigma`` is a scalar, a vector (diagonal) or a full covariance.
    """

    variables: tuple
    residual: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    b: np.ndarray | float = 0.0
    sigma: np.ndarray | float = 1.0
    linear: bool = False
    _cached: CanonicalGaussian | None = field(default=None, repr=False)

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.ndim <= 1:
            if np.any(s <= 0):
                raise FactorError("factor covariance must be positive definite")
            self._prec = 1.0 / s
        else:
            try:
                np.linalg.cholesky(s)
            except np.linalg.LinAlgError:
                raise FactorError("factor covariance must be positive definite") from None
            if not np.allclose(s, s.T):
                raise FactorError("factor covariance must be symmetric")
            self._prec = np.linalg.inv(s)

    def _weighted(self, M):
        p = self._prec
        if np.ndim(p) == 2:
            return p @ M
        return (p * np.ones(M.shape[0]))[:, None] * M if M.ndim == 2 else p * M

    def linearize(self, x_lin: np.ndarray) -> CanonicalGaussian:
        """``Lambda = J^T S^-1 J``, ``eta = J^T S^-1 (J x0 - h(x0) + b)``."""
        if self.linear and self._cached is not None:
            return self._cached
        h, J = self.residual(x_lin)
        h = np.atleast_1d(np.asarray(h, dtype=float))
        J = np.atleast_2d(np.asarray(J, dtype=float))
        if not np.all(np.isfinite(J)):
            raise FactorError("non-finite Jacobian at the linearization point")
        r = J @ x_lin - h + np.broadcast_to(np.asarray(self.b, dtype=float), h.shape)
        WJ = self._weighted(J)
        out = CanonicalGaussian(WJ.T @ r, J.T @ WJ)
        if self.linear:
            self._cached = out
        return out


def linearize(factor: GaussianFactor, x_lin) -> CanonicalGaussian:
    return factor.linearize(np.atleast_1d(np.asarray(x_lin, dtype=float)))


def linear_factor(variables, A, b, sigma) -> GaussianFactor:
    """``h(x) = A x`` for stacked variables."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return GaussianFactor(tuple(variables), lambda x: (A @ x, A), np.asarray(b, dtype=float), sigma, linear=True)


@dataclass
class GabpResult:
    means: dict[int, np.ndarray]
    covs: dict[int, np.ndarray]
    iterations: int


class GabpSolver:
    """Synchronous loopy GaBP on variables with unary and pairwise factors."""

    def __init__(self, dims: dict[int, int], factors: Sequence[GaussianFactor], damping: float = 0.0):
        if not 0 <= damping < 1:
            raise ValueError("damping must lie in [0, 1)")
        for f in factors:
            if len(f.variables) not in (1, 2):
                raise FactorError("only unary and pairwise factors are supported")
        self.dims = dict(dims)
        self.factors = list(factors)
        self.damping = damping
        self.msgs = {}  # (factor index, variable) -> CanonicalGaussian
        for i, f in enumerate(self.factors):
            if len(f.variables) == 2:
                for v in f.variables:
                    self.msgs[(i, v)] = CanonicalGaussian.zeros(self.dims[v])
        self.lin = [None] * len(self.factors)

    def relinearize(self, means: dict[int, np.ndarray]) -> None:
        for i, f in enumerate(self.factors):
            x0 = np.concatenate([means[v] for v in f.variables])
            self.lin[i] = f.linearize(x0)

    def _unary_total(self):
        total = {v: CanonicalGaussian.zeros(d) for v, d in self.dims.items()}
        for i, f in enumerate(self.factors):
            if len(f.variables) == 1:
                total[f.variables[0]] = total[f.variables[0]] + self.lin[i]
        return total

    def beliefs(self) -> dict[int, CanonicalGaussian]:
        b = self._unary_total()
        for (i, v), m in self.msgs.items():
            b[v] = b[v] + m
        return b

    def iterate(self) -> None:
        belief = self.beliefs()
        fresh = {}
        for i, f in enumerate(self.factors):
            if len(f.variables) != 2:
                continue
            a, c = f.variables
            da = self.dims[a]
            lin = self.lin[i]
            for target, other in ((a, c), (c, a)):
                # variable-to-factor message from the other end excludes this factor's own message
                incoming = belief[other] - self.msgs[(i, other)]
                sl_t = slice(0, da) if target == a else slice(da, None)
                sl_o = slice(da, None) if target == a else slice(0, da)
                L_tt, L_to = lin.lam[sl_t, sl_t], lin.lam[sl_t, sl_o]
                L_oo = lin.lam[sl_o, sl_o] + incoming.lam
                e_t, e_o = lin.eta[sl_t], lin.eta[sl_o] + incoming.eta
                sol = np.linalg.solve(L_oo, np.column_stack([L_to.T, e_o]))
                msg = CanonicalGaussian(e_t - L_to @ sol[:, -1], L_tt - L_to @ sol[:, :-1])
                msg.lam = 0.5 * (msg.lam + msg.lam.T)
                if self.damping:
                    old = self.msgs[(i, target)]
                    msg = CanonicalGaussian((1 - self.damping) * msg.eta + self.damping * old.eta,
                                            (1 - self.damping) * msg.lam + self.damping * old.lam)
                fresh[(i, target)] = msg
        self.msgs.update(fresh)

    def read(self) -> GabpResult:
        means, covs = {}, {}
        for v, b in self.beliefs().items():
            try:
                np.linalg.cholesky(b.lam)
            except np.linalg.LinAlgError:
                raise ConditioningError(f"node {v}: belief precision is not positive definite") from None
            means[v], covs[v] = b.mean_cov()
        return GabpResult(means, covs, 0)


def gabp_solve(dims: dict[int, int], factors: Sequence[GaussianFactor], iterations: int,
               relinearize_every: int = 1, damping: float = 0.0,
               init_means: dict[int, np.ndarray] | None = None) -> GabpResult:
    """Run ``iterations`` synchronous rounds; relinearize at the current means every few rounds."""
    solver = GabpSolver(dims, factors, damping)
    means = init_means or {v: np.zeros(d) for v, d in dims.items()}
    solver.relinearize(means)
    for k in range(iterations):
        if k and relinearize_every and k % relinearize_every == 0:
            means = solver.read().means
            solver.relinearize(means)
        solver.iterate()
    out = solver.read()
    out.iterations = iterations
    return out


# planning adapter

def planning_factors(scenario: PlanningScenario, states: np.ndarray) -> list[GaussianFactor]:
    """Factors whose energies mirror the SVBP trajectory costs.

    Goal, control, terminal and velocity terms form one linear factor per
    robot. Obstacle clearance and inter-robot collision use their scalar
    cost value as the residual, so each contributes rank-1 information.
    """
    from . import kernels

    m, w, cp = scenario.model, scenario.weights, scenario.collision
    T, J = m.horizon, np.asarray(m.position_jacobian)
    gam = w.discount ** np.arange(T)
    n = 2 * T
    factors = []
    for r, theta in enumerate(states):
        base = m.free_positions(theta).ravel()
        rows = [J, np.eye(n), J[-2:]]
        offs = [base, np.zeros(n), base[-2:]]
        targets = [np.tile(scenario.goals[r], T), np.zeros(n), scenario.goals[r]]
        weights = [np.repeat(w.goal * gam, 2), np.repeat(w.control * gam, 2), np.full(2, w.terminal)]
        if m.kind == "double_integrator":
            rows.append(np.kron(np.ones((1, T)), np.eye(2)) * m.dt)
            offs.append(theta[2:4])
            targets.append(np.zeros(2))
            weights.append(np.full(2, w.terminal_velocity))
        A, off = np.vstack(rows), np.concatenate(offs)
        # w (h - b)^2 == 0.5 (h - b)^2 / sigma for sigma = 1 / (2 w)
        factors.append(GaussianFactor((r,), lambda x, A=A, off=off: (A @ x + off, A),
                                      np.concatenate(targets), 1.0 / (2.0 * np.concatenate(weights)),
                                      linear=True))
        if scenario.env.obstacles:
            def obstacle(x, theta=theta):
                pos = m.positions(theta, x[None])[0]
                sd, g = scenario.env.sdf(pos)
                hinge = np.maximum(w.obstacle_margin - sd, 0.0)
                dpos = (-2 * gam[:, None] * hinge[:, None] * g).ravel()
                return np.array([(gam * hinge ** 2).sum()]), (dpos @ J)[None, :]
            factors.append(GaussianFactor((r,), obstacle, 0.0, 1.0 / w.obstacle))

        def limit(x):
            over = np.maximum(np.abs(x) - m.control_limit, 0.0)
            return over, np.diag(np.sign(x) * (over > 0))
        factors.append(GaussianFactor((r,), limit, 0.0, 1.0 / (2 * w.limit_penalty * np.repeat(gam, 2))))

    alphas = cp.alphas(T)
    for a in range(len(states)):
        for b in range(a + 1, len(states)):
            def collision(x, ta=states[a], tb=states[b]):
                pa = m.positions(ta, x[None, :n])
                pb = m.positions(tb, x[None, n:])
                logp, g = kernels.collision_pairwise(pa, pb, alphas, cp.radius, cp.beta, cp.min_distance)
                ga = g[0, 0].ravel() @ J
                # the potential depends on pa - pb only
                return np.array([-logp[0, 0]]), np.concatenate([-ga, ga])[None, :]
            factors.append(GaussianFactor((a, b), collision, 0.0, 1.0))
    return factors


class GabpPlanner:
    """One Gaussian trajectory per robot, warm-started from the shifted previous mean."""

    method = "gabp"

    def __init__(self, scenario: PlanningScenario, rng: np.random.Generator | None = None, workers: int = 1):
        self.scenario = scenario
        dim = scenario.model.control_dim
        rng = rng if rng is not None else np.random.default_rng(0)
        # a random first linearization point breaks exact head-on symmetry
        scale = scenario.model.control_limit / 2
        self.means = {r: rng.normal(scale=scale, size=dim) for r in range(scenario.num_robots)}
        self.first = True
        self.steps_done = 0

    def plan(self, states: np.ndarray):
        from .planning.mpc import plan_costs

        sc, p = self.scenario, self.scenario.planner
        iters = p.gabp_iterations * (2 if self.first else 1)
        self.first = False
        events = []
        dims = {r: sc.model.control_dim for r in range(sc.num_robots)}
        try:
            res = gabp_solve(dims, planning_factors(sc, states), iters, relinearize_every=1,
                             damping=p.gabp_damping, init_means=self.means)
            self.means = res.means
        except (ConditioningError, np.linalg.LinAlgError, FactorError) as exc:
            events.append(f"numeric failure: {exc}")
        best = np.array([self.means[r] for r in range(sc.num_robots)])
        return best, plan_costs(sc, states, best), events

    def advance(self):
        self.means = {r: shift_controls(m[None])[0] for r, m in self.means.items()}
        self.steps_done += 1
