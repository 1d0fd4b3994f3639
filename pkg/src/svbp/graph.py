"""Pairwise Markov random fields with differentiable log-potentials.

Potentials are always handled in log space and evaluated in batches: a
unary potential maps an ``(N, d)`` block of points to ``N`` log-values, a
pairwise potential maps two blocks to an ``(Na, Nb)`` matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np


class GraphError(ValueError):
    pass


class PairwiseEval(NamedTuple):
    """Batched pairwise evaluation.

    ``grad[i, j]`` is the gradient of ``log_psi[i, j]`` with respect to the
    first argument, expressed in a feature space. When ``jacobian`` is not
    None the gradient in the argument's own coordinates is
    ``grad[i, j] @ jacobian``; deferring that product lets callers reduce over
    ``j`` first.
    """

    log_psi: np.ndarray
    grad: np.ndarray
    jacobian: np.ndarray | None = None

    def full_grad(self) -> np.ndarray:
        if self.jacobian is None:
            return self.grad
        return self.grad @ self.jacobian


class UnaryPotential:
    """Base class for ``log phi_s``. Subclasses implement :meth:`log_and_grad`."""

    dim: int

    def log_and_grad(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def log(self, x: np.ndarray) -> np.ndarray:
        return self.log_and_grad(x)[0]

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.log_and_grad(x)[1]

    def log_phi(self, x) -> float:
        return float(self.log(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def grad_log_phi(self, x) -> np.ndarray:
        return self.grad(np.atleast_2d(np.asarray(x, dtype=float)))[0]


class PairwisePotential:
    """Base class for ``log psi(a, b)`` on an edge.

    ``dims`` gives the dimensions of the first and second arguments.
    Symmetric potentials (``psi(a, b) == psi(b, a)``) only need
    :meth:`evaluate`; asymmetric ones must also implement
    :meth:`evaluate_second`, which differentiates in ``b``.
    """

    dims: tuple[int, int]
    symmetric: bool = True

    def evaluate(self, a: np.ndarray, b: np.ndarray) -> PairwiseEval:
        raise NotImplementedError

    def evaluate_second(self, a: np.ndarray, b: np.ndarray) -> PairwiseEval:
        """Gradient in the second argument; ``grad[i, j]`` is d/d b_j of log psi(a_i, b_j)."""
        if not self.symmetric:
            raise NotImplementedError("asymmetric potentials must implement evaluate_second")
        ev = self.evaluate(b, a)
        grad = np.swapaxes(ev.grad, 0, 1)
        return PairwiseEval(ev.log_psi.T, grad, ev.jacobian)

    def log_psi(self, a, b) -> float:
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        return float(self.evaluate(a, b).log_psi[0, 0])

    def grad_log_psi_first(self, a, b) -> np.ndarray:
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        return self.evaluate(a, b).full_grad()[0, 0]

    def reversed(self) -> PairwisePotential:
        return self if self.symmetric else _Swapped(self)


class _Swapped(PairwisePotential):
    def __init__(self, inner: PairwisePotential):
        self.inner = inner
        self.dims = (inner.dims[1], inner.dims[0])
        self.symmetric = False

    def evaluate(self, a, b):
        ev = self.inner.evaluate_second(b, a)
        return PairwiseEval(ev.log_psi.T, np.swapaxes(ev.grad, 0, 1), ev.jacobian)

    def evaluate_second(self, a, b):
        ev = self.inner.evaluate(b, a)
        return PairwiseEval(ev.log_psi.T, np.swapaxes(ev.grad, 0, 1), ev.jacobian)

    def reversed(self):
        return self.inner


class ConstantUnary(UnaryPotential):
    """Uniform (flat) unary potential."""

    def __init__(self, dim: int, value: float = 0.0):
        self.dim = dim
        self.value = value

    def log_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[0], self.value), np.zeros_like(x)


class GaussianUnary(UnaryPotential):
    """Isotropic or full-covariance Gaussian log-density (normalized)."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.dim = self.mean.shape[0]
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = np.eye(self.dim) * cov
        self.cov = cov
        self.precision = np.linalg.inv(cov)
        _, logdet = np.linalg.slogdet(cov)
        self._norm = -0.5 * (self.dim * np.log(2 * np.pi) + logdet)

    def log_and_grad(self, x):
        diff = np.asarray(x, dtype=float) - self.mean
        pd = diff @ self.precision
        return self._norm - 0.5 * np.einsum("ij,ij->i", pd, diff), -pd


class ConstantPairwise(PairwisePotential):
    def __init__(self, dims=(1, 1), value: float = 0.0):
        self.dims = tuple(dims)
        self.value = value
        self.symmetric = dims[0] == dims[1]

    def evaluate(self, a, b):
        return PairwiseEval(np.full((len(a), len(b)), self.value),
                            np.zeros((len(a), len(b), self.dims[0])))

    def evaluate_second(self, a, b):
        return PairwiseEval(np.full((len(a), len(b)), self.value),
                            np.zeros((len(a), len(b), self.dims[1])))


class GaussianDifferencePairwise(PairwisePotential):
    """``log N(b - a; offset, precision^-1)``: a linear-Gaussian coupling.

    Asymmetric when ``offset`` is non-zero.
    """

    def __init__(self, dim: int, precision=1.0, offset=None, normalized: bool = True):
        self.dims = (dim, dim)
        p = np.asarray(precision, dtype=float)
        self.precision = np.eye(dim) * p if p.ndim == 0 else p
        self.offset = np.zeros(dim) if offset is None else np.asarray(offset, dtype=float)
        self.symmetric = not np.any(self.offset)
        _, logdet = np.linalg.slogdet(self.precision)
        self._norm = 0.5 * (logdet - dim * np.log(2 * np.pi)) if normalized else 0.0

    def _core(self, a, b):
        r = b[None, :, :] - a[:, None, :] - self.offset
        pr = r @ self.precision
        return self._norm - 0.5 * np.einsum("ijk,ijk->ij", pr, r), pr

    def evaluate(self, a, b):
        logp, pr = self._core(np.asarray(a, float), np.asarray(b, float))
        return PairwiseEval(logp, pr)

    def evaluate_second(self, a, b):
        logp, pr = self._core(np.asarray(a, float), np.asarray(b, float))
        return PairwiseEval(logp, -pr)


def edge_key(s: int, t: int) -> tuple[int, int]:
    return (s, t) if s < t else (t, s)


@dataclass(frozen=True)
class MrfGraph:
    """Immutable pairwise MRF.

    ``pairwise[(a, b)]`` with ``a < b`` holds ``psi_ab(x_a, x_b)``. Use
    :meth:`potential_for` to get the potential oriented as ``psi(x_s, x_t)``.
    """

    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    unary: Mapping[int, UnaryPotential]
    pairwise: Mapping[tuple[int, int], PairwisePotential]
    node_dim: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        adj = {s: set() for s in range(self.num_nodes)}
        for a, b in self.edges:
            if a != b and a in adj and b in adj:
                adj[a].add(b)
                adj[b].add(a)
        object.__setattr__(self, "_adj", {s: tuple(sorted(v)) for s, v in adj.items()})

    @classmethod
    def build(cls, unary, edges=(), pairwise=None, node_dim=None, check: bool = True) -> MrfGraph:
        """Normalize inputs and (optionally) raise on any invariant violation.

        ``unary`` is a list or mapping of node potentials; ``pairwise`` maps
        edges as given in ``edges`` to potentials, or is a single potential
        shared by every edge.
        """
        if not isinstance(unary, Mapping):
            unary = dict(enumerate(unary))
        num_nodes = len(unary)
        edges = [tuple(int(v) for v in e) for e in edges]
        if pairwise is None:
            pairwise = {}
        elif isinstance(pairwise, PairwisePotential):
            pairwise = {e: pairwise for e in edges}
        norm_pairwise = {}
        for (a, b), pot in pairwise.items():
            norm_pairwise[edge_key(a, b)] = pot if a <= b else pot.reversed()
        norm_edges = tuple(sorted(edge_key(a, b) for a, b in edges))
        if node_dim is None:
            node_dim = {s: getattr(u, "dim", None) for s, u in unary.items()}
        graph = cls(num_nodes, norm_edges, dict(unary), norm_pairwise, dict(node_dim))
        if check:
            problems = validate(graph)
            if problems:
                raise GraphError("; ".join(problems))
        return graph

    def potential_for(self, s: int, t: int) -> PairwisePotential:
        """Pairwise potential on edge {s, t} oriented as ``psi(x_s, x_t)``."""
        pot = self.pairwise[edge_key(s, t)]
        return pot if s < t else pot.reversed()

    def neighbors(self, s: int) -> list[int]:
        return neighbors(self, s)


def neighbors(graph: MrfGraph, s: int) -> list[int]:
    """Sorted neighbors of ``s``."""
    if not (0 <= s < graph.num_nodes):
        raise GraphError(f"unknown node {s}")
    return list(graph._adj[s])


def validate(graph: MrfGraph) -> list[str]:
    """Return every invariant violation as a human-readable string (empty if ok)."""
    problems = []
    seen = set()
    for a, b in graph.edges:
        if a == b:
            problems.append(f"self-edge ({a},{b})")
            continue
        for v in (a, b):
            if not (0 <= v < graph.num_nodes):
                problems.append(f"edge ({a},{b}) references unknown node {v}")
        key = edge_key(a, b)
        if key in seen:
            problems.append(f"duplicate edge ({a},{b})")
        seen.add(key)
        pot = graph.pairwise.get(key)
        if pot is None:
            problems.append(f"missing pairwise for edge ({a},{b})")
            continue
        da, db = graph.node_dim.get(key[0]), graph.node_dim.get(key[1])
        if tuple(pot.dims) != (da, db):
            problems.append(f"dimension mismatch on edge ({a},{b}): potential {tuple(pot.dims)}, nodes ({da},{db})")
    for s in range(graph.num_nodes):
        u = graph.unary.get(s)
        if u is None:
            problems.append(f"missing unary for node {s}")
        elif graph.node_dim.get(s) != u.dim:
            problems.append(f"dimension mismatch at node {s}: unary {u.dim}, node {graph.node_dim.get(s)}")
    for key in graph.pairwise:
        if key not in seen:
            problems.append(f"pairwise potential on non-edge {key}")
    return problems


def sync_schedule(graph: MrfGraph) -> list[tuple[int, int]]:
    """Directed edges in a fixed order: for each edge (a, b), a->b then b->a."""
    out = []
    for a, b in graph.edges:
        out.append((a, b))
        out.append((b, a))
    return out


@dataclass
class ParticleBelief:
    particles: np.ndarray
    log_weights: np.ndarray | None = None

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        if self.particles.shape[0] < 1:
            raise ValueError("a belief needs at least one particle")
        if not np.all(np.isfinite(self.particles)):
            raise ValueError("non-finite particle entries")
        if self.log_weights is None:
            n = self.particles.shape[0]
            self.log_weights = np.full(n, -np.log(n))

    @property
    def weights(self) -> np.ndarray:
        lw = self.log_weights - np.max(self.log_weights)
        w = np.exp(lw)
        return w / w.sum()


def central_difference(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = step
        g.flat[k] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), floor))


def check_unary_gradient(pot: UnaryPotential, probes: np.ndarray, step: float = 1e-5) -> float:
    """Worst relative error of ``pot.grad`` against central differences."""
    worst = 0.0
    analytic = pot.grad(probes)
    for x, g in zip(probes, analytic):
        fd = central_difference(lambda y: pot.log(y[None, :])[0], x, step)
        worst = max(worst, relative_error(g, fd))
    return worst


def check_pairwise_gradient(pot: PairwisePotential, first: np.ndarray, second: np.ndarray,
                            step: float = 1e-5) -> float:
    """Worst relative error of the first-argument gradient over paired probes."""
    worst = 0.0
    for a, b in zip(first, second):
        g = pot.grad_log_psi_first(a, b)
        fd = central_difference(lambda y: pot.log_psi(y, b), a, step)
        worst = max(worst, relative_error(g, fd))
    return worst
