"""Reference quantities for evaluating particle beliefs.

``gibbs_marginals`` samples node marginals of the full joint with single-site
Gibbs, drawing each conditional by inverse CDF on a grid over a bounded
region. ``mc_message`` integrates a message by uniform Monte Carlo over the
region. ``mmd`` and ``node_error`` score particle sets against these
references.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy.spatial.distance import pdist

from . import kernels
from .graph import MrfGraph, neighbors


class ConfigError(ValueError):
    pass


class GibbsError(RuntimeError):
    pass


@dataclass(frozen=True)
class Region:
    """Axis-aligned box ``[low, high]``."""

    low: tuple
    high: tuple

    def __post_init__(self):
        lo = np.asarray(self.low, dtype=float)
        hi = np.asarray(self.high, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigError("region bounds must be matching vectors")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigError("region must be bounded")
        if np.any(hi <= lo):
            raise ConfigError("region high must exceed low in every dimension")

    @property
    def dim(self) -> int:
        return len(self.low)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.high, self.low)))

    def uniform(self, rng, n):
        return rng.uniform(self.low, self.high, size=(n, self.dim))


@dataclass
class GibbsConfig:
    num_samples: int = 5000
    burn_in: int = 1000
    thinning: int = 5
    grid_size: int = 200
    chains: int = 1
    mc_message_samples: int = 1000

    def __post_init__(self):
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")
        if self.thinning < 1 or self.grid_size < 2 or self.chains < 1:
            raise ConfigError("thinning, grid_size and chains must be positive")


class GridGibbs:
    """Single-site Gibbs sampler with grid inverse-CDF conditionals.

    Cells are the centres of a ``grid_size``-per-axis lattice; a draw picks a
    cell from the normalized conditional and then a uniform point inside it,
    which samples the piecewise-constant approximation of the conditional.
    Distance-coupled 2-D nodes take the compiled fast path.
    """

    def __init__(self, graph: MrfGraph, region: Region | None, grid_size: int = 200):
        if region is None:
            raise ConfigError("Gibbs sampling needs a bounded region")
        if region.dim not in (1, 2):
            raise ConfigError("grid conditionals support 1-D or 2-D nodes only")
        for s in range(graph.num_nodes):
            if graph.node_dim.get(s, region.dim) != region.dim:
                raise ConfigError(f"node {s} has dim {graph.node_dim[s]}, region has dim {region.dim}")
        self.graph = graph
        self.region = region
        axes = [np.linspace(lo, hi, grid_size + 1) for lo, hi in zip(region.low, region.high)]
        centres = [0.5 * (a[1:] + a[:-1]) for a in axes]
        self.cell = np.array([a[1] - a[0] for a in axes])
        mesh = np.meshgrid(*centres, indexing="ij")
        self.grid = np.ascontiguousarray(np.stack([m.ravel() for m in mesh], axis=1))
        self.base = {s: np.ascontiguousarray(graph.unary[s].log(self.grid)) for s in range(graph.num_nodes)}
        self._work = np.empty(len(self.grid))
        self._fast = {}
        for s in range(graph.num_nodes):
            params = [getattr(graph.potential_for(s, t), "distance_coupling", None)
                      for t in neighbors(graph, s)]
            if region.dim == 2 and all(p is not None for p in params):
                self._fast[s] = (np.array([p[0] for p in params], dtype=float),
                                 np.array([p[1] for p in params], dtype=float))

    def conditional_logits(self, s: int, values: np.ndarray) -> np.ndarray:
        out = self.base[s].copy()
        for t in neighbors(self.graph, s):
            out += self.graph.potential_for(s, t).evaluate(self.grid, values[t][None, :]).log_psi[:, 0]
        return out

    def draw(self, s: int, values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = rng.uniform()
        if s in self._fast:
            nbr = values[neighbors(self.graph, s)]
            L, alpha = self._fast[s]
            idx = kernels.grid_conditional_draw(self.base[s], self.grid, nbr, L, alpha, u, self._work)
        else:
            logits = self.conditional_logits(s, values)
            mx = logits.max()
            if not np.isfinite(mx):
                idx = -1
            else:
                cdf = np.cumsum(np.exp(logits - mx))
                idx = min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), len(cdf) - 1)
        if idx < 0:
            raise GibbsError(f"node {s}: conditional has no support on the grid")
        return self.grid[idx] + (rng.uniform(size=self.region.dim) - 0.5) * self.cell

    def sweep(self, values: np.ndarray, rng: np.random.Generator) -> None:
        for s in range(self.graph.num_nodes):
            values[s] = self.draw(s, values, rng)

    def chain(self, num_samples, burn_in, thinning, rng, init=None) -> np.ndarray:
        """Samples of shape (num_samples, num_nodes, dim)."""
        n = self.graph.num_nodes
        values = self.region.uniform(rng, n) if init is None else np.array(init, dtype=float)
        for _ in range(burn_in):
            self.sweep(values, rng)
        out = np.empty((num_samples, n, self.region.dim))
        for k in range(num_samples):
            for _ in range(thinning):
                self.sweep(values, rng)
            out[k] = values
        return out


def gibbs_marginals(graph: MrfGraph, region: Region, config: GibbsConfig,
                    rng: np.random.Generator, init=None) -> dict[int, np.ndarray]:
    """Per-node marginal samples of the joint, pooled over ``config.chains`` chains."""
    sampler = GridGibbs(graph, region, config.grid_size)
    per_chain = -(-config.num_samples // config.chains)
    pooled = [sampler.chain(per_chain, config.burn_in, config.thinning, rng, init)
              for _ in range(config.chains)]
    samples = np.concatenate(pooled, axis=0)[:config.num_samples]
    return {s: np.ascontiguousarray(samples[:, s, :]) for s in range(graph.num_nodes)}


def save_samples(path, samples: Mapping[int, np.ndarray]) -> None:
    np.savez_compressed(path, **{f"node_{s}": v for s, v in samples.items()})


def load_samples(path) -> dict[int, np.ndarray]:
    with np.load(path) as data:
        return {int(k.split("_", 1)[1]): data[k] for k in data.files}


class MonteCarloMessage:
    """``m_{t->s}`` integrated by uniform Monte Carlo over a bounded region."""

    def __init__(self, graph: MrfGraph, t: int, s: int, region: Region, n: int,
                 rng: np.random.Generator,
                 incoming: Mapping[int, Callable[[np.ndarray], np.ndarray]] | None = None):
        self.pot = graph.potential_for(s, t)
        self.samples = region.uniform(rng, n)
        log_w = graph.unary[t].log(self.samples) + np.log(region.volume / n)
        for u, msg in (incoming or {}).items():
            if u == s:
                continue
            log_w = log_w + np.log(msg(self.samples))
        self.log_w = log_w

    def log(self, x_s: np.ndarray) -> np.ndarray:
        x_s = np.atleast_2d(np.asarray(x_s, dtype=float))
        logits = self.pot.evaluate(x_s, self.samples).log_psi + self.log_w[None, :]
        mx = logits.max(axis=1, keepdims=True)
        safe = np.where(np.isfinite(mx), mx, 0.0)
        return (safe + np.log(np.exp(logits - safe).sum(axis=1, keepdims=True)))[:, 0]

    def __call__(self, x_s: np.ndarray) -> np.ndarray:
        return np.exp(self.log(x_s))


def mc_message(graph: MrfGraph, t: int, s: int, region: Region, n: int = 1000,
               rng: np.random.Generator | None = None, incoming=None) -> MonteCarloMessage:
    rng = np.random.default_rng() if rng is None else rng
    return MonteCarloMessage(graph, t, s, region, n, rng, incoming)


@dataclass(frozen=True)
class MmdReport:
    mmd_squared: float
    bandwidth: float
    excluded_particle_count: int


def ground_truth_bandwidth(samples: np.ndarray) -> float:
    """Median pairwise squared distance of a reference set (floored)."""
    samples = np.atleast_2d(samples)
    if len(samples) < 2:
        return 1.0
    return max(float(np.median(pdist(samples, "sqeuclidean"))), 1e-12)


class MmdReference:
    """A ground-truth set with its bandwidth and self-similarity term cached."""

    def __init__(self, samples: np.ndarray, bandwidth: float | None = None):
        self.samples = np.ascontiguousarray(np.atleast_2d(np.asarray(samples, dtype=float)))
        if len(self.samples) == 0:
            raise ValueError("reference set is empty")
        self.bandwidth = ground_truth_bandwidth(self.samples) if bandwidth is None else float(bandwidth)
        n = len(self.samples)
        self.self_term = kernels.rbf_sum(self.samples, self.samples, self.bandwidth) / (n * n)

    def compare(self, particles, weights=None, threshold: float = 0.01) -> MmdReport:
        """Biased MMD^2 against ``particles``, dropping those below ``threshold`` of the max weight."""
        b = np.atleast_2d(np.asarray(particles, dtype=float))
        if b.shape[1] != self.samples.shape[1]:
            raise ValueError(f"dimension mismatch: {b.shape[1]} vs {self.samples.shape[1]}")
        excluded = 0
        if weights is not None:
            w = np.asarray(weights, dtype=float)
            keep = w >= threshold * w.max()
            excluded = int((~keep).sum())
            b = b[keep]
        b = np.ascontiguousarray(b)
        if len(b) == 0:
            raise ValueError("no particles to compare")
        n, m, h = len(self.samples), len(b), self.bandwidth
        value = (self.self_term + kernels.rbf_sum(b, b, h) / (m * m)
                 - 2.0 * kernels.rbf_sum(self.samples, b, h) / (n * m))
        return MmdReport(max(float(value), 0.0), h, excluded)


def mmd(samples_a, samples_b, weights_b=None, bandwidth: float | None = None,
        threshold: float = 0.01) -> MmdReport:
    """Biased MMD^2 between a reference set ``samples_a`` and ``samples_b``.

    The RBF bandwidth defaults to the median pairwise squared distance within
    ``samples_a``. When ``weights_b`` is given, entries of ``samples_b`` whose
    weight is below ``threshold`` times the largest weight are dropped and the
    rest count equally.
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=float))
    b = np.atleast_2d(np.asarray(samples_b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return MmdReference(a, bandwidth).compare(b, weights_b, threshold)


def node_error(estimates, ground_truth) -> float:
    """Mean Euclidean distance between per-node estimates and true positions."""
    if isinstance(estimates, Mapping):
        keys = sorted(estimates)
        if set(keys) != set(ground_truth if isinstance(ground_truth, Mapping) else range(len(ground_truth))):
            raise ValueError("estimates and ground truth cover different nodes")
        est = np.array([estimates[k] for k in keys], dtype=float)
        tru = np.array([ground_truth[k] for k in keys], dtype=float)
    else:
        est = np.asarray(estimates, dtype=float)
        tru = np.asarray(ground_truth, dtype=float)
        if est.shape != tru.shape:
            raise ValueError("estimates and ground truth have different shapes")
    return float(np.linalg.norm(est - tru, axis=-1).mean())
