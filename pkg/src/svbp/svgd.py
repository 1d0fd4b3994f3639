"""Stein variational gradient descent primitives.

The update for particle ``x_i`` is::

    gamma(x_i) = 1/N sum_j [ k(x_j, x_i) grad log p(x_j) + grad_{x_j} k(x_j, x_i) ]

with ``k(a, b) = exp(-|L a - L b|^2 / h)``. ``L`` is an optional linear
feature map (identity by default); the trajectory kernel uses it to measure
distances between rolled-out states rather than raw controls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

BANDWIDTH_FLOOR = 1e-6


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """RBF kernel configuration.

    Args:
        bandwidth: fixed ``h``; None selects the median heuristic, recomputed
            on every call.
        metric: optional ``(f, d)`` feature map applied before distances.
    """

    bandwidth: float | None = None
    metric: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    def features(self, x: np.ndarray) -> np.ndarray:
        return x if self.metric is None else x @ self.metric.T

    def resolve(self, features: np.ndarray) -> float:
        if self.bandwidth is not None:
            return float(self.bandwidth)
        if features.shape[0] < 2:
            return 1.0
        return median_bandwidth(features)


@dataclass(frozen=True)
class StepPolicy:
    """Step-size rule. ``adaptive`` normalizes each coordinate by a running
    RMS of its past directions, so the step magnitude tends to ``eps``."""

    mode: str = "adaptive"
    eps: float = 0.1
    decay: float = 1.0
    rho: float = 0.9
    fudge: float = 1e-6

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown step mode {self.mode!r}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")


@dataclass
class AdaptiveState:
    """Running second moment for one particle block."""

    sq: np.ndarray | None = None


def rbf_kernel(a, b, h: float) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericError("non-finite kernel input")
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    return float(np.exp(-np.sum((a - b) ** 2) / h))


def rbf_kernel_grad_first(a, b, h: float) -> np.ndarray:
    """Gradient of ``rbf_kernel(a, b, h)`` with respect to ``a``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return -2.0 / h * (a - b) * rbf_kernel(a, b, h)


def median_bandwidth(particles: np.ndarray) -> float:
    """Median pairwise squared distance over ``log(N + 1)``, floored."""
    x = np.atleast_2d(np.asarray(particles, dtype=float))
    n = x.shape[0]
    if n < 2:
        raise ValueError("median bandwidth needs at least two particles")
    iu = np.triu_indices(n, k=1)
    diff = x[:, None, :] - x[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)[iu]
    h = float(np.median(sq)) / np.log(n + 1)
    return max(h, BANDWIDTH_FLOOR)


def stein_direction(particles: np.ndarray, grad_log_p: np.ndarray,
                    kernel: KernelSpec | None = None) -> np.ndarray:
    """Stein variational direction for every particle, shape ``(N, d)``."""
    kernel = kernel or KernelSpec()
    x = np.asarray(particles, dtype=float)
    g = np.asarray(grad_log_p, dtype=float)
    if x.shape != g.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {g.shape}")
    bad = ~np.all(np.isfinite(g), axis=1)
    if bad.any():
        raise NumericError(f"non-finite log-density gradient at particle {int(np.argmax(bad))}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite particles")
    z = kernel.features(x)
    h = kernel.resolve(z)
    drive, repulse = kernels.rbf_stein(z, g, h)
    if kernel.metric is not None:
        repulse = repulse @ kernel.metric
    return drive + repulse


def apply_step(particles: np.ndarray, direction: np.ndarray, policy: StepPolicy,
               iteration: int = 0, state: AdaptiveState | None = None) -> np.ndarray:
    """Move particles along ``direction``.

    The adaptive mode needs a persistent :class:`AdaptiveState`, which is
    updated in place.
    """
    x = np.asarray(particles, dtype=float)
    d = np.asarray(direction, dtype=float)
    if x.shape != d.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {d.shape}")
    eps = policy.eps * policy.decay ** iteration
    if policy.mode == "fixed":
        return x + eps * d
    if state is None:
        raise ValueError("adaptive steps need an AdaptiveState")
    if state.sq is None or state.sq.shape != d.shape:
        state.sq = d * d
    else:
        state.sq = policy.rho * state.sq + (1.0 - policy.rho) * d * d
    return x + eps * d / (policy.fudge + np.sqrt(state.sq))


def mean_pairwise_distance(particles: np.ndarray) -> float:
    x = np.atleast_2d(particles)
    n = x.shape[0]
    if n < 2:
        return 0.0
    diff = x[:, None, :] - x[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return float(d[np.triu_indices(n, 1)].mean())
