"""Multi-robot localization benchmark.

Eight robots in a square region each observe their own position as a
Gaussian mixture that contains one component at the truth plus randomly
assigned clutter components. Robots within the connection radius measure
their mutual distance. SVBP and PBP estimate every robot's position from
these potentials and are scored by node error and by MMD against Gibbs
ground-truth marginals.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import kernels
from ._rng import derive_seed, substream
from .graph import MrfGraph, PairwiseEval, PairwisePotential, UnaryPotential
from .inference import SvbpConfig, map_estimate, particle_weights, run, snapshot_records
from .oracle import GibbsConfig, MmdReference, Region, gibbs_marginals, node_error
from .pbp import PbpConfig, run_pbp
from .svgd import StepPolicy

DEFAULT_REGION = Region((0.0, 0.0), (10.0, 10.0))


class GenerationError(RuntimeError):
    pass


@dataclass
class GmmObservation:
    means: np.ndarray
    sigma: float

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        if len(self.means) == 0:
            raise ValueError("a mixture needs at least one component")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self.means), 1.0 / len(self.means))


def gmm_log_density_and_grad(obs: GmmObservation, x):
    """Log density of an equal-weight isotropic mixture and its gradient.

    Accepts one point (returns a scalar and a vector) or an (n, 2) batch.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    d = pts.shape[1]
    var = obs.sigma ** 2
    diff = pts[:, None, :] - obs.means[None, :, :]
    comp = -0.5 * np.einsum("nkd,nkd->nk", diff, diff) / var
    norm = -0.5 * d * np.log(2 * np.pi * var) - np.log(len(obs.means))
    log_p = logsumexp(comp, axis=1)
    resp = np.exp(comp - log_p[:, None])
    grad = -np.einsum("nk,nkd->nd", resp, diff) / var
    log_p = log_p + norm
    if single:
        return float(log_p[0]), grad[0]
    return log_p, grad


class GmmUnary(UnaryPotential):
    def __init__(self, obs: GmmObservation):
        self.obs = obs
        self.dim = obs.means.shape[1]

    def log_and_grad(self, x):
        return gmm_log_density_and_grad(self.obs, x)


def distance_pairwise(x_s, x_t, L_st: float, alpha: float):
    """``log psi = -alpha (|x_s - x_t| - L)^2`` and its gradient in ``x_s`` (zero at x_s = x_t)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    xs = np.atleast_2d(np.asarray(x_s, dtype=float))
    xt = np.atleast_2d(np.asarray(x_t, dtype=float))
    logp, grad = kernels.distance_pairwise(xs, xt, L_st, alpha)
    return float(logp[0, 0]), grad[0, 0]


class DistancePairwise(PairwisePotential):
    """Observed-distance coupling between two 2-D positions."""

    symmetric = True

    def __init__(self, distance: float, alpha: float):
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        self.distance = float(distance)
        self.alpha = float(alpha)
        self.dims = (2, 2)

    @property
    def distance_coupling(self):
        return self.distance, self.alpha

    def evaluate(self, a, b):
        logp, grad = kernels.distance_pairwise(a, b, self.distance, self.alpha)
        return PairwiseEval(logp, grad)


@dataclass
class PerceptionScenario:
    true_positions: np.ndarray
    observations: list[GmmObservation]
    distances: dict[tuple[int, int], float]
    region: Region = DEFAULT_REGION
    connect_radius: float = 2.0
    alpha: float = 25.0
    sigma: float = 0.25
    num_noise_components: int = 0
    seed: int = 0

    @property
    def num_nodes(self) -> int:
        return len(self.true_positions)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted(self.distances)

    def graph(self) -> MrfGraph:
        unary = [GmmUnary(o) for o in self.observations]
        pairwise = {e: DistancePairwise(L, self.alpha) for e, L in self.distances.items()}
        return MrfGraph.build(unary, self.edges, pairwise, node_dim={s: 2 for s in range(self.num_nodes)})

    def to_dict(self) -> dict:
        return {
            "num_nodes": self.num_nodes,
            "true_positions": self.true_positions.tolist(),
            "region": {"low": list(self.region.low), "high": list(self.region.high)},
            "connect_radius": self.connect_radius,
            "alpha": self.alpha,
            "sigma": self.sigma,
            "num_noise_components": self.num_noise_components,
            "seed": self.seed,
            "observations": [{"means": o.means.tolist(), "sigma": o.sigma} for o in self.observations],
            "distances": [{"edge": list(e), "distance": L} for e, L in sorted(self.distances.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> PerceptionScenario:
        return cls(
            true_positions=np.asarray(d["true_positions"], dtype=float),
            observations=[GmmObservation(o["means"], o["sigma"]) for o in d["observations"]],
            distances={tuple(x["edge"]): float(x["distance"]) for x in d["distances"]},
            region=Region(tuple(d["region"]["low"]), tuple(d["region"]["high"])),
            connect_radius=float(d["connect_radius"]),
            alpha=float(d["alpha"]),
            sigma=float(d["sigma"]),
            num_noise_components=int(d["num_noise_components"]),
            seed=int(d["seed"]),
        )


def radius_edges(positions: np.ndarray, radius: float) -> list[tuple[int, int]]:
    n = len(positions)
    return [(i, j) for i in range(n) for j in range(i + 1, n)
            if np.linalg.norm(positions[i] - positions[j]) <= radius]


def is_connected(num_nodes: int, edges) -> bool:
    adj = {s: set() for s in range(num_nodes)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen, stack = {0}, [0]
    while stack:
        for t in adj[stack.pop()] - seen:
            seen.add(t)
            stack.append(t)
    return len(seen) == num_nodes


def _place_robots(rng, n, region, radius, min_sep, max_tries):
    lo, hi = np.asarray(region.low), np.asarray(region.high)
    pts = [rng.uniform(lo, hi)]
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > max_tries:
            raise GenerationError(f"could not place {n} connected robots after {max_tries} tries")
        anchor = pts[rng.integers(len(pts))]
        ang = rng.uniform(0, 2 * np.pi)
        rad = radius * np.sqrt(rng.uniform())
        cand = anchor + rad * np.array([np.cos(ang), np.sin(ang)])
        if np.any(cand < lo) or np.any(cand > hi):
            continue
        if min(np.linalg.norm(cand - p) for p in pts) < min_sep:
            continue
        pts.append(cand)
    return np.array(pts)


def generate_scenario(num_nodes: int = 8, num_noise_components: int = 0,
                      region: Region = DEFAULT_REGION, seed: int = 0, *,
                      sigma: float = 0.25, alpha: float = 25.0, connect_radius: float = 2.0,
                      min_separation: float = 0.5, distance_noise: float = 0.0,
                      max_tries: int = 10_000) -> PerceptionScenario:
    """Random connected robot layout with clutter-laden mixture observations.

    Robots are placed one at a time, each uniformly within ``connect_radius``
    of an already placed robot, rejecting candidates outside the region or
    closer than ``min_separation`` to another robot; the induced graph is
    connected by construction. Each clutter component goes to a uniformly
    chosen robot with a mean uniform over the region.
    """
    rng = substream(seed, "scenario")
    pos = _place_robots(rng, num_nodes, region, connect_radius, min_separation, max_tries)
    edges = radius_edges(pos, connect_radius)
    if not is_connected(num_nodes, edges):
        raise GenerationError("placement produced a disconnected graph")
    means = [[p] for p in pos]
    owners = rng.integers(num_nodes, size=num_noise_components)
    clutter = region.uniform(rng, num_noise_components)
    for owner, m in zip(owners, clutter):
        means[owner].append(m)
    obs = [GmmObservation(np.array(m), sigma) for m in means]
    dist = {}
    for a, b in edges:
        L = float(np.linalg.norm(pos[a] - pos[b]))
        if distance_noise > 0:
            L = max(L + distance_noise * rng.normal(), 0.0)
        dist[(a, b)] = L
    return PerceptionScenario(pos, obs, dist, region, connect_radius, alpha, sigma,
                              num_noise_components, seed)


@dataclass
class PerceptionSettings:
    """Solver and evaluation settings shared by a sweep."""

    svbp_iterations: int = 100
    pbp_iterations: int = 50
    step: StepPolicy = field(default_factory=lambda: StepPolicy("adaptive", 0.1))
    jitter: float = 0.05
    reset_every: int = 0
    reset_fraction: float = 0.01
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    mmd_threshold: float = 0.01


@dataclass
class CellResult:
    method: str
    noise: int
    particles: int
    run: int
    error: float
    mmd: float
    seconds: float
    estimates: np.ndarray
    iterations: int = 0
    snapshots: list = field(default_factory=list, repr=False)


def _reset_hook(graph, region, settings, rng):
    """Re-draw low-weight particles uniformly every ``reset_every`` iterations."""
    def hook(state, k):
        if (k + 1) % settings.reset_every:
            return
        for s in range(graph.num_nodes):
            w = particle_weights(graph, state, s, strict=False)
            low = w < settings.reset_fraction * w.max()
            if low.any():
                x = state.particles(s).copy()
                x[low] = region.uniform(rng, int(low.sum()))
                state.beliefs[s].particles = x
    return hook


def solve(scenario: PerceptionScenario, method: str, num_particles: int, seed: int,
          settings: PerceptionSettings):
    """Run one method on one scenario; returns the final state and the graph."""
    graph = scenario.graph()
    init_rng = substream(seed, "init", method, num_particles)
    init = {s: scenario.region.uniform(init_rng, num_particles) for s in range(scenario.num_nodes)}
    if method == "svbp":
        cfg = SvbpConfig(num_particles=num_particles, num_iterations=settings.svbp_iterations,
                         step=settings.step, rng_seed=seed)
        hook = None
        if settings.reset_every:
            hook = _reset_hook(graph, scenario.region, settings, substream(seed, "reset"))
        state = run(graph, cfg, init, callback=hook)
    elif method == "pbp":
        cfg = PbpConfig(num_particles=num_particles, num_iterations=settings.pbp_iterations,
                        jitter_scale=settings.jitter, rng_seed=seed)
        state = run_pbp(graph, cfg, init, rng=substream(seed, "solver", method, num_particles))
    else:
        raise ValueError(f"unknown method {method!r}")
    return graph, state


def ground_truth(scenario: PerceptionScenario, gibbs: GibbsConfig, seed: int) -> dict[int, np.ndarray]:
    return gibbs_marginals(scenario.graph(), scenario.region, gibbs, substream(seed, "gibbs"))


def evaluate_cell(scenario, method, num_particles, run_index, seed, settings,
                  references: dict[int, MmdReference] | None = None, keep_snapshots=False) -> CellResult:
    t0 = time.perf_counter()
    graph, state = solve(scenario, method, num_particles, seed, settings)
    seconds = time.perf_counter() - t0
    est = np.array([map_estimate(graph, state, s) for s in range(graph.num_nodes)])
    err = node_error(est, scenario.true_positions)
    score = float("nan")
    if references is not None:
        vals = [references[s].compare(state.particles(s), particle_weights(graph, state, s),
                                      settings.mmd_threshold).mmd_squared
                for s in range(graph.num_nodes)]
        score = float(np.mean(vals))
    snaps = snapshot_records(graph, state, method) if keep_snapshots else []
    return CellResult(method, scenario.num_noise_components, num_particles, run_index,
                      err, score, seconds, est, iterations=state.iteration, snapshots=snaps)


def run_sweep(methods=("svbp", "pbp"), noise_levels=(0, 8, 16, 24, 32), particle_counts=(50,),
              runs: int = 10, seed: int = 0, settings: PerceptionSettings | None = None,
              with_mmd: bool = True, jobs: int = 1, keep_snapshots: bool = False,
              progress=None) -> list[CellResult]:
    """Every (noise, run) scenario is solved by every method at every particle count.

    Scenario ``run`` at noise level ``k`` is seeded from ``(seed, k, run)`` so
    cells are reproducible in isolation and independent of ``jobs``.
    """
    settings = settings or PerceptionSettings()
    tasks = [(noise, r) for noise in noise_levels for r in range(runs)]
    args = [(t, tuple(methods), tuple(particle_counts), seed, settings, with_mmd, keep_snapshots)
            for t in tasks]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            nested = list(pool.map(_sweep_task, args))
    else:
        nested = []
        for a in args:
            nested.append(_sweep_task(a))
            if progress is not None:
                progress(a[0])
    return [c for group in nested for c in group]


def _sweep_task(args):
    (noise, r), methods, counts, seed, settings, with_mmd, keep = args
    cell_seed = derive_seed(seed, "cell", noise, r)
    scen = generate_scenario(8, noise, seed=cell_seed)
    refs = None
    if with_mmd:
        gt = ground_truth(scen, settings.gibbs, cell_seed)
        refs = {s: MmdReference(v) for s, v in gt.items()}
    return [evaluate_cell(scen, m, n, r, cell_seed, settings, refs, keep)
            for n in counts for m in methods]
