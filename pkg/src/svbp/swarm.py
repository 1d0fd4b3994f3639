"""Decentralized execution of the SVBP planner.

Each robot is a worker with its own replica of the solver state. At every
iteration boundary it reads the newest particle snapshot from each peer's
mailbox, refreshes all messages locally and moves only its own particles,
then publishes a snapshot of them. Snapshots travel as binary frames over
an in-process queue or loopback sockets, with fixed latency (in iteration
ticks) and random drops. Workers are stepped by a deterministic tick
scheduler, so a run is reproducible from its seed.
"""

from __future__ import annotations

import logging
import socket
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .inference import (SvbpState, init_state, map_estimate, particle_weights, refresh_messages,
                        svbp_iteration)
from .planning.dynamics import shift_controls
from .planning.mpc import initial_particles, plan_costs, planning_graph, solver_config
from .planning.scenario import HarnessSettings, PlanningScenario
from .svgd import NumericError

log = logging.getLogger(__name__)

MAGIC = b"SVBP"
VERSION = 1
_HEADER = struct.Struct("<4sHIQII")
_PREFIX = struct.Struct("<I")


class DecodeError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class VersionError(DecodeError):
    pass


class SwarmError(RuntimeError):
    pass


@dataclass
class BeliefSnapshot:
    robot: int
    iteration: int
    particles: np.ndarray
    weights: np.ndarray
    sent_at: float = field(default=0.0, compare=False)  # local metadata, not on the wire

    def __eq__(self, other):
        return (isinstance(other, BeliefSnapshot) and self.robot == other.robot
                and self.iteration == other.iteration
                and self.particles.shape == other.particles.shape
                and self.particles.tobytes() == other.particles.tobytes()
                and self.weights.tobytes() == other.weights.tobytes())


def encode(snap: BeliefSnapshot) -> bytes:
    """Length-prefixed little-endian frame: header, particles (row-major), weights."""
    x = np.ascontiguousarray(snap.particles, dtype="<f8")
    w = np.ascontiguousarray(snap.weights, dtype="<f8")
    if x.ndim != 2 or w.shape != (x.shape[0],):
        raise ValueError("particles must be (N, d) and weights (N,)")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
        raise ValueError("snapshot contains non-finite values")
    body = _HEADER.pack(MAGIC, VERSION, snap.robot, snap.iteration, x.shape[0], x.shape[1]) + x.tobytes() + w.tobytes()
    return _PREFIX.pack(len(body)) + body


def decode(frame: bytes) -> BeliefSnapshot:
    buf = memoryview(frame)
    if len(buf) < _PREFIX.size:
        raise DecodeError("truncated length prefix", len(buf))
    (length,) = _PREFIX.unpack_from(buf, 0)
    if len(buf) < _PREFIX.size + length:
        raise DecodeError(f"truncated frame, expected {length} body bytes", len(buf))
    if length < _HEADER.size:
        raise DecodeError("frame shorter than header", _PREFIX.size + length)
    magic, version, robot, iteration, n, d = _HEADER.unpack_from(buf, _PREFIX.size)
    if magic != MAGIC:
        raise DecodeError(f"bad magic {bytes(magic)!r}", _PREFIX.size)
    if version != VERSION:
        raise VersionError(f"unsupported format version {version} (expected {VERSION})", _PREFIX.size + 4)
    start = _PREFIX.size + _HEADER.size
    need = 8 * (n * d + n)
    if length - _HEADER.size != need:
        raise DecodeError(f"payload is {length - _HEADER.size} bytes, header implies {need}", start)
    data = np.frombuffer(buf, dtype="<f8", count=n * d + n, offset=start).astype(float)
    return BeliefSnapshot(robot, iteration, data[:n * d].reshape(n, d), data[n * d:])


def read_frame(recv) -> bytes | None:
    """Pull one length-prefixed frame through ``recv(nbytes)``; None on a clean end of stream."""
    head = _recv_exact(recv, _PREFIX.size)
    if head is None:
        return None
    (length,) = _PREFIX.unpack(head)
    body = _recv_exact(recv, length)
    if body is None:
        raise DecodeError("stream ended inside a frame", _PREFIX.size)
    return head + body


def _recv_exact(recv, n):
    chunks, got = [], 0
    while got < n:
        c = recv(n - got)
        if not c:
            if got == 0:
                return None
            raise DecodeError("stream ended inside a frame", got)
        chunks.append(c)
        got += len(c)
    return b"".join(chunks)


class InProcessTransport:
    """Frames handed over as bytes objects."""

    def __init__(self, num_robots: int):
        pass

    def carry(self, dst: int, frame: bytes) -> bytes:
        return bytes(frame)

    def close(self):
        pass


class LoopbackSocketTransport:
    """One connected socket pair per receiver; frames cross the kernel's loopback path."""

    def __init__(self, num_robots: int):
        self.pairs = {r: socket.socketpair() for r in range(num_robots)}

    def carry(self, dst: int, frame: bytes) -> bytes:
        # one frame at a time, so a burst of deliveries never fills the socket buffer
        tx, rx = self.pairs[dst]
        tx.sendall(frame)
        return read_frame(rx.recv)

    def close(self):
        for a, b in self.pairs.values():
            a.close()
            b.close()


TRANSPORTS = {"in_process": InProcessTransport, "loopback_sockets": LoopbackSocketTransport}


class Network:
    """Delays frames by a fixed number of ticks and drops them at random."""

    def __init__(self, num_robots: int, settings: HarnessSettings, rng: np.random.Generator):
        if settings.transport not in TRANSPORTS:
            raise ValueError(f"unknown transport {settings.transport!r}")
        if not 0 <= settings.drop_probability < 1:
            raise ValueError("drop_probability must lie in [0, 1)")
        if settings.latency < 0:
            raise ValueError("latency must be >= 0")
        self.settings = settings
        self.rng = rng
        self.transport = TRANSPORTS[settings.transport](num_robots)
        self.in_flight: list[tuple[int, int, int, bytes]] = []  # (due tick, sent tick, dst, frame)
        self.sent = self.dropped = 0

    def post(self, tick: int, dst: int, frame: bytes):
        self.sent += 1
        if self.settings.drop_probability and self.rng.random() < self.settings.drop_probability:
            self.dropped += 1
            return
        self.in_flight.append((tick + 1 + self.settings.latency, tick, dst, frame))

    def deliver(self, tick: int, dst: int) -> list[tuple[int, bytes]]:
        """Frames due for ``dst`` by ``tick``, paired with the tick they were posted."""
        due = [(sent, f) for t, sent, d, f in self.in_flight if d == dst and t <= tick]
        self.in_flight = [e for e in self.in_flight if not (e[2] == dst and e[0] <= tick)]
        return [(sent, self.transport.carry(dst, f)) for sent, f in due]

    def close(self):
        self.transport.close()


class Mailbox:
    """Newest snapshot per sender; anything older than what was applied is discarded."""

    def __init__(self):
        self.latest: dict[int, tuple[BeliefSnapshot, int]] = {}
        self.out_of_order = 0

    def offer(self, snap: BeliefSnapshot, sent_tick: int = 0) -> None:
        cur = self.latest.get(snap.robot)
        if cur is not None and snap.iteration <= cur[0].iteration:
            self.out_of_order += 1
            return
        self.latest[snap.robot] = (snap, sent_tick)


class RobotWorker:
    """One robot's local view: its own particles plus a replica of every peer's."""

    def __init__(self, robot: int, scenario: PlanningScenario, particles: dict[int, np.ndarray]):
        self.robot = robot
        self.scenario = scenario
        self.config = solver_config(scenario)
        self.replica = {r: p.copy() for r, p in particles.items()}
        self.state: SvbpState | None = None
        self.graph = None
        self.mailbox = Mailbox()
        self.stamp = 0
        self.staleness: list[int] = []

    def observe(self, states):
        self.graph = planning_graph(self.scenario, states)
        if self.state is None:
            self.state = init_state(self.graph, self.replica)

    def apply_mailbox(self, tick: int):
        for r, (snap, sent_tick) in self.mailbox.latest.items():
            if r != self.robot:
                self.state.beliefs[r].particles = snap.particles.copy()
                self.staleness.append(tick - sent_tick)

    def iterate(self):
        svbp_iteration(self.graph, self.state, self.config, nodes=[self.robot])

    def best(self) -> np.ndarray:
        refresh_messages(self.graph, self.state, self.config)
        return map_estimate(self.graph, self.state, self.robot)

    def snapshot(self, tick: int) -> BeliefSnapshot:
        self.stamp += 1
        w = particle_weights(self.graph, self.state, self.robot, strict=False)
        return BeliefSnapshot(self.robot, self.stamp, self.state.particles(self.robot).copy(), w,
                              sent_at=time.time())

    def shift_own(self):
        b = self.state.beliefs[self.robot]
        b.particles = shift_controls(b.particles)


class SwarmPlanner:
    """Planner interface over a swarm of workers; plugs into ``run_episode``."""

    method = "svbp-decentralized"

    def __init__(self, scenario: PlanningScenario, rng: np.random.Generator,
                 transport_rng: np.random.Generator | None = None, settings: HarnessSettings | None = None):
        self.scenario = scenario
        self.settings = settings or scenario.harness
        R = scenario.num_robots
        init = initial_particles(scenario, rng)
        # initial particles are exchanged once at start-up, outside the lossy channel
        self.workers = [RobotWorker(r, scenario, init) for r in range(R)]
        self.net = Network(R, self.settings, transport_rng or np.random.default_rng(0))
        self.tick = 0
        self.started = False
        self.steps_done = 0

    def _guard(self, r, fn, *args):
        try:
            return fn(*args)
        except NumericError:
            raise
        except Exception as exc:
            raise SwarmError(f"robot {r} failed at tick {self.tick}: {exc!r}") from exc

    def _exchange(self):
        self.tick += 1
        for w in self.workers:
            for sent_tick, frame in self.net.deliver(self.tick, w.robot):
                w.mailbox.offer(decode(frame), sent_tick)
            w.apply_mailbox(self.tick)

    def _publish(self):
        for w in self.workers:
            frame = encode(w.snapshot(self.tick))
            for peer in self.workers:
                if peer.robot != w.robot:
                    self.net.post(self.tick, peer.robot, frame)

    def plan(self, states):
        sc = self.scenario
        for w in self.workers:
            w.observe(states)
        iters = sc.planner.iterations_per_step if self.started else sc.planner.warmup_iterations
        self.started = True
        events = []
        try:
            for _ in range(iters):
                self._exchange()
                for w in self.workers:
                    self._guard(w.robot, w.iterate)
                self._publish()
            self._exchange()
            best = np.array([self._guard(w.robot, w.best) for w in self.workers])
        except NumericError as exc:
            log.warning("solver failure at MPC step %d: %s", self.steps_done, exc)
            events.append(f"numeric failure: {exc}")
            best = np.zeros((sc.num_robots, sc.model.control_dim))
        return best, plan_costs(sc, states, best), events

    def advance(self):
        for w in self.workers:
            w.shift_own()
        self._publish()
        self.steps_done += 1

    def stats(self) -> dict:
        ages = [a for w in self.workers for a in w.staleness]
        return {"sent": self.net.sent, "dropped": self.net.dropped,
                "out_of_order": sum(w.mailbox.out_of_order for w in self.workers),
                "mean_staleness_ticks": float(np.mean(ages)) if ages else 0.0,
                "max_staleness_ticks": float(np.max(ages)) if ages else 0.0}

    def close(self):
        self.net.close()
