"""2-D worlds of circles and axis-aligned boxes with signed distance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Circle:
    center: tuple
    radius: float

    def sdf(self, p: np.ndarray):
        diff = p - np.asarray(self.center, dtype=float)
        d = np.linalg.norm(diff, axis=-1)
        safe = np.where(d > 0, d, 1.0)[..., None]
        grad = np.where(d[..., None] > 0, diff / safe, np.array([1.0, 0.0]))
        return d - self.radius, grad

    def to_dict(self):
        return {"type": "circle", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Rect:
    low: tuple
    high: tuple

    def sdf(self, p: np.ndarray):
        lo = np.asarray(self.low, dtype=float)
        hi = np.asarray(self.high, dtype=float)
        c, half = (lo + hi) / 2, (hi - lo) / 2
        q = np.abs(p - c) - half
        sign = np.sign(p - c)
        sign = np.where(sign == 0, 1.0, sign)
        outside = np.maximum(q, 0.0)
        out_norm = np.linalg.norm(outside, axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        dist = out_norm + inside
        # outside: gradient along the clipped offset; inside: along the nearest face
        safe = np.where(out_norm > 0, out_norm, 1.0)[..., None]
        g_out = outside / safe
        axis = np.argmax(q, axis=-1)
        g_in = np.zeros_like(p)
        np.put_along_axis(g_in, axis[..., None], 1.0, axis=-1)
        grad = np.where((out_norm > 0)[..., None], g_out, g_in) * sign
        return dist, grad

    def to_dict(self):
        return {"type": "rect", "low": list(self.low), "high": list(self.high)}


def obstacle_from_dict(d: dict):
    if d["type"] == "circle":
        return Circle(tuple(map(float, d["center"])), float(d["radius"]))
    if d["type"] == "rect":
        return Rect(tuple(map(float, d["low"])), tuple(map(float, d["high"])))
    raise ValueError(f"unknown obstacle type {d['type']!r}")


@dataclass(frozen=True)
class Environment2D:
    low: tuple = (0.0, 0.0)
    high: tuple = (10.0, 10.0)
    obstacles: tuple = field(default_factory=tuple)

    def sdf(self, p):
        """Signed distance to the nearest obstacle (+inf with none) and its gradient."""
        p = np.asarray(p, dtype=float)
        if not self.obstacles:
            return np.full(p.shape[:-1], np.inf), np.zeros_like(p)
        best, grad = None, None
        for ob in self.obstacles:
            d, g = ob.sdf(p)
            if best is None:
                best, grad = d, g
            else:
                closer = d < best
                best = np.where(closer, d, best)
                grad = np.where(closer[..., None], g, grad)
        return best, grad

    def in_bounds(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.low) and np.all(p <= self.high))

    def to_dict(self):
        return {"bounds": {"low": list(self.low), "high": list(self.high)},
                "obstacles": [o.to_dict() for o in self.obstacles]}

    @classmethod
    def from_dict(cls, d: dict) -> Environment2D:
        b = d.get("bounds", {"low": [0.0, 0.0], "high": [10.0, 10.0]})
        return cls(tuple(map(float, b["low"])), tuple(map(float, b["high"])),
                   tuple(obstacle_from_dict(o) for o in d.get("obstacles", [])))
