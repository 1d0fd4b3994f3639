"""Versioned JSON scenario files for both benchmarks.

A file is one object with ``schema_version``, ``kind`` (``perception`` or
``planning``) and a section named after the kind holding the scenario body.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .perception import PerceptionScenario, is_connected
from .planning.scenario import PlanningScenario, validate_planning

SCHEMA_VERSION = 1
KINDS = ("perception", "planning")


class SchemaError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class SchemaVersionError(SchemaError):
    pass


def to_document(scenario) -> dict:
    kind = "perception" if isinstance(scenario, PerceptionScenario) else "planning"
    return {"schema_version": SCHEMA_VERSION, "kind": kind, kind: scenario.to_dict()}


def dump(scenario, path) -> None:
    Path(path).write_text(json.dumps(to_document(scenario), indent=2) + "\n")


def _structure_problems(doc) -> list[str]:
    if not isinstance(doc, dict):
        return ["document: top level must be an object"]
    problems = []
    if "schema_version" not in doc:
        problems.append("schema_version: missing")
    kind = doc.get("kind")
    if kind not in KINDS:
        problems.append(f"kind: must be one of {list(KINDS)}, got {kind!r}")
    elif not isinstance(doc.get(kind), dict):
        problems.append(f"{kind}: section missing")
    return problems


def _perception_problems(body: dict) -> list[str]:
    problems = []
    required = ("true_positions", "observations", "distances", "region", "connect_radius", "alpha", "sigma",
                "num_noise_components", "seed")
    problems += [f"perception.{k}: missing" for k in required if k not in body]
    if problems:
        return problems
    pos = np.asarray(body["true_positions"], dtype=float)
    n = len(pos)
    if pos.ndim != 2 or pos.shape[1] != 2:
        problems.append("perception.true_positions: expected a list of [x, y] pairs")
    if len(body["observations"]) != n:
        problems.append(f"perception.observations: {len(body['observations'])} entries for {n} nodes")
    for i, o in enumerate(body["observations"]):
        if not o.get("sigma", 0) > 0:
            problems.append(f"perception.observations[{i}].sigma: must be positive")
        if np.asarray(o.get("means", [])).ndim != 2:
            problems.append(f"perception.observations[{i}].means: expected a list of [x, y] pairs")
    edges = []
    for i, e in enumerate(body["distances"]):
        a, b = e.get("edge", (None, None))
        if not (isinstance(a, int) and isinstance(b, int) and 0 <= a < n and 0 <= b < n and a != b):
            problems.append(f"perception.distances[{i}].edge: invalid node pair {e.get('edge')}")
        elif not e.get("distance", -1) >= 0:
            problems.append(f"perception.distances[{i}].distance: must be non-negative")
        else:
            edges.append((a, b))
    if n and not problems and not is_connected(n, edges):
        problems.append("perception.distances: graph is not connected")
    lo, hi = body["region"].get("low"), body["region"].get("high")
    if lo is None or hi is None or np.any(np.asarray(lo) >= np.asarray(hi)):
        problems.append("perception.region: need low < high")
    elif pos.ndim == 2 and (np.any(pos < lo) or np.any(pos > hi)):
        problems.append("perception.true_positions: outside region")
    for k in ("alpha", "sigma"):
        if not body[k] > 0:
            problems.append(f"perception.{k}: must be positive")
    return problems


def _planning_problems(body: dict) -> list[str]:
    problems = [f"planning.{k}: missing" for k in ("robots",) if k not in body]
    if problems:
        return problems
    for i, r in enumerate(body["robots"]):
        for k in ("start", "goal"):
            if k not in r:
                problems.append(f"planning.robots[{i}].{k}: missing")
    if problems:
        return problems
    try:
        sc = PlanningScenario.from_dict(body)
    except (TypeError, ValueError, KeyError) as exc:
        return [f"planning: {exc}"]
    return [f"planning.{p}" for p in validate_planning(sc)]


def validate_document(doc) -> list[str]:
    """Every schema and geometric problem found; an empty list means the document is valid."""
    problems = _structure_problems(doc)
    if problems:
        return problems
    if doc["schema_version"] != SCHEMA_VERSION:
        return [f"schema_version: unsupported version {doc['schema_version']!r} (expected {SCHEMA_VERSION})"]
    kind = doc["kind"]
    return _perception_problems(doc[kind]) if kind == "perception" else _planning_problems(doc[kind])


def from_document(doc):
    problems = validate_document(doc)
    if problems:
        if problems[0].startswith("schema_version: unsupported"):
            raise SchemaVersionError(problems)
        raise SchemaError(problems)
    body = doc[doc["kind"]]
    return PerceptionScenario.from_dict(body) if doc["kind"] == "perception" else PlanningScenario.from_dict(body)


def load(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError([f"document: not valid JSON ({exc})"]) from None
    return from_document(doc)


def canonical_path(name: str) -> Path:
    return Path(__file__).parent / "planning" / "scenarios" / f"{name}.json"
