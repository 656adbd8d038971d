"""Scenario files: YAML documents with a schema version.

Two kinds are supported, ``edge-agreement`` and ``battery-mpc``.  Files are
validated against a JSON schema and then checked for dimensional
consistency; every error carries the line of the offending YAML node.
Agent and node ids in scenario files start at 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .admm import DUAL_STEP_MODES, X_UPDATE_MODES, ProblemSpec
from .battery import BatteryNode, DemandProfile, ring_graph
from .exceptions import ConfigError, EdgeADMMError
from .graph import Graph, build_edge_agreement
from .objectives import ExpSum, Quadratic
from .sets import Box

SCHEMA_VERSION = 1

_number = {"type": "number"}
_vector = {"type": "array", "items": _number, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}

_objective = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["quadratic", "exp-sum", "squared-distance"]},
        "Q": _matrix,
        "q": _vector,
        "c": _number,
        "center": _vector,
        "weight": _number,
    },
    "additionalProperties": False,
}

_box = {
    "type": "object",
    "required": ["lower", "upper"],
    "properties": {"lower": _vector, "upper": _vector},
    "additionalProperties": False,
}

EDGE_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "kind", "m", "n", "objectives", "edges"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"const": "edge-agreement"},
        "name": {"type": "string"},
        "m": {"type": "integer", "minimum": 1},
        "n": {"type": "integer", "minimum": 1},
        "objectives": {"type": "array", "items": _objective, "minItems": 1},
        "box": _box,
        "boxes": {"type": "array", "items": _box},
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["i", "j", "b"],
                "properties": {
                    "i": {"type": "integer", "minimum": 1},
                    "j": {"type": "integer", "minimum": 1},
                    "A": _matrix,
                    "b": _vector,
                },
                "additionalProperties": False,
            },
        },
        "rho": {"type": "number", "exclusiveMinimum": 0},
        "rho_edge": {"type": "number", "exclusiveMinimum": 0},
        "max_iter": {"type": "integer", "minimum": 1},
        "eps_abs": {"type": "number", "minimum": 0},
        "eps_rel": {"type": "number", "minimum": 0},
        "dual_step": {"enum": list(DUAL_STEP_MODES)},
        "x_update": {"enum": list(X_UPDATE_MODES)},
        "seed": {"type": "integer"},
        "init": {
            "type": "object",
            "properties": {
                "mode": {"enum": ["default", "random-box", "given"]},
                "x": _matrix,
            },
            "additionalProperties": False,
        },
        "reference": {"type": "boolean"},
    },
    "additionalProperties": False,
}

_demand = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["sinusoids", "tabulated", "constant"]},
        "terms": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["amplitude"],
                "properties": {
                    "amplitude": _number,
                    "frequency": _number,
                    "frequency_pi": _number,
                    "phase": _number,
                },
                "additionalProperties": False,
            },
        },
        "times": _vector,
        "values": _vector,
        "value": _number,
    },
    "additionalProperties": False,
}

BATTERY_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "kind", "nodes", "demand"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"const": "battery-mpc"},
        "name": {"type": "string"},
        "nodes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["Q_max", "s_lower", "s_upper", "s0", "u_upper", "r"],
                "properties": {
                    "Q_max": {"type": "number", "exclusiveMinimum": 0},
                    "s_lower": _number,
                    "s_upper": _number,
                    "s0": _number,
                    "u_lower": _number,
                    "u_upper": _number,
                    "r": {"type": "number", "exclusiveMinimum": 0},
                    "eta": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2},
                },
                "additionalProperties": False,
            },
        },
        "eta": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2},
        "graph": {
            "oneOf": [
                {"const": "ring"},
                {"type": "object", "required": ["edges"],
                 "properties": {"edges": {"type": "array", "items": {
                     "type": "array", "items": {"type": "integer", "minimum": 1},
                     "minItems": 2, "maxItems": 2}}},
                 "additionalProperties": False},
            ]
        },
        "demand": _demand,
        "horizon": {"type": "integer", "minimum": 1},
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "steps": {"type": "integer", "minimum": 1},
        "rho1": {"type": "number", "exclusiveMinimum": 0},
        "rho2": {"type": "number", "exclusiveMinimum": 0},
        "n_iter": {"type": "integer", "minimum": 1},
        "warm_start": {"type": "boolean"},
        "dual_step": {"enum": list(DUAL_STEP_MODES)},
        "x_update": {"enum": list(X_UPDATE_MODES)},
        "projection": {"enum": ["newton", "dykstra"]},
    },
    "additionalProperties": False,
}

SCHEMAS = {"edge-agreement": EDGE_SCHEMA, "battery-mpc": BATTERY_SCHEMA}


class _LineIndex:
    """Maps a path of keys and indices in the document to a 1-based line number."""

    def __init__(self, node):
        self.root = node

    def line(self, path) -> int | None:
        node = self.root
        if node is None:
            return None
        best = node.start_mark.line + 1
        for key in path:
            child = None
            if isinstance(node, yaml.MappingNode):
                for k, v in node.value:
                    if k.value == key:
                        child = v
                        best = k.start_mark.line + 1
                        break
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int):
                if 0 <= key < len(node.value):
                    child = node.value[key]
                    best = child.start_mark.line + 1
            if child is None:
                break
            node = child
        return best


@dataclass
class Scenario:
    kind: str
    data: dict
    lines: _LineIndex
    source: str = "<string>"

    @property
    def name(self) -> str:
        return self.data.get("name", Path(self.source).stem)

    def error(self, message, path=()) -> ConfigError:
        return ConfigError(message, self.lines.line(list(path)))


def parse_scenario(text, source="<string>") -> Scenario:
    """Parse and schema-validate a scenario document.

    Raises
    ------
    ConfigError
        With the line of the first problem found.
    """
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(f"invalid YAML: {exc.problem}",
                          None if mark is None else mark.line + 1) from exc
    lines = _LineIndex(node)
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a mapping", lines.line([]))
    kind = data.get("kind")
    if kind not in SCHEMAS:
        raise ConfigError(f"unknown scenario kind {kind!r}; expected one of {sorted(SCHEMAS)}",
                          lines.line(["kind"]))
    validator = jsonschema.Draft202012Validator(SCHEMAS[kind])
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "document"
        raise ConfigError(f"{where}: {err.message}", lines.line(list(err.absolute_path)))
    scen = Scenario(kind, data, lines, source)
    if kind == "edge-agreement":
        build_edge_problem(scen)
    else:
        build_battery_setup(scen)
    return scen


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_scenario(text, str(path))


def bundled_scenario(name) -> Path:
    """Path of a scenario shipped with the package, e.g. ``"paper_sec3c"``."""
    ref = resources.files("edgeadmm") / "scenarios" / f"{name}.yaml"
    if not ref.is_file():
        raise ConfigError(f"no bundled scenario named {name!r}")
    return Path(str(ref))


# ----------------------------------------------------------------------------
# builders


def _objective(spec, n, scen, path):
    kind = spec["type"]
    try:
        if kind == "exp-sum":
            return ExpSum(n)
        if kind == "squared-distance":
            center = np.asarray(spec.get("center", np.zeros(n)), dtype=float)
            if center.shape != (n,):
                raise scen.error(f"center must have length {n}", path + ["center"])
            return Quadratic.squared_distance(center, spec.get("weight", 1.0))
        Q = np.asarray(spec.get("Q", np.zeros((n, n))), dtype=float)
        if Q.shape != (n, n):
            raise scen.error(f"Q must be {n}x{n}", path + ["Q"])
        q = np.asarray(spec.get("q", np.zeros(n)), dtype=float)
        if q.shape != (n,):
            raise scen.error(f"q must have length {n}", path + ["q"])
        return Quadratic(Q, q, spec.get("c", 0.0))
    except ConfigError:
        raise
    except ValueError as exc:
        raise scen.error(str(exc), path) from exc


def _box(spec, n, scen, path):
    lo = np.asarray(spec["lower"], dtype=float)
    hi = np.asarray(spec["upper"], dtype=float)
    if lo.shape != (n,) or hi.shape != (n,):
        raise scen.error(f"box bounds must have length {n}", path)
    try:
        return Box(lo, hi)
    except ValueError as exc:
        raise scen.error(str(exc), path) from exc


def build_edge_problem(scen: Scenario) -> ProblemSpec:
    d = scen.data
    m, n = d["m"], d["n"]
    objs = d["objectives"]
    if len(objs) != m:
        raise scen.error(f"expected {m} objectives, found {len(objs)}", ["objectives"])
    objectives = [_objective(o, n, scen, ["objectives", k]) for k, o in enumerate(objs)]
    if "boxes" in d:
        if len(d["boxes"]) != m:
            raise scen.error(f"expected {m} boxes, found {len(d['boxes'])}", ["boxes"])
        sets = [_box(b, n, scen, ["boxes", k]) for k, b in enumerate(d["boxes"])]
    elif "box" in d:
        sets = [_box(d["box"], n, scen, ["box"])] * m
    else:
        sets = [Box(np.full(n, -np.inf), np.full(n, np.inf))] * m
    pairs, agreements = [], []
    for k, e in enumerate(d["edges"]):
        path = ["edges", k]
        i, j = e["i"], e["j"]
        if i > m or j > m:
            raise scen.error(f"edge ({i}, {j}) references an agent beyond m = {m}", path)
        A = np.asarray(e.get("A", np.eye(n)), dtype=float)
        try:
            agreements.append(build_edge_agreement(i - 1, j - 1, A, e["b"], n))
        except (EdgeADMMError, ValueError) as exc:
            raise scen.error(str(exc), path) from exc
        pairs.append((i - 1, j - 1))
    try:
        graph = Graph(m, tuple(pairs))
    except ValueError as exc:
        raise scen.error(str(exc), ["edges"]) from exc
    init = d.get("init", {})
    if init.get("mode") == "given":
        x = np.asarray(init.get("x", []), dtype=float)
        if x.shape != (m, n):
            raise scen.error(f"init.x must be {m}x{n}", ["init"])
    return ProblemSpec(graph, agreements, objectives, sets)


def edge_init(scen: Scenario, problem: ProblemSpec):
    """Initial iterates requested by the scenario (``None`` for the default)."""
    init = scen.data.get("init", {})
    mode = init.get("mode", "default")
    if mode == "given":
        return {"x": np.asarray(init["x"], dtype=float)}
    if mode == "random-box":
        rng = np.random.default_rng(scen.data.get("seed", 0))
        x = []
        for s in problem.sets:
            lo = np.where(np.isfinite(s.lower), s.lower, -1.0)
            hi = np.where(np.isfinite(s.upper), s.upper, 1.0)
            x.append(rng.uniform(lo, hi))
        return {"x": np.array(x)}
    return None


def edge_run_options(scen: Scenario) -> dict:
    d = scen.data
    return {
        "rho": d.get("rho", 5.0),
        "rho_edge": d.get("rho_edge"),
        "max_iter": d.get("max_iter", 2000),
        "eps_abs": d.get("eps_abs", 1e-8),
        "eps_rel": d.get("eps_rel", 1e-6),
        "dual_step": d.get("dual_step", "unit"),
        "x_update": d.get("x_update", "lagrangian"),
    }


def _demand(spec, scen):
    kind = spec["type"]
    if kind == "constant":
        if "value" not in spec:
            raise scen.error("constant demand needs a value", ["demand"])
        return DemandProfile.constant(spec["value"])
    if kind == "tabulated":
        if "times" not in spec or "values" not in spec:
            raise scen.error("tabulated demand needs times and values", ["demand"])
        try:
            return DemandProfile.tabulated(spec["times"], spec["values"])
        except ValueError as exc:
            raise scen.error(str(exc), ["demand"]) from exc
    terms = spec.get("terms", [])
    if not terms:
        raise scen.error("sinusoid demand needs at least one term", ["demand"])
    amps, freqs, phases = [], [], []
    for k, t in enumerate(terms):
        if ("frequency" in t) == ("frequency_pi" in t):
            raise scen.error("give exactly one of frequency or frequency_pi",
                             ["demand", "terms", k])
        amps.append(t["amplitude"])
        freqs.append(t["frequency"] if "frequency" in t else np.pi * t["frequency_pi"])
        phases.append(t.get("phase", 0.0))
    return DemandProfile.sinusoids(amps, freqs, phases)


@dataclass
class BatterySetup:
    nodes: list
    graph: Graph
    demand: DemandProfile
    options: dict


def build_battery_setup(scen: Scenario) -> BatterySetup:
    d = scen.data
    eta = d.get("eta", [0.9, 1.1])
    nodes = []
    for k, nd in enumerate(d["nodes"]):
        e = nd.get("eta", eta)
        try:
            nodes.append(BatteryNode(nd["Q_max"], nd["s_lower"], nd["s_upper"], nd["s0"],
                                     nd.get("u_lower", -nd["u_upper"]), nd["u_upper"],
                                     e[0], e[1], nd["r"]))
        except ValueError as exc:
            raise scen.error(str(exc), ["nodes", k]) from exc
    m = len(nodes)
    g = d.get("graph", "ring")
    try:
        graph = ring_graph(m) if g == "ring" else Graph.from_edges(m, g["edges"], one_based=True)
    except ValueError as exc:
        raise scen.error(str(exc), ["graph"]) from exc
    demand = _demand(d["demand"], scen)
    options = {
        "T": d.get("horizon", 20),
        "delta": d.get("delta", 5.0),
        "steps": d.get("steps", 200),
        "rho1": d.get("rho1", 12.0),
        "rho2": d.get("rho2", 30.0),
        "n_iter": d.get("n_iter", 150),
        "warm": d.get("warm_start", False),
        "dual_step": d.get("dual_step", "unit"),
        "x_update": d.get("x_update", "lagrangian"),
        "projection": d.get("projection", "newton"),
    }
    return BatterySetup(nodes, graph, demand, options)
