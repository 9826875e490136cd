"""JSON instance and game files.

An instance file looks like::

    {
      "format": "invpoa-instance/1",
      "name": "pigou",
      "entry_node": "o",
      "network": {
        "nodes": ["o", "d"],
        "edges": [
          {"id": "1", "tail": "o", "head": "d", "coefficients": [1.0]},
          {"id": "2", "tail": "o", "head": "d", "t0": 1.0, "capacity": 1.0, "a": 0.15, "b": 4, "length": 2.5}
        ]
      },
      "groups": [{"id": "car", "vot": 1.0, "c_max": 2.0}],
      "demands": [{"origin": "o", "destination": "d", "group": "car", "n": 1.0}]
    }

Edges carry either polynomial ``coefficients`` or BPR fields ``t0``,
``capacity`` and optional ``a`` (0.15) and ``b`` (4); ``length``, ``toll``
default to zero.  Groups may add ``label``, ``distance_cost``, ``scale`` and
``offset``.  Errors name the file and the line of the offending object.
"""

from __future__ import annotations

import json
import math
from importlib import resources
from json.decoder import JSONObject
from json.scanner import py_make_scanner
from pathlib import Path
from typing import Any

import numpy as np

from .games import FiniteGame
from .network import BPR, Demand, Edge, Instance, Network, NetworkError, Polynomial, TravelerGroup

INSTANCE_FORMAT = "invpoa-instance/1"
GAME_FORMAT = "invpoa-game/1"


class InstanceFormatError(ValueError):
    pass


class _Obj(dict):
    line = 0


class _LocatingDecoder(json.JSONDecoder):
    """Decoder whose objects remember the line they start on."""

    def __init__(self):
        super().__init__()

        def parse_object(s_and_end, strict, scan_once, object_hook, object_pairs_hook, memo=None):
            s, end = s_and_end
            obj, stop = JSONObject(s_and_end, strict, scan_once, object_hook, object_pairs_hook, memo)
            out = _Obj(obj)
            out.line = s.count("\n", 0, end) + 1
            return out, stop

        def reject_constant(name):
            raise ValueError(f"non-finite number {name}")

        self.parse_object = parse_object
        self.parse_constant = reject_constant
        self.scan_once = py_make_scanner(self)


def _load_json(text: str, source: str) -> Any:
    try:
        return _LocatingDecoder().decode(text)
    except json.JSONDecodeError as err:
        raise InstanceFormatError(f"{source}:{err.lineno}: {err.msg}") from None
    except ValueError as err:
        raise InstanceFormatError(f"{source}: {err}") from None


class _Reader:
    def __init__(self, source: str):
        self.source = source

    def fail(self, obj, message: str):
        line = getattr(obj, "line", 0)
        where = f"{self.source}:{line}" if line else self.source
        raise InstanceFormatError(f"{where}: {message}")

    def obj(self, value, what: str, parent=None) -> _Obj:
        if not isinstance(value, dict):
            self.fail(parent, f"{what} must be an object")
        return value

    def get(self, obj, key: str, what: str, default: Any = ...):
        if key not in obj:
            if default is ...:
                self.fail(obj, f"{what} is missing field {key!r}")
            return default
        return obj[key]

    def number(self, obj, key: str, what: str, default: Any = ...) -> float:
        value = self.get(obj, key, what, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(obj, f"{what} field {key!r} must be a number")
        if not math.isfinite(value):
            self.fail(obj, f"{what} field {key!r} must be finite")
        return float(value)

    def text(self, obj, key: str, what: str, default: Any = ...) -> str:
        value = self.get(obj, key, what, default)
        if not isinstance(value, str):
            self.fail(obj, f"{what} field {key!r} must be a string")
        return value

    def items(self, obj, key: str, what: str) -> list:
        value = self.get(obj, key, what)
        if not isinstance(value, list):
            self.fail(obj, f"{what} field {key!r} must be a list")
        return value


def _edge(r: _Reader, e: _Obj, nodes: set[str]) -> Edge:
    eid = r.text(e, "id", "edge")
    what = f"edge {eid!r}"
    tail, head = r.text(e, "tail", what), r.text(e, "head", what)
    for end in (tail, head):
        if end not in nodes:
            r.fail(e, f"{what} references undeclared node {end!r}")
    if "coefficients" in e:
        coefs = e["coefficients"]
        if not isinstance(coefs, list) or not coefs:
            r.fail(e, f"{what}: coefficients must be a nonempty list")
        for c in coefs:
            if isinstance(c, bool) or not isinstance(c, (int, float)) or not math.isfinite(c):
                r.fail(e, f"{what}: coefficients must be finite numbers")
        try:
            lat = Polynomial(tuple(float(c) for c in coefs))
        except ValueError as err:
            r.fail(e, f"{what}: {err}")
    else:
        try:
            lat = BPR(
                r.number(e, "t0", what),
                r.number(e, "capacity", what),
                r.number(e, "a", what, 0.15),
                r.number(e, "b", what, 4.0),
            )
        except ValueError as err:
            if isinstance(err, InstanceFormatError):
                raise
            r.fail(e, f"{what}: {err}")
    length = r.number(e, "length", what, 0.0)
    if length < 0:
        r.fail(e, f"{what}: length must be >= 0")
    try:
        return Edge(eid, tail, head, lat, r.number(e, "toll", what, 0.0), length, bool(e.get("allow_self_loop", False)))
    except NetworkError as err:
        r.fail(e, str(err))


def _group(r: _Reader, g: _Obj) -> TravelerGroup:
    gid = r.text(g, "id", "group")
    what = f"group {gid!r}"
    try:
        return TravelerGroup(
            gid,
            r.number(g, "vot", what),
            r.number(g, "c_max", what),
            r.text(g, "label", what, ""),
            r.number(g, "distance_cost", what, 0.0),
            r.number(g, "scale", what, 1.0),
            r.number(g, "offset", what, 0.0),
        )
    except NetworkError as err:
        r.fail(g, str(err))


def parse_instance_text(text: str, source: str = "<instance>") -> Instance:
    r = _Reader(source)
    root = r.obj(_load_json(text, source), "instance file")
    fmt = root.get("format", INSTANCE_FORMAT)
    if fmt != INSTANCE_FORMAT:
        r.fail(root, f"unsupported format {fmt!r} (expected {INSTANCE_FORMAT!r})")
    net = r.obj(r.get(root, "network", "instance"), "network", root)
    node_list = r.items(net, "nodes", "network")
    if not all(isinstance(n, str) for n in node_list):
        r.fail(net, "node ids must be strings")
    if len(set(node_list)) != len(node_list):
        r.fail(net, "duplicate node ids")
    nodes = set(node_list)
    edges = [_edge(r, r.obj(e, "edge", net), nodes) for e in r.items(net, "edges", "network")]
    seen: set[str] = set()
    for e, raw in zip(edges, net["edges"]):
        if e.id in seen:
            r.fail(raw, f"duplicate edge id {e.id!r}")
        seen.add(e.id)
    groups = [_group(r, r.obj(g, "group", root)) for g in r.items(root, "groups", "instance")]
    gids = [g.id for g in groups]
    for g, raw in zip(groups, root["groups"]):
        if gids.count(g.id) > 1:
            r.fail(raw, f"duplicate group id {g.id!r}")
    demands = []
    for d in r.items(root, "demands", "instance"):
        d = r.obj(d, "demand", root)
        what = "demand"
        origin, dest = r.text(d, "origin", what), r.text(d, "destination", what)
        group = r.text(d, "group", what)
        if group not in gids:
            r.fail(d, f"demand references unknown group {group!r}")
        for end in (origin, dest):
            if end not in nodes:
                r.fail(d, f"demand references undeclared node {end!r}")
        try:
            demands.append(Demand(origin, dest, group, r.number(d, "n", what)))
        except NetworkError as err:
            r.fail(d, str(err))
    entry = root.get("entry_node")
    if entry is not None and entry not in nodes:
        r.fail(root, f"entry node {entry!r} is not a declared node")
    try:
        network = Network(node_list, edges)
        return Instance(network, groups, demands, entry_node=entry, name=r.text(root, "name", "instance", ""))
    except NetworkError as err:
        r.fail(root, str(err))


def parse_instance(path) -> Instance:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise InstanceFormatError(f"{path}: cannot read ({err.strerror})") from None
    return parse_instance_text(text, str(path))


def _edge_dict(e: Edge) -> dict:
    out: dict[str, Any] = {"id": e.id, "tail": e.tail, "head": e.head}
    if isinstance(e.latency, Polynomial):
        out["coefficients"] = list(e.latency.coefficients)
    else:
        out.update(t0=e.latency.t0, capacity=e.latency.capacity, a=e.latency.a, b=e.latency.b)
    out["length"] = e.length
    out["toll"] = e.toll
    if e.allow_self_loop:
        out["allow_self_loop"] = True
    return out


def _group_dict(g: TravelerGroup) -> dict:
    out: dict[str, Any] = {"id": g.id}
    if g.label:
        out["label"] = g.label
    out.update(vot=g.vot, c_max=g.c_max)
    for key, default in (("distance_cost", 0.0), ("scale", 1.0), ("offset", 0.0)):
        if getattr(g, key) != default:
            out[key] = getattr(g, key)
    return out


def emit_instance(instance: Instance) -> str:
    """Canonical JSON text; ``parse_instance_text(emit_instance(x))`` equals ``x``."""
    net = instance.network
    doc: dict[str, Any] = {"format": INSTANCE_FORMAT}
    if instance.name:
        doc["name"] = instance.name
    if instance.entry_node is not None:
        doc["entry_node"] = instance.entry_node
    doc["network"] = {"nodes": list(net.nodes), "edges": [_edge_dict(e) for e in net.edges]}
    doc["groups"] = [_group_dict(g) for g in instance.groups]
    doc["demands"] = [
        {"origin": d.origin, "destination": d.destination, "group": d.group, "n": d.n} for d in instance.demands
    ]
    # one edge, group or demand per line
    lines = ["{"]
    keys = list(doc)
    for k, key in enumerate(keys):
        comma = "," if k < len(keys) - 1 else ""
        value = doc[key]
        if key == "network":
            lines.append('  "network": {')
            lines.append(f'    "nodes": {json.dumps(value["nodes"])},')
            lines.append('    "edges": [')
            lines.extend(_rows(value["edges"], "      "))
            lines.append("    ]")
            lines.append("  }" + comma)
        elif isinstance(value, list):
            lines.append(f"  {json.dumps(key)}: [")
            lines.extend(_rows(value, "    "))
            lines.append("  ]" + comma)
        else:
            lines.append(f"  {json.dumps(key)}: {json.dumps(value)}{comma}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _rows(items: list[dict], indent: str) -> list[str]:
    return [indent + json.dumps(item) + ("," if k < len(items) - 1 else "") for k, item in enumerate(items)]


def write_instance(instance: Instance, path) -> None:
    Path(path).write_text(emit_instance(instance))


def instance_summary(instance: Instance) -> dict:
    return {
        "nodes": instance.network.n_nodes,
        "edges": instance.network.n_edges,
        "groups": instance.n_groups,
        "trips": float(instance.group_demand.sum()),
    }


# ---------------------------------------------------------------------------
# Games
# ---------------------------------------------------------------------------

def parse_game_text(text: str, source: str = "<game>") -> FiniteGame:
    """``{"format": "invpoa-game/1", "players": [...], "c_max": [...], "costs": [...]}``.

    ``costs[i]`` is player ``i``'s cost as a nested list indexed by the
    strategy of every player in turn.
    """
    r = _Reader(source)
    root = r.obj(_load_json(text, source), "game file")
    fmt = root.get("format", GAME_FORMAT)
    if fmt != GAME_FORMAT:
        r.fail(root, f"unsupported format {fmt!r} (expected {GAME_FORMAT!r})")
    c_max = r.items(root, "c_max", "game")
    costs = r.items(root, "costs", "game")
    players = root.get("players", [])
    try:
        arr = np.array(costs, dtype=float)
        return FiniteGame(arr, np.array(c_max, dtype=float), tuple(players))
    except (ValueError, TypeError) as err:
        r.fail(root, f"invalid game: {err}")


def parse_game(path) -> FiniteGame:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise InstanceFormatError(f"{path}: cannot read ({err.strerror})") from None
    return parse_game_text(text, str(path))


def emit_game(game: FiniteGame) -> str:
    # one line per player keeps small cost tensors readable
    rows = ",\n".join(f"    {json.dumps(c.tolist())}" for c in game.costs)
    return (
        "{\n"
        f'  "format": {json.dumps(GAME_FORMAT)},\n'
        f'  "players": {json.dumps(list(game.players))},\n'
        f'  "c_max": {json.dumps(game.c_max.tolist())},\n'
        f'  "costs": [\n{rows}\n  ]\n'
        "}\n"
    )


def bundled(name: str) -> Path:
    """Path of a data file shipped with the package (``pigou.json``, ...)."""
    path = Path(str(resources.files("invpoa") / "data" / name))
    if not path.exists():
        raise FileNotFoundError(f"no bundled data file {name!r}")
    return path
