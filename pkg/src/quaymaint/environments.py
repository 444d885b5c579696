"""Environment configurations: built-in presets and a JSON schema.

Presets are written as plain dictionaries in the file schema and pass through
the same validator as user files, so both routes build identical configs.

Health levels are 0-based everywhere in this package (0 best, 4 failed). The
published quay-wall start states are listed 1-based ("states 3 and 4, just
before the failed state 5"); ``LISTED_START_*`` keep them verbatim and the
presets subtract one.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np

from .mopomdp import (
    N_STATES,
    Asset,
    ComponentSpec,
    DegradationModel,
    DependencyGroup,
    MaintenanceEnv,
)

SCHEMA_VERSION = 1
STOCHASTIC_TOL = 1e-9
PRESETS = ("simple", "quay", "quay_large")


class ConfigError(ValueError):
    """Invalid environment configuration; the message names the offending field."""


SIMPLE_START = [
    [0.97, 0.015, 0.01, 0.004, 0.001],
    [0, 0.98, 0.012, 0.005, 0.003],
    [0, 0, 0.981, 0.018, 0.01],  # sums to 1.009 as printed
    [0, 0, 0, 0.985, 0.015],
    [0, 0, 0, 0, 1],
]
# the printed row 2 is renormalised so that the matrix is row-stochastic
_SIMPLE_START_FIXED = [list(r) for r in SIMPLE_START]
_SIMPLE_START_FIXED[2] = [v / 1.009 for v in SIMPLE_START[2]]
SIMPLE_END = [
    [0.9, 0.05, 0.03, 0.015, 0.005],
    [0, 0.91, 0.06, 0.02, 0.01],
    [0, 0, 0.92, 0.06, 0.02],
    [0, 0, 0, 0.93, 0.07],
    [0, 0, 0, 0, 1],
]
POLE_START = [
    [0.983, 0.0089, 0.0055, 0.0025, 0.0001],
    [0, 0.9836, 0.0084, 0.0054, 0.0026],
    [0, 0, 0.9862, 0.0084, 0.0054],
    [0, 0, 0, 0.9917, 0.0083],
    [0, 0, 0, 0, 1],
]
POLE_END = [
    [0.9713, 0.0148, 0.0093, 0.0045, 0.0001],
    [0, 0.9719, 0.0142, 0.0093, 0.0046],
    [0, 0, 0.9753, 0.0153, 0.0094],
    [0, 0, 0, 0.9858, 0.0142],
    [0, 0, 0, 0, 1],
]
KESP_START = [
    [0.9748, 0.013, 0.0081, 0.004, 0.0001],
    [0, 0.9754, 0.0124, 0.0081, 0.0041],
    [0, 0, 0.9793, 0.0125, 0.0082],
    [0, 0, 0, 0.9876, 0.0124],
    [0, 0, 0, 0, 1],
]
KESP_END = [
    [0.9534, 0.0237, 0.0153, 0.0075, 0.0001],
    [0, 0.954, 0.0231, 0.0152, 0.0077],
    [0, 0, 0.9613, 0.0233, 0.0154],
    [0, 0, 0, 0.9767, 0.0233],
    [0, 0, 0, 0, 1],
]
FLOOR_START = [
    [0.9848, 0.008, 0.0049, 0.0022, 0.0001],
    [0, 0.9854, 0.0074, 0.0048, 0.0024],
    [0, 0, 0.9876, 0.0075, 0.0049],
    [0, 0, 0, 0.9926, 0.0074],
    [0, 0, 0, 0, 1],
]
FLOOR_END = KESP_START

POLE_EFFECT = [0.0, 0.01, 0.1, 0.4]
KESP_EFFECT = [0.0, 0.03, 0.33]
FLOOR_EFFECT = [0.0, 0.05]

LISTED_START_QUAY = [4, 4, 3, 4, 3, 3, 4, 3, 4, 3, 4, 3, 3]
LISTED_START_QUAY_LARGE = [
    4, 4, 3, 4, 3, 3, 4, 3, 4, 4, 4, 3, 4, 3,
    3, 4, 3, 4, 3, 4, 3, 3, 4, 3, 3, 4,
]
UNIFORM_BELIEF_ROW = [0.2] * N_STATES


@dataclass(frozen=True)
class EnvironmentConfig:
    name: str
    horizon: int
    components: tuple[ComponentSpec, ...]
    degradation_models: tuple[DegradationModel, ...]
    dependency_groups: tuple[DependencyGroup, ...]
    global_inspect_cost: float
    start_health: tuple[int, ...]
    initial_belief: tuple[tuple[float, ...], ...]

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def tau_max(self) -> int:
        return self.degradation_models[0].tau_max

    @cached_property
    def asset(self) -> Asset:
        return Asset(self.components, self.degradation_models, self.dependency_groups, self.global_inspect_cost)

    def make_env(self, track_belief: bool = True) -> MaintenanceEnv:
        return MaintenanceEnv(
            self.asset, self.horizon, self.start_health, np.array(self.initial_belief), track_belief
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "horizon": self.horizon,
            "components": [
                {
                    "index": c.index,
                    "group_id": c.group_id,
                    "cost_nothing": c.cost_nothing,
                    "cost_repair": c.cost_repair,
                    "cost_replace": c.cost_replace,
                }
                for c in self.components
            ],
            "degradation_models": [
                {"group_id": m.group_id, "tau_max": m.tau_max, "start": [list(r) for r in m.start], "end": [list(r) for r in m.end]}
                for m in self.degradation_models
            ],
            "dependency_groups": [
                {"group_id": g.group_id, "members": list(g.members), "failure_effect": list(g.failure_effect)}
                for g in self.dependency_groups
            ],
            "global_inspect_cost": self.global_inspect_cost,
            "start_health": list(self.start_health),
            "initial_belief": [list(r) for r in self.initial_belief],
        }


def _require(data: dict, key: str, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    if key not in data:
        raise ConfigError(f"{path}{'.' if path else ''}{key}: missing required field")
    return data[key]


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{path}: expected a finite number, got {value!r}")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _list(value, path: str) -> list:
    if not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list")
    return value


def _check_stochastic_matrix(rows, path: str) -> list[list[float]]:
    rows = _list(rows, path)
    if len(rows) != N_STATES:
        raise ConfigError(f"{path}: expected {N_STATES} rows, got {len(rows)}")
    out = []
    for i, row in enumerate(rows):
        row = _list(row, f"{path}[{i}]")
        if len(row) != N_STATES:
            raise ConfigError(f"{path}[{i}]: expected {N_STATES} entries, got {len(row)}")
        vals = [_number(v, f"{path}[{i}][{j}]") for j, v in enumerate(row)]
        for j, v in enumerate(vals):
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{path}[{i}][{j}]: probability {v} outside [0, 1]")
            if j < i and v != 0.0:
                raise ConfigError(f"{path} row {i}: entry {j} is {v}; matrices must be upper-triangular")
        s = math.fsum(vals)
        if abs(s - 1.0) > STOCHASTIC_TOL:
            raise ConfigError(f"{path} row {i} sums to {s!r}, not 1")
        out.append(vals)
    if out[-1][-1] != 1.0:
        raise ConfigError(f"{path} row {N_STATES - 1}: failed state must be absorbing")
    return out


def config_from_dict(data: dict[str, Any]) -> EnvironmentConfig:
    """Validate a schema dictionary and build the config."""
    version = _require(data, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {version!r} (expected {SCHEMA_VERSION})")
    name = _require(data, "name", "")
    if not isinstance(name, str) or not name:
        raise ConfigError("name: expected a non-empty string")
    horizon = _integer(_require(data, "horizon", ""), "horizon")
    if horizon < 1:
        raise ConfigError("horizon: must be >= 1")

    models = []
    seen_models = set()
    for k, m in enumerate(_list(_require(data, "degradation_models", ""), "degradation_models")):
        path = f"degradation_models[{k}]"
        gid = _require(m, "group_id", path)
        if gid in seen_models:
            raise ConfigError(f"{path}.group_id: duplicate group {gid!r}")
        seen_models.add(gid)
        tau_max = _integer(_require(m, "tau_max", path), f"{path}.tau_max")
        if tau_max < 2:
            raise ConfigError(f"{path}.tau_max: must be >= 2")
        start = _check_stochastic_matrix(_require(m, "start", path), f"{path}.start")
        end = _check_stochastic_matrix(_require(m, "end", path), f"{path}.end")
        models.append(DegradationModel(gid, start, end, tau_max))
    if not models:
        raise ConfigError("degradation_models: at least one model required")
    if len({m.tau_max for m in models}) != 1:
        raise ConfigError("degradation_models: all models must share tau_max")

    components = []
    for i, c in enumerate(_list(_require(data, "components", ""), "components")):
        path = f"components[{i}]"
        index = _integer(_require(c, "index", path), f"{path}.index")
        if index != i:
            raise ConfigError(f"{path}.index: expected {i}, got {index}")
        gid = _require(c, "group_id", path)
        if gid not in seen_models:
            raise ConfigError(f"{path}.group_id: unknown degradation group {gid!r}")
        costs = [_number(_require(c, key, path), f"{path}.{key}") for key in ("cost_nothing", "cost_repair", "cost_replace")]
        if not (costs[0] == 0.0 and costs[0] <= costs[1] <= costs[2]):
            raise ConfigError(f"{path}: costs must satisfy 0 = nothing <= repair <= replace, got {costs}")
        components.append(ComponentSpec(index, gid, *costs))
    n = len(components)
    if n == 0:
        raise ConfigError("components: at least one component required")

    groups = []
    covered = set()
    for k, g in enumerate(_list(_require(data, "dependency_groups", ""), "dependency_groups")):
        path = f"dependency_groups[{k}]"
        gid = _require(g, "group_id", path)
        members = [_integer(v, f"{path}.members[{j}]") for j, v in enumerate(_list(_require(g, "members", path), f"{path}.members"))]
        if not members:
            raise ConfigError(f"{path}.members: empty group")
        for m in members:
            if not 0 <= m < n:
                raise ConfigError(f"{path}.members: component {m} does not exist")
        if len(set(members)) != len(members):
            raise ConfigError(f"{path}.members: duplicate member")
        effect = [_number(v, f"{path}.failure_effect[{j}]") for j, v in enumerate(_list(_require(g, "failure_effect", path), f"{path}.failure_effect"))]
        if len(effect) != len(members) + 1:
            raise ConfigError(f"{path}.failure_effect: expected {len(members) + 1} entries, got {len(effect)}")
        if effect[0] != 0.0:
            raise ConfigError(f"{path}.failure_effect[0]: must be 0")
        if any(not 0.0 <= f < 1.0 for f in effect):
            raise ConfigError(f"{path}.failure_effect: values must lie in [0, 1)")
        if any(b < a for a, b in zip(effect, effect[1:])):
            raise ConfigError(f"{path}.failure_effect: must be non-decreasing")
        covered.update(members)
        groups.append(DependencyGroup(gid, members, effect))
    missing = sorted(set(range(n)) - covered)
    if missing:
        raise ConfigError(f"dependency_groups: components {missing} belong to no group")

    inspect_cost = _number(_require(data, "global_inspect_cost", ""), "global_inspect_cost")
    if inspect_cost < 0:
        raise ConfigError("global_inspect_cost: must be >= 0")

    start = [_integer(v, f"start_health[{i}]") for i, v in enumerate(_list(_require(data, "start_health", ""), "start_health"))]
    if len(start) != n:
        raise ConfigError(f"start_health: expected {n} entries, got {len(start)}")
    for i, h in enumerate(start):
        if not 0 <= h < N_STATES:
            raise ConfigError(f"start_health[{i}]: health {h} outside 0..{N_STATES - 1}")

    belief_rows = _list(_require(data, "initial_belief", ""), "initial_belief")
    if len(belief_rows) != n:
        raise ConfigError(f"initial_belief: expected {n} rows, got {len(belief_rows)}")
    belief = []
    for i, row in enumerate(belief_rows):
        row = [_number(v, f"initial_belief[{i}][{j}]") for j, v in enumerate(_list(row, f"initial_belief[{i}]"))]
        if len(row) != N_STATES or any(v < 0 for v in row) or abs(math.fsum(row) - 1.0) > STOCHASTIC_TOL:
            raise ConfigError(f"initial_belief[{i}]: not a probability vector over {N_STATES} states")
        belief.append(tuple(row))

    return EnvironmentConfig(
        name=name,
        horizon=horizon,
        components=tuple(components),
        degradation_models=tuple(models),
        dependency_groups=tuple(groups),
        global_inspect_cost=inspect_cost,
        start_health=tuple(start),
        initial_belief=tuple(belief),
    )


def _components(groups: list[tuple[str, int, tuple[float, float]]]) -> list[dict]:
    out = []
    for gid, count, (repair, replace) in groups:
        for _ in range(count):
            out.append({"index": len(out), "group_id": gid, "cost_nothing": 0.0, "cost_repair": repair, "cost_replace": replace})
    return out


def _model(gid: str, start, end) -> dict:
    return {"group_id": gid, "tau_max": 50, "start": start, "end": end}


def _chain_groups(gid: str, members: list[int], size: int, effect: list[float], overlap: bool = False) -> list[dict]:
    step = 1 if overlap else size
    last = len(members) - size + 1
    return [
        {"group_id": f"{gid}_{k}", "members": members[i:i + size], "failure_effect": effect}
        for k, i in enumerate(range(0, last, step))
    ]


def preset_dict(name: str) -> dict[str, Any]:
    """Schema dictionary of a built-in environment (a fresh copy, safe to edit)."""
    return copy.deepcopy(_preset_dict(name))


def _preset_dict(name: str) -> dict[str, Any]:
    if name == "simple":
        n = 8
        return {
            "schema_version": SCHEMA_VERSION,
            "name": "simple",
            "horizon": 50,
            "components": _components([("component", n, (0.0125, 0.03125))]),
            "degradation_models": [_model("component", _SIMPLE_START_FIXED, SIMPLE_END)],
            "dependency_groups": _chain_groups("single", list(range(n)), 1, FLOOR_EFFECT),
            "global_inspect_cost": 0.02,
            "start_health": [0] * n,
            "initial_belief": [UNIFORM_BELIEF_ROW] * n,
        }
    if name == "quay":
        return {
            "schema_version": SCHEMA_VERSION,
            "name": "quay",
            "horizon": 50,
            "components": _components([("pole", 9, (0.011, 0.044)), ("kesp", 3, (0.003, 0.013)), ("floor", 1, (0.028, 0.113))]),
            "degradation_models": [
                _model("pole", POLE_START, POLE_END),
                _model("kesp", KESP_START, KESP_END),
                _model("floor", FLOOR_START, FLOOR_END),
            ],
            "dependency_groups": (
                _chain_groups("poles", list(range(0, 9)), 3, POLE_EFFECT)
                + _chain_groups("kesps", [9, 10, 11], 2, KESP_EFFECT, overlap=True)
                + _chain_groups("floor", [12], 1, FLOOR_EFFECT)
            ),
            "global_inspect_cost": 0.02,
            "start_health": [s - 1 for s in LISTED_START_QUAY],
            "initial_belief": [UNIFORM_BELIEF_ROW] * 13,
        }
    if name == "quay_large":
        return {
            "schema_version": SCHEMA_VERSION,
            "name": "quay_large",
            "horizon": 50,
            "components": _components([("pole", 18, (0.0055, 0.022)), ("kesp", 6, (0.0015, 0.0065)), ("floor", 2, (0.014, 0.0565))]),
            # the larger wall's floors are specified with the kesp matrices
            "degradation_models": [
                _model("pole", POLE_START, POLE_END),
                _model("kesp", KESP_START, KESP_END),
                _model("floor", KESP_START, KESP_END),
            ],
            "dependency_groups": (
                _chain_groups("poles", list(range(0, 18)), 3, POLE_EFFECT)
                + _chain_groups("kesps", list(range(18, 24)), 2, KESP_EFFECT, overlap=True)
                + _chain_groups("floor", [24, 25], 1, FLOOR_EFFECT)
            ),
            "global_inspect_cost": 0.02,
            "start_health": [s - 1 for s in LISTED_START_QUAY_LARGE],
            "initial_belief": [UNIFORM_BELIEF_ROW] * 26,
        }
    raise ConfigError(f"unknown environment {name!r}; valid presets: {', '.join(PRESETS)}")


def build_preset(name: str) -> EnvironmentConfig:
    return config_from_dict(preset_dict(name))


def load_config(path: str | Path) -> EnvironmentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: JSON parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(data)


def save_config(config: EnvironmentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


def resolve_env(spec: str) -> EnvironmentConfig:
    """Preset name or path to a JSON file."""
    if spec in PRESETS:
        return build_preset(spec)
    if Path(spec).suffix == ".json" or Path(spec).exists():
        return load_config(spec)
    raise ConfigError(f"unknown environment {spec!r}; valid presets: {', '.join(PRESETS)} (or a path to a JSON file)")
