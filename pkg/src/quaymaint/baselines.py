"""Rule-based maintenance policies and their grid-search tuning.

* YBA (year-based action): repair or replace every component every
  ``interval`` years, at ``t = interval, 2 * interval, ...``; never inspects.
* YBI-CBA (year-based inspection): inspect at ``t = interval, 2 * interval,
  ...``; the following year apply the condition-based action to every
  component.
* CBI-CBA (condition-based inspection): inspect once the share of components
  whose latest observation is "bad" (one of the three worst states) reaches
  ``fraction``; the following year apply the condition-based action.

The condition-based action maps the revealed state to
nothing (0), repair (1, 2) or replace (3, 4).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .environments import EnvironmentConfig
from .evaluation import PolicyView, fmt, run_episodes, EvaluationReport
from .mopomdp import ComponentAction, GlobalAction
from .utilities import UtilityFunction

KINDS = ("yba_repair", "yba_replace", "ybi_cba", "cbi_cba")

_CBA = np.array(
    [
        ComponentAction.NOTHING,
        ComponentAction.REPAIR,
        ComponentAction.REPAIR,
        ComponentAction.REPLACE,
        ComponentAction.REPLACE,
    ],
    dtype=np.int64,
)


def cba_action(observed_state):
    """Condition-based action for an exactly known health state."""
    out = _CBA[np.asarray(observed_state)]
    return int(out) if out.ndim == 0 else out


def bad_fraction(observation: np.ndarray) -> np.ndarray:
    """Share of components observed in one of the three worst states."""
    return (np.asarray(observation) >= 2).mean(axis=-1)


@dataclass(frozen=True)
class BaselinePolicy:
    kind: str
    interval: int | None = None
    fraction: float | None = None

    needs_belief = False
    uniforms_per_step = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown baseline {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.kind == "cbi_cba":
            if self.fraction is None or not 0.0 < self.fraction <= 1.0:
                raise ValueError(f"cbi_cba needs fraction in (0, 1], got {self.fraction}")
        elif self.interval is None or self.interval < 1:
            raise ValueError(f"{self.kind} needs interval >= 1, got {self.interval}")

    @property
    def parameter(self) -> float:
        return self.fraction if self.kind == "cbi_cba" else self.interval

    @property
    def name(self) -> str:
        if self.kind == "cbi_cba":
            return f"cbi_cba(fraction={self.fraction:g})"
        return f"{self.kind}(interval={self.interval})"

    def with_parameter(self, value) -> "BaselinePolicy":
        if self.kind == "cbi_cba":
            return replace(self, fraction=float(value))
        return replace(self, interval=int(value))

    def controller(self, n_episodes: int, n_components: int) -> "BaselineController":
        return BaselineController(self, n_episodes, n_components)


class BaselineController:
    def __init__(self, policy: BaselinePolicy, n_episodes: int, n_components: int):
        self.policy = policy
        self.n_components = n_components
        self.inspected_last = np.zeros(n_episodes, dtype=bool)

    def act(self, view: PolicyView) -> tuple[np.ndarray, np.ndarray]:
        p, t = self.policy, view.t
        E = self.inspected_last.shape[0]
        comp = np.zeros((E, self.n_components), dtype=np.int64)
        glob = np.zeros(E, dtype=np.int64)
        if p.kind in ("yba_repair", "yba_replace"):
            if t > 0 and t % p.interval == 0:
                comp[:] = ComponentAction.REPAIR if p.kind == "yba_repair" else ComponentAction.REPLACE
            return comp, glob

        acting = self.inspected_last
        comp[acting] = cba_action(view.observation[acting])
        if p.kind == "ybi_cba":
            inspect = np.full(E, t > 0 and t % p.interval == 0)
        else:
            # the year after an inspection is spent acting on it
            inspect = ~acting & (bad_fraction(view.observation) >= p.fraction - 1e-12)
        glob[inspect] = GlobalAction.INSPECT
        self.inspected_last = inspect
        return comp, glob


@dataclass(frozen=True)
class NothingPolicy:
    name: str = "nothing"
    needs_belief = False
    uniforms_per_step = 0

    def controller(self, n_episodes, n_components):
        return _Nothing(n_episodes, n_components)


class _Nothing:
    def __init__(self, e, n):
        self.shape = (e, n)

    def act(self, view):
        return np.zeros(self.shape, dtype=np.int64), np.zeros(self.shape[0], dtype=np.int64)


@dataclass(frozen=True)
class RandomPolicy:
    """Uniformly random action on every head."""

    n_components: int
    name: str = "random"
    needs_belief = False

    @property
    def uniforms_per_step(self) -> int:
        return self.n_components + 1

    def controller(self, n_episodes, n_components):
        return _Random()


class _Random:
    def act(self, view):
        u = view.uniforms
        comp = np.minimum((u[:, :-1] * 3).astype(np.int64), 2)
        glob = (u[:, -1] >= 0.5).astype(np.int64)
        return comp, glob


DEFAULT_INTERVALS = tuple(range(1, 26))
DEFAULT_FRACTIONS = tuple(round(0.1 * k, 1) for k in range(1, 11))


def default_grid(kind: str) -> tuple:
    return DEFAULT_FRACTIONS if kind == "cbi_cba" else DEFAULT_INTERVALS


@dataclass
class GridPoint:
    policy: BaselinePolicy
    mean_utility: float
    std_utility: float
    mean_cost: float
    mean_prisk: float


@dataclass
class GridResult:
    best: BaselinePolicy
    points: list[GridPoint]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("policy", "parameter", "mean_utility", "std_utility", "mean_cost", "mean_prisk", "selected"))
        for pt in self.points:
            w.writerow((
                pt.policy.kind, fmt(pt.policy.parameter), fmt(pt.mean_utility), fmt(pt.std_utility),
                fmt(pt.mean_cost), fmt(pt.mean_prisk), int(pt.policy == self.best),
            ))
        return buf.getvalue()


def grid_search(
    kind: str,
    config: EnvironmentConfig,
    utility: UtilityFunction,
    gamma: float,
    grid: Iterable | None = None,
    episodes_per_point: int = 500,
    seed: int = 0,
    workers: int | None = 1,
) -> GridResult:
    """Pick the grid point with the highest mean utility.

    Every point sees the same episode seeds (common random numbers). Ties go
    to the lower mean cost, then to the lower parameter value.
    """
    grid = list(default_grid(kind) if grid is None else grid)
    if not grid:
        raise ValueError("empty grid")
    template = BaselinePolicy(kind, interval=1, fraction=1.0)
    points = []
    for value in grid:
        policy = template.with_parameter(value)
        ids, batch = run_episodes(config, policy, episodes_per_point, seed, gamma, workers)
        rep = EvaluationReport.from_returns(policy.name, ids, batch, utility)
        points.append(GridPoint(policy, rep.mean("utility"), rep.std("utility"), rep.mean("cost_discounted"), rep.mean("prisk")))
    best = min(points, key=lambda p: (-p.mean_utility, p.mean_cost, p.policy.parameter))
    return GridResult(best.policy, points)


def make_baseline(kind: str, parameter: float | None = None, n_components: int | None = None):
    """Policy from a CLI-style name: a baseline kind, ``nothing`` or ``random``."""
    if kind == "nothing":
        return NothingPolicy()
    if kind == "random":
        return RandomPolicy(n_components)
    if kind == "cbi_cba":
        return BaselinePolicy(kind, fraction=parameter)
    return BaselinePolicy(kind, interval=None if parameter is None else int(parameter))
