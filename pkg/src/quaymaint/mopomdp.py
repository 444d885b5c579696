"""Multi-component maintenance MOPOMDP.

Components carry a hidden health level in ``0..4`` (4 = failed) and an
age-like degradation rate ``tau``. Each year the agent picks one action per
component (nothing / repair / replace) plus a global action (nothing /
inspect). The reward is the 2-vector ``(-cost, ln(1 - risk))``.

All array functions accept arbitrary leading batch dimensions, so the same
code drives a single environment and thousands of lock-stepped evaluation
episodes.

Within one year the order is: actions, degradation, collapse risk, reward,
observation, belief update. ``tau`` used for the degradation lookup is the
value at the start of the year; it is incremented afterwards, or reset to 0
when the component was replaced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Sequence

import numpy as np

N_STATES = 5
FAILED = N_STATES - 1
# coarse observation codes emitted when nothing reveals the state
COARSE_GOOD = 0
COARSE_BAD = FAILED


class ComponentAction(IntEnum):
    NOTHING = 0
    REPAIR = 1
    REPLACE = 2


class GlobalAction(IntEnum):
    NOTHING = 0
    INSPECT = 1


class BeliefInconsistencyError(ValueError):
    """An observation has zero probability under the propagated belief."""


class EpisodeDoneError(RuntimeError):
    pass


def _matrix(rows) -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(float(v) for v in row) for row in rows)


@dataclass(frozen=True)
class DegradationModel:
    """Start/end transition matrices of one component group."""

    group_id: str
    start: tuple[tuple[float, ...], ...]
    end: tuple[tuple[float, ...], ...]
    tau_max: int = 50

    def __post_init__(self):
        object.__setattr__(self, "start", _matrix(self.start))
        object.__setattr__(self, "end", _matrix(self.end))

    @cached_property
    def table(self) -> np.ndarray:
        """All interpolated matrices, shape ``(tau_max, 5, 5)``."""
        return np.stack([interpolate_degradation(self, t) for t in range(self.tau_max)])


@dataclass(frozen=True)
class ComponentSpec:
    index: int
    group_id: str
    cost_nothing: float = 0.0
    cost_repair: float = 0.0
    cost_replace: float = 0.0

    @property
    def costs(self) -> tuple[float, float, float]:
        return (self.cost_nothing, self.cost_repair, self.cost_replace)


@dataclass(frozen=True)
class DependencyGroup:
    """Components whose joint failures raise the collapse probability.

    ``failure_effect[k]`` is the collapse probability contributed when ``k``
    members are failed.
    """

    group_id: str
    members: tuple[int, ...]
    failure_effect: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(int(m) for m in self.members))
        object.__setattr__(self, "failure_effect", tuple(float(f) for f in self.failure_effect))


@dataclass
class AssetState:
    health: np.ndarray
    tau: np.ndarray

    def copy(self) -> "AssetState":
        return AssetState(self.health.copy(), self.tau.copy())


@dataclass
class ActionVector:
    component_actions: np.ndarray
    global_action: np.ndarray | int = 0

    @classmethod
    def nothing(cls, n_components: int) -> "ActionVector":
        return cls(np.zeros(n_components, dtype=np.int64), 0)


@dataclass
class BeliefState:
    belief: np.ndarray
    tau: np.ndarray
    timestep: int = 0

    def copy(self) -> "BeliefState":
        return BeliefState(self.belief.copy(), self.tau.copy(), self.timestep)


def interpolate_degradation(model: DegradationModel, tau: int) -> np.ndarray:
    """Transition matrix for degradation rate ``tau``.

    Linear blend between the start matrix (``tau = 0``) and the end matrix
    (``tau = tau_max - 1``). Written as a convex combination so both
    endpoints are reproduced bit-exactly.
    """
    if not 0 <= tau <= model.tau_max - 1:
        raise ValueError(f"tau={tau} outside [0, {model.tau_max - 1}] for group {model.group_id!r}")
    w = tau / (model.tau_max - 1)
    return (1.0 - w) * np.asarray(model.start) + w * np.asarray(model.end)


class Asset:
    """Array form of an asset description, shared by all simulation paths."""

    def __init__(
        self,
        components: Sequence[ComponentSpec],
        degradation_models: Sequence[DegradationModel],
        dependency_groups: Sequence[DependencyGroup],
        global_inspect_cost: float,
    ):
        self.components = tuple(components)
        self.degradation_models = tuple(degradation_models)
        self.dependency_groups = tuple(dependency_groups)
        self.global_inspect_cost = float(global_inspect_cost)
        self.n_components = len(self.components)

        model_index = {m.group_id: i for i, m in enumerate(self.degradation_models)}
        taus = {m.tau_max for m in self.degradation_models}
        if len(taus) != 1:
            raise ValueError(f"all degradation models must share tau_max, got {sorted(taus)}")
        self.tau_max = taus.pop()
        self.group_index = np.array([model_index[c.group_id] for c in self.components], dtype=np.int64)
        self.tables = np.stack([m.table for m in self.degradation_models])
        self.costs = np.array([c.costs for c in self.components], dtype=np.float64)

        n_dep = len(self.dependency_groups)
        width = max(len(g.failure_effect) for g in self.dependency_groups)
        self.membership = np.zeros((n_dep, self.n_components), dtype=np.int64)
        # pad with the last entry so an out-of-range count can never read a zero
        self.effect_table = np.zeros((n_dep, width))
        for k, g in enumerate(self.dependency_groups):
            self.membership[k, list(g.members)] = 1
            eff = list(g.failure_effect) + [g.failure_effect[-1]] * (width - len(g.failure_effect))
            self.effect_table[k] = eff

    def transition_matrices(self, tau: np.ndarray) -> np.ndarray:
        """Per-component matrices for the given rates, shape ``(..., N, 5, 5)``."""
        lookup = np.minimum(tau, self.tau_max - 1)
        return self.tables[self.group_index, lookup]


def apply_actions(asset: Asset, state: AssetState, actions: ActionVector) -> tuple[AssetState, np.ndarray]:
    """Deterministic maintenance effect and the year's total cost."""
    a = np.asarray(actions.component_actions)
    h = state.health
    health = np.where(
        a == ComponentAction.REPAIR,
        np.maximum(h - 1, 0),
        np.where(a == ComponentAction.REPLACE, 0, h),
    )
    comp_cost = np.take_along_axis(
        np.broadcast_to(asset.costs, a.shape + (3,)), a[..., None], axis=-1
    )[..., 0].sum(axis=-1)
    cost = comp_cost + asset.global_inspect_cost * (np.asarray(actions.global_action) == GlobalAction.INSPECT)
    return AssetState(health, state.tau.copy()), cost


def sample_rows(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sample one state per row of ``rows`` using uniforms ``u``."""
    cdf = np.cumsum(rows, axis=-1)
    return np.minimum((cdf <= u[..., None]).sum(axis=-1), FAILED)


def degrade(
    asset: Asset,
    state: AssetState,
    u: np.ndarray | np.random.Generator,
    replaced: np.ndarray | None = None,
) -> AssetState:
    """Sample next health levels and advance the degradation rates.

    ``u`` is either a generator (one uniform drawn per component) or a
    pre-drawn array of uniforms shaped like ``state.health``.
    """
    if isinstance(u, np.random.Generator):
        u = u.random(state.health.shape)
    rows = np.take_along_axis(
        asset.transition_matrices(state.tau), state.health[..., None, None], axis=-2
    )[..., 0, :]
    health = sample_rows(rows, u)
    tau = np.minimum(state.tau + 1, asset.tau_max)
    if replaced is not None:
        tau = np.where(replaced, 0, tau)
    return AssetState(health, tau)


def revealed_mask(actions: ActionVector) -> np.ndarray:
    a = np.asarray(actions.component_actions)
    inspect = np.asarray(actions.global_action) == GlobalAction.INSPECT
    return (a != ComponentAction.NOTHING) | inspect[..., None]


def coarse(health: np.ndarray) -> np.ndarray:
    return np.where(health <= 1, COARSE_GOOD, COARSE_BAD)


def observe(state: AssetState, actions: ActionVector) -> np.ndarray:
    """True health where revealed, the binary good/bad code elsewhere."""
    return np.where(revealed_mask(actions), state.health, coarse(state.health))


def collapse_probability(asset: Asset, health: np.ndarray) -> np.ndarray:
    """``1 - prod_groups (1 - F(failed members))``."""
    failed = (np.asarray(health) == FAILED).astype(np.int64)
    counts = failed @ asset.membership.T
    counts = np.minimum(counts, asset.effect_table.shape[1] - 1)
    effect = np.take_along_axis(
        np.broadcast_to(asset.effect_table, counts.shape + asset.effect_table.shape[-1:]),
        counts[..., None],
        axis=-1,
    )[..., 0]
    return 1.0 - np.prod(1.0 - effect, axis=-1)


def make_reward(total_cost, risk) -> np.ndarray:
    """Reward vector ``(-cost, ln(1 - risk))`` stacked on the last axis."""
    risk = np.asarray(risk, dtype=np.float64)
    if np.any(risk >= 1.0):
        raise ValueError("collapse risk must be < 1 for a finite log-survival reward")
    return np.stack([-np.asarray(total_cost, dtype=np.float64), np.log1p(-risk)], axis=-1)


def _apply_action_to_belief(belief: np.ndarray, a: np.ndarray) -> np.ndarray:
    shifted = np.zeros_like(belief)
    shifted[..., 0] = belief[..., 0] + belief[..., 1]
    shifted[..., 1:FAILED] = belief[..., 2:]
    renewed = np.zeros_like(belief)
    renewed[..., 0] = 1.0
    out = np.where((a == ComponentAction.REPAIR)[..., None], shifted, belief)
    return np.where((a == ComponentAction.REPLACE)[..., None], renewed, out)


def observation_likelihood(obs: np.ndarray, revealed: np.ndarray) -> np.ndarray:
    """``P(obs | state)`` for every state, shape ``obs.shape + (5,)``."""
    states = np.arange(N_STATES)
    exact = (states == obs[..., None]).astype(np.float64)
    coarse_lik = (coarse(states) == obs[..., None]).astype(np.float64)
    return np.where(revealed[..., None], exact, coarse_lik)


def belief_update(
    asset: Asset,
    belief: BeliefState,
    actions: ActionVector,
    observation: np.ndarray,
) -> BeliefState:
    """Bayes filter step: action effect, degradation, observation, normalise."""
    a = np.asarray(actions.component_actions)
    b = _apply_action_to_belief(belief.belief, a)
    b = np.matmul(b[..., None, :], asset.transition_matrices(belief.tau))[..., 0, :]
    b = b * observation_likelihood(np.asarray(observation), revealed_mask(actions))
    z = b.sum(axis=-1, keepdims=True)
    if np.any(z <= 0.0):
        raise BeliefInconsistencyError("observation impossible under the current belief")
    tau = np.minimum(belief.tau + 1, asset.tau_max)
    tau = np.where(a == ComponentAction.REPLACE, 0, tau)
    return BeliefState(b / z, tau, belief.timestep + 1)


@dataclass
class StepResult:
    observation: np.ndarray
    reward: np.ndarray
    belief: BeliefState | None
    done: bool
    cost: float = 0.0
    risk: float = 0.0
    state: AssetState | None = field(default=None, repr=False)


class MaintenanceEnv:
    """Single-episode simulator.

    Degradation draws ``rng.random(N)`` once per year, so a trajectory is
    identical to a lock-stepped batch fed with ``rng.random((H, N))``.
    """

    def __init__(
        self,
        asset: Asset,
        horizon: int,
        start_health: Sequence[int],
        initial_belief: np.ndarray,
        track_belief: bool = True,
    ):
        self.asset = asset
        self.horizon = int(horizon)
        self.start_health = np.asarray(start_health, dtype=np.int64)
        self.initial_belief = np.asarray(initial_belief, dtype=np.float64)
        self.track_belief = track_belief
        self.rng: np.random.Generator | None = None
        self.state: AssetState | None = None
        self.belief: BeliefState | None = None
        self.t = 0

    @property
    def n_components(self) -> int:
        return self.asset.n_components

    @property
    def done(self) -> bool:
        return self.t >= self.horizon

    def reset(self, rng: np.random.Generator) -> tuple[np.ndarray, BeliefState]:
        """Start an episode; returns the free coarse observation of ``s_0`` and ``b_0``."""
        self.rng = rng
        self.t = 0
        zeros = np.zeros(self.n_components, dtype=np.int64)
        self.state = AssetState(self.start_health.copy(), zeros)
        self.belief = BeliefState(self.initial_belief.copy(), zeros.copy(), 0)
        return coarse(self.state.health), self.belief

    def step(self, actions: ActionVector) -> StepResult:
        if self.state is None:
            raise EpisodeDoneError("call reset() before step()")
        if self.done:
            raise EpisodeDoneError("episode finished; call reset()")
        a = np.asarray(actions.component_actions, dtype=np.int64)
        if a.shape != (self.n_components,):
            raise ValueError(f"expected {self.n_components} component actions, got shape {a.shape}")
        acted, cost = apply_actions(self.asset, self.state, actions)
        nxt = degrade(self.asset, acted, self.rng.random(self.n_components), a == ComponentAction.REPLACE)
        risk = collapse_probability(self.asset, nxt.health)
        reward = make_reward(cost, risk)
        obs = observe(nxt, actions)
        if self.track_belief:
            self.belief = belief_update(self.asset, self.belief, actions, obs)
        self.state = nxt
        self.t += 1
        return StepResult(obs, reward, self.belief, self.done, float(cost), float(risk), nxt)
