"""Monte-Carlo policy evaluation.

Episodes run in lock-step batches. Episode ``k`` draws its degradation
uniforms from ``rng.generator(seed, EVAL_ENV, k)`` and its policy uniforms from
``rng.generator(seed, EVAL_POLICY, k)``, so results do not depend on batch
size, worker count or execution order. Episodes are always grouped into the
same fixed chunks, so serial and parallel runs execute identical arithmetic.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import rng as rngmod
from .environments import EnvironmentConfig
from .mopomdp import (
    ActionVector,
    AssetState,
    BeliefState,
    ComponentAction,
    apply_actions,
    belief_update,
    coarse,
    collapse_probability,
    degrade,
    make_reward,
    observe,
)
from .utilities import UtilityFunction

CHUNK = 250
THREADS_ENV = "QUAYMAINT_THREADS"


@dataclass
class PolicyView:
    """What a policy may look at before acting in year ``t``."""

    t: int
    horizon: int
    observation: np.ndarray
    belief: np.ndarray | None
    tau: np.ndarray
    accrued: np.ndarray
    uniforms: np.ndarray | None


class Controller(Protocol):
    def act(self, view: PolicyView) -> tuple[np.ndarray, np.ndarray]: ...


class Policy(Protocol):
    name: str
    needs_belief: bool
    uniforms_per_step: int

    def controller(self, n_episodes: int, n_components: int) -> Controller: ...


@dataclass
class EpisodeBatch:
    discounted: np.ndarray
    raw: np.ndarray


def rollout(
    config: EnvironmentConfig,
    policy: Policy,
    episode_ids: Sequence[int],
    seed: int,
    gamma: float,
) -> EpisodeBatch:
    """Simulate the given episodes; returns discounted and raw vector returns."""
    asset = config.asset
    E, N, H = len(episode_ids), config.n_components, config.horizon
    env_u = np.stack([rngmod.generator(seed, rngmod.EVAL_ENV, k).random((H, N)) for k in episode_ids])
    k_pol = policy.uniforms_per_step
    pol_u = None
    if k_pol:
        pol_u = np.stack([rngmod.generator(seed, rngmod.EVAL_POLICY, k).random((H, k_pol)) for k in episode_ids])

    start = np.tile(np.asarray(config.start_health, dtype=np.int64), (E, 1))
    state = AssetState(start, np.zeros((E, N), dtype=np.int64))
    belief = None
    if policy.needs_belief:
        belief = BeliefState(np.tile(np.array(config.initial_belief), (E, 1, 1)), state.tau.copy(), 0)
    obs = coarse(start)
    discounted = np.zeros((E, 2))
    raw = np.zeros((E, 2))
    ctrl = policy.controller(E, N)
    for t in range(H):
        view = PolicyView(
            t, H, obs, None if belief is None else belief.belief, state.tau, discounted,
            None if pol_u is None else pol_u[:, t],
        )
        comp, glob = ctrl.act(view)
        actions = ActionVector(comp, glob)
        acted, cost = apply_actions(asset, state, actions)
        nxt = degrade(asset, acted, env_u[:, t], comp == ComponentAction.REPLACE)
        reward = make_reward(cost, collapse_probability(asset, nxt.health))
        obs = observe(nxt, actions)
        if belief is not None:
            belief = belief_update(asset, belief, actions, obs)
        discounted = discounted + gamma**t * reward
        raw = raw + reward
        state = nxt
    return EpisodeBatch(discounted, raw)


def _round9(x: np.ndarray) -> np.ndarray:
    return np.array([float(f"{v:.9g}") for v in np.asarray(x, dtype=np.float64)])


FIELDS = ("utility", "score", "cost_discounted", "cost_raw", "prisk", "prisk_raw")


@dataclass
class EvaluationReport:
    """Per-episode metrics, stored at the 9 significant digits written to CSV.

    ``prisk`` derives from the discounted log-survival return (the utility's
    input), ``prisk_raw`` from the undiscounted one.
    """

    policy_id: str
    episode_ids: np.ndarray
    utility: np.ndarray
    cost_discounted: np.ndarray
    cost_raw: np.ndarray
    prisk: np.ndarray
    prisk_raw: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_returns(cls, policy_id, episode_ids, batch: EpisodeBatch, utility: UtilityFunction, meta=None):
        return cls(
            policy_id=policy_id,
            episode_ids=np.asarray(episode_ids),
            utility=_round9(utility(batch.discounted)),
            cost_discounted=_round9(-batch.discounted[:, 0]),
            cost_raw=_round9(-batch.raw[:, 0]),
            prisk=_round9(-np.expm1(batch.discounted[:, 1])),
            prisk_raw=_round9(-np.expm1(batch.raw[:, 1])),
            meta=dict(meta or {}),
        )

    @property
    def episodes(self) -> int:
        return len(self.episode_ids)

    @property
    def score(self) -> np.ndarray:
        return -self.utility

    def column(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def mean(self, name: str) -> float:
        return float(np.mean(self.column(name)))

    def std(self, name: str) -> float:
        return _std(self.column(name))

    def stderr(self, name: str) -> float:
        return _std(self.column(name), ddof=1) / np.sqrt(self.episodes)

    def summary(self) -> dict[str, float]:
        out = {"episodes": self.episodes}
        for f in FIELDS:
            out[f"{f}_mean"] = self.mean(f)
            out[f"{f}_std"] = self.std(f)
        return out

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("row", "policy", "episode") + FIELDS)
        cols = [self.column(f) for f in FIELDS]
        for i, k in enumerate(self.episode_ids):
            w.writerow(("episode", self.policy_id, int(k)) + tuple(fmt(c[i]) for c in cols))
        w.writerow(("mean", self.policy_id, "") + tuple(fmt(self.mean(f)) for f in FIELDS))
        w.writerow(("std", self.policy_id, "") + tuple(fmt(self.std(f)) for f in FIELDS))
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.csv_text())


def _std(x: np.ndarray, ddof: int = 0) -> float:
    # shifting by a sample keeps a constant column at exactly zero
    x = np.asarray(x, dtype=np.float64)
    return float(np.std(x - x[0], ddof=ddof))


def fmt(x) -> str:
    """Float formatting used by every CSV this package writes."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def read_report_csv(path: str | Path) -> dict[str, list[dict]]:
    rows = {"episode": [], "mean": [], "std": []}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows[r["row"]].append(r)
    return rows


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        n = requested
    else:
        n = os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        n = min(n, int(cap))
    return max(1, n)


def _run_chunk(args):
    config, policy, ids, seed, gamma = args
    return rollout(config, policy, ids, seed, gamma)


def run_episodes(
    config: EnvironmentConfig,
    policy: Policy,
    episodes: int,
    seed: int,
    gamma: float,
    workers: int | None = 1,
    first_episode: int = 0,
) -> tuple[np.ndarray, EpisodeBatch]:
    ids = np.arange(first_episode, first_episode + episodes)
    chunks = [ids[i:i + CHUNK] for i in range(0, len(ids), CHUNK)]
    jobs = [(config, policy, c, seed, gamma) for c in chunks]
    n = min(worker_count(workers), len(chunks))
    if n <= 1:
        parts = [_run_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    batch = EpisodeBatch(
        np.concatenate([p.discounted for p in parts]),
        np.concatenate([p.raw for p in parts]),
    )
    return ids, batch


def evaluate_policy(
    config: EnvironmentConfig,
    policy: Policy,
    utility: UtilityFunction,
    gamma: float,
    episodes: int = 5000,
    seed: int = 0,
    workers: int | None = 1,
) -> EvaluationReport:
    """Evaluate ``policy`` over ``episodes`` Monte-Carlo episodes."""
    if episodes <= 0:
        raise ValueError("episodes must be positive")
    ids, batch = run_episodes(config, policy, episodes, seed, gamma, workers)
    meta = {"env": config.name, "utility": utility.describe(), "gamma": gamma, "seed": seed}
    return EvaluationReport.from_returns(policy.name, ids, batch, utility, meta)
