"""Multi-objective distributional actor-critic (MO-DCMAC).

The critic predicts a categorical distribution over a Cartesian grid of
vector returns. The actor is trained with a utility-aware advantage: the
expected utility of the accrued return plus the bootstrapped future return,
minus the same quantity before the step. Both expectations are taken over
the critic's atoms, so the optimised quantity is the expected utility of the
whole-episode return rather than the utility of an expected return.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import rng as rngmod
from .autodiff import Tensor, gather
from .environments import EnvironmentConfig
from .evaluation import PolicyView, fmt
from .mopomdp import ActionVector
from .nn import (
    ActorNetwork,
    Adam,
    AdamConfig,
    CriticNetwork,
    assign_weights,
    input_dim,
    load_weights,
    save_weights,
)
from .utilities import UtilityFunction

LOG_FIELDS = (
    "global_step", "episode", "mean_utility", "mean_cost", "mean_Prisk",
    "actor_loss", "critic_loss", "entropy", "lr_actor", "lr_critic",
)
EVAL_FIELDS = ("global_step", "mean_utility", "std_utility", "mean_cost", "mean_Prisk")


@dataclass(frozen=True)
class AtomGrid:
    """Full Cartesian grid of return atoms; atom ``(i, j)`` has flat index ``i * n_atoms + j``."""

    v_min: tuple[float, ...]
    v_max: tuple[float, ...]
    n_atoms: int = 11

    def __post_init__(self):
        object.__setattr__(self, "v_min", tuple(float(v) for v in self.v_min))
        object.__setattr__(self, "v_max", tuple(float(v) for v in self.v_max))
        if len(self.v_min) != len(self.v_max) or not self.v_min:
            raise ValueError("v_min and v_max must be non-empty and of equal length")
        if any(lo >= hi for lo, hi in zip(self.v_min, self.v_max)):
            raise ValueError(f"need v_min < v_max in every dimension, got {self.v_min} / {self.v_max}")
        if self.n_atoms < 2:
            raise ValueError("n_atoms must be at least 2")
        lo, hi = np.array(self.v_min), np.array(self.v_max)
        axes = [np.linspace(a, b, self.n_atoms) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        object.__setattr__(self, "_atoms", np.stack([m.reshape(-1) for m in mesh], axis=-1))
        object.__setattr__(self, "_delta", (hi - lo) / (self.n_atoms - 1))

    @property
    def d(self) -> int:
        return len(self.v_min)

    @property
    def size(self) -> int:
        return self.n_atoms**self.d

    @property
    def atoms(self) -> np.ndarray:
        return self._atoms

    @property
    def delta(self) -> np.ndarray:
        return self._delta

    def flat_index(self, *idx: int) -> int:
        out = 0
        for i in idx:
            out = out * self.n_atoms + int(i)
        return out

    def atom(self, *idx: int) -> np.ndarray:
        return self.atoms[self.flat_index(*idx)]


def preference_scores(
    Z: np.ndarray,
    accrued: np.ndarray,
    grid: AtomGrid,
    utility: Callable[[np.ndarray], np.ndarray],
    gamma_power: np.ndarray,
    reward: np.ndarray | None = None,
    gamma: float | None = None,
) -> np.ndarray:
    """Expected utility of the episode return under the critic distribution, batched.

    Without ``reward`` this is ``sum_i u(accrued + g_t z_i) Z_i``; with it,
    ``sum_i u(accrued + g_t (r + gamma z_i)) Z_i``. ``Z`` is ``(B, K)``,
    ``accrued`` and ``reward`` ``(B, d)``, ``gamma_power`` ``(B,)``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    acc = np.asarray(accrued, dtype=np.float64)[:, None, :]
    gp = np.asarray(gamma_power, dtype=np.float64)[:, None, None]
    z = grid.atoms[None]
    if reward is None:
        returns = acc + gp * z
    else:
        returns = acc + gp * (np.asarray(reward, dtype=np.float64)[:, None, :] + gamma * z)
    return np.sum(utility(returns) * Z, axis=-1)


def preference_score(Z, accrued, grid, utility, gamma_power, reward=None, gamma=None) -> float:
    """Single-record form of :func:`preference_scores`."""
    r = None if reward is None else np.asarray(reward, dtype=np.float64)[None]
    return float(preference_scores(
        np.asarray(Z)[None], np.asarray(accrued, dtype=np.float64)[None], grid, utility,
        np.array([gamma_power]), r, gamma,
    )[0])


def raw_advantages(Z_next, Z_curr, accrued, reward, t, done, grid, utility, gamma) -> np.ndarray:
    """Next-state preference minus current-state preference.

    Terminal records use ``u(accrued + gamma^t r)`` for the first term.
    """
    gp = gamma ** np.asarray(t, dtype=np.float64)
    accrued = np.asarray(accrued, dtype=np.float64)
    reward = np.asarray(reward, dtype=np.float64)
    done = np.asarray(done, dtype=bool)
    nxt = preference_scores(Z_next, accrued, grid, utility, gp, reward, gamma)
    terminal = utility(accrued + gp[:, None] * reward)
    nxt = np.where(done, terminal, nxt)
    return nxt - preference_scores(Z_curr, accrued, grid, utility, gp)


def normalize_advantages(a) -> np.ndarray:
    """Z-score with the population std; a constant batch maps to zeros."""
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0 or np.ptp(a) == 0.0:
        return np.zeros_like(a)
    centred = a - a.mean()
    return centred / np.sqrt(np.mean(centred * centred))


def project_batch(reward, Z_next, grid: AtomGrid, gamma: float, done) -> np.ndarray:
    """Project ``r + gamma z`` (or ``r`` when done) back onto the grid.

    Each shifted atom is clipped into the grid bounds and its mass is split
    over the ``2^d`` surrounding atoms with multilinear weights.
    """
    reward = np.asarray(reward, dtype=np.float64)
    Z_next = np.asarray(Z_next, dtype=np.float64)
    done = np.asarray(done, dtype=bool)
    B, K = Z_next.shape
    n, d = grid.n_atoms, grid.d
    lo, hi = np.array(grid.v_min), np.array(grid.v_max)
    scale = np.where(done, 0.0, gamma)[:, None, None]
    tz = np.clip(reward[:, None, :] + scale * grid.atoms[None], lo, hi)
    b = np.clip((tz - lo) / grid.delta, 0.0, n - 1)
    lower = np.minimum(np.floor(b).astype(np.int64), n - 2)
    frac = b - lower
    out = np.zeros(B * K)
    offset = (np.arange(B) * K)[:, None]
    for corner in range(2**d):
        flat = np.zeros((B, K), dtype=np.int64)
        w = Z_next.copy()
        for k in range(d):
            up = (corner >> (d - 1 - k)) & 1
            flat = flat * n + lower[..., k] + up
            w = w * (frac[..., k] if up else 1.0 - frac[..., k])
        out += np.bincount((flat + offset).reshape(-1), weights=w.reshape(-1), minlength=B * K)
    return out.reshape(B, K)


def project(reward, Z_next, grid: AtomGrid, gamma: float, done: bool = False) -> np.ndarray:
    return project_batch(np.asarray(reward, dtype=np.float64)[None], np.asarray(Z_next)[None], grid, gamma, [done])[0]


def critic_loss(log_z: Tensor, target: np.ndarray) -> Tensor:
    """Batch-mean cross-entropy ``-sum_i target_i log Z_i``."""
    return -(log_z * np.asarray(target)).sum(axis=-1).mean()


def taken_log_prob(log_comp: Tensor, log_glob: Tensor, comp_actions, glob_actions) -> Tensor:
    """Joint log-probability of the taken actions over all heads, per record."""
    ca = np.asarray(comp_actions, dtype=np.int64)[..., None]
    ga = np.asarray(glob_actions, dtype=np.int64)[:, None]
    return gather(log_comp, ca, -1).sum(axis=(1, 2)) + gather(log_glob, ga, -1).sum(axis=1)


def actor_loss(log_prob_taken: Tensor, advantages) -> Tensor:
    return -(log_prob_taken * np.asarray(advantages, dtype=np.float64)).mean()


def policy_entropy(log_comp: Tensor, log_glob: Tensor) -> Tensor:
    """Entropy summed over all heads, averaged over the batch."""
    hc = -(log_comp.exp() * log_comp).sum(axis=(1, 2))
    hg = -(log_glob.exp() * log_glob).sum(axis=1)
    return (hc + hg).mean()


def sample_categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row of ``probs`` from uniforms ``u``."""
    cdf = np.cumsum(probs, axis=-1)
    k = (cdf <= np.asarray(u)[..., None]).sum(axis=-1)
    return np.minimum(k, probs.shape[-1] - 1)


def build_inputs(belief, tau, t, horizon, tau_max, accrued, return_scale, include_tau=True) -> np.ndarray:
    """Network input rows ``(E, D)``: belief, tau / tau_max, t / H and scaled accrued return."""
    belief = np.asarray(belief, dtype=np.float64)
    E = belief.shape[0]
    parts = [belief.reshape(E, -1)]
    if include_tau:
        parts.append(np.asarray(tau, dtype=np.float64).reshape(E, -1) / tau_max)
    parts.append(np.broadcast_to(np.asarray(t, dtype=np.float64) / horizon, (E,))[:, None])
    parts.append(np.asarray(accrued, dtype=np.float64).reshape(E, -1) / return_scale)
    return np.concatenate(parts, axis=1)


UTILITY_DEFAULTS = {
    "threshold": {"gamma": 0.995, "v_min": (-12.0, -0.1), "v_max": (0.0, 0.0)},
    "fmeca": {"gamma": 0.975, "v_min": (-4.0, -0.02), "v_max": (0.0, 0.0)},
}


@dataclass(frozen=True)
class TrainerConfig:
    total_steps: int = 25_000_000
    lr_actor_start: float = 2e-4
    lr_actor_end: float = 2e-5
    lr_critic_start: float = 2e-3
    lr_critic_end: float = 2e-4
    clip_norm: float = 100.0
    update_every: int = 128
    n_atoms: int = 11
    lambda_val: float = 0.5
    lambda_ent: float = 0.001
    gamma: float = 0.995
    v_min: tuple[float, ...] = (-12.0, -0.1)
    v_max: tuple[float, ...] = (0.0, 0.0)
    seed: int = 0
    log_every: int = 10_000
    eval_every: int = 0
    eval_episodes: int = 500
    shared_width: int = 128
    head_hidden: int = 50
    critic_hidden: int = 150
    include_tau: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "v_min", tuple(float(v) for v in self.v_min))
        object.__setattr__(self, "v_max", tuple(float(v) for v in self.v_max))
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.update_every < 1:
            raise ValueError("update_every must be >= 1")
        if self.lambda_val < 0 or self.lambda_ent < 0:
            raise ValueError("loss weights must be non-negative")
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        AtomGrid(self.v_min, self.v_max, self.n_atoms)

    @classmethod
    def for_utility(cls, kind: str, **overrides) -> "TrainerConfig":
        """Defaults for the named utility, then ``overrides`` (``None`` values ignored)."""
        if kind not in UTILITY_DEFAULTS:
            raise ValueError(f"no defaults for utility {kind!r}")
        values = dict(UTILITY_DEFAULTS[kind])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @property
    def grid(self) -> AtomGrid:
        return AtomGrid(self.v_min, self.v_max, self.n_atoms)

    @property
    def return_scale(self) -> np.ndarray:
        s = np.maximum(np.abs(self.v_min), np.abs(self.v_max))
        return np.where(s > 0, s, 1.0)

    def lr_actor(self, step: int) -> float:
        return _anneal(self.lr_actor_start, self.lr_actor_end, step, self.total_steps)

    def lr_critic(self, step: int) -> float:
        return _anneal(self.lr_critic_start, self.lr_critic_end, step, self.total_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["v_min"], d["v_max"] = list(self.v_min), list(self.v_max)
        return d


def _anneal(start: float, end: float, step: int, total: int) -> float:
    frac = 1.0 if total <= 0 else min(1.0, max(0.0, step / total))
    return start + (end - start) * frac


@dataclass
class UpdateStats:
    actor_loss: float
    critic_loss: float
    entropy: float
    total_loss: float


@dataclass
class Batch:
    """``update_every`` consecutive transitions; may span episodes."""

    inputs: np.ndarray
    next_inputs: np.ndarray
    comp_actions: np.ndarray
    glob_actions: np.ndarray
    rewards: np.ndarray
    accrued: np.ndarray
    t: np.ndarray
    done: np.ndarray


class Agent:
    """Actor, critic and their optimisers."""

    def __init__(self, config: TrainerConfig, n_components: int, horizon: int, tau_max: int):
        self.config = config
        self.n_components, self.horizon, self.tau_max = n_components, horizon, tau_max
        self.grid = config.grid
        dim = input_dim(n_components, config.include_tau)
        init_a = rngmod.generator(config.seed, rngmod.INIT, 0)
        init_c = rngmod.generator(config.seed, rngmod.INIT, 1)
        self.actor = ActorNetwork(n_components, dim, init_a, config.shared_width, config.head_hidden)
        self.critic = CriticNetwork(dim, self.grid.size, init_c, config.critic_hidden)
        adam = AdamConfig(config.adam_beta1, config.adam_beta2, config.adam_eps)
        self.opt_actor = Adam(self.actor.parameters(), config.clip_norm, adam)
        self.opt_critic = Adam(self.critic.parameters(), config.clip_norm, adam)

    def inputs(self, belief, tau, t, accrued) -> np.ndarray:
        c = self.config
        return build_inputs(belief, tau, t, self.horizon, self.tau_max, accrued, c.return_scale, c.include_tau)

    def losses(self, batch: Batch, utility: UtilityFunction):
        c = self.config
        Z_curr = self.critic.probs_numpy(batch.inputs)
        Z_next = self.critic.probs_numpy(batch.next_inputs)
        adv = normalize_advantages(raw_advantages(
            Z_next, Z_curr, batch.accrued, batch.rewards, batch.t, batch.done, self.grid, utility, c.gamma,
        ))
        target = project_batch(batch.rewards, Z_next, self.grid, c.gamma, batch.done)
        l_v = critic_loss(self.critic.log_probs(batch.inputs), target)
        log_comp, log_glob = self.actor.log_probs(batch.inputs)
        l_pi = actor_loss(taken_log_prob(log_comp, log_glob, batch.comp_actions, batch.glob_actions), adv)
        ent = policy_entropy(log_comp, log_glob)
        total = l_pi + c.lambda_val * l_v - c.lambda_ent * ent
        return total, l_pi, l_v, ent

    def update(self, batch: Batch, utility: UtilityFunction, step: int) -> UpdateStats:
        total, l_pi, l_v, ent = self.losses(batch, utility)
        total.backward()
        self.opt_actor.step(self.config.lr_actor(step))
        self.opt_critic.step(self.config.lr_critic(step))
        return UpdateStats(l_pi.item(), l_v.item(), ent.item(), total.item())

    def policy(self, greedy: bool = False) -> "ActorPolicy":
        return ActorPolicy(self.actor, self.config, self.tau_max, greedy)


@dataclass
class ActorPolicy:
    """Evaluation wrapper around a trained actor."""

    actor: ActorNetwork
    config: TrainerConfig
    tau_max: int
    greedy: bool = False
    name: str = "modcmac"
    needs_belief = True

    @property
    def uniforms_per_step(self) -> int:
        return 0 if self.greedy else self.actor.n_components + 1

    def controller(self, n_episodes, n_components):
        return _ActorController(self)


class _ActorController:
    def __init__(self, policy: ActorPolicy):
        self.p = policy

    def act(self, view: PolicyView):
        p = self.p
        x = build_inputs(view.belief, view.tau, view.t, view.horizon, p.tau_max, view.accrued,
                         p.config.return_scale, p.config.include_tau)
        pc, pg = p.actor.probs_numpy(x)
        if p.greedy:
            return pc.argmax(-1), pg.argmax(-1)
        u = view.uniforms
        return sample_categorical(pc, u[:, :-1]), sample_categorical(pg, u[:, -1])


@dataclass
class TrainResult:
    agent: Agent
    log_rows: list[dict]
    eval_rows: list[dict] = field(default_factory=list)
    updates: int = 0
    episodes: int = 0

    def log_csv(self) -> str:
        return _csv(LOG_FIELDS, self.log_rows)

    def eval_csv(self) -> str:
        return _csv(EVAL_FIELDS, self.eval_rows)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(r[k]) for k in header])
    return buf.getvalue()


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else float("nan")


def train(
    env_config: EnvironmentConfig,
    utility: UtilityFunction,
    config: TrainerConfig,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run on-policy training for ``config.total_steps`` environment steps.

    One environment runs episode after episode. Every ``update_every`` steps
    the buffer is used for a single actor and critic update and cleared; a
    partial buffer left when the step budget runs out is dropped.
    """
    from .evaluation import evaluate_policy

    N, H = env_config.n_components, env_config.horizon
    agent = Agent(config, N, H, env_config.tau_max)
    env = env_config.make_env(track_belief=True)
    gamma, eta = config.gamma, config.update_every
    buf: dict[str, list] = {k: [] for k in ("x", "xn", "ca", "ga", "r", "acc", "t", "done")}
    log_rows, eval_rows = [], []
    window_eps: list[tuple[float, float, float]] = []
    window_upd: list[UpdateStats] = []
    step = updates = episode = 0

    def flush_log():
        log_rows.append({
            "global_step": step,
            "episode": episode,
            "mean_utility": _mean([e[0] for e in window_eps]),
            "mean_cost": _mean([e[1] for e in window_eps]),
            "mean_Prisk": _mean([e[2] for e in window_eps]),
            "actor_loss": _mean([u.actor_loss for u in window_upd]),
            "critic_loss": _mean([u.critic_loss for u in window_upd]),
            "entropy": _mean([u.entropy for u in window_upd]),
            "lr_actor": config.lr_actor(step),
            "lr_critic": config.lr_critic(step),
        })
        if progress:
            progress(log_rows[-1])
        window_eps.clear()
        window_upd.clear()

    while step < config.total_steps:
        _, b = env.reset(rngmod.generator(config.seed, rngmod.TRAIN_ENV, episode))
        pol_u = rngmod.generator(config.seed, rngmod.TRAIN_POLICY, episode).random((H, N + 1))
        accrued = np.zeros(2)
        x = agent.inputs(b.belief[None], b.tau[None], 0, accrued[None])
        t = 0
        while t < H and step < config.total_steps:
            pc, pg = agent.actor.probs_numpy(x)
            ca = sample_categorical(pc[0], pol_u[t, :N])
            ga = int(sample_categorical(pg[0], pol_u[t, N]))
            res = env.step(ActionVector(ca, ga))
            nxt_acc = accrued + gamma**t * res.reward
            xn = agent.inputs(res.belief.belief[None], res.belief.tau[None], t + 1, nxt_acc[None])
            for k, v in (("x", x[0]), ("xn", xn[0]), ("ca", ca), ("ga", ga), ("r", res.reward),
                         ("acc", accrued), ("t", t), ("done", res.done)):
                buf[k].append(v)
            step += 1
            t += 1
            accrued, x = nxt_acc, xn
            if res.done:
                p = -np.expm1(min(accrued[1], 0.0))
                window_eps.append((float(utility(accrued)), float(-accrued[0]), float(p)))
                episode += 1
            if len(buf["x"]) == eta:
                batch = Batch(*(np.array(buf[k]) for k in ("x", "xn", "ca", "ga", "r", "acc", "t", "done")))
                window_upd.append(agent.update(batch, utility, step))
                updates += 1
                for v in buf.values():
                    v.clear()
            if config.log_every and step % config.log_every == 0:
                flush_log()
            if config.eval_every and step % config.eval_every == 0:
                rep = evaluate_policy(env_config, agent.policy(), utility, gamma, config.eval_episodes, config.seed)
                eval_rows.append({
                    "global_step": step, "mean_utility": rep.mean("utility"), "std_utility": rep.std("utility"),
                    "mean_cost": rep.mean("cost_discounted"), "mean_Prisk": rep.mean("prisk"),
                })
    if not config.log_every or step % config.log_every:
        flush_log()
    return TrainResult(agent, log_rows, eval_rows, updates, episode)


def build_id() -> str:
    """Content hash of this package's source files."""
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:12]


CHECKPOINT_WEIGHTS = "weights.json"
CHECKPOINT_META = "metadata.json"


def save_checkpoint(out_dir: str | Path, result_or_agent, env_config: EnvironmentConfig,
                    utility: UtilityFunction, extra: dict | None = None) -> Path:
    agent = result_or_agent.agent if isinstance(result_or_agent, TrainResult) else result_or_agent
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(out / CHECKPOINT_WEIGHTS, [agent.actor, agent.critic])
    meta = {
        "config": agent.config.to_dict(),
        "seed": agent.config.seed,
        "env": env_config.to_dict(),
        "utility": utility.describe(),
        "build_id": build_id(),
    }
    meta.update(extra or {})
    (out / CHECKPOINT_META).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def load_checkpoint(path: str | Path) -> tuple[Agent, dict]:
    """Rebuild the agent from a checkpoint directory (or its weights file)."""
    from .environments import config_from_dict

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    ckpt = path if path.is_dir() else path.parent
    meta_path, weights_path = ckpt / CHECKPOINT_META, ckpt / CHECKPOINT_WEIGHTS
    if not meta_path.exists() or not weights_path.exists():
        raise FileNotFoundError(f"no checkpoint at {ckpt} (expected {CHECKPOINT_META} and {CHECKPOINT_WEIGHTS})")
    meta = json.loads(meta_path.read_text())
    config = TrainerConfig(**meta["config"])
    env_config = config_from_dict(meta["env"])
    agent = Agent(config, env_config.n_components, env_config.horizon, env_config.tau_max)
    assign_weights(load_weights(weights_path), [agent.actor, agent.critic])
    meta["env_config"] = env_config
    return agent, meta
