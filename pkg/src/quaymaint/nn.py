"""Actor and critic networks, initialisation, Adam and weight files."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Parameter, Tensor, as_tensor, einsum
from .mopomdp import N_STATES

WEIGHTS_FORMAT = "quaymaint-weights"
WEIGHTS_VERSION = 1
OUTPUT_SCALE = 0.01


def input_dim(n_components: int, include_tau: bool = True) -> int:
    """Belief (5 per component), optional tau per component, t/H and the 2-d accrued return."""
    return N_STATES * n_components + (n_components if include_tau else 0) + 1 + 2


def _uniform(rng: np.random.Generator, shape, fan_in: int, scale: float = 1.0) -> np.ndarray:
    bound = scale / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    def parameters(self) -> list[Parameter]:
        return [v for v in vars(self).values() if isinstance(v, Parameter)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.parameters()}
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValueError(f"weight names do not match: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class ActorNetwork(Module):
    """Shared tanh layer feeding one small head per component plus a global head.

    The component heads are stored stacked, so all of them run as one
    batched contraction.
    """

    def __init__(self, n_components: int, in_dim: int, rng: np.random.Generator,
                 shared: int = 128, head_hidden: int = 50, n_comp_actions: int = 3, n_glob_actions: int = 2):
        N, S, Hh = n_components, shared, head_hidden
        self.n_components, self.in_dim = N, in_dim
        self.w_shared = Parameter(_uniform(rng, (in_dim, S), in_dim), "actor.shared.w")
        self.b_shared = Parameter(_uniform(rng, (S,), in_dim), "actor.shared.b")
        self.w_comp1 = Parameter(_uniform(rng, (N, S, Hh), S), "actor.comp.hidden.w")
        self.b_comp1 = Parameter(_uniform(rng, (N, Hh), S), "actor.comp.hidden.b")
        self.w_comp2 = Parameter(_uniform(rng, (N, Hh, n_comp_actions), Hh, OUTPUT_SCALE), "actor.comp.out.w")
        self.b_comp2 = Parameter(_uniform(rng, (N, n_comp_actions), Hh, OUTPUT_SCALE), "actor.comp.out.b")
        self.w_glob1 = Parameter(_uniform(rng, (S, Hh), S), "actor.glob.hidden.w")
        self.b_glob1 = Parameter(_uniform(rng, (Hh,), S), "actor.glob.hidden.b")
        self.w_glob2 = Parameter(_uniform(rng, (Hh, n_glob_actions), Hh, OUTPUT_SCALE), "actor.glob.out.w")
        self.b_glob2 = Parameter(_uniform(rng, (n_glob_actions,), Hh, OUTPUT_SCALE), "actor.glob.out.b")

    def _check(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"actor expects input of shape (batch, {self.in_dim}), got {x.shape}")

    def log_probs(self, x) -> tuple[Tensor, Tensor]:
        """Log-probabilities: components ``(B, N, 3)`` and global ``(B, 2)``."""
        x = as_tensor(x)
        self._check(x.data)
        h = (x @ self.w_shared + self.b_shared).tanh()
        hc = (einsum("bs,nsk->bnk", h, self.w_comp1) + self.b_comp1).tanh()
        comp = einsum("bnk,nka->bna", hc, self.w_comp2) + self.b_comp2
        hg = (h @ self.w_glob1 + self.b_glob1).tanh()
        glob = hg @ self.w_glob2 + self.b_glob2
        return comp.log_softmax(-1), glob.log_softmax(-1)

    def probs_numpy(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Plain-numpy forward used while acting (no graph)."""
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        h = np.tanh(x @ self.w_shared.data + self.b_shared.data)
        # heads first: (N, B, .) so each contraction is a stacked matmul
        hc = np.tanh(np.matmul(h[None], self.w_comp1.data) + self.b_comp1.data[:, None])
        comp = (np.matmul(hc, self.w_comp2.data) + self.b_comp2.data[:, None]).transpose(1, 0, 2)
        hg = np.tanh(h @ self.w_glob1.data + self.b_glob1.data)
        glob = hg @ self.w_glob2.data + self.b_glob2.data
        return _softmax(comp), _softmax(glob)

    def forward(self, x) -> list[np.ndarray]:
        """Per-head probability vectors for a single input: N 3-vectors then one 2-vector."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        comp, glob = self.probs_numpy(x)
        return [comp[0, j] for j in range(self.n_components)] + [glob[0]]


class CriticNetwork(Module):
    """One tanh hidden layer, categorical output over the joint atom grid."""

    def __init__(self, in_dim: int, n_out: int, rng: np.random.Generator, hidden: int = 150):
        self.in_dim, self.n_out = in_dim, n_out
        self.w1 = Parameter(_uniform(rng, (in_dim, hidden), in_dim), "critic.hidden.w")
        self.b1 = Parameter(_uniform(rng, (hidden,), in_dim), "critic.hidden.b")
        self.w2 = Parameter(_uniform(rng, (hidden, n_out), hidden, OUTPUT_SCALE), "critic.out.w")
        self.b2 = Parameter(_uniform(rng, (n_out,), hidden, OUTPUT_SCALE), "critic.out.b")

    def log_probs(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"critic expects input of shape (batch, {self.in_dim}), got {x.shape}")
        h = (x @ self.w1 + self.b1).tanh()
        return (h @ self.w2 + self.b2).log_softmax(-1)

    def probs_numpy(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        h = np.tanh(x @ self.w1.data + self.b1.data)
        return _softmax(h @ self.w2.data + self.b2.data)

    def forward(self, x) -> np.ndarray:
        return self.probs_numpy(np.atleast_2d(x))[0]


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``; returns the norm before clipping."""
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


@dataclass
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Adam with global-norm gradient clipping; zeroes gradients after each step."""

    def __init__(self, params: Iterable[Parameter], clip_norm: float = 100.0, config: AdamConfig | None = None):
        self.params = list(params)
        self.clip_norm = clip_norm
        self.config = config or AdamConfig()
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> float:
        norm = clip_grad_norm(self.params, self.clip_norm)
        c = self.config
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad_or_zeros()
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            p.zero_grad()
        return norm


def init_actor(seed_rng: np.random.Generator, n_components: int, in_dim: int, shared: int = 128) -> ActorNetwork:
    return ActorNetwork(n_components, in_dim, seed_rng, shared=shared)


def init_critic(seed_rng: np.random.Generator, in_dim: int, n_out: int, hidden: int = 150) -> CriticNetwork:
    return CriticNetwork(in_dim, n_out, seed_rng, hidden=hidden)


def weights_to_dict(modules: Iterable[Module]) -> dict:
    params = {}
    for mod in modules:
        for name, arr in mod.state_dict().items():
            params[name] = {"shape": list(arr.shape), "values": [float(v) for v in arr.reshape(-1)]}
    return {"format": WEIGHTS_FORMAT, "version": WEIGHTS_VERSION, "parameters": params}


def save_weights(path: str | Path, modules: Iterable[Module]) -> None:
    """JSON weights file; ``repr`` floats round-trip exactly."""
    Path(path).write_text(json.dumps(weights_to_dict(modules), indent=None, separators=(",", ":")) + "\n")


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not a weights file ({exc})") from None
    if doc.get("format") != WEIGHTS_FORMAT:
        raise ValueError(f"{path}: not a weights file")
    if doc.get("version") != WEIGHTS_VERSION:
        raise ValueError(f"{path}: unsupported weights version {doc.get('version')}")
    out = {}
    for name, entry in doc["parameters"].items():
        out[name] = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
    return out


def assign_weights(state: dict[str, np.ndarray], modules: Iterable[Module]) -> None:
    for mod in modules:
        names = {p.name for p in mod.parameters()}
        mod.load_state_dict({k: v for k, v in state.items() if k in names})
