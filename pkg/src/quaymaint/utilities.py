"""Scalarisation of episodic (cost, log-survival) returns.

Utilities take the discounted cost return ``r_cost <= 0`` and the episode
collapse probability ``P = 1 - exp(r_risk)``. Every function works on
scalars and on numpy arrays of matching shape; the trainer evaluates them on
whole atom grids at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COST, RISK = 0, 1


def episode_collapse_probability(r_risk):
    """Probability of at least one collapse from the summed log-survival."""
    r = np.asarray(r_risk, dtype=np.float64)
    if np.any(r > 0.0):
        raise ValueError(f"log-survival return must be <= 0, got {r_risk}")
    p = -np.expm1(r)
    return float(p) if p.ndim == 0 else p


def threshold_utility(
    r_cost,
    p,
    levels: tuple[float, float] = (0.1, 0.2),
    multipliers: tuple[float, float] = (3.0, 5.0),
    offsets: tuple[float, float] = (1.0, 2.0),
    monotone: bool = False,
):
    """Tiered penalty on the cost return once ``p`` exceeds the levels.

    The default form is ``m * (r_cost + offset)``. It is not monotone in ``p``
    when ``r_cost > -3.5``: a zero-cost, high-risk episode scores ``+10``,
    which beats every safe policy. ``monotone=True`` uses
    ``m * (r_cost - offset)`` instead, which always penalises.
    """
    r = np.asarray(r_cost, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    sign = -1.0 if monotone else 1.0
    tier1 = multipliers[0] * (r + sign * offsets[0])
    tier2 = multipliers[1] * (r + sign * offsets[1])
    out = np.where(p <= levels[0], r, np.where(p <= levels[1], tier1, tier2))
    return float(out) if out.ndim == 0 else out


def fmeca_objective_score(x, x_max: float):
    """Smoothed FMECA bin score: ``6 log10(1 + 10 x / x_max)``, plus 4 at or past ``x_max``."""
    x = np.asarray(x, dtype=np.float64)
    score = 6.0 * np.log10(1.0 + 10.0 * x / x_max) + np.where(x >= x_max, 4.0, 0.0)
    return float(score) if score.ndim == 0 else score


def fmeca_utility(r_cost, p, c_max: float = 4.0, f_max: float = 0.2):
    """Negated product of the cost and collapse scores, each floored at 1.

    The cost score is fed ``|r_cost|`` since the cost return is negative.
    """
    cost_score = np.maximum(1.0, fmeca_objective_score(np.abs(r_cost), c_max))
    risk_score = np.maximum(1.0, fmeca_objective_score(p, f_max))
    out = -(cost_score * risk_score)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class UtilityFunction:
    """A named utility with its parameters.

    Called on vector returns ``(..., 2)`` laid out as ``(cost, log_survival)``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "threshold":
            levels = self.params.get("levels", (0.1, 0.2))
            if not 0 < levels[0] < levels[1]:
                raise ValueError(f"threshold levels must be positive and increasing, got {levels}")
            if any(m <= 0 for m in self.params.get("multipliers", (3.0, 5.0))):
                raise ValueError("threshold multipliers must be positive")
        elif self.kind == "fmeca":
            if self.params.get("c_max", 4.0) <= 0 or self.params.get("f_max", 0.2) <= 0:
                raise ValueError("c_max and f_max must be positive")
        else:
            raise ValueError(f"unknown utility {self.kind!r}; expected 'threshold' or 'fmeca'")

    def scalar(self, r_cost, p):
        if self.kind == "threshold":
            return threshold_utility(r_cost, p, **self.params)
        return fmeca_utility(r_cost, p, **self.params)

    def __call__(self, returns):
        """Utility of vector returns; log-survival is clipped at 0 before conversion."""
        returns = np.asarray(returns, dtype=np.float64)
        p = -np.expm1(np.minimum(returns[..., RISK], 0.0))
        return self.scalar(returns[..., COST], p)

    def describe(self) -> dict:
        return {"kind": self.kind, **{k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()}}


def make_utility(kind: str, **params) -> UtilityFunction:
    """Build a utility, dropping ``None`` parameters so defaults apply."""
    params = {k: v for k, v in params.items() if v is not None}
    if kind == "threshold":
        params = {k: v for k, v in params.items() if k in ("levels", "multipliers", "offsets", "monotone")}
        for key in ("levels", "multipliers", "offsets"):
            if key in params:
                params[key] = tuple(float(x) for x in params[key])
    elif kind == "fmeca":
        params = {k: float(v) for k, v in params.items() if k in ("c_max", "f_max")}
    return UtilityFunction(kind, params)


def evaluate_utility(u: UtilityFunction, r_cost: float, r_risk: float) -> float:
    """Utility of one episodic return ``(r_cost, r_risk)``."""
    return u.scalar(r_cost, episode_collapse_probability(r_risk))


def score(utility_value):
    """Reported score: lower is better."""
    return -np.asarray(utility_value) if np.ndim(utility_value) else -utility_value
