"""Exponential weights with importance-weighted bandit estimates.

Every player keeps a cumulative score per action. Each round the strategy is
``softmax(eta_t * scores)``, the action is drawn from the strategy mixed with
uniform exploration ``eps_t``, and the played action's score grows by the
rescaled payoff divided by its sampling probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.special import softmax

from .games import FiniteGame
from .trace import _fmt, _jsonable, dumps_json


@dataclass(frozen=True)
class ExpWeightsSchedule:
    """``eta_t = eta0 / sqrt(t)`` and ``eps_t = min(1, explore_scale * t^(-explore_exponent))``."""

    eta0: float = 1.0
    explore_scale: float = 1.0
    explore_exponent: float = 1.0 / 3.0

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError(f"eta0 must be > 0, got {self.eta0}")
        if not self.explore_scale >= 0:
            raise ValueError(f"explore_scale must be >= 0, got {self.explore_scale}")
        if not self.explore_exponent > 0:
            raise ValueError(f"explore_exponent must be > 0, got {self.explore_exponent}")

    def eta(self, t: int) -> float:
        return self.eta0 / math.sqrt(t)

    def epsilon(self, t: int) -> float:
        return min(1.0, self.explore_scale * t ** (-self.explore_exponent))


@dataclass
class ExpWeightsState:
    scores: list[np.ndarray]
    strategies: list[np.ndarray]
    schedule: ExpWeightsSchedule
    t: int = 0

    @classmethod
    def uniform(cls, shape, schedule: ExpWeightsSchedule):
        return cls(
            scores=[np.zeros(k) for k in shape],
            strategies=[np.full(k, 1.0 / k) for k in shape],
            schedule=schedule,
        )

    def sampling(self, t: int) -> list[np.ndarray]:
        eps = self.schedule.epsilon(t)
        return [(1.0 - eps) * p + eps / len(p) for p in self.strategies]

    def update(self, actions, rewards, sampling):
        """Importance-weighted score update for the played actions, then renormalize."""
        self.t += 1
        eta = self.schedule.eta(self.t)
        for i, (a, r) in enumerate(zip(actions, rewards)):
            self.scores[i][a] += r / sampling[i][a]
            self.strategies[i] = softmax(eta * self.scores[i])

    def check(self, tol: float = 1e-12):
        for i, p in enumerate(self.strategies):
            if np.any(p < 0) or abs(p.sum() - 1.0) > tol:
                raise AssertionError(f"player {i + 1} strategy is not a probability vector: {p}")


def _bounds_array(utility_bounds, n_players):
    b = np.asarray(utility_bounds, dtype=float)
    if b.shape == (2,):
        b = np.tile(b, (n_players, 1))
    if b.shape != (n_players, 2):
        raise ValueError(f"utility_bounds must be (lo, hi) or one pair per player, got shape {b.shape}")
    if np.any(b[:, 0] >= b[:, 1]):
        raise ValueError(f"utility bounds need lo < hi, got {b.tolist()}")
    return b


def rescale(y, bounds) -> np.ndarray:
    """Map payoffs into ``[0, 1]`` with per-player ``(lo, hi)``, clipping outliers."""
    return np.clip((np.asarray(y, dtype=float) - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0]), 0.0, 1.0)


@dataclass
class ExpWeightsTrace:
    n_players: int
    rows: list[dict[str, Any]] = field(default_factory=list)
    strategies: list[list[np.ndarray]] = field(default_factory=list)
    seed: int | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    solver = "exp_weights"

    @property
    def columns(self) -> list[str]:
        n = range(1, self.n_players + 1)
        return [
            "step",
            *(f"a_{i}" for i in n),
            *(f"x_{i}" for i in n),
            *(f"y_{i}" for i in n),
            *(f"mode_{i}" for i in n),
            *(f"mode_prob_{i}" for i in n),
        ]

    @property
    def mode_profiles(self) -> list[tuple[int, ...]]:
        return [tuple(r[f"mode_{i + 1}"] for i in range(self.n_players)) for r in self.rows]

    def to_csv(self) -> str:
        cols = self.columns
        lines = [",".join(cols)]
        lines += [",".join(_fmt(r.get(c)) for c in cols) for r in self.rows]
        return "\n".join(lines) + "\n"

    def summary(self) -> dict[str, Any]:
        modes = self.mode_profiles
        out = {
            "solver": self.solver,
            "rounds": len(self.rows),
            "n_oracle_calls": len(self.rows),
            "final_profile": list(modes[-1]) if modes else None,
            "final_strategies": [p.tolist() for p in self.strategies[-1]] if self.strategies else None,
        }
        out.update({k: _jsonable(v) for k, v in self.extra.items()})
        return out

    def write(self, csv_path, summary_path=None, **summary_extra):
        Path(csv_path).write_text(self.to_csv())
        if summary_path is not None:
            summary = self.summary()
            summary.update(summary_extra)
            Path(summary_path).write_text(dumps_json(summary))


def exp_weights_run(
    oracle: FiniteGame,
    steps: int,
    schedule: ExpWeightsSchedule | None = None,
    rng: np.random.Generator | None = None,
    utility_bounds=(0.0, 1.0),
    target=None,
    stop_at_target: bool = False,
) -> ExpWeightsTrace:
    """Play ``steps`` rounds of bandit exponential weights on a finite game.

    The reported strategy (and its mode) is the softmax without exploration
    mixing. With ``target`` set, the first round whose mode profile equals it
    is stored as ``extra["first_hit"]``; ``stop_at_target`` ends the run there.
    """
    if not isinstance(oracle, FiniteGame):
        raise TypeError("exp_weights_run needs a game with finite action sets")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    schedule = schedule or ExpWeightsSchedule()
    rng = np.random.default_rng() if rng is None else rng
    bounds = _bounds_array(utility_bounds, oracle.n_players)
    target = None if target is None else tuple(int(k) for k in target)
    state = ExpWeightsState.uniform(oracle.shape, schedule)
    trace = ExpWeightsTrace(oracle.n_players)
    trace.extra["first_hit"] = None
    for t in range(1, steps + 1):
        q = state.sampling(t)
        actions = tuple(int(rng.choice(len(p), p=p)) for p in q)
        y = np.asarray(oracle.bandit_feedback(actions, rng), dtype=float)
        state.update(actions, rescale(y, bounds), q)
        modes = tuple(int(np.argmax(p)) for p in state.strategies)
        point = oracle.point(actions)
        n = range(oracle.n_players)
        trace.rows.append(
            {
                "step": t,
                **{f"a_{i + 1}": actions[i] for i in n},
                **{f"x_{i + 1}": float(point[i]) for i in n},
                **{f"y_{i + 1}": float(y[i]) for i in n},
                **{f"mode_{i + 1}": modes[i] for i in n},
                **{f"mode_prob_{i + 1}": float(state.strategies[i][modes[i]]) for i in n},
            }
        )
        trace.strategies.append([p.copy() for p in state.strategies])
        if target is not None and trace.extra["first_hit"] is None and modes == target:
            trace.extra["first_hit"] = t
            if stop_at_target:
                break
    return trace


def first_hit(trace: ExpWeightsTrace, profile) -> int | None:
    """First round (1-based) whose strategy mode equals ``profile``, else ``None``."""
    profile = tuple(int(k) for k in profile)
    for r, modes in zip(trace.rows, trace.mode_profiles):
        if modes == profile:
            return r["step"]
    return None
