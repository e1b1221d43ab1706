"""Game oracles with bandit feedback, reference potential games and verification helpers.

A game oracle exposes ``n_players`` and returns noisy utilities
``y_i = u_i(x) + eps_i`` with ``eps_i ~ N(0, noise_std^2)`` independent across
players and calls. Continuous games take real-valued profiles inside a box;
finite games take tuples of action indices.
"""

from __future__ import annotations

import abc
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid


class OracleError(RuntimeError):
    """A game oracle failed while a solver was measuring it."""


class GameOracle(abc.ABC):
    """Black-box game observed only through noisy realized utilities."""

    def __init__(self, n_players: int, noise_std: float = 0.0):
        if n_players < 1:
            raise ValueError("a game needs at least one player")
        if noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {noise_std}")
        self.n_players = n_players
        self.noise_std = float(noise_std)

    @abc.abstractmethod
    def true_utilities(self, profile) -> np.ndarray:
        """Noiseless utilities of every player at ``profile``."""

    def bandit_feedback(self, profile, rng: np.random.Generator) -> np.ndarray:
        u = np.asarray(self.true_utilities(profile), dtype=float)
        if self.noise_std == 0.0:
            return u.copy()
        return u + self.noise_std * rng.standard_normal(u.shape)

    def potential(self, profile) -> float | None:
        """Exact potential where one is known; only used by tests and reports."""
        return None


class ContinuousGame(GameOracle):
    """Game whose action sets are closed real intervals ``bounds[i] = (lo, hi)``."""

    def __init__(self, bounds: Sequence[tuple[float, float]], noise_std: float = 0.0):
        super().__init__(len(bounds), noise_std)
        self.bounds = np.array(bounds, dtype=float).reshape(-1, 2)
        if np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise ValueError(f"each action interval needs lo < hi, got {self.bounds.tolist()}")

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.bounds[:, 0], self.bounds[:, 1])

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.bounds[:, 0]) and np.all(x <= self.bounds[:, 1]))


class FiniteGame(GameOracle):
    """Game with finitely many actions per player.

    Profiles are tuples of action indices; ``action_sets[i]`` holds the real
    action values used as GP inputs.
    """

    def __init__(self, action_sets: Sequence[Sequence[float]], noise_std: float = 0.0):
        super().__init__(len(action_sets), noise_std)
        self.action_sets = [np.asarray(a, dtype=float).ravel() for a in action_sets]
        for i, a in enumerate(self.action_sets):
            if a.size == 0:
                raise ValueError(f"player {i} has an empty action set")
            if np.unique(a).size != a.size:
                raise ValueError(f"player {i} has repeated action values")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.action_sets)

    def point(self, profile) -> np.ndarray:
        """Real action values of an index profile."""
        self.check_profile(profile)
        return np.array([self.action_sets[i][k] for i, k in enumerate(profile)])

    def check_profile(self, profile):
        if len(profile) != self.n_players:
            raise ValueError(f"profile {tuple(profile)} has wrong length for {self.n_players} players")
        for i, k in enumerate(profile):
            if not 0 <= int(k) < self.action_sets[i].size:
                raise ValueError(f"action index {k} out of range for player {i}")

    def profiles(self):
        return itertools.product(*(range(n) for n in self.shape))

    def utility_table(self) -> np.ndarray:
        """Array of shape ``(*shape, n_players)`` with every noiseless utility."""
        table = np.empty(self.shape + (self.n_players,))
        for p in self.profiles():
            table[p] = self.true_utilities(p)
        return table


class MatrixGame(FiniteGame):
    """Finite game given by an explicit utility table of shape ``(*shape, n_players)``."""

    def __init__(self, table, action_sets=None, noise_std: float = 0.0, potential_table=None):
        table = np.asarray(table, dtype=float)
        shape = table.shape[:-1]
        if table.shape[-1] != len(shape):
            raise ValueError(f"utility table shape {table.shape} needs a trailing axis of size {len(shape)}")
        if action_sets is None:
            action_sets = [np.arange(n, dtype=float) for n in shape]
        super().__init__(action_sets, noise_std)
        if self.shape != shape:
            raise ValueError("action_sets do not match the utility table")
        self.table = table
        self.potential_table = None if potential_table is None else np.asarray(potential_table, dtype=float)

    def true_utilities(self, profile) -> np.ndarray:
        self.check_profile(profile)
        return self.table[tuple(int(k) for k in profile)].copy()

    def potential(self, profile):
        if self.potential_table is None:
            return None
        return float(self.potential_table[tuple(int(k) for k in profile)])


class GridGame(FiniteGame):
    """Discretization of a continuous game onto per-player grids of action values."""

    def __init__(self, base: ContinuousGame, grids: Sequence[Sequence[float]]):
        super().__init__(grids, base.noise_std)
        if len(grids) != base.n_players:
            raise ValueError("one grid per player required")
        for i, g in enumerate(self.action_sets):
            lo, hi = base.bounds[i]
            if g.min() < lo or g.max() > hi:
                raise ValueError(f"grid for player {i} leaves the action interval [{lo}, {hi}]")
        self.base = base

    def true_utilities(self, profile) -> np.ndarray:
        return self.base.true_utilities(self.point(profile))

    def potential(self, profile):
        return self.base.potential(self.point(profile))


# --------------------------------------------------------------------------
# Cournot oligopoly
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CournotParams:
    """Linear inverse demand ``p = a - b Q`` with power costs ``d_i q_i^beta_i``."""

    a: float = 10.0
    b: float = 1.0
    d: tuple[float, ...] = (5.0, 5.0)
    beta: tuple[float, ...] = (0.95, 1.95)
    q_min: float = 1e-3
    q_max: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(float(v) for v in self.d))
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))
        if not self.a > 0:
            raise ValueError(f"a must be > 0, got {self.a}")
        if not self.b > 0:
            raise ValueError(f"b must be > 0, got {self.b}")
        if len(self.d) != len(self.beta) or not self.d:
            raise ValueError("d and beta need one entry per player")
        for i, v in enumerate(self.d):
            if not v >= 0:
                raise ValueError(f"d[{i}] must be >= 0, got {v}")
        for i, v in enumerate(self.beta):
            if not 0 < v < 2:
                raise ValueError(f"beta[{i}] must lie in (0, 2), got {v}")
        if not 0 < self.q_min < self.q_max:
            raise ValueError(f"need 0 < q_min < q_max, got {self.q_min}, {self.q_max}")

    @property
    def n_players(self) -> int:
        return len(self.d)


def _check_quantities(q, params: CournotParams) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (params.n_players,):
        raise ValueError(f"expected {params.n_players} quantities, got shape {q.shape}")
    if np.any(q <= 0):
        raise ValueError(f"quantities must be positive, got {q.tolist()}")
    return q


def cournot_utilities(q, params: CournotParams) -> np.ndarray:
    """Profit ``q_i p - d_i q_i^beta_i`` of every firm, with ``p = a - b sum(q)``."""
    q = _check_quantities(q, params)
    price = params.a - params.b * q.sum()
    return q * price - np.asarray(params.d) * q ** np.asarray(params.beta)


def cournot_potential(q, params: CournotParams) -> float:
    """Exact potential ``a sum q - b (sum q_i^2 + sum_{i<j} q_i q_j) - sum d_i q_i^beta_i``."""
    q = _check_quantities(q, params)
    total = q.sum()
    pair_sum = 0.5 * (total * total - np.dot(q, q))
    costs = np.asarray(params.d) * q ** np.asarray(params.beta)
    return float(params.a * total - params.b * (np.dot(q, q) + pair_sum) - costs.sum())


class CournotGame(ContinuousGame):
    def __init__(self, params: CournotParams = CournotParams(), noise_std: float = 0.0):
        super().__init__([(params.q_min, params.q_max)] * params.n_players, noise_std)
        self.params = params

    def true_utilities(self, profile) -> np.ndarray:
        return cournot_utilities(profile, self.params)

    def potential(self, profile) -> float:
        return cournot_potential(profile, self.params)


def cournot_grid(params: CournotParams, points: int = 31) -> np.ndarray:
    """``points`` evenly spaced quantities spanning ``[q_min, q_max]``."""
    return np.linspace(params.q_min, params.q_max, points)


# --------------------------------------------------------------------------
# common-pool differential game under linear strategies
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CommonPoolParams:
    """Renewable stock ``ds/dt = a s - sum x_i`` harvested with ``x_i = gamma_i s``.

    Player ``i`` earns ``int_0^T x_i(t)^alpha_i exp(-theta_i t) dt``.
    """

    a: float = 0.9
    s0: float = 1.0
    alpha: tuple[float, ...] = (0.3, 0.2)
    theta: tuple[float, ...] = (0.95, 0.95)
    horizon: float = 4.0
    n_points: int = 10_000
    gamma_max: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(v) for v in self.alpha))
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        if len(self.alpha) != len(self.theta) or not self.alpha:
            raise ValueError("alpha and theta need one entry per player")
        if not self.a >= 0:
            raise ValueError(f"a must be >= 0, got {self.a}")
        if not self.s0 > 0:
            raise ValueError(f"s0 must be > 0, got {self.s0}")
        for i, v in enumerate(self.alpha):
            if not v > 0:
                raise ValueError(f"alpha[{i}] must be > 0, got {v}")
        for i, v in enumerate(self.theta):
            if not v >= self.a:
                raise ValueError(f"theta[{i}] must be >= a = {self.a}, got {v}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        if self.n_points < 2:
            raise ValueError(f"n_points must be >= 2, got {self.n_points}")
        if not self.gamma_max > 0:
            raise ValueError(f"gamma_max must be > 0, got {self.gamma_max}")

    @property
    def n_players(self) -> int:
        return len(self.alpha)


def common_pool_trajectory(gamma, params: CommonPoolParams, t):
    """Stock ``s(t)`` and harvests ``x_i(t) = gamma_i s(t)``; returns ``(s, x)`` with ``x`` of shape ``(I, len(t))``."""
    gamma = np.asarray(gamma, dtype=float)
    t = np.asarray(t, dtype=float)
    s = params.s0 * np.exp((params.a - gamma.sum()) * t)
    return s, gamma[:, None] * s[None, :]


def common_pool_payoff(gamma, params: CommonPoolParams) -> np.ndarray:
    """Discounted payoffs ``J_i`` by composite trapezoid on ``n_points`` nodes."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (params.n_players,):
        raise ValueError(f"expected {params.n_players} coefficients, got shape {gamma.shape}")
    if np.any(gamma < 0):
        raise ValueError(f"linear-strategy coefficients must be >= 0, got {gamma.tolist()}")
    t = np.linspace(0.0, params.horizon, params.n_points)
    _, x = common_pool_trajectory(gamma, params, t)
    alpha = np.asarray(params.alpha)[:, None]
    theta = np.asarray(params.theta)[:, None]
    integrand = x**alpha * np.exp(-theta * t[None, :])
    return trapezoid(integrand, t, axis=1)


class CommonPoolGame(ContinuousGame):
    def __init__(self, params: CommonPoolParams = CommonPoolParams(), noise_std: float = 0.0):
        super().__init__([(0.0, params.gamma_max)] * params.n_players, noise_std)
        self.params = params

    def true_utilities(self, profile) -> np.ndarray:
        return common_pool_payoff(profile, self.params)


# --------------------------------------------------------------------------
# verification oracles
# --------------------------------------------------------------------------


def potential_difference_residual(game: GameOracle, potential: Callable, n_samples: int, rng) -> float:
    """Max over random unilateral deviations of ``|du_i - dPhi|``."""
    worst = 0.0
    for _ in range(n_samples):
        i = int(rng.integers(game.n_players))
        if isinstance(game, FiniteGame):
            x = [int(rng.integers(n)) for n in game.shape]
            z = list(x)
            x[i] = int(rng.integers(game.shape[i]))
        else:
            lo, hi = game.bounds[:, 0], game.bounds[:, 1]
            x = lo + (hi - lo) * rng.random(game.n_players)
            z = x.copy()
            z[i] = lo[i] + (hi[i] - lo[i]) * rng.random()
        du = game.true_utilities(tuple(x))[i] - game.true_utilities(tuple(z))[i]
        dphi = potential(tuple(x)) - potential(tuple(z))
        worst = max(worst, abs(du - dphi))
    return worst


def potential_gradient_residual(
    game: ContinuousGame, potential: Callable, n_samples: int, rng, step: float = 1e-5, margin: float = 0.05
) -> float:
    """Max over random points and players of ``|du_i/dx_i - dPhi/dx_i|`` by central differences.

    Points are drawn from the box shrunk by ``margin`` of its width on each side.
    """
    lo, hi = game.bounds[:, 0], game.bounds[:, 1]
    width = hi - lo
    lo, hi = lo + margin * width, hi - margin * width
    worst = 0.0
    for _ in range(n_samples):
        x = lo + (hi - lo) * rng.random(game.n_players)
        for i in range(game.n_players):
            e = np.zeros(game.n_players)
            e[i] = step
            du = (game.true_utilities(x + e)[i] - game.true_utilities(x - e)[i]) / (2 * step)
            dphi = (potential(x + e) - potential(x - e)) / (2 * step)
            worst = max(worst, abs(du - dphi))
    return worst


def verify_potential_property(game: GameOracle, potential: Callable | None = None, n_samples: int = 1000, rng=None) -> float:
    """Largest violation of the potential identity found by sampling.

    Finite games are checked on unilateral utility differences; continuous
    games on own-action partial derivatives.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    potential = game.potential if potential is None else potential
    if isinstance(game, FiniteGame):
        return potential_difference_residual(game, potential, n_samples, rng)
    return potential_gradient_residual(game, potential, n_samples, rng)


def verify_nash_exhaustive(utilities, profile) -> tuple[bool, float]:
    """Check a pure profile against every unilateral deviation.

    ``utilities`` is a table of shape ``(*shape, n_players)`` or a
    :class:`FiniteGame`. Returns ``(is_nash, max_gain)`` where ``max_gain`` is
    the largest utility improvement any single player can obtain.
    """
    table = utilities.utility_table() if isinstance(utilities, FiniteGame) else np.asarray(utilities, dtype=float)
    profile = tuple(int(k) for k in profile)
    max_gain = -math.inf
    for i in range(table.ndim - 1):
        idx = list(profile)
        idx[i] = slice(None)
        own = table[tuple(idx)][:, i]
        gains = np.delete(own, profile[i]) - own[profile[i]]
        if gains.size:
            max_gain = max(max_gain, float(gains.max()))
    if max_gain == -math.inf:
        max_gain = 0.0
    return max_gain <= 0.0, max_gain


def best_response_dynamics(table, start=None, max_rounds: int = 10_000) -> tuple[int, ...]:
    """Round-robin exact best responses on a utility table until no player moves."""
    table = np.asarray(table, dtype=float)
    n = table.ndim - 1
    profile = [0] * n if start is None else [int(k) for k in start]
    for _ in range(max_rounds):
        moved = False
        for i in range(n):
            idx = list(profile)
            idx[i] = slice(None)
            own = table[tuple(idx)][:, i]
            best = int(np.argmax(own))
            if own[best] > own[profile[i]]:
                profile[i] = best
                moved = True
        if not moved:
            return tuple(profile)
    raise RuntimeError("best-response dynamics did not settle")
