"""Nash equilibria of finite potential games from bandit feedback.

The unknown potential gets a GP prior. Every measured unilateral move gives a
noisy observation of a potential difference, so the model is conditioned on
the differenced path ``B Phi``. At each iteration the solver scores every
profile reachable by one unilateral move by ``E[max(Z, 0)]``, where
``Z = Phi(candidate) - Phi(current)``, and moves to the best one until the
best score drops below a threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .games import FiniteGame, OracleError
from .gp_core import GaussianBelief, GPHyperparams, condition, expected_positive_part, gram, stable_cholesky
from .trace import PathHistory, SolveTrace, unique_deviator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FiniteSolverConfig:
    hyperparams: GPHyperparams
    n_initial: int = 11
    ei_termination: float = 5e-2
    max_iterations: int = 100
    seed: int = 0
    correlated_noise: bool = False
    # "ei" is the lookahead criterion; "mean" ranks by posterior mean only (diagnostic).
    criterion: str = "ei"

    def __post_init__(self):
        if not self.ei_termination > 0:
            raise ValueError(f"ei_termination must be > 0, got {self.ei_termination}")
        if self.n_initial < 1:
            raise ValueError(f"n_initial must be >= 1, got {self.n_initial}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.criterion not in ("ei", "mean"):
            raise ValueError(f"criterion must be 'ei' or 'mean', got {self.criterion!r}")


def fip_neighborhood(current, action_sets) -> list[tuple[int, ...]]:
    """Profiles differing from ``current`` in exactly one player's action.

    Ordered by player index, then action index.
    """
    current = tuple(int(k) for k in current)
    out = []
    for i, actions in enumerate(action_sets):
        for k in range(len(actions)):
            if k != current[i]:
                out.append(current[:i] + (k,) + current[i + 1 :])
    return out


def differencing_matrix(n: int) -> np.ndarray:
    """``(n-1) x n`` matrix with -1 on the diagonal and +1 on the superdiagonal."""
    b = np.zeros((max(n - 1, 0), n))
    idx = np.arange(n - 1)
    b[idx, idx] = -1.0
    b[idx, idx + 1] = 1.0
    return b


def differenced_prior(path: PathHistory, candidate_point, h: GPHyperparams, *, allow_stay: bool = False) -> GaussianBelief:
    """Joint prior of the observed potential differences and ``Z``.

    The returned belief covers ``(dU_1, ..., dU_{n-1}, Z)`` for a path of ``n``
    profiles and the candidate appended as the last point.
    """
    pts = path.point_array
    cand = np.asarray(candidate_point, dtype=float)
    if not allow_stay:
        unique_deviator(pts[-1], cand)
    x = np.vstack([pts, cand[None, :]])
    k = gram(x, x, h)
    b = differencing_matrix(len(x))
    mean = b @ np.full(len(x), h.prior_mean)
    cov = b @ k @ b.T
    return GaussianBelief(mean, 0.5 * (cov + cov.T))


def posterior_z(path: PathHistory, candidate_point, h: GPHyperparams, correlated_noise: bool = False, *, allow_stay: bool = False):
    """Posterior mean and variance of ``Phi(candidate) - Phi(current)`` given the path."""
    prior = differenced_prior(path, candidate_point, h, allow_stay=allow_stay)
    n_obs = prior.dim - 1
    post = condition(
        prior,
        np.arange(n_obs),
        path.delta_y,
        path.noise_covariance(h.noise_variance, correlated_noise),
        jitter=h.jitter * h.signal_variance,
        jitter_scale=h.signal_variance,
    )
    return float(post.mean[0]), max(float(post.cov[0, 0]), 0.0)


def posterior_z_batch(path: PathHistory, candidate_points, h: GPHyperparams, correlated_noise: bool = False):
    """Vectorized :func:`posterior_z` over many candidates sharing one factorization."""
    pts = path.point_array
    cands = np.atleast_2d(np.asarray(candidate_points, dtype=float))
    k_pp = gram(pts, pts, h)
    k_pc = gram(pts, cands, h)
    var_prior = 2.0 * h.signal_variance - 2.0 * k_pc[-1]
    if len(pts) == 1:
        return np.zeros(len(cands)), np.maximum(var_prior, 0.0)

    b = differencing_matrix(len(pts))
    a = b @ k_pp @ b.T + path.noise_covariance(h.noise_variance, correlated_noise)
    chol, _ = stable_cholesky(a, h.jitter * h.signal_variance, h.signal_variance)
    cross = b @ (k_pc - k_pp[:, -1:])
    alpha = linalg.cho_solve((chol, True), np.asarray(path.delta_y))
    mu = cross.T @ alpha
    v = linalg.solve_triangular(chol, cross, lower=True)
    var = var_prior - np.sum(v * v, axis=0)
    return mu, np.maximum(var, 0.0)


def best_candidate(mu, var, criterion: str = "ei"):
    """Index of the first best candidate and all scores."""
    mu = np.asarray(mu, dtype=float)
    scores = mu.copy() if criterion == "mean" else np.atleast_1d(expected_positive_part(mu, np.sqrt(var)))
    return int(np.argmax(scores)), scores


def select_next_action(path: PathHistory, action_sets, h: GPHyperparams, correlated_noise: bool = False, criterion: str = "ei"):
    """Best unilateral move from the current profile; returns ``(profile, score)``."""
    candidates = fip_neighborhood(path.current, action_sets)
    if not candidates:
        raise ValueError("no unilateral moves available: every player has a single action")
    points = np.array([[action_sets[i][k] for i, k in enumerate(c)] for c in candidates])
    mu, var = posterior_z_batch(path, points, h, correlated_noise)
    best, scores = best_candidate(mu, var, criterion)
    return candidates[best], float(scores[best])


def space_filling_design(shape, n: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Latin-hypercube sample of ``n`` index profiles on a grid of the given shape."""
    cols = []
    for size in shape:
        strata = (rng.permutation(n) + rng.random(n)) / n
        cols.append(np.minimum((strata * size).astype(int), size - 1))
    return [tuple(int(c[k]) for c in cols) for k in range(n)]


def connect_path(design) -> list[tuple[int, ...]]:
    """Chain profiles so consecutive entries differ in exactly one coordinate.

    Between two design points the differing coordinates are changed one at a
    time in player order; repeated consecutive profiles are dropped.
    """
    out: list[tuple[int, ...]] = []
    for target in design:
        target = tuple(target)
        if not out:
            out.append(target)
            continue
        cur = list(out[-1])
        for i, v in enumerate(target):
            if cur[i] != v:
                cur[i] = v
                out.append(tuple(cur))
    return out


def _measure(game, profile, rng, step):
    try:
        return np.asarray(game.bandit_feedback(profile, rng), dtype=float)
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise OracleError(f"oracle failed at step {step} for profile {profile}: {exc}") from exc


def solve_finite(game: FiniteGame, config: FiniteSolverConfig, rng: np.random.Generator | None = None) -> SolveTrace:
    """Run the finite-game search from a chained space-filling start."""
    if not isinstance(game, FiniteGame):
        raise TypeError("solve_finite needs a game with finite action sets")
    if config.hyperparams.dim != game.n_players:
        raise ValueError(f"hyperparameters have {config.hyperparams.dim} length scales for {game.n_players} players")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    h = config.hyperparams
    trace = SolveTrace("finite", game.n_players)
    path = trace.path

    def record(profile, y, phase, **extra):
        dev = path.append(profile, game.point(profile), y)
        trace.add_row(
            phase=phase,
            deviator=None if dev is None else dev + 1,
            delta_y=path.delta_y[-1] if dev is not None else None,
            **{f"a_{i + 1}": k for i, k in enumerate(profile)},
            **{f"x_{i + 1}": v for i, v in enumerate(game.point(profile))},
            **{f"y_{i + 1}": v for i, v in enumerate(y)},
            **extra,
        )

    start = connect_path(space_filling_design(game.shape, config.n_initial, rng))
    for profile in start:
        record(profile, _measure(game, profile, rng, len(trace.rows)), "initial")
    trace.extra["n_initial_measurements"] = len(start)

    reason = "max_iterations"
    for it in range(1, config.max_iterations + 1):
        trace.iterations = it
        cand, score = select_next_action(path, game.action_sets, h, config.correlated_noise, config.criterion)
        if score < config.ei_termination:
            current = path.current
            trace.add_row(
                phase="search",
                ei=score,
                **{f"a_{i + 1}": k for i, k in enumerate(current)},
                **{f"x_{i + 1}": v for i, v in enumerate(game.point(current))},
            )
            reason = "ei_below_threshold"
            break
        record(cand, _measure(game, cand, rng, len(trace.rows)), "search", ei=score)
        log.debug("iteration %d: moved to %s (score %.4g)", it, cand, score)

    trace.stopping_reason = reason
    trace.final_profile = path.current
    trace.final_point = game.point(path.current)
    trace.n_oracle_calls = len(path)
    return trace
