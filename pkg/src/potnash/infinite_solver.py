"""Nash equilibria of potential games on real action intervals.

Each measured unilateral move from ``x^{k-1}`` to ``x^k`` is an integral
observation of the potential gradient along an axis-aligned segment:
``du = dx * int_0^1 dPhi/dx_i(r(t)) dt``. A GP on the potential is conditioned
on those observations to estimate the gradient, pick a signed coordinate
direction per player, choose a step by backtracking until the posterior
probability of the Wolfe conditions clears a threshold, and finally move the
player with the largest expected improvement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg

from .games import ContinuousGame, OracleError
from .gp_core import (
    GaussianBelief,
    GPHyperparams,
    expected_positive_part,
    gram,
    orthant_probability,
    se_kernel,
    se_kernel_grad,
    stable_cholesky,
)
from .trace import PathHistory, SolveTrace, unique_deviator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LineSearchParams:
    c1: float = 1e-4
    c2: float = 0.8
    wolfe_threshold: float = 0.3
    max_step: float = 1.0
    backtrack_factor: float = 0.75
    max_backtracks: int = 30

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 <= 1:
            raise ValueError(f"need 0 < c1 < c2 <= 1, got c1={self.c1}, c2={self.c2}")
        if not 0 <= self.wolfe_threshold < 1:
            raise ValueError(f"wolfe_threshold must lie in [0, 1), got {self.wolfe_threshold}")
        if not self.max_step > 0:
            raise ValueError(f"max_step must be > 0, got {self.max_step}")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError(f"backtrack_factor must lie in (0, 1), got {self.backtrack_factor}")
        if self.max_backtracks < 1:
            raise ValueError(f"max_backtracks must be >= 1, got {self.max_backtracks}")


@dataclass(frozen=True)
class InfiniteSolverConfig:
    hyperparams: GPHyperparams
    line_search: LineSearchParams = LineSearchParams()
    ei_termination: float = 1e-4
    max_iterations: int = 100
    seed: int = 0
    quadrature_order: int = 16
    warmup_fraction: float = 0.1
    correlated_noise: bool = False
    x0: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.ei_termination > 0:
            raise ValueError(f"ei_termination must be > 0, got {self.ei_termination}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.quadrature_order < 2:
            raise ValueError(f"quadrature_order must be >= 2, got {self.quadrature_order}")
        if not 0 < self.warmup_fraction <= 1:
            raise ValueError(f"warmup_fraction must lie in (0, 1], got {self.warmup_fraction}")


# --------------------------------------------------------------------------
# integral observations
# --------------------------------------------------------------------------


def _gauss_legendre_unit(order: int):
    nodes, weights = leggauss(order)
    return 0.5 * (nodes + 1.0), 0.5 * weights


class IntegralObservationModel:
    """Covariances between path integral observations and point quantities.

    Segment ``k`` runs from ``starts[k]`` to ``ends[k]`` along coordinate
    ``deviators[k]`` with signed length ``dx[k]``. The single line integrals
    (against point values or point gradients) have exact closed forms because
    the segment integrand is a derivative along the segment; the double
    integral ``pi`` is evaluated by tensor-product Gauss-Legendre quadrature.
    """

    def __init__(self, starts, ends, h: GPHyperparams, quadrature_order: int = 16):
        self.h = h
        self.order = int(quadrature_order)
        self.starts = np.atleast_2d(np.asarray(starts, dtype=float)).reshape(-1, h.dim)
        self.ends = np.atleast_2d(np.asarray(ends, dtype=float)).reshape(-1, h.dim)
        self.deviators = np.array([unique_deviator(a, b) for a, b in zip(self.starts, self.ends)], dtype=int)
        self.dx = self.ends[np.arange(len(self.ends)), self.deviators] - self.starts[np.arange(len(self.starts)), self.deviators]
        self._pi = None

    @classmethod
    def from_path(cls, path: PathHistory, h: GPHyperparams, quadrature_order: int = 16):
        pts = path.point_array
        if len(pts) < 2:
            return cls(np.zeros((0, h.dim)), np.zeros((0, h.dim)), h, quadrature_order)
        return cls(pts[:-1], pts[1:], h, quadrature_order)

    def __len__(self) -> int:
        return len(self.dx)

    def eta(self, queries) -> np.ndarray:
        """``cov(dU_k, Phi(x))``, shape ``(n_segments, n_queries)``."""
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        return gram(self.ends, q, self.h) - gram(self.starts, q, self.h)

    def gamma(self, queries) -> np.ndarray:
        """``cov(dU_k, dPhi(x)/dx_i)``, shape ``(n_segments, n_queries, I)``."""
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        out = np.empty((len(self), len(q), self.h.dim))
        for i in range(self.h.dim):
            out[:, :, i] = se_kernel_grad(i, self.ends[:, None, :], q[None, :, :], self.h) - se_kernel_grad(
                i, self.starts[:, None, :], q[None, :, :], self.h
            )
        return out

    def pi(self) -> np.ndarray:
        """``cov(dU_k, dU_l)`` by Gauss-Legendre quadrature of the mixed second derivative."""
        if self._pi is None:
            self._pi = self._pi_quadrature(self.order)
        return self._pi

    def _pi_quadrature(self, order: int) -> np.ndarray:
        n = len(self)
        if n == 0:
            return np.zeros((0, 0))
        tau, w = _gauss_legendre_unit(order)
        # nodes r^k(tau_a): shape (n, q, I)
        r = self.starts[:, None, :] + tau[None, :, None] * (self.ends - self.starts)[:, None, :]
        lam2 = np.asarray(self.h.length_scales) ** 2
        diff = r[:, None, :, None, :] - r[None, :, None, :, :]  # (n, n, q, q, I)
        k = self.h.signal_variance * np.exp(-0.5 * np.sum(diff * diff / lam2, axis=-1))
        dk = self.deviators
        rows = np.arange(n)
        # d^2 k / d x_{d_k} d xb_{d_l} with x on segment k, xb on segment l
        diff_k = diff[rows[:, None], rows[None, :], :, :, dk[:, None]]
        diff_l = diff[rows[:, None], rows[None, :], :, :, dk[None, :]]
        same = (dk[:, None] == dk[None, :]).astype(float)[:, :, None, None]
        lam_k = lam2[dk][:, None, None, None]
        lam_l = lam2[dk][None, :, None, None]
        hess = k * (same / lam_k - diff_k * diff_l / (lam_k * lam_l))
        integral = np.einsum("klab,a,b->kl", hess, w, w)
        pi = self.dx[:, None] * self.dx[None, :] * integral
        return 0.5 * (pi + pi.T)


def integral_cov_blocks(path: PathHistory, queries, h: GPHyperparams, quadrature_order: int = 16):
    """``(gamma, pi, eta)`` for the path segments against ``queries``.

    ``gamma``: ``(n, m, I)`` covariances with query gradients; ``pi``: ``(n, n)``
    covariance of the integral observations; ``eta``: ``(n, m)`` covariances
    with query values.
    """
    model = IntegralObservationModel.from_path(path, h, quadrature_order)
    return model.gamma(queries), model.pi(), model.eta(queries)


# --------------------------------------------------------------------------
# posteriors
# --------------------------------------------------------------------------


class PathPosterior:
    """GP posterior given a path's integral observations, factorized once."""

    def __init__(self, path: PathHistory, h: GPHyperparams, quadrature_order: int = 16, correlated_noise: bool = False):
        self.h = h
        self.model = IntegralObservationModel.from_path(path, h, quadrature_order)
        n = len(self.model)
        self.n_obs = n
        if n:
            a = self.model.pi() + path.noise_covariance(h.noise_variance, correlated_noise)
            self.chol, self.jitter = stable_cholesky(a, h.jitter * h.signal_variance, h.signal_variance)
            # the prior mean of every difference is zero (constant prior mean)
            self.alpha = linalg.cho_solve((self.chol, True), np.asarray(path.delta_y, dtype=float))

    def _condition(self, prior_mean, prior_cov, cross) -> GaussianBelief:
        """Posterior of quantities with the given prior and ``cross = cov(dU, quantities)``."""
        if not self.n_obs:
            return GaussianBelief(prior_mean, prior_cov)
        mean = prior_mean + cross.T @ self.alpha
        v = linalg.solve_triangular(self.chol, cross, lower=True)
        cov = prior_cov - v.T @ v
        return GaussianBelief(mean, 0.5 * (cov + cov.T))

    def gradient(self, query) -> GaussianBelief:
        """Posterior of the full potential gradient at ``query``."""
        q = np.asarray(query, dtype=float)
        prior_cov = np.diag(self.h.signal_variance / np.asarray(self.h.length_scales) ** 2)
        cross = self.model.gamma(q[None, :])[:, 0, :] if self.n_obs else None
        return self._condition(np.zeros(self.h.dim), prior_cov, cross)

    def value_grad_joint(self, x, xbar, i: int) -> GaussianBelief:
        """Posterior of ``(Phi(xbar), Phi(x), dPhi(xbar)/dx_i, dPhi(x)/dx_i)``."""
        x = np.asarray(x, dtype=float)
        xbar = np.asarray(xbar, dtype=float)
        h = self.h
        pts = np.stack([xbar, x])
        k = gram(pts, pts, h)
        # cov(Phi(a), dPhi(b)/dx_i) = se_kernel_grad(i, a, b)
        kd = np.array([[se_kernel_grad(i, a, b, h) for b in pts] for a in pts])
        lam2 = h.length_scales[i] ** 2
        kdd = np.array([[_hess_ii(i, a, b, h, lam2) for b in pts] for a in pts])
        prior_cov = np.block([[k, kd], [kd.T, kdd]])
        prior_mean = np.array([h.prior_mean, h.prior_mean, 0.0, 0.0])
        cross = None
        if self.n_obs:
            eta = self.model.eta(pts)
            gam = self.model.gamma(pts)[:, :, i]
            cross = np.hstack([eta, gam])
        return self._condition(prior_mean, prior_cov, cross)


def _hess_ii(i, a, b, h, lam2):
    d = a[i] - b[i]
    return se_kernel(a, b, h) * (1.0 / lam2 - d * d / (lam2 * lam2))


def posterior_gradient(path: PathHistory, query, h: GPHyperparams, quadrature_order: int = 16, correlated_noise: bool = False) -> GaussianBelief:
    """Posterior belief over the potential gradient at ``query``."""
    return PathPosterior(path, h, quadrature_order, correlated_noise).gradient(query)


def joint_value_grad_posterior(x, xbar, i: int, path: PathHistory, h: GPHyperparams, quadrature_order: int = 16) -> GaussianBelief:
    """Posterior of ``(Phi(xbar), Phi(x), dPhi(xbar)/dx_i, dPhi(x)/dx_i)`` given the path."""
    return PathPosterior(path, h, quadrature_order).value_grad_joint(x, xbar, i)


def ascent_direction(gradient_mean, i: int) -> int:
    """Sign of the posterior mean partial derivative of player ``i``; ``+1`` at exactly zero."""
    return -1 if float(np.asarray(gradient_mean)[i]) < 0 else 1


# --------------------------------------------------------------------------
# line search and player selection
# --------------------------------------------------------------------------


def wolfe_matrix(step: float, sign: int, params: LineSearchParams) -> np.ndarray:
    """Map ``(Phi(xbar), Phi(x), dPhi(xbar)/dx_i, dPhi(x)/dx_i)`` to the Wolfe slacks ``(a, b)``.

    ``a = Phi(xbar) - Phi(x) - c1 step g(x)`` and ``b = c2 g(x) - g(xbar)`` with
    ``g = sign * dPhi/dx_i`` the directional derivative along the move.
    """
    return np.array(
        [
            [1.0, -1.0, 0.0, -params.c1 * step * sign],
            [0.0, 0.0, -float(sign), params.c2 * sign],
        ]
    )


def wolfe_probability(joint: GaussianBelief, step: float, sign: int, params: LineSearchParams) -> float:
    """Posterior probability that both Wolfe conditions hold for the move."""
    return orthant_probability(joint.linear_map(wolfe_matrix(step, sign, params)))


_Z_MAP = np.array([[1.0, -1.0, 0.0, 0.0]])


def improvement_belief(joint: GaussianBelief) -> tuple[float, float]:
    """Mean and standard deviation of ``Phi(xbar) - Phi(x)`` from the 4-D joint."""
    z = joint.linear_map(_Z_MAP)
    return float(z.mean[0]), float(np.sqrt(max(z.cov[0, 0], 0.0)))


@dataclass
class LineSearchResult:
    player: int
    sign: int
    accepted: bool
    step: float = 0.0  # nominal step tried last
    effective_step: float = 0.0  # after clipping to the action box
    p_wolfe: float = 0.0
    n_trials: int = 0
    clipped: bool = False
    target: np.ndarray | None = None
    joint: GaussianBelief | None = None
    ei: float = 0.0


def backtracking_line_search(
    player: int,
    x,
    posterior: PathPosterior,
    params: LineSearchParams,
    bounds=None,
    sign: int | None = None,
) -> LineSearchResult:
    """Shrink the step from ``max_step`` by ``backtrack_factor`` until ``P_w >= wolfe_threshold``.

    Only the GP posterior is consulted; no oracle calls are made. Steps are
    clipped to ``bounds`` when given; a move that clips to zero length is
    rejected.
    """
    x = np.asarray(x, dtype=float)
    if sign is None:
        sign = ascent_direction(posterior.gradient(x).mean, player)
    step = params.max_step
    result = LineSearchResult(player, sign, accepted=False)
    for trial in range(1, params.max_backtracks + 1):
        target = x.copy()
        target[player] += sign * step
        clipped = False
        if bounds is not None:
            lo, hi = bounds[player]
            new = min(max(target[player], lo), hi)
            clipped = new != target[player]
            target[player] = new
        eff = abs(target[player] - x[player])
        result.n_trials = trial
        result.step = step
        if eff > 0:
            joint = posterior.value_grad_joint(x, target, player)
            pw = wolfe_probability(joint, eff, sign, params)
            if pw >= params.wolfe_threshold:
                mu, sd = improvement_belief(joint)
                result.accepted = True
                result.effective_step = eff
                result.p_wolfe = pw
                result.clipped = clipped
                result.target = target
                result.joint = joint
                result.ei = float(expected_positive_part(mu, sd))
                return result
            result.p_wolfe = pw
        step *= params.backtrack_factor
    return result


def select_player(results) -> int | None:
    """Accepted player with the largest expected improvement; ``None`` when all rejected.

    Ties go to the lowest player index.
    """
    best, best_ei = None, -np.inf
    for r in sorted(results, key=lambda r: r.player):
        if r.accepted and r.ei > best_ei:
            best, best_ei = r.player, r.ei
    return best


# --------------------------------------------------------------------------
# solver
# --------------------------------------------------------------------------


def _measure(game, x, rng, step):
    try:
        return np.asarray(game.bandit_feedback(x, rng), dtype=float)
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise OracleError(f"oracle failed at step {step} for profile {x.tolist()}: {exc}") from exc


def _warmup_targets(x0, bounds, length):
    """One short move per player (round robin), reversed when it would leave the box."""
    x = np.asarray(x0, dtype=float).copy()
    out = []
    for i in range(len(x)):
        lo, hi = bounds[i]
        y = x.copy()
        y[i] = x[i] + length if x[i] + length <= hi else x[i] - length
        y[i] = min(max(y[i], lo), hi)
        if y[i] != x[i]:
            out.append(y)
            x = y
    return out


def solve_infinite(game: ContinuousGame, config: InfiniteSolverConfig, rng: np.random.Generator | None = None) -> SolveTrace:
    """Run the gradient-path search on a game with interval action sets."""
    if not isinstance(game, ContinuousGame):
        raise TypeError("solve_infinite needs a game with real-interval action sets")
    h = config.hyperparams
    if h.dim != game.n_players:
        raise ValueError(f"hyperparameters have {h.dim} length scales for {game.n_players} players")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    params = config.line_search
    bounds = game.bounds
    trace = SolveTrace("infinite", game.n_players)
    path = trace.path

    def record(x, y, phase, **extra):
        dev = path.append(tuple(float(v) for v in x), x, y)
        trace.add_row(
            phase=phase,
            deviator=None if dev is None else dev + 1,
            delta_y=path.delta_y[-1] if dev is not None else None,
            **{f"x_{i + 1}": v for i, v in enumerate(x)},
            **{f"y_{i + 1}": v for i, v in enumerate(y)},
            **extra,
        )

    if config.x0 is not None:
        x = np.asarray(config.x0, dtype=float)
        if x.shape != (game.n_players,) or not game.contains(x):
            raise ValueError(f"x0 {x.tolist()} is not a profile inside the action box")
    else:
        x = bounds[:, 0] + (bounds[:, 1] - bounds[:, 0]) * rng.random(game.n_players)
    record(x, _measure(game, x, rng, 0), "initial")
    for target in _warmup_targets(x, bounds, config.warmup_fraction * params.max_step):
        record(target, _measure(game, target, rng, len(trace.rows)), "initial")
        x = target

    reason = "max_iterations"
    clip_events = 0
    for it in range(1, config.max_iterations + 1):
        trace.iterations = it
        post = PathPosterior(path, h, config.quadrature_order, config.correlated_noise)
        grad = post.gradient(x)
        results = [
            backtracking_line_search(i, x, post, params, bounds, ascent_direction(grad.mean, i))
            for i in range(game.n_players)
        ]
        chosen = select_player(results)
        if chosen is None:
            trace.add_row(phase="search", **{f"x_{i + 1}": v for i, v in enumerate(x)})
            reason = "line_search_stalled"
            break
        res = results[chosen]
        if res.ei < config.ei_termination:
            trace.add_row(phase="search", ei=res.ei, **{f"x_{i + 1}": v for i, v in enumerate(x)})
            reason = "ei_below_threshold"
            break
        clip_events += int(res.clipped)
        x = res.target
        record(
            x,
            _measure(game, x, rng, len(trace.rows)),
            "search",
            ei=res.ei,
            step_size=res.effective_step * res.sign,
            p_wolfe=res.p_wolfe,
            clipped=res.clipped,
        )
        log.debug("iteration %d: player %d step %.4g ei %.4g", it, chosen, res.effective_step * res.sign, res.ei)

    trace.stopping_reason = reason
    trace.final_profile = tuple(float(v) for v in x)
    trace.final_point = x.copy()
    trace.n_oracle_calls = len(path)
    trace.extra["clip_events"] = clip_events
    return trace
