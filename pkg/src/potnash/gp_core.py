"""Gaussian-process primitives shared by the finite and infinite solvers.

Squared-exponential kernel with its first and second derivatives, exact
Gaussian conditioning with a jitter-escalating Cholesky, the closed form of
``E[max(Z, 0)]`` for Gaussian ``Z`` and the 2-D nonnegative-orthant
probability.

Derivative convention used throughout the package::

    se_kernel_grad(i, x, xb)    = d k(x, xb) / d xb_i          = cov(f(x), df(xb)/dx_i)
    se_kernel_hess(i, j, x, xb) = d^2 k(x, xb) / d x_i d xb_j  = cov(df(x)/dx_i, df(xb)/dx_j)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, linalg, special

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class NumericalError(ArithmeticError):
    """Raised when a covariance cannot be factorized even after jitter escalation."""


@dataclass(frozen=True)
class GPHyperparams:
    """Hyperparameters of the squared-exponential GP prior on the potential.

    ``length_scales`` holds one entry per player (action dimension).
    ``prior_mean`` is a constant mean; differences of the potential never see it.
    """

    output_scale: float
    length_scales: tuple[float, ...]
    noise_variance: float = 0.0
    jitter: float = JITTER_START
    prior_mean: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "length_scales", tuple(float(v) for v in np.atleast_1d(self.length_scales)))
        if not self.output_scale > 0:
            raise ValueError(f"output_scale must be > 0, got {self.output_scale}")
        if not self.length_scales or any(not v > 0 for v in self.length_scales):
            raise ValueError(f"length_scales must all be > 0, got {self.length_scales}")
        if not self.noise_variance >= 0:
            raise ValueError(f"noise_variance must be >= 0, got {self.noise_variance}")
        if not self.jitter >= 0:
            raise ValueError(f"jitter must be >= 0, got {self.jitter}")

    @property
    def dim(self) -> int:
        return len(self.length_scales)

    @property
    def signal_variance(self) -> float:
        return self.output_scale**2

    @classmethod
    def isotropic(cls, output_scale, length_scale, dim, **kwargs) -> "GPHyperparams":
        return cls(output_scale, (length_scale,) * dim, **kwargs)


@dataclass(frozen=True)
class GaussianBelief:
    """Mean vector and covariance matrix of a finite set of jointly Gaussian quantities."""

    mean: np.ndarray
    cov: np.ndarray = field(repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"mean shape {mean.shape} incompatible with covariance shape {cov.shape}")
        scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-10 * scale):
            raise ValueError("covariance is not symmetric")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def variance(self) -> np.ndarray:
        return np.clip(np.diag(self.cov), 0.0, None)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def linear_map(self, matrix, offset=None) -> "GaussianBelief":
        """Belief over ``matrix @ v + offset``."""
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        mean = m @ self.mean
        if offset is not None:
            mean = mean + offset
        cov = m @ self.cov @ m.T
        return GaussianBelief(mean, 0.5 * (cov + cov.T))

    def marginal(self, indices) -> "GaussianBelief":
        idx = np.asarray(indices, dtype=int)
        return GaussianBelief(self.mean[idx], self.cov[np.ix_(idx, idx)])


# --------------------------------------------------------------------------
# kernel and derivatives
# --------------------------------------------------------------------------


def _prepare(x, xb, h: GPHyperparams):
    x = np.asarray(x, dtype=float)
    xb = np.asarray(xb, dtype=float)
    if x.shape[-1:] != (h.dim,) or xb.shape[-1:] != (h.dim,):
        raise ValueError(
            f"points must have trailing dimension {h.dim}, got shapes {x.shape} and {xb.shape}"
        )
    return x, xb, np.asarray(h.length_scales) ** 2


def _check_index(i, h: GPHyperparams):
    if not 0 <= i < h.dim:
        raise IndexError(f"player index {i} out of range for {h.dim} dimensions")


def _maybe_scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def se_kernel(x, xb, h: GPHyperparams):
    """Squared-exponential covariance ``l^2 exp(-1/2 sum_j (x_j - xb_j)^2 / lambda_j^2)``.

    Broadcasts over leading dimensions of ``x`` and ``xb``.
    """
    x, xb, lam2 = _prepare(x, xb, h)
    d = x - xb
    return _maybe_scalar(h.signal_variance * np.exp(-0.5 * np.sum(d * d / lam2, axis=-1)))


def se_kernel_grad(i: int, x, xb, h: GPHyperparams):
    """``d k(x, xb) / d xb_i = k(x, xb) (x - xb)_i / lambda_i^2``."""
    _check_index(i, h)
    x, xb, lam2 = _prepare(x, xb, h)
    k = se_kernel(x, xb, h)
    return _maybe_scalar(k * (x[..., i] - xb[..., i]) / lam2[i])


def se_kernel_hess(i: int, j: int, x, xb, h: GPHyperparams):
    """``d^2 k / d x_i d xb_j = k (delta_ij / lambda_i^2 + (x - xb)_i (xb - x)_j / (lambda_i^2 lambda_j^2))``."""
    _check_index(i, h)
    _check_index(j, h)
    x, xb, lam2 = _prepare(x, xb, h)
    k = se_kernel(x, xb, h)
    delta = 1.0 / lam2[i] if i == j else 0.0
    cross = (x[..., i] - xb[..., i]) * (xb[..., j] - x[..., j]) / (lam2[i] * lam2[j])
    return _maybe_scalar(k * (delta + cross))


def gram(points_a, points_b, h: GPHyperparams) -> np.ndarray:
    """Kernel matrix between two point sets of shape ``(n, I)`` and ``(m, I)``."""
    a = np.atleast_2d(np.asarray(points_a, dtype=float))
    b = np.atleast_2d(np.asarray(points_b, dtype=float))
    return np.asarray(se_kernel(a[:, None, :], b[None, :, :], h))


# --------------------------------------------------------------------------
# conditioning
# --------------------------------------------------------------------------


def stable_cholesky(a, jitter: float = 0.0, scale: float = 1.0):
    """Lower Cholesky factor of ``a + j I`` for the smallest workable jitter ``j``.

    Tries ``jitter`` first, then escalates by factors of ten from
    ``JITTER_START * scale`` up to ``JITTER_MAX * scale``. Returns ``(L, j)``.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0)), jitter
    a = 0.5 * (a + a.T)
    ladder = [jitter]
    j = max(JITTER_START * scale, jitter * 10.0)
    while j <= JITTER_MAX * scale * (1 + 1e-12):
        ladder.append(j)
        j *= 10.0
    eye = np.eye(n)
    for j in ladder:
        try:
            return linalg.cholesky(a + j * eye, lower=True, check_finite=True), j
        except (linalg.LinAlgError, ValueError):
            continue
    with np.errstate(all="ignore"):
        eig = np.linalg.eigvalsh(a) if np.all(np.isfinite(a)) else np.array([np.nan])
    raise NumericalError(
        f"Cholesky failed for {n}x{n} matrix up to jitter {ladder[-1]:.1e}; "
        f"eigenvalue range [{eig.min():.3e}, {eig.max():.3e}], "
        f"condition estimate {abs(eig.max() / eig.min()) if eig.min() != 0 else np.inf:.3e}"
    )


def condition(
    joint: GaussianBelief,
    observed_indices: Sequence[int],
    observations,
    obs_noise_cov=None,
    *,
    jitter: float = 0.0,
    jitter_scale: float | None = None,
) -> GaussianBelief:
    """Posterior of the unobserved coordinates of ``joint`` given noisy observations.

    ``observations = joint[observed_indices] + noise`` with noise covariance
    ``obs_noise_cov`` (zero when omitted). Returns the belief over the remaining
    coordinates in their original order.
    """
    obs_idx = np.asarray(observed_indices, dtype=int).ravel()
    n = joint.dim
    if np.any(obs_idx < 0) or np.any(obs_idx >= n) or len(set(obs_idx.tolist())) != obs_idx.size:
        raise ValueError(f"observed_indices {obs_idx.tolist()} invalid for dimension {n}")
    free_idx = np.setdiff1d(np.arange(n), obs_idx)
    if obs_idx.size == 0:
        return joint.marginal(free_idx)

    y = np.asarray(observations, dtype=float).ravel()
    if y.size != obs_idx.size:
        raise ValueError(f"{y.size} observations for {obs_idx.size} observed indices")
    noise = np.zeros((obs_idx.size, obs_idx.size)) if obs_noise_cov is None else np.atleast_2d(obs_noise_cov)

    k_oo = joint.cov[np.ix_(obs_idx, obs_idx)] + noise
    k_fo = joint.cov[np.ix_(free_idx, obs_idx)]
    k_ff = joint.cov[np.ix_(free_idx, free_idx)]
    if jitter_scale is None:
        jitter_scale = max(float(np.mean(np.abs(np.diag(k_oo)))), 1e-300)
    chol, _ = stable_cholesky(k_oo, jitter, jitter_scale)

    resid = y - joint.mean[obs_idx]
    alpha = linalg.cho_solve((chol, True), resid)
    mean = joint.mean[free_idx] + k_fo @ alpha
    v = linalg.solve_triangular(chol, k_fo.T, lower=True)
    cov = k_ff - v.T @ v
    return GaussianBelief(mean, 0.5 * (cov + cov.T))


# --------------------------------------------------------------------------
# acquisition primitives
# --------------------------------------------------------------------------


def normal_cdf(z):
    """Standard normal CDF via erfc; accurate in both tails."""
    return 0.5 * special.erfc(-np.asarray(z, dtype=float) / _SQRT2)


def expected_positive_part(mu, sigma):
    """``E[max(Z, 0)]`` for ``Z ~ N(mu, sigma^2)``; ``max(mu, 0)`` when ``sigma == 0``.

    Vectorized over ``mu`` and ``sigma``.
    """
    scalar = np.ndim(mu) == 0 and np.ndim(sigma) == 0
    mu, sigma = np.broadcast_arrays(np.atleast_1d(np.asarray(mu, dtype=float)), np.atleast_1d(np.asarray(sigma, dtype=float)))
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    out = np.maximum(mu, 0.0)
    pos = sigma > 0
    if np.any(pos):
        m, s = mu[pos], sigma[pos]
        with np.errstate(over="ignore"):
            z = m / s
        zc = np.clip(z, -1e3, 1e3)  # keeps z*z finite; the density term is 0 there anyway
        out[pos] = m * normal_cdf(z) + s * _INV_SQRT_2PI * np.exp(-0.5 * zc * zc)
    return float(out[0]) if scalar else out


_DEGENERATE_VAR = 1e-300
_DEGENERATE_RHO = 1e-12


def _prob_nonneg(mean: float, var: float) -> float:
    if var <= _DEGENERATE_VAR:
        return 1.0 if mean >= 0 else 0.0
    return float(normal_cdf(mean / math.sqrt(var)))


def orthant_probability(belief: GaussianBelief) -> float:
    """``P(X_1 >= 0, X_2 >= 0)`` for a 2-D Gaussian belief.

    Integrates the conditional CDF of ``X_2`` against the density of ``X_1``
    with adaptive quadrature; rank-deficient covariances reduce to 1-D cases.
    """
    if belief.dim != 2:
        raise ValueError(f"orthant_probability needs a 2-D belief, got dimension {belief.dim}")
    m1, m2 = (float(v) for v in belief.mean)
    v1, v2 = (max(float(v), 0.0) for v in np.diag(belief.cov))
    c12 = float(belief.cov[0, 1])

    if v1 <= _DEGENERATE_VAR:
        return _prob_nonneg(m1, 0.0) * _prob_nonneg(m2, v2)
    if v2 <= _DEGENERATE_VAR:
        return _prob_nonneg(m1, v1) * _prob_nonneg(m2, 0.0)

    s1, s2 = math.sqrt(v1), math.sqrt(v2)
    rho = max(-1.0, min(1.0, c12 / (s1 * s2)))
    lower = -m1 / s1  # X_1 >= 0  <=>  z >= lower

    one_minus = 1.0 - rho * rho
    if one_minus <= _DEGENERATE_RHO:
        # X_2 = m2 + rho s2 z exactly; the event is an interval in z.
        if rho > 0:
            lo = max(lower, -m2 / (rho * s2))
            return float(normal_cdf(-lo))
        hi = -m2 / (rho * s2)
        return float(max(normal_cdf(hi) - normal_cdf(lower), 0.0))

    cond_sd = s2 * math.sqrt(one_minus)

    def integrand(z):
        return math.exp(-0.5 * z * z) * _INV_SQRT_2PI * float(normal_cdf((m2 + rho * s2 * z) / cond_sd))

    top = 12.0
    if lower >= top:
        return 0.0
    a = max(lower, -top)
    breaks = []
    if rho != 0.0:
        z0 = -m2 / (rho * s2)
        if a < z0 < top:
            breaks.append(z0)
    val, _ = integrate.quad(integrand, a, top, points=breaks or None, epsabs=1e-12, epsrel=1e-10, limit=200)
    return float(min(max(val, 0.0), 1.0))
