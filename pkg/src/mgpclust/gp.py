"""Latent factor Gaussian-process machinery.

The latent paths are unit-variance processes with exponential temporal
correlation, i.e. continuous-time AR(1): for a gap ``d`` the transition is

    nu(t + d) | nu(t)  ~  N(exp(-phi d) nu(t), 1 - exp(-2 phi d))

which lets every joint density be peeled off sequentially in O(T) without
ever forming a T x T covariance matrix.  The dense constructions at the
bottom of the module (correlation matrices, the stacked two-time joint)
are diagnostics and test oracles only; the sampler never calls them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelConfig

# Variance floor applied before any innovation variance is used as a
# Gaussian variance; guards near-zero gaps.
VAR_FLOOR = 1e-15

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Ar1Step:
    """One conditional transition of a unit-variance exponential-correlation
    process: mean multiplier exp(-phi d) and innovation variance
    1 - exp(-2 phi d).  The two satisfy multiplier^2 + variance = 1."""

    mean_multiplier: float
    innovation_variance: float


@dataclass(frozen=True)
class CovarianceQuery:
    """Index pair (site, component, time) x (site', component', time')."""

    site_i: int
    site_j: int
    comp_k: int
    comp_l: int
    t: float
    t_prime: float


def ar1_step(phi: float, delta_t: float) -> Ar1Step:
    """Transition coefficients over a nonnegative gap ``delta_t`` (hours)."""
    if not (phi > 0):
        raise ValueError(f"decay rate must be strictly positive, got {phi}")
    if delta_t < 0:
        raise ValueError(f"time gap must be nonnegative, got {delta_t}")
    m = float(np.exp(-phi * delta_t))
    # 1 - m*m rather than 1 - exp(-2 phi d): keeps m^2 + v = 1 exact.
    return Ar1Step(mean_multiplier=m, innovation_variance=1.0 - m * m)


def sequential_log_density(path: np.ndarray, times: np.ndarray, phi: float) -> float:
    """Log density of one latent path under the sequential representation.

    Equals the dense multivariate normal log density with correlation
    exp(-phi |t_s - t_u|) (see :func:`dense_exp_corr_logpdf`), but costs
    O(T).
    """
    path = np.asarray(path, dtype=float)
    times = np.asarray(times, dtype=float)
    if path.shape != times.shape or path.ndim != 1 or path.size < 1:
        raise ValueError("path and times must be 1-d vectors of equal positive length")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    out = -0.5 * (_LOG_2PI + path[0] ** 2)
    if path.size > 1:
        m = np.exp(-phi * np.diff(times))
        v = np.maximum(1.0 - m * m, VAR_FLOOR)
        resid = path[1:] - m * path[:-1]
        out += float(np.sum(-0.5 * (_LOG_2PI + np.log(v) + resid ** 2 / v)))
    return float(out)


def simulate_factors(config: ModelConfig, times: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw all r x K latent paths at ``times``; returns an (r, K, T) array.

    Path (l, k) uses decay rate ``decay_rates[k, l]``; marginally every
    value is N(0, 1), and distinct paths are independent.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    r, K, T = config.n_factors, config.n_components, times.size
    rates = np.asarray(config.decay_rates, dtype=float).T  # (r, K)
    nu = np.empty((r, K, T))
    draws = rng.standard_normal((T, r, K))
    nu[:, :, 0] = draws[0]
    gaps = np.diff(times)
    for s in range(1, T):
        m = np.exp(-rates * gaps[s - 1])
        sd = np.sqrt(np.maximum(1.0 - m * m, VAR_FLOOR))
        nu[:, :, s] = m * nu[:, :, s - 1] + sd * draws[s]
    return nu


def assemble_eta(lam: np.ndarray, coreg: np.ndarray, nu: np.ndarray,
                 site: int, comp: int, t_index: int) -> float:
    """Residual-process value for one (site, component, time index):

        eta_i^(k)(t) = sum_l lam[k, i, l] * sum_j coreg[k, j] * nu[l, j, t]
    """
    K, n, r = lam.shape
    if not (0 <= site < n and 0 <= comp < K and 0 <= t_index < nu.shape[2]):
        raise IndexError("site, component, or time index out of range")
    omega = nu[:, :, t_index] @ coreg[comp]        # (r,)
    return float(lam[comp, site] @ omega)


def assemble_eta_all(lam: np.ndarray, coreg: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Vectorized :func:`assemble_eta` over all indices; returns (n, K, T)."""
    omega = np.einsum('kj,ljt->lkt', coreg, nu)
    return np.einsum('kil,lkt->ikt', lam, omega)


def cross_covariance(query: CovarianceQuery, lam: np.ndarray, coreg: np.ndarray,
                     decay_rates: np.ndarray) -> float:
    """Covariance of the residual process between two (site, comp, time) points.

    Computed as the exact covariance of the generative process,

        sum_j A[k,j] A[k',j] sum_l lam[k,i,l] lam[k',i',l] exp(-rate[j,l] |dt|),

    which separates into the loading inner product times the mixing sum
    whenever the decay rates do not vary across factors, and reduces to
    the plain loading/mixing product at zero lag always.
    """
    dt = abs(query.t_prime - query.t)
    k, kp = query.comp_k, query.comp_l
    i, ip = query.site_i, query.site_j
    rates = np.asarray(decay_rates, dtype=float)  # (K, r)
    decays = np.exp(-rates * dt)                  # (K, r)
    inner = lam[k, i] * lam[kp, ip]               # (r,)
    return float(np.sum(coreg[k] * coreg[kp] * (decays @ inner)))


def cross_covariance_matrix(lam: np.ndarray, coreg: np.ndarray,
                            decay_rates: np.ndarray, dt: float) -> np.ndarray:
    """All-pairs residual covariance at lag ``dt``: (nK, nK) with site-major
    blocks, entry ((i,k), (i',k')) = cross_covariance at that index pair."""
    K, n, r = lam.shape
    decays = np.exp(-np.asarray(decay_rates, dtype=float) * abs(dt))  # (K, r)
    # weight[k, kp, l] = sum_j A[k,j] A[kp,j] exp(-rate[j,l] dt)
    weight = np.einsum('kj,pj,jl->kpl', coreg, coreg, decays)
    cov = np.einsum('kil,pml,kpl->ikmp', lam, lam, weight)
    return cov.reshape(n * K, n * K)


def joint_gaussian(t_pair: tuple[float, float], lam: np.ndarray, coreg: np.ndarray,
                   decay_rates: np.ndarray, tau2: np.ndarray,
                   mean_t: np.ndarray | None = None,
                   mean_tp: np.ndarray | None = None):
    """Dense mean and covariance of the stacked 2nK vector (Y(t), Y(t')).

    Diagnostic construction: both diagonal blocks are the lag-0 residual
    covariance plus per-component noise; the off-diagonal block is the
    lagged residual covariance.  Returns (mean, cov).
    """
    t, tp = t_pair
    K, n, r = lam.shape
    D = np.kron(np.eye(n), np.diag(tau2))
    block0 = cross_covariance_matrix(lam, coreg, decay_rates, 0.0) + D
    blocklag = cross_covariance_matrix(lam, coreg, decay_rates, tp - t)
    cov = np.block([[block0, blocklag], [blocklag.T, block0]])
    if mean_t is None:
        mean_t = np.zeros(n * K)
    if mean_tp is None:
        mean_tp = np.zeros(n * K)
    mean = np.concatenate([mean_t, mean_tp])
    return mean, cov


# ---------------------------------------------------------------------------
# Dense diagnostics (test oracles; never used by the sampler)
# ---------------------------------------------------------------------------

def exp_corr_matrix(times: np.ndarray, phi: float) -> np.ndarray:
    """Dense correlation matrix exp(-phi |t_s - t_u|)."""
    times = np.asarray(times, dtype=float)
    return np.exp(-phi * np.abs(times[:, None] - times[None, :]))


def dense_exp_corr_logpdf(path: np.ndarray, times: np.ndarray, phi: float) -> float:
    """Zero-mean MVN log density with exponential correlation, via a dense
    Cholesky factorization.  O(T^3); oracle for sequential_log_density."""
    R = exp_corr_matrix(times, phi)
    L = np.linalg.cholesky(R)
    alpha = np.linalg.solve(L, np.asarray(path, dtype=float))
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return float(-0.5 * (len(path) * _LOG_2PI + logdet + alpha @ alpha))
