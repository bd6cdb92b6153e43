"""Gibbs sampler: every full-conditional block plus the chain driver.

Block update order within a sweep is fixed as

    labels -> cluster atoms -> gamma -> loadings -> mixing matrix
    -> noise variances -> latent factor paths

Any fixed order yields a valid kernel; this one refreshes atoms right
after the collapsed label pass.  The latent paths are updated one time
slice at a time in a forward pass (an r-vector draw per component per
slice), which keeps the whole sweep O(T); the scan is jit-compiled since
it is the only block that cannot be vectorized across time.

Every Gaussian block factors a symmetric positive-definite precision; on
factorization failure a jitter of 1e-10 is added to the diagonal and the
factorization retried once before aborting with block context.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import gammaln

from . import dp
from .gp import VAR_FLOOR, assemble_eta_all, sequential_log_density, simulate_factors
from .model import (ClusterState, Dataset, ModelConfig, ParameterState,
                    validate_config)

_LOG_2PI = float(np.log(2.0 * np.pi))

JITTER = 1e-10


class NumericalError(RuntimeError):
    """A conditional's precision could not be factorized even with jitter."""


class ChainError(RuntimeError):
    """A sweep block failed; carries the iteration index and block name."""


@dataclass(frozen=True)
class SweepReport:
    """Per-sweep diagnostics (timings are wall-clock and in-memory only;
    persisted sweep tables exclude them so output trees stay reproducible)."""

    iteration: int
    log_posterior: float
    cluster_count_per_partition: tuple
    block_ms: dict = field(default_factory=dict, compare=False, hash=False)


@dataclass(frozen=True)
class ChainOutput:
    """Retained post-burn-in thinned draws plus sweep diagnostics."""

    draws: tuple
    reports: tuple
    config: ModelConfig
    rng_seed: int
    chain_index: int = 0


def chol_with_jitter(prec: np.ndarray) -> np.ndarray:
    """Cholesky factor of a (possibly batched) precision; retries once with
    a small diagonal jitter before giving up."""
    try:
        return np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        eye = np.eye(prec.shape[-1])
        try:
            return np.linalg.cholesky(prec + JITTER * eye)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("precision not positive definite after jitter") from exc


def _draw_gaussian_batch(prec: np.ndarray, b: np.ndarray,
                         z: np.ndarray) -> np.ndarray:
    """Draw from N(prec^-1 b, prec^-1) for a batch of independent blocks.

    prec : (..., p, p), b, z : (..., p); consumes the supplied standard
    normals so that draw order is reproducible.
    """
    L = chol_with_jitter(prec)
    mean = np.linalg.solve(prec, b[..., None])[..., 0]
    Lt = np.swapaxes(L, -1, -2)
    noise = np.linalg.solve(Lt, z[..., None])[..., 0]
    return mean + noise


# ---------------------------------------------------------------------------
# Latent-path scan (the only sequential-in-time block)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _nu_scan(nu, A, tau2, gram, F, P, e_gap, v_gap, z):  # pragma: no cover
    """Forward pass over time slices; updates ``nu`` in place.

    nu    : (r, K, T) current paths (already a fresh copy)
    A     : (K, K) mixing matrix
    gram  : (K, r, r) loading Gram matrices lam[l]^T lam[l]
    F     : (K, T, r) loading-projected residuals lam[l]^T resid[:, l, t]
    P     : (K, r, r) data precisions sum_l A[l,k]^2 / tau2[l] * gram[l]
    e_gap : (K, T-1, r) transition multipliers per gap
    v_gap : (K, T-1, r) innovation variances per gap
    z     : (T, K, r) standard normals, consumed in scan order
    """
    r, K, T = nu.shape
    b = np.empty(r)
    s = np.empty(r)
    prec = np.empty((r, r))
    for t in range(T):
        for k in range(K):
            for j in range(r):
                b[j] = 0.0
            pd = np.zeros(r)
            if t > 0:
                for j in range(r):
                    pd[j] += 1.0 / v_gap[k, t - 1, j]
                    b[j] += e_gap[k, t - 1, j] / v_gap[k, t - 1, j] * nu[j, k, t - 1]
            else:
                for j in range(r):
                    pd[j] += 1.0
            if t < T - 1:
                for j in range(r):
                    pd[j] += e_gap[k, t, j] ** 2 / v_gap[k, t, j]
                    b[j] += e_gap[k, t, j] / v_gap[k, t, j] * nu[j, k, t + 1]
            for l in range(K):
                if A[l, k] == 0.0:
                    continue
                w = A[l, k] / tau2[l]
                for j in range(r):
                    acc = 0.0
                    for jj in range(K):
                        if jj != k:
                            acc += A[l, jj] * nu[j, jj, t]
                    s[j] = acc
                for j in range(r):
                    acc = F[l, t, j]
                    for j2 in range(r):
                        acc -= gram[l, j, j2] * s[j2]
                    b[j] += w * acc
            for j in range(r):
                for j2 in range(r):
                    prec[j, j2] = P[k, j, j2]
                prec[j, j] += pd[j]
            L = np.linalg.cholesky(prec)
            y = np.linalg.solve(L, b)
            mean = np.linalg.solve(L.T, y)
            noise = np.linalg.solve(L.T, z[t, k])
            for j in range(r):
                nu[j, k, t] = mean[j] + noise[j]


# ---------------------------------------------------------------------------
# Sampler
# ---------------------------------------------------------------------------

class GibbsSampler:
    """Binds a (config, data) pair and exposes the full-conditional blocks.

    Instances are cheap to build: construction precomputes the partition
    slices, per-segment design Gram matrices, prior factor transitions,
    and inverse prior covariances.
    """

    def __init__(self, config: ModelConfig, data: Dataset):
        violations = validate_config(config, data)
        if violations:
            raise ValueError("invalid configuration: " + "; ".join(violations))
        self.config = config
        self.data = data
        n, K, T = data.n_sites, config.n_components, data.n_times
        M, r = config.n_partitions, config.n_factors
        pri = config.priors
        self.slices = data.partition_slices(M)

        self.z_gram = np.zeros((n, M, pri.p_z, pri.p_z))
        self.x_gram = np.zeros((n, M, pri.p_x, pri.p_x))
        for m, sl in enumerate(self.slices):
            zs = data.z[:, :, sl]
            xs = data.x[:, :, sl]
            self.z_gram[:, m] = np.einsum('ipt,iqt->ipq', zs, zs)
            self.x_gram[:, m] = np.einsum('ipt,iqt->ipq', xs, xs)

        self.gamma_cov_inv = np.stack([np.linalg.inv(pri.gamma_cov[k]) for k in range(K)])
        self.beta_cov_inv = np.stack([np.linalg.inv(pri.beta_base_cov[k]) for k in range(K)])
        self.lambda_cov_inv = np.linalg.inv(pri.lambda_cov)
        self._base_measures = dp.base_measures_for(config, range(K))

        gaps = np.diff(data.times)
        rates = np.asarray(config.decay_rates, dtype=float)  # (K, r)
        self.e_gap = np.exp(-rates[:, None, :] * gaps[None, :, None])  # (K, T-1, r)
        self.v_gap = np.maximum(1.0 - self.e_gap ** 2, VAR_FLOOR)

    # -- residual helpers --------------------------------------------------

    def regression_mean(self, state: ParameterState) -> np.ndarray:
        """x^T beta + z^T gamma over all (site, component, time)."""
        beta = state.clusters.expand_beta(self.config)
        out = np.zeros_like(self.data.y)
        for m, sl in enumerate(self.slices):
            out[:, :, sl] = (
                np.einsum('ikp,ipt->ikt', beta[:, m], self.data.x[:, :, sl])
                + np.einsum('ikp,ipt->ikt', state.gamma[:, m], self.data.z[:, :, sl])
            )
        return out

    def _mean_x(self, state: ParameterState) -> np.ndarray:
        beta = state.clusters.expand_beta(self.config)
        out = np.zeros_like(self.data.y)
        for m, sl in enumerate(self.slices):
            out[:, :, sl] = np.einsum('ikp,ipt->ikt', beta[:, m], self.data.x[:, :, sl])
        return out

    def _mean_z(self, state: ParameterState) -> np.ndarray:
        out = np.zeros_like(self.data.y)
        for m, sl in enumerate(self.slices):
            out[:, :, sl] = np.einsum('ikp,ipt->ikt', state.gamma[:, m], self.data.z[:, :, sl])
        return out

    # -- label block --------------------------------------------------------

    def update_labels(self, state: ParameterState,
                      rng: np.random.Generator) -> ParameterState:
        """Collapsed label pass over every (site, partition) in fixed order."""
        cfg = self.config
        eta = assemble_eta_all(state.lam, state.coreg, state.nu)
        resid = self.data.y - self._mean_z(state) - eta  # offset-subtracted
        work = dp.MutableClusters.from_state(state.clusters)
        for m, sl in enumerate(self.slices):
            for g in range(cfg.n_label_groups):
                comps = cfg.components_of_group(g)
                tau2 = state.tau2[comps]
                bases = [self._base_measures[k] for k in comps]
                for i in range(cfg.n_sites):
                    res = resid[i][comps][:, sl]
                    X = self.data.x[i, :, sl].T
                    dp.resample_site_label(work, i, m, g, res, X, tau2,
                                           bases, cfg.dp_concentration, rng,
                                           xtx=self.x_gram[i, m])
        return state.replace(clusters=work.to_state())

    # -- conjugate Gaussian blocks -------------------------------------

    def beta_full_conditional(self, state: ParameterState, m: int, g: int,
                              c: int, k: int):
        """Posterior (mean, cov) of one cluster atom component."""
        cfg = self.config
        members = np.nonzero(state.clusters.labels[:, m, g] == c)[0]
        sl = self.slices[m]
        eta = assemble_eta_all(state.lam, state.coreg, state.nu)
        resid = self.data.y - self._mean_z(state) - eta
        prec = self.beta_cov_inv[k].copy()
        b = self.beta_cov_inv[k] @ cfg.priors.beta_base_mean[k]
        for i in members:
            prec += self.x_gram[i, m] / state.tau2[k]
            b = b + (self.data.x[i, :, sl] @ resid[i, k, sl]) / state.tau2[k]
        cov = np.linalg.inv(prec)
        return cov @ b, cov

    def update_beta_atoms(self, state: ParameterState,
                          rng: np.random.Generator) -> ParameterState:
        cfg = self.config
        eta = assemble_eta_all(state.lam, state.coreg, state.nu)
        resid = self.data.y - self._mean_z(state) - eta
        cl = state.clusters
        new_atoms = []
        for m, sl in enumerate(self.slices):
            per_g = []
            for g in range(cfg.n_label_groups):
                comps = cfg.components_of_group(g)
                table = []
                for c in range(cl.n_clusters(m, g)):
                    members = np.nonzero(cl.labels[:, m, g] == c)[0]
                    atom = np.empty((len(comps), cfg.priors.p_x))
                    for idx, k in enumerate(comps):
                        prec = self.beta_cov_inv[k].copy()
                        b = self.beta_cov_inv[k] @ cfg.priors.beta_base_mean[k]
                        for i in members:
                            prec += self.x_gram[i, m] / state.tau2[k]
                            b = b + (self.data.x[i, :, sl] @ resid[i, k, sl]) \
                                / state.tau2[k]
                        atom[idx] = _draw_gaussian_batch(
                            prec, b, rng.standard_normal(cfg.priors.p_x))
                    table.append(atom)
                per_g.append(tuple(table))
            new_atoms.append(tuple(per_g))
        clusters = ClusterState(labels=cl.labels.copy(), atoms=tuple(new_atoms),
                                counts=cl.counts)
        return state.replace(clusters=clusters)

    def gamma_full_conditional(self, state: ParameterState, i: int, m: int, k: int):
        """Posterior (mean, cov) of one free-coefficient block."""
        cfg = self.config
        sl = self.slices[m]
        eta = assemble_eta_all(state.lam, state.coreg, state.nu)
        resid = self.data.y - self._mean_x(state) - eta
        prec = self.z_gram[i, m] / state.tau2[k] + self.gamma_cov_inv[k]
        b = (self.data.z[i, :, sl] @ resid[i, k, sl]) / state.tau2[k] \
            + self.gamma_cov_inv[k] @ cfg.priors.gamma_mean[k]
        cov = np.linalg.inv(prec)
        return cov @ b, cov

    def update_gamma(self, state: ParameterState,
                     rng: np.random.Generator) -> ParameterState:
        cfg = self.config
        n, K, M = cfg.n_sites, cfg.n_components, cfg.n_partitions
        p_z = cfg.priors.p_z
        eta = assemble_eta_all(state.lam, state.coreg, state.nu)
        resid = self.data.y - self._mean_x(state) - eta
        gamma = np.empty((n, M, K, p_z))
        for m, sl in enumerate(self.slices):
            S = np.einsum('ipt,ikt->ikp', self.data.z[:, :, sl], resid[:, :, sl])
            prec = (self.z_gram[:, m, None, :, :] / state.tau2[None, :, None, None]
                    + self.gamma_cov_inv[None, :, :, :])
            b = (S / state.tau2[None, :, None]
                 + np.einsum('kpq,kq->kp', self.gamma_cov_inv,
                             cfg.priors.gamma_mean)[None, :, :])
            gamma[:, m] = _draw_gaussian_batch(prec, b,
                                               rng.standard_normal((n, K, p_z)))
        return state.replace(gamma=gamma)

    def lambda_full_conditional(self, state: ParameterState, i: int, k: int):
        """Posterior (mean, cov) of one loading row."""
        omega = np.einsum('j,rjt->rt', state.coreg[k], state.nu)
        resid = self.data.y - self.regression_mean(state)
        prec = omega @ omega.T / state.tau2[k] + self.lambda_cov_inv
        b = omega @ resid[i, k] / state.tau2[k]
        cov = np.linalg.inv(prec)
        return cov @ b, cov

    def update_lambda(self, state: ParameterState,
                      rng: np.random.Generator) -> ParameterState:
        cfg = self.config
        n, K, r = cfg.n_sites, cfg.n_components, cfg.n_factors
        resid = self.data.y - self.regression_mean(state)
        lam = np.empty_like(state.lam)
        for k in range(K):
            omega = np.einsum('j,rjt->rt', state.coreg[k], state.nu)  # (r, T)
            prec = omega @ omega.T / state.tau2[k] + self.lambda_cov_inv
            b = np.einsum('rt,it->ir', omega, resid[:, k, :]) / state.tau2[k]
            lam[k] = _draw_gaussian_batch(
                np.broadcast_to(prec, (n, r, r)), b, rng.standard_normal((n, r)))
        return state.replace(lam=lam)

    def coreg_full_conditional(self, state: ParameterState, k: int, l: int):
        """Posterior (mean, var) of one strictly-below-diagonal mixing entry."""
        if not k > l:
            raise ValueError("only entries strictly below the diagonal are free")
        pri = self.config.priors
        resid = self.data.y - self.regression_mean(state)
        coef = state.lam[k] @ state.nu[:, l, :]            # (n, T)
        eta_k = state.lam[k] @ np.einsum('j,rjt->rt', state.coreg[k], state.nu)
        other = resid[:, k, :] - (eta_k - state.coreg[k, l] * coef)
        prec = 1.0 / pri.a_var + float(np.sum(coef * coef)) / state.tau2[k]
        b = pri.a_mean / pri.a_var + float(np.sum(coef * other)) / state.tau2[k]
        return b / prec, 1.0 / prec

    def update_coreg(self, state: ParameterState,
                     rng: np.random.Generator) -> ParameterState:
        cfg = self.config
        K = cfg.n_components
        if K == 1:
            return state
        pri = cfg.priors
        resid = self.data.y - self.regression_mean(state)
        A = state.coreg.copy()
        for k in range(1, K):
            eta_k = state.lam[k] @ np.einsum('j,rjt->rt', A[k], state.nu)
            for l in range(k):
                coef = state.lam[k] @ state.nu[:, l, :]
                other = resid[:, k, :] - (eta_k - A[k, l] * coef)
                prec = 1.0 / pri.a_var + float(np.sum(coef * coef)) / state.tau2[k]
                b = pri.a_mean / pri.a_var + float(np.sum(coef * other)) / state.tau2[k]
                new = b / prec + rng.standard_normal() / np.sqrt(prec)
                eta_k = eta_k + (new - A[k, l]) * coef
                A[k, l] = new
        return state.replace(coreg=A)

    def tau2_full_conditional(self, state: ParameterState, k: int):
        """Posterior inverse-gamma (shape, rate) for one noise variance."""
        pri = self.config.priors
        resid = self.data.y - self.regression_mean(state) \
            - assemble_eta_all(state.lam, state.coreg, state.nu)
        shape = pri.tau2_shape[k] + self.data.n_times * self.config.n_sites / 2.0
        rate = pri.tau2_rate[k] + 0.5 * float(np.sum(resid[:, k, :] ** 2))
        return shape, rate

    def update_tau2(self, state: ParameterState,
                    rng: np.random.Generator) -> ParameterState:
        pri = self.config.priors
        resid = self.data.y - self.regression_mean(state) \
            - assemble_eta_all(state.lam, state.coreg, state.nu)
        shape = pri.tau2_shape + self.data.n_times * self.config.n_sites / 2.0
        rate = pri.tau2_rate + 0.5 * np.sum(resid ** 2, axis=(0, 2))
        tau2 = rate / rng.gamma(shape)
        return state.replace(tau2=tau2)

    def nu_full_conditional(self, state: ParameterState, k: int, t: int):
        """Posterior (mean, cov) of the r-vector of factor values for
        component process k at time index t, interior or boundary."""
        cfg = self.config
        r, K, T = state.nu.shape
        pd = np.zeros(r)
        b = np.zeros(r)
        if t > 0:
            e, v = self.e_gap[k, t - 1], self.v_gap[k, t - 1]
            pd += 1.0 / v
            b += e / v * state.nu[:, k, t - 1]
        else:
            pd += 1.0
        if t < T - 1:
            e, v = self.e_gap[k, t], self.v_gap[k, t]
            pd += e ** 2 / v
            b += e / v * state.nu[:, k, t + 1]
        resid = self.data.y - self.regression_mean(state)
        prec = np.diag(pd)
        for l in range(K):
            if state.coreg[l, k] == 0.0:
                continue
            w = state.coreg[l, k] / state.tau2[l]
            gram = state.lam[l].T @ state.lam[l]
            prec += state.coreg[l, k] * w * gram
            s = np.zeros(r)
            for jj in range(K):
                if jj != k:
                    s += state.coreg[l, jj] * state.nu[:, jj, t]
            b = b + w * (state.lam[l].T @ resid[:, l, t] - gram @ s)
        cov = np.linalg.inv(prec)
        return cov @ b, cov

    def update_nu(self, state: ParameterState,
                  rng: np.random.Generator) -> ParameterState:
        cfg = self.config
        r, K, T = state.nu.shape
        resid = self.data.y - self.regression_mean(state)
        gram = np.einsum('kir,kis->krs', state.lam, state.lam)
        F = np.ascontiguousarray(np.einsum('kir,ikt->ktr', state.lam, resid))
        W = state.coreg ** 2 / state.tau2[:, None]
        P = np.einsum('lk,lrs->krs', W, gram)
        z = rng.standard_normal((T, K, r))
        nu = state.nu.copy()
        _nu_scan(nu, state.coreg, state.tau2, np.ascontiguousarray(gram), F,
                 np.ascontiguousarray(P), np.ascontiguousarray(self.e_gap),
                 np.ascontiguousarray(self.v_gap), z)
        return state.replace(nu=nu)

    # -- joint density & sweep ----------------------------------------------

    def log_joint(self, state: ParameterState) -> float:
        """Unnormalized log posterior (likelihood plus every prior term)."""
        cfg, pri = self.config, self.config.priors
        resid = self.data.y - self.regression_mean(state) \
            - assemble_eta_all(state.lam, state.coreg, state.nu)
        n, K, T = resid.shape
        out = 0.0
        for k in range(K):
            out += -0.5 * (n * T * (_LOG_2PI + np.log(state.tau2[k]))
                           + np.sum(resid[:, k, :] ** 2) / state.tau2[k])
        # gamma prior
        for k in range(K):
            d = state.gamma[:, :, k, :] - pri.gamma_mean[k]
            Vi = self.gamma_cov_inv[k]
            _, logdet = np.linalg.slogdet(pri.gamma_cov[k])
            quad = np.einsum('imp,pq,imq->', d, Vi, d)
            out += -0.5 * (d.shape[0] * d.shape[1] * (pri.p_z * _LOG_2PI + logdet) + quad)
        # atoms and partition prior
        alpha = cfg.dp_concentration
        cl = state.clusters
        for m in range(cfg.n_partitions):
            for g in range(cfg.n_label_groups):
                comps = cfg.components_of_group(g)
                counts = cl.counts[m][g]
                out += (len(counts) * np.log(alpha)
                        + sum(gammaln(c) for c in counts)
                        + gammaln(alpha) - gammaln(alpha + cfg.n_sites))
                for atom in cl.atoms[m][g]:
                    for idx, k in enumerate(comps):
                        d = atom[idx] - pri.beta_base_mean[k]
                        _, logdet = np.linalg.slogdet(pri.beta_base_cov[k])
                        quad = d @ self.beta_cov_inv[k] @ d
                        out += -0.5 * (pri.p_x * _LOG_2PI + logdet + quad)
        # loadings
        _, logdet = np.linalg.slogdet(pri.lambda_cov)
        quad = np.einsum('kir,rs,kis->', state.lam, self.lambda_cov_inv, state.lam)
        out += -0.5 * (K * cfg.n_sites * (cfg.n_factors * _LOG_2PI + logdet) + quad)
        # mixing entries
        for k in range(1, K):
            for l in range(k):
                d = state.coreg[k, l] - pri.a_mean
                out += -0.5 * (_LOG_2PI + np.log(pri.a_var) + d * d / pri.a_var)
        # noise variances, inverse-gamma
        for k in range(K):
            a, bb = pri.tau2_shape[k], pri.tau2_rate[k]
            out += (a * np.log(bb) - gammaln(a)
                    - (a + 1) * np.log(state.tau2[k]) - bb / state.tau2[k])
        # latent paths
        rates = np.asarray(cfg.decay_rates, dtype=float)
        for l in range(cfg.n_factors):
            for k in range(K):
                out += sequential_log_density(state.nu[l, k], self.data.times,
                                              rates[k, l])
        return float(out)

    def cluster_counts(self, state: ParameterState) -> tuple:
        cl = state.clusters
        out = []
        for m in range(self.config.n_partitions):
            per_g = [len(cl.counts[m][g]) for g in range(self.config.n_label_groups)]
            out.append(float(np.mean(per_g)))
        return tuple(out)

    _BLOCKS = ("labels", "beta_atoms", "gamma", "lambda", "coreg", "tau2", "nu")

    def sweep(self, state: ParameterState, rng: np.random.Generator,
              iteration: int = 0, compute_log_posterior: bool = True):
        """One full pass over all blocks; returns (state, SweepReport)."""
        timings = {}
        for name in self._BLOCKS:
            fn = getattr(self, "update_" + name)
            t0 = time.perf_counter()
            try:
                state = fn(state, rng)
            except Exception as exc:
                raise ChainError(
                    f"block '{name}' failed at iteration {iteration}: {exc}"
                ) from exc
            timings[name] = (time.perf_counter() - t0) * 1e3
        lp = self.log_joint(state) if compute_log_posterior else float("nan")
        report = SweepReport(iteration=iteration, log_posterior=lp,
                             cluster_count_per_partition=self.cluster_counts(state),
                             block_ms=timings)
        return state, report


# ---------------------------------------------------------------------------
# Prior state synthesis and the chain driver
# ---------------------------------------------------------------------------

def sample_prior_state(config: ModelConfig, times: np.ndarray,
                       rng: np.random.Generator) -> ParameterState:
    """Draw every unknown from its prior (used for chain init and for the
    forward side of joint-distribution tests).  Consumes the generator in a
    fixed documented order: gamma, labels/atoms, loadings, mixing, noise,
    latent paths."""
    pri = config.priors
    n, K, M, r = config.n_sites, config.n_components, config.n_partitions, config.n_factors
    gamma = np.empty((n, M, K, pri.p_z))
    for k in range(K):
        L = np.linalg.cholesky(pri.gamma_cov[k])
        gamma[:, :, k, :] = pri.gamma_mean[k] + \
            rng.standard_normal((n, M, pri.p_z)) @ L.T
    clusters = dp.sample_cluster_prior(config, rng)
    Ll = np.linalg.cholesky(pri.lambda_cov)
    lam = rng.standard_normal((K, n, r)) @ Ll.T
    coreg = np.eye(K)
    for k in range(1, K):
        for l in range(k):
            coreg[k, l] = pri.a_mean + np.sqrt(pri.a_var) * rng.standard_normal()
    tau2 = pri.tau2_rate / rng.gamma(pri.tau2_shape)
    nu = simulate_factors(config, times, rng)
    return ParameterState(gamma=gamma, clusters=clusters, lam=lam,
                          coreg=coreg, tau2=tau2, nu=nu)


def run_chain(config: ModelConfig, data: Dataset, rng: np.random.Generator,
              chain_index: int = 0, init_state: ParameterState | None = None,
              start_iteration: int = 0, keep_reports: bool = True,
              progress_every: int = 0) -> ChainOutput:
    """Run one chain for the configured schedule; deterministic given the
    generator state.  Retains iteration it (1-based) when
    it > burn_in and (it - burn_in) % thin == 0."""
    sampler = GibbsSampler(config, data)
    sched = config.mcmc
    state = init_state if init_state is not None \
        else sample_prior_state(config, data.times, rng)
    draws, reports = [], []
    for it in range(start_iteration + 1, sched.n_iterations + 1):
        state, report = sampler.sweep(state, rng, iteration=it,
                                      compute_log_posterior=keep_reports)
        if keep_reports:
            reports.append(report)
        if it > sched.burn_in and (it - sched.burn_in) % sched.thin == 0:
            draws.append(state)
        if progress_every and it % progress_every == 0:
            print(f"chain {chain_index}: iteration {it}/{sched.n_iterations}",
                  flush=True)
    return ChainOutput(draws=tuple(draws), reports=tuple(reports), config=config,
                       rng_seed=sched.rng_seed, chain_index=chain_index)


def chain_rngs(seed: int, n_chains: int) -> list[np.random.Generator]:
    """Independent per-chain streams spawned from one root seed."""
    root = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in root.spawn(n_chains)]


def fit_chains(config: ModelConfig, data: Dataset,
               progress_every: int = 0) -> list[ChainOutput]:
    """Run all configured chains sequentially with independent streams."""
    rngs = chain_rngs(config.mcmc.rng_seed, config.mcmc.n_chains)
    return [run_chain(config, data, rngs[j], chain_index=j,
                      progress_every=progress_every)
            for j in range(config.mcmc.n_chains)]
