"""Shared builders for small test instances."""

import numpy as np

from mgpclust.model import Dataset, McmcSchedule, ModelConfig, PriorSpec


def make_priors(K=2, p_x=2, p_z=2, r=2, gamma_scale=1.0, beta_scale=1.0,
                lambda_scale=1.0, a_mean=0.0, a_var=1.0,
                tau2_shape=3.0, tau2_rate=2.0, beta_mean=None):
    if beta_mean is None:
        beta_mean = np.zeros((K, p_x))
    return PriorSpec(
        gamma_mean=np.zeros((K, p_z)),
        gamma_cov=np.stack([gamma_scale * np.eye(p_z)] * K),
        beta_base_mean=np.asarray(beta_mean, float),
        beta_base_cov=np.stack([beta_scale * np.eye(p_x)] * K),
        lambda_cov=lambda_scale * np.eye(r),
        a_mean=a_mean,
        a_var=a_var,
        tau2_shape=np.full(K, float(tau2_shape)),
        tau2_rate=np.full(K, float(tau2_rate)),
    )


def make_config(n=3, K=2, r=2, M=2, p_x=2, p_z=2, alpha=1.0, dp_mode="joint",
                decay=None, priors=None, n_iterations=20, burn_in=10, thin=2,
                seed=1234, n_chains=1, **prior_kw):
    if decay is None:
        base = np.array([1 / 24, 1 / 3, 1.0, 2.0, 5.0][:r])
        decay = np.stack([base * (1.0 + 0.1 * k) for k in range(K)])
    if priors is None:
        priors = make_priors(K=K, p_x=p_x, p_z=p_z, r=r, **prior_kw)
    return ModelConfig(
        n_sites=n, n_components=K, n_factors=r, n_partitions=M,
        decay_rates=np.asarray(decay, float), dp_concentration=alpha,
        dp_mode=dp_mode, priors=priors,
        mcmc=McmcSchedule(n_iterations=n_iterations, burn_in=burn_in,
                          thin=thin, rng_seed=seed, n_chains=n_chains),
    )


def make_times(T, irregular=False, seed=0):
    if not irregular:
        return np.arange(T, dtype=float)
    rng = np.random.default_rng(seed)
    return np.cumsum(rng.uniform(0.3, 2.2, size=T))


def make_partition(T, M):
    edges = np.linspace(0, T, M + 1).astype(int)
    part = np.empty(T, dtype=np.int64)
    for m in range(M):
        part[edges[m]:edges[m + 1]] = m
    return part


def make_covariates(n, p_x, p_z, T, rng):
    x = rng.standard_normal((n, p_x, T))
    z = rng.standard_normal((n, p_z, T))
    z[:, 0, :] = 1.0
    return x, z


def make_dataset(config, rng=None, T=24, irregular=False):
    """Dataset drawn from the model itself under a prior state."""
    from mgpclust.gibbs import GibbsSampler, sample_prior_state
    from mgpclust.gp import assemble_eta_all

    rng = rng or np.random.default_rng(42)
    times = make_times(T, irregular=irregular)
    part = make_partition(T, config.n_partitions)
    x, z = make_covariates(config.n_sites, config.priors.p_x,
                           config.priors.p_z, T, rng)
    state = sample_prior_state(config, times, rng)
    beta = state.clusters.expand_beta(config)
    y = np.empty((config.n_sites, config.n_components, T))
    for m in range(config.n_partitions):
        sl = np.nonzero(part == m)[0]
        y[:, :, sl] = (np.einsum('ikp,ipt->ikt', beta[:, m], x[:, :, sl])
                       + np.einsum('ikp,ipt->ikt', state.gamma[:, m], z[:, :, sl]))
    y += assemble_eta_all(state.lam, state.coreg, state.nu)
    y += np.sqrt(state.tau2)[None, :, None] * rng.standard_normal(y.shape)
    data = Dataset(times=times, y=y, x=x, z=z, partition_of=part)
    return data, state
