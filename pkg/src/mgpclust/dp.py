"""Dirichlet-process clustering of regression coefficients.

Labels are resampled with a collapsed scheme: existing clusters are
weighted by their occupancy (excluding the site being updated) times the
segment likelihood at the cluster's atom; the new-cluster option is
weighted by the concentration parameter times the segment likelihood with
the coefficient vector integrated out against the base measure.  The
integral is evaluated through the Woodbury identity and the matrix
determinant lemma, so a segment of T_m observations costs O(T_m p^2)
rather than O(T_m^3).

All weight arithmetic is done in log space with a log-sum-exp
normalization; segment likelihoods over thousands of hours underflow
otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import assemble_eta_all
from .model import ClusterState, Dataset, ModelConfig, ParameterState

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class UrnWeights:
    """Per-cluster log weights (existing clusters in table order, then one
    final new-cluster entry) and their log-sum-exp normalization."""

    log_weights: np.ndarray
    normalized: np.ndarray

    @property
    def new_cluster_probability(self) -> float:
        return float(self.normalized[-1])


@dataclass(frozen=True)
class MarginalizedGaussian:
    """Segment-level observation law with the clustered coefficients
    integrated out: y ~ N(offset + X m_b, tau2 I + X V_b X^T).

    ``logpdf`` uses the Woodbury/determinant-lemma form; ``covariance``
    materializes the dense matrix for diagnostics only.
    """

    design: np.ndarray     # (T_m, p)
    base_mean: np.ndarray  # (p,)
    base_cov: np.ndarray   # (p, p)
    tau2: float
    offset: np.ndarray     # (T_m,)

    @property
    def mean(self) -> np.ndarray:
        return self.offset + self.design @ self.base_mean

    def covariance(self) -> np.ndarray:
        T = self.design.shape[0]
        return self.tau2 * np.eye(T) + self.design @ self.base_cov @ self.design.T

    def logpdf(self, y: np.ndarray) -> float:
        return _woodbury_marginal_loglik(
            np.asarray(y, float) - self.offset, self.design,
            self.base_mean, self.base_cov, self.tau2)


@dataclass(frozen=True)
class BaseMeasure:
    """One component's base measure with its precomputed inverse pieces."""

    mean: np.ndarray
    cov: np.ndarray
    inv: np.ndarray
    logdet: float
    inv_mean: np.ndarray

    @classmethod
    def from_moments(cls, mean: np.ndarray, cov: np.ndarray) -> "BaseMeasure":
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("base covariance must be positive definite") from exc
        inv = np.linalg.inv(cov)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        return cls(mean=mean, cov=cov, inv=inv, logdet=logdet,
                   inv_mean=inv @ mean)


def _marginal_loglik_base(y_res: np.ndarray, X: np.ndarray, base: BaseMeasure,
                          tau2: float, xtx: np.ndarray | None = None) -> float:
    """log N(y_res; X m_b, tau2 I + X V_b X^T) in O(T p^2) via the
    Woodbury identity and the matrix determinant lemma.

    ``y_res`` must already have any non-integrated mean terms removed;
    ``xtx`` may carry a precomputed X^T X.
    """
    T, p = X.shape
    if T == 0:
        return 0.0
    if xtx is None:
        xtx = X.T @ X
    M = base.inv + xtx / tau2
    r = y_res - X @ base.mean
    u = (X.T @ r) / tau2
    # closed forms for the tiny inner system; general Cholesky otherwise
    if p == 1:
        m00 = M[0, 0]
        logdet_m = np.log(m00)
        quad_m = u[0] * u[0] / m00
    elif p == 2:
        a, b, c = M[0, 0], M[0, 1], M[1, 1]
        det = a * c - b * b
        logdet_m = np.log(det)
        quad_m = (c * u[0] * u[0] - 2.0 * b * u[0] * u[1]
                  + a * u[1] * u[1]) / det
    else:
        Lm = np.linalg.cholesky(M)
        logdet_m = 2.0 * float(np.log(np.diag(Lm)).sum())
        w = np.linalg.solve(Lm, u)
        quad_m = float(w @ w)
    logdet = T * np.log(tau2) + base.logdet + logdet_m
    quad = float(r @ r) / tau2 - quad_m
    return float(-0.5 * (T * _LOG_2PI + logdet + quad))


def _woodbury_marginal_loglik(y_res: np.ndarray, X: np.ndarray, m_b: np.ndarray,
                              V_b: np.ndarray, tau2: float) -> float:
    return _marginal_loglik_base(y_res, X, BaseMeasure.from_moments(m_b, V_b),
                                 tau2)


def _segment_logliks(res: np.ndarray, X: np.ndarray, atoms: np.ndarray,
                     tau2: np.ndarray) -> np.ndarray:
    """Summed-over-components Gaussian log likelihood of one site's segment
    under each candidate atom.

    res : (n_comp, T_m) offset-subtracted responses
    X : (T_m, p) design
    atoms : (C, n_comp, p) candidate coefficient blocks
    tau2 : (n_comp,) noise variances
    """
    C, n_comp, _ = atoms.shape
    T = X.shape[0]
    if T == 0:
        return np.zeros(C)
    out = np.zeros(C)
    for k in range(n_comp):
        fitted = X @ atoms[:, k, :].T            # (T_m, C)
        sq = np.sum((res[k][:, None] - fitted) ** 2, axis=0)
        out += -0.5 * (T * (_LOG_2PI + np.log(tau2[k])) + sq / tau2[k])
    return out


# ---------------------------------------------------------------------------
# Mutable working copy used by the samplers
# ---------------------------------------------------------------------------

class MutableClusters:
    """List-backed twin of :class:`ClusterState` for in-place label passes."""

    def __init__(self, labels: np.ndarray, atoms, counts):
        self.labels = labels.copy()
        self.atoms = [[list(table) for table in per_g] for per_g in atoms]
        self.counts = [[list(cnt) for cnt in per_g] for per_g in counts]

    @classmethod
    def from_state(cls, state: ClusterState) -> "MutableClusters":
        return cls(state.labels, state.atoms, state.counts)

    def to_state(self) -> ClusterState:
        atoms = tuple(tuple(tuple(np.array(a) for a in table) for table in per_g)
                      for per_g in self.atoms)
        counts = tuple(tuple(tuple(int(c) for c in cnt) for cnt in per_g)
                       for per_g in self.counts)
        return ClusterState(labels=self.labels.copy(), atoms=atoms, counts=counts)

    def detach_site(self, i: int, m: int, g: int) -> None:
        """Remove site i from its cluster, dropping the cluster if emptied."""
        c = int(self.labels[i, m, g])
        self.counts[m][g][c] -= 1
        if self.counts[m][g][c] == 0:
            del self.counts[m][g][c]
            del self.atoms[m][g][c]
            lab = self.labels[:, m, g]
            lab[lab > c] -= 1
        self.labels[i, m, g] = -1

    def attach_site(self, i: int, m: int, g: int, c: int,
                    new_atom: np.ndarray | None = None) -> None:
        if new_atom is not None:
            self.atoms[m][g].append(new_atom)
            self.counts[m][g].append(0)
            c = len(self.atoms[m][g]) - 1
        self.counts[m][g][c] += 1
        self.labels[i, m, g] = c


# ---------------------------------------------------------------------------
# Prior sampling (urn scheme)
# ---------------------------------------------------------------------------

def urn_prior_sample(n_sites: int, alpha: float, base_sampler,
                     rng: np.random.Generator):
    """Sequential urn draw: site i starts a new cluster with probability
    alpha / (alpha + i - 1), otherwise copies a uniformly chosen previous
    site's label.  Returns (labels, atoms, counts)."""
    if not (alpha > 0):
        raise ValueError("concentration must be strictly positive")
    labels = np.empty(n_sites, dtype=np.int64)
    atoms: list[np.ndarray] = []
    counts: list[int] = []
    for i in range(n_sites):
        if i == 0 or rng.random() < alpha / (alpha + i):
            atoms.append(base_sampler(rng))
            counts.append(0)
            c = len(atoms) - 1
        else:
            c = int(labels[rng.integers(i)])
        labels[i] = c
        counts[c] += 1
    return labels, atoms, counts


def sample_cluster_prior(config: ModelConfig, rng: np.random.Generator) -> ClusterState:
    """Draw a full ClusterState (all partitions, all label groups) from the
    urn prior with the configured base measure."""
    pri = config.priors
    chol = [np.linalg.cholesky(pri.beta_base_cov[k]) for k in range(config.n_components)]

    def base_sampler_for(comps):
        def draw(r: np.random.Generator) -> np.ndarray:
            return np.stack([
                pri.beta_base_mean[k] + chol[k] @ r.standard_normal(pri.p_x)
                for k in comps
            ])
        return draw

    n, M, G = config.n_sites, config.n_partitions, config.n_label_groups
    labels = np.empty((n, M, G), dtype=np.int64)
    atoms, counts = [], []
    for m in range(M):
        per_g_atoms, per_g_counts = [], []
        for g in range(G):
            lab, at, cnt = urn_prior_sample(
                n, config.dp_concentration,
                base_sampler_for(config.components_of_group(g)), rng)
            labels[:, m, g] = lab
            per_g_atoms.append(tuple(at))
            per_g_counts.append(tuple(cnt))
        atoms.append(tuple(per_g_atoms))
        counts.append(tuple(per_g_counts))
    return ClusterState(labels=labels, atoms=tuple(atoms), counts=tuple(counts))


# ---------------------------------------------------------------------------
# Collapsed label updates
# ---------------------------------------------------------------------------

def _site_segment(data: Dataset, state: ParameterState, config: ModelConfig,
                  i: int, m: int):
    """Offset-subtracted responses and design for one (site, partition)."""
    sl = data.partition_slices(config.n_partitions)[m]
    eta = assemble_eta_all(state.lam, state.coreg, state.nu)      # (n, K, T)
    zg = np.einsum('kp,pt->kt', state.gamma[i, m], data.z[i, :, sl])
    res = data.y[i, :, sl] - zg - eta[i, :, sl]                   # (K, T_m)
    X = data.x[i, :, sl].T                                        # (T_m, p_x)
    return res, X


def new_cluster_marginal_loglik(i: int, m: int, k: int, state: ParameterState,
                                data: Dataset, config: ModelConfig) -> float:
    """Collapsed segment log likelihood of opening a new cluster for
    component k at (site i, partition m)."""
    res, X = _site_segment(data, state, config, i, m)
    pri = config.priors
    mg = MarginalizedGaussian(design=X, base_mean=pri.beta_base_mean[k],
                              base_cov=pri.beta_base_cov[k],
                              tau2=float(state.tau2[k]),
                              offset=np.zeros(X.shape[0]))
    return mg.logpdf(res[k])


def label_update_weights(i: int, m: int, state: ParameterState, data: Dataset,
                         config: ModelConfig, group: int = 0) -> UrnWeights:
    """Collapsed full-conditional weights for one site's label.

    Entry order: surviving existing clusters (site i excluded from the
    counts; clusters emptied by its removal are dropped), then the
    new-cluster entry.
    """
    res, X = _site_segment(data, state, config, i, m)
    comps = config.components_of_group(group)
    cl = state.clusters
    counts = list(cl.counts[m][group])
    own = int(cl.labels[i, m, group])
    counts[own] -= 1
    keep = [c for c, cnt in enumerate(counts) if cnt > 0]
    atoms = np.stack([cl.atoms[m][group][c] for c in keep]) if keep \
        else np.zeros((0, len(comps), config.priors.p_x))
    bases = [BaseMeasure.from_moments(config.priors.beta_base_mean[k],
                                      config.priors.beta_base_cov[k])
             for k in comps]
    return _weights_from_parts(
        res[comps], X, atoms,
        np.array([counts[c] for c in keep], dtype=float),
        state.tau2[comps], bases, config.dp_concentration)


def _weights_from_parts(res: np.ndarray, X: np.ndarray, atoms: np.ndarray,
                        counts: np.ndarray, tau2: np.ndarray, bases,
                        alpha: float, xtx: np.ndarray | None = None) -> UrnWeights:
    logw_exist = np.log(counts) + _segment_logliks(res, X, atoms, tau2) \
        if len(counts) else np.zeros(0)
    lm = 0.0
    for idx, base in enumerate(bases):
        lm += _marginal_loglik_base(res[idx], X, base, float(tau2[idx]), xtx)
    logw = np.concatenate([logw_exist, [np.log(alpha) + lm]])
    shifted = np.exp(logw - logw.max())
    norm = shifted / shifted.sum()
    return UrnWeights(log_weights=logw, normalized=norm)


def _categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    c = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(c, len(probs) - 1)


def _posterior_atom_draw(res: np.ndarray, X: np.ndarray, tau2: np.ndarray,
                         bases, rng: np.random.Generator) -> np.ndarray:
    """Conjugate posterior draw of a new atom from one site's segment."""
    p = bases[0].mean.shape[0]
    out = np.empty((len(bases), p))
    for idx, base in enumerate(bases):
        prec = base.inv + (X.T @ X) / tau2[idx]
        L = np.linalg.cholesky(prec)
        b = (X.T @ res[idx]) / tau2[idx] + base.inv_mean
        mean = np.linalg.solve(prec, b)
        out[idx] = mean + np.linalg.solve(L.T, rng.standard_normal(p))
    return out


def resample_site_label(work: MutableClusters, i: int, m: int, g: int,
                        res: np.ndarray, X: np.ndarray, tau2: np.ndarray,
                        bases, alpha: float, rng: np.random.Generator,
                        xtx: np.ndarray | None = None) -> None:
    """One collapsed label update on a mutable working copy.

    ``res`` is the (len(comps), T_m) offset-subtracted segment of site i,
    ``X`` its (T_m, p_x) design, ``bases`` the per-component base measures.
    """
    work.detach_site(i, m, g)
    atoms_list = work.atoms[m][g]
    atoms = np.stack(atoms_list) if atoms_list \
        else np.zeros((0, len(bases), bases[0].mean.shape[0]))
    weights = _weights_from_parts(res, X, atoms,
                                  np.array(work.counts[m][g], dtype=float),
                                  tau2, bases, alpha, xtx)
    choice = _categorical(weights.normalized, rng)
    if choice == len(atoms_list):
        atom = _posterior_atom_draw(res, X, tau2, bases, rng)
        work.attach_site(i, m, g, -1, new_atom=atom)
    else:
        work.attach_site(i, m, g, choice)


def base_measures_for(config: ModelConfig, comps) -> list[BaseMeasure]:
    return [BaseMeasure.from_moments(config.priors.beta_base_mean[k],
                                     config.priors.beta_base_cov[k])
            for k in comps]


def resample_label(i: int, m: int, state: ParameterState, data: Dataset,
                   config: ModelConfig, rng: np.random.Generator,
                   group: int = 0) -> ClusterState:
    """Functional form of one label update; returns a fresh ClusterState."""
    res, X = _site_segment(data, state, config, i, m)
    comps = config.components_of_group(group)
    work = MutableClusters.from_state(state.clusters)
    resample_site_label(work, i, m, group, res[comps], X, state.tau2[comps],
                        base_measures_for(config, comps),
                        config.dp_concentration, rng)
    return work.to_state()
