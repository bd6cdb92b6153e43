"""Posterior summaries over retained draws.

Everything here is label-invariant: clusters are summarized through
co-occurrence (how often two sites share a label) rather than label
identity, because labels carry no meaning across draws.  The "modal
partition" used for per-cluster coefficient reporting is the retained
draw whose label vector best agrees with the co-occurrence matrix; the
rule is deterministic and invariant to relabeling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, ParameterState


@dataclass(frozen=True)
class PosteriorSummary:
    cluster_count_mean: np.ndarray        # (M,)
    cluster_count_median: np.ndarray      # (M,)
    cluster_count_grand_mean: float
    per_chain_count_mean: tuple           # one grand mean per chain
    cooccurrence: np.ndarray              # (M, n, n)
    cooccurrence_average: np.ndarray      # (n, n)
    coef_rows: tuple                      # (m, cluster, size, k, j, mean, lo, hi)
    modal_labels: np.ndarray              # (M, n) canonicalized modal partition
    lambda_gram: np.ndarray               # (K, n, n) posterior-mean loading grams
    factor_norms: np.ndarray              # (K, r), rows sum to 1
    coreg_rows: tuple                     # (k, l, mean, lo, hi)


def _count_per_draw(draws, config: ModelConfig) -> np.ndarray:
    """(n_draws, M) occupied-cluster counts, averaged over label groups."""
    M, G = config.n_partitions, config.n_label_groups
    out = np.empty((len(draws), M))
    for d, state in enumerate(draws):
        for m in range(M):
            out[d, m] = np.mean([state.clusters.n_clusters(m, g)
                                 for g in range(G)])
    return out


def cluster_count_series(draws, config: ModelConfig):
    """Per-partition mean/median occupied-cluster counts plus the grand mean."""
    if not draws:
        raise ValueError("no retained draws to summarize")
    counts = _count_per_draw(draws, config)
    return counts.mean(axis=0), np.median(counts, axis=0), float(counts.mean())


def cooccurrence(draws, config: ModelConfig):
    """Fraction of draws in which each site pair shares a label, per
    partition, averaged over label groups; plus the across-partition mean."""
    if not draws:
        raise ValueError("no retained draws to summarize")
    n, M, G = config.n_sites, config.n_partitions, config.n_label_groups
    acc = np.zeros((M, n, n))
    for state in draws:
        lab = state.clusters.labels  # (n, M, G)
        same = (lab[:, None, :, :] == lab[None, :, :, :]).mean(axis=3)  # (n,n,M)
        acc += same.transpose(2, 0, 1)
    per = acc / len(draws)
    return per, per.mean(axis=0)


def modal_partition(draws, config: ModelConfig, m: int, group: int = 0):
    """Index and labels of the draw maximizing co-occurrence agreement.

    Agreement of draw d is the mean over site pairs of C[i,j] when the
    draw co-clusters (i, j) and 1 - C[i,j] otherwise, with C the
    co-occurrence matrix for partition m.  Ties break to the earliest
    draw, so the rule is deterministic.
    """
    per, _ = cooccurrence(draws, config)
    C = per[m]
    n = config.n_sites
    iu = np.triu_indices(n, k=1)
    best, best_score = 0, -np.inf
    for d, state in enumerate(draws):
        lab = state.clusters.labels[:, m, group]
        same = (lab[:, None] == lab[None, :])[iu]
        score = float(np.where(same, C[iu], 1.0 - C[iu]).mean()) if len(iu[0]) \
            else 1.0
        if score > best_score + 1e-15:
            best, best_score = d, score
    return best, _canonical_labels(draws[best].clusters.labels[:, m, group])


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters by order of first appearance (0, 1, 2, ...)."""
    out = np.empty_like(labels)
    mapping: dict[int, int] = {}
    for i, lab in enumerate(labels):
        mapping.setdefault(int(lab), len(mapping))
        out[i] = mapping[int(lab)]
    return out


def factor_norms(draws) -> np.ndarray:
    """Relative Euclidean norms of the posterior-mean loading columns."""
    if not draws:
        raise ValueError("no retained draws to summarize")
    lam_mean = np.mean([s.lam for s in draws], axis=0)  # (K, n, r)
    norms = np.linalg.norm(lam_mean, axis=1)            # (K, r)
    total = norms.sum(axis=1, keepdims=True)
    r = norms.shape[1]
    # an all-zero loading matrix carries no information: uniform shares
    return np.where(total > 0, norms / np.where(total > 0, total, 1.0), 1.0 / r)


def lambda_gram(draws) -> np.ndarray:
    """Posterior-mean between-site covariance of the residual loadings,
    one n x n matrix per component."""
    lam_mean = np.mean([s.lam for s in draws], axis=0)
    return np.einsum('kir,kjr->kij', lam_mean, lam_mean)


def lambda_gram_vs_distance(draws, site_coords: np.ndarray):
    """Off-diagonal gram entries paired with Euclidean inter-site distance.

    Returns rows (k, i, j, distance, gram) for i < j.
    """
    if site_coords is None:
        raise ValueError("site coordinates are required for distance diagnostics")
    gram = lambda_gram(draws)
    K, n, _ = gram.shape
    rows = []
    for k in range(K):
        for i in range(n):
            for j in range(i + 1, n):
                d = float(np.linalg.norm(site_coords[i] - site_coords[j]))
                rows.append((k, i, j, d, float(gram[k, i, j])))
    return rows


def coef_summaries(draws, config: ModelConfig):
    """Cluster-level coefficient means and 95% equal-tail intervals.

    For each partition, clusters are those of the modal partition; the
    per-draw statistic is the average coefficient over that cluster's
    member sites (label-invariant).  Rows are
    (m, cluster, size, component, predictor, mean, lo, hi).
    """
    if not draws:
        raise ValueError("no retained draws to summarize")
    K, p_x = config.n_components, config.priors.p_x
    betas = np.stack([s.clusters.expand_beta(config) for s in draws])
    rows = []
    modal = np.empty((config.n_partitions, config.n_sites), dtype=np.int64)
    for m in range(config.n_partitions):
        _, labels = modal_partition(draws, config, m)
        modal[m] = labels
        for c in np.unique(labels):
            members = np.nonzero(labels == c)[0]
            series = betas[:, members, m].mean(axis=1)  # (n_draws, K, p_x)
            for k in range(K):
                for j in range(p_x):
                    s = series[:, k, j]
                    lo, hi = np.quantile(s, [0.025, 0.975])
                    rows.append((m, int(c), len(members), k, j,
                                 float(s.mean()), float(lo), float(hi)))
    return tuple(rows), modal


def coreg_summary(draws):
    """Posterior mean and 95% interval per strictly-below-diagonal entry."""
    A = np.stack([s.coreg for s in draws])  # (n_draws, K, K)
    K = A.shape[1]
    rows = []
    for k in range(1, K):
        for l in range(k):
            s = A[:, k, l]
            lo, hi = np.quantile(s, [0.025, 0.975])
            rows.append((k, l, float(s.mean()), float(lo), float(hi)))
    return tuple(rows)


def adjusted_rand_index(a, b) -> float:
    """Chance-corrected partition agreement in [-1, 1]; 1 means identical."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("label vectors must have equal length")
    n = a.size
    ua, inv_a = np.unique(a, return_inverse=True)
    ub, inv_b = np.unique(b, return_inverse=True)
    table = np.zeros((ua.size, ub.size))
    np.add.at(table, (inv_a, inv_b), 1.0)

    def comb2(v):
        return v * (v - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(n)
    max_idx = 0.5 * (sum_a + sum_b)
    if max_idx == expected:
        return 1.0
    return float((sum_ij - expected) / (max_idx - expected))


def write_summary_tables(summary: PosteriorSummary, out_dir,
                         site_coords: np.ndarray | None = None,
                         draws=None) -> None:
    """Emit the tidy CSV tables (one row per index combination).

    Floats are written with repr() so reruns produce identical bytes.
    """
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def write(name, header, rows):
        with open(out / name, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                  for v in row) + "\n")

    M = summary.cooccurrence.shape[0]
    write("cluster_counts.csv", ["m", "mean", "median"],
          [(m, float(summary.cluster_count_mean[m]),
            float(summary.cluster_count_median[m])) for m in range(M)]
          + [("all", summary.cluster_count_grand_mean,
              float(np.median(summary.cluster_count_median)))])
    write("per_chain_cluster_counts.csv", ["chain", "grand_mean"],
          [(j, v) for j, v in enumerate(summary.per_chain_count_mean)])
    n = summary.cooccurrence.shape[1]
    write("cooccurrence.csv", ["m", "i", "j", "share"],
          [(m, i, j, float(summary.cooccurrence[m, i, j]))
           for m in range(M) for i in range(n) for j in range(n)])
    write("cooccurrence_average.csv", ["i", "j", "share"],
          [(i, j, float(summary.cooccurrence_average[i, j]))
           for i in range(n) for j in range(n)])
    write("coef_summaries.csv",
          ["m", "cluster", "size", "component", "predictor",
           "mean", "lo95", "hi95"], summary.coef_rows)
    write("modal_partition.csv", ["m", "i", "label"],
          [(m, i, int(summary.modal_labels[m, i]))
           for m in range(M) for i in range(n)])
    K, r = summary.factor_norms.shape
    write("factor_norms.csv", ["component", "factor", "share"],
          [(k, j, float(summary.factor_norms[k, j]))
           for k in range(K) for j in range(r)])
    write("coreg_summary.csv", ["k", "l", "mean", "lo95", "hi95"],
          summary.coreg_rows)
    if site_coords is not None and draws is not None:
        write("lambda_gram_distance.csv",
              ["component", "i", "j", "distance", "gram"],
              lambda_gram_vs_distance(draws, site_coords))


def summarize(chains) -> PosteriorSummary:
    """Pool retained draws from one or more chains into a PosteriorSummary."""
    chains = list(chains)
    if not chains:
        raise ValueError("no chains to summarize")
    config = chains[0].config
    draws: list[ParameterState] = [s for ch in chains for s in ch.draws]
    mean, median, grand = cluster_count_series(draws, config)
    per_chain = tuple(
        float(cluster_count_series(list(ch.draws), config)[2]) for ch in chains
    )
    per, avg = cooccurrence(draws, config)
    coef_rows, modal = coef_summaries(draws, config)
    return PosteriorSummary(
        cluster_count_mean=mean,
        cluster_count_median=median,
        cluster_count_grand_mean=grand,
        per_chain_count_mean=per_chain,
        cooccurrence=per,
        cooccurrence_average=avg,
        coef_rows=coef_rows,
        modal_labels=modal,
        lambda_gram=lambda_gram(draws),
        factor_norms=factor_norms(draws),
        coreg_rows=coreg_summary(draws),
    )
