"""Core domain types shared by the sampler, simulator, and pipeline.

All types are frozen dataclasses holding numpy arrays.  Once constructed
they are treated as immutable value objects: updates produce new instances
(see ``replace``-style helpers on :class:`ParameterState`), so instances
are safe to share read-only across threads.

Array layout conventions used throughout the package:

* ``y``      -- (n, K, T)          observed/transformed responses
* ``x``      -- (n, p_x, T)        covariates with clustered coefficients
* ``z``      -- (n, p_z, T)        covariates with free coefficients
* ``gamma``  -- (n, M, K, p_z)     free regression coefficients
* ``lam``    -- (K, n, r)          factor loadings, one n x r matrix per component
* ``coreg``  -- (K, K)             lower triangular, unit diagonal
* ``tau2``   -- (K,)               noise variances
* ``nu``     -- (r, K, T)          latent unit-variance factor paths
* ``decay_rates`` -- (K, r)        exponential decay per (component process, factor)

Cluster labels live in :class:`ClusterState`; in joint mode there is a
single label group shared by all components, in independent mode one
group per component.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DP_JOINT = "joint"
DP_INDEPENDENT = "independent"

_FLOAT_FMT = repr  # repr of a Python float round-trips bit-exactly


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McmcSchedule:
    """Chain length bookkeeping: total sweeps, burn-in, thinning, seeding."""

    n_iterations: int
    burn_in: int
    thin: int
    rng_seed: int
    n_chains: int = 1

    @property
    def n_retained(self) -> int:
        return max((self.n_iterations - self.burn_in) // self.thin, 0)


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters for every conjugate block.

    Parameters
    ----------
    gamma_mean, gamma_cov : (K, p_z) and (K, p_z, p_z)
        Normal prior on the non-clustered coefficients, per component.
    beta_base_mean, beta_base_cov : (K, p_x) and (K, p_x, p_x)
        Base measure of the clustering prior, per component.
    lambda_cov : (r, r)
        Zero-mean normal prior covariance for each row of loadings.
    a_mean, a_var : float
        Prior moments for each strictly-below-diagonal mixing entry.
    tau2_shape, tau2_rate : (K,)
        Inverse-gamma hyperparameters for the noise variances.
    """

    gamma_mean: np.ndarray
    gamma_cov: np.ndarray
    beta_base_mean: np.ndarray
    beta_base_cov: np.ndarray
    lambda_cov: np.ndarray
    a_mean: float
    a_var: float
    tau2_shape: np.ndarray
    tau2_rate: np.ndarray

    @property
    def p_z(self) -> int:
        return self.gamma_mean.shape[1]

    @property
    def p_x(self) -> int:
        return self.beta_base_mean.shape[1]


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions, fixed decay rates, clustering mode, priors, and schedule."""

    n_sites: int
    n_components: int
    n_factors: int
    n_partitions: int
    decay_rates: np.ndarray  # (K, r), units 1/hour
    dp_concentration: float
    dp_mode: str  # DP_JOINT or DP_INDEPENDENT
    priors: PriorSpec
    mcmc: McmcSchedule

    @property
    def n_label_groups(self) -> int:
        return 1 if self.dp_mode == DP_JOINT else self.n_components

    def components_of_group(self, g: int) -> list[int]:
        if self.dp_mode == DP_JOINT:
            return list(range(self.n_components))
        return [g]


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Fully in-memory dataset: responses, covariates, times, partitions.

    ``times`` are real hours, strictly increasing.  ``partition_of`` maps
    each time index to a partition id in ``0..M-1`` and must be
    nondecreasing (partitions are contiguous time segments).
    """

    times: np.ndarray        # (T,)
    y: np.ndarray            # (n, K, T)
    x: np.ndarray            # (n, p_x, T)
    z: np.ndarray            # (n, p_z, T)
    partition_of: np.ndarray  # (T,) ints
    site_coords: np.ndarray | None = None  # (n, 2), diagnostics only
    transform_log: dict = field(default_factory=dict)

    @property
    def n_sites(self) -> int:
        return self.y.shape[0]

    @property
    def n_components(self) -> int:
        return self.y.shape[1]

    @property
    def n_times(self) -> int:
        return self.y.shape[2]

    @property
    def p_x(self) -> int:
        return self.x.shape[1]

    @property
    def p_z(self) -> int:
        return self.z.shape[1]

    def partition_slices(self, n_partitions: int) -> list[slice]:
        """Contiguous index ranges per partition (possibly empty)."""
        out = []
        for m in range(n_partitions):
            idx = np.nonzero(self.partition_of == m)[0]
            if idx.size == 0:
                out.append(slice(0, 0))
            else:
                out.append(slice(int(idx[0]), int(idx[-1]) + 1))
        return out


# ---------------------------------------------------------------------------
# Sampler state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterState:
    """Per-partition label vectors plus the atom table they reference.

    ``labels[i, m, g]`` is the cluster id of site ``i`` in partition ``m``
    for label group ``g`` (one group in joint mode, one per component in
    independent mode).  ``atoms[m][g]`` is a list of coefficient blocks,
    one ``(len(components), p_x)`` array per occupied cluster;
    ``counts[m][g][c]`` is that cluster's occupancy.  Labels are arbitrary
    per-draw integers with no identity across draws.
    """

    labels: np.ndarray                 # (n, M, G) int64
    atoms: tuple                       # atoms[m][g][c] -> (n_comp_g, p_x) array
    counts: tuple                      # counts[m][g][c] -> int

    @property
    def n_sites(self) -> int:
        return self.labels.shape[0]

    @property
    def n_partitions(self) -> int:
        return self.labels.shape[1]

    @property
    def n_groups(self) -> int:
        return self.labels.shape[2]

    def n_clusters(self, m: int, g: int = 0) -> int:
        return len(self.atoms[m][g])

    def expand_beta(self, config: ModelConfig) -> np.ndarray:
        """Materialize per-site coefficients as an (n, M, K, p_x) array."""
        n, M, G = self.labels.shape
        K = config.n_components
        p_x = config.priors.p_x
        beta = np.empty((n, M, K, p_x))
        for m in range(M):
            for g in range(G):
                comps = config.components_of_group(g)
                table = self.atoms[m][g]
                lab = self.labels[:, m, g]
                for i in range(n):
                    beta[i, m, comps, :] = table[lab[i]]
        return beta


@dataclass(frozen=True)
class ParameterState:
    """One full draw of every model unknown."""

    gamma: np.ndarray   # (n, M, K, p_z)
    clusters: ClusterState
    lam: np.ndarray     # (K, n, r)
    coreg: np.ndarray   # (K, K) lower triangular, unit diagonal
    tau2: np.ndarray    # (K,)
    nu: np.ndarray      # (r, K, T)

    def replace(self, **kw) -> "ParameterState":
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _is_spd(mat: np.ndarray) -> bool:
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        return False
    if not np.allclose(mat, mat.T, atol=1e-12):
        return False
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return False
    return True


def validate_config(config: ModelConfig, data: Dataset | None = None) -> list[str]:
    """Check every invariant; returns human-readable violations (never raises)."""
    v: list[str] = []
    c = config
    if c.n_sites < 1:
        v.append("n_sites must be a positive integer")
    if c.n_components < 1:
        v.append("n_components must be a positive integer")
    if c.n_factors < 1:
        v.append("n_factors must be a positive integer")
    if c.n_partitions < 1:
        v.append("n_partitions must be a positive integer")
    if c.dp_mode not in (DP_JOINT, DP_INDEPENDENT):
        v.append(f"dp_mode must be '{DP_JOINT}' or '{DP_INDEPENDENT}', got {c.dp_mode!r}")
    if not (np.isfinite(c.dp_concentration) and c.dp_concentration > 0):
        v.append("dp_concentration must be strictly positive")

    rates = np.asarray(c.decay_rates, dtype=float)
    if rates.shape != (c.n_components, c.n_factors):
        v.append(
            f"decay_rates must have shape (n_components, n_factors) = "
            f"({c.n_components}, {c.n_factors}), got {rates.shape}"
        )
    else:
        if not np.all(rates > 0):
            v.append("all decay rates must be strictly positive")
        if c.n_factors > 1 and not np.all(np.diff(rates, axis=1) > 0):
            v.append(
                "decay_rates must be strictly increasing across factors within "
                "each component (identifiability ordering)"
            )

    p = c.priors
    for name, arr, shape in [
        ("gamma_mean", p.gamma_mean, (c.n_components, None)),
        ("beta_base_mean", p.beta_base_mean, (c.n_components, None)),
    ]:
        if arr.ndim != 2 or arr.shape[0] != c.n_components:
            v.append(f"priors.{name} must be (n_components, dim), got {arr.shape}")
    for name, arr in [("gamma_cov", p.gamma_cov), ("beta_base_cov", p.beta_base_cov)]:
        if arr.ndim != 3 or arr.shape[0] != c.n_components or arr.shape[1] != arr.shape[2]:
            v.append(f"priors.{name} must be (n_components, dim, dim), got {arr.shape}")
        else:
            for k in range(arr.shape[0]):
                if not _is_spd(arr[k]):
                    v.append(f"priors.{name}[{k}] must be symmetric positive definite")
    if p.gamma_cov.ndim == 3 and p.gamma_mean.ndim == 2 and \
            p.gamma_cov.shape[1] != p.gamma_mean.shape[1]:
        v.append("priors.gamma_cov dimension does not match gamma_mean")
    if p.beta_base_cov.ndim == 3 and p.beta_base_mean.ndim == 2 and \
            p.beta_base_cov.shape[1] != p.beta_base_mean.shape[1]:
        v.append("priors.beta_base_cov dimension does not match beta_base_mean")
    if p.lambda_cov.shape != (c.n_factors, c.n_factors):
        v.append(
            f"priors.lambda_cov must be (n_factors, n_factors) = "
            f"({c.n_factors}, {c.n_factors}), got {p.lambda_cov.shape}"
        )
    elif not _is_spd(p.lambda_cov):
        v.append("priors.lambda_cov must be symmetric positive definite")
    if not (np.isfinite(p.a_var) and p.a_var > 0):
        v.append("priors.a_var must be strictly positive")
    for name, arr in [("tau2_shape", p.tau2_shape), ("tau2_rate", p.tau2_rate)]:
        if arr.shape != (c.n_components,):
            v.append(f"priors.{name} must have shape (n_components,), got {arr.shape}")
        elif not np.all(arr > 0):
            v.append(f"priors.{name} entries must be strictly positive")

    s = c.mcmc
    if s.n_iterations < 1:
        v.append("mcmc.n_iterations must be positive")
    if not (0 <= s.burn_in < s.n_iterations):
        v.append("mcmc.burn_in must satisfy 0 <= burn_in < n_iterations")
    if s.thin < 1:
        v.append("mcmc.thin must be positive")
    if s.n_chains < 1:
        v.append("mcmc.n_chains must be positive")
    if s.thin >= 1 and s.burn_in < s.n_iterations and s.n_retained < 1:
        v.append("mcmc schedule retains no draws: (n_iterations - burn_in) / thin < 1")
    if not (0 <= s.rng_seed < 2 ** 64):
        v.append("mcmc.rng_seed must fit in 64 unsigned bits")

    if data is not None:
        v.extend(_validate_data(c, data))
    return v


def _validate_data(c: ModelConfig, d: Dataset) -> list[str]:
    v: list[str] = []
    T = d.times.shape[0]
    if d.times.ndim != 1:
        v.append("times must be a 1-d vector")
    elif T > 1 and not np.all(np.diff(d.times) > 0):
        v.append("times must be strictly increasing")
    if d.y.shape != (c.n_sites, c.n_components, T):
        v.append(
            f"y must have shape (n_sites, n_components, T) = "
            f"({c.n_sites}, {c.n_components}, {T}), got {d.y.shape}"
        )
    for name, arr in [("x", d.x), ("z", d.z)]:
        if arr.ndim != 3 or arr.shape[0] != c.n_sites or arr.shape[2] != T:
            v.append(f"{name} must have shape (n_sites, p, T), got {arr.shape}")
    if d.x.ndim == 3 and d.x.shape[1] != c.priors.p_x:
        v.append(f"x second dimension {d.x.shape[1]} does not match priors (p_x={c.priors.p_x})")
    if d.z.ndim == 3 and d.z.shape[1] != c.priors.p_z:
        v.append(f"z second dimension {d.z.shape[1]} does not match priors (p_z={c.priors.p_z})")
    for name, arr in [("y", d.y), ("x", d.x), ("z", d.z), ("times", d.times)]:
        if not np.all(np.isfinite(arr)):
            v.append(f"{name} contains missing or non-finite values")
    if d.partition_of.shape != (T,):
        v.append(f"partition_of must have shape (T,) = ({T},), got {d.partition_of.shape}")
    else:
        if T > 1 and np.any(np.diff(d.partition_of) < 0):
            v.append("partition_of must be nondecreasing (contiguous time segments)")
        if T > 0 and (d.partition_of.min() < 0 or d.partition_of.max() >= c.n_partitions):
            v.append(f"partition_of values must lie in 0..{c.n_partitions - 1}")
    if d.site_coords is not None and d.site_coords.shape != (c.n_sites, 2):
        v.append(f"site_coords must have shape (n_sites, 2), got {d.site_coords.shape}")
    return v


def validate_state(state: ParameterState, config: ModelConfig) -> list[str]:
    """Invariant checks applied to simulator output and sampler sweeps."""
    v: list[str] = []
    K = config.n_components
    A = state.coreg
    if A.shape != (K, K):
        v.append(f"coreg must be ({K}, {K}), got {A.shape}")
    else:
        if not np.all(np.diag(A) == 1.0):
            v.append("coreg diagonal must be exactly 1")
        if not np.all(A[np.triu_indices(K, k=1)] == 0.0):
            v.append("coreg must be exactly 0 above the diagonal")
    if not np.all(state.tau2 > 0):
        v.append("tau2 must be strictly positive")
    cl = state.clusters
    for m in range(cl.n_partitions):
        for g in range(cl.n_groups):
            counts = cl.counts[m][g]
            labels = cl.labels[:, m, g]
            n_atoms = len(cl.atoms[m][g])
            if len(counts) != n_atoms:
                v.append(f"partition {m} group {g}: counts/atom table size mismatch")
                continue
            if any(cnt < 1 for cnt in counts):
                v.append(f"partition {m} group {g}: occupied cluster with count < 1")
            if sum(counts) != cl.n_sites:
                v.append(f"partition {m} group {g}: counts do not sum to n_sites")
            if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_atoms:
                v.append(f"partition {m} group {g}: label references missing atom")
            else:
                observed = np.bincount(labels, minlength=n_atoms)
                if not np.array_equal(observed, np.asarray(counts)):
                    v.append(f"partition {m} group {g}: counts do not match labels")
    for arr, name in [(state.gamma, "gamma"), (state.lam, "lam"), (state.nu, "nu")]:
        if not np.all(np.isfinite(arr)):
            v.append(f"{name} contains non-finite values")
    return v


# ---------------------------------------------------------------------------
# Plain-text serialization
#
# One CSV per parameter block, each row naming its indices.  Floats are
# written with repr() so that a write/read round trip is bit-exact.
# ---------------------------------------------------------------------------

def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                _FLOAT_FMT(val) if isinstance(val, float) else str(val)
                for val in row
            ) + "\n")


def _array_rows(arr: np.ndarray):
    for idx in np.ndindex(arr.shape):
        yield (*idx, float(arr[idx]))


def save_state(state: ParameterState, out_dir: str | Path) -> None:
    """Write one ParameterState as a directory of CSV files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "gamma.csv", ["i", "m", "k", "j", "value"], _array_rows(state.gamma))
    _write_csv(out / "lambda.csv", ["k", "i", "j", "value"], _array_rows(state.lam))
    _write_csv(out / "coreg.csv", ["k", "l", "value"], _array_rows(state.coreg))
    _write_csv(out / "tau2.csv", ["k", "value"], _array_rows(state.tau2))
    _write_csv(out / "nu.csv", ["l", "k", "t", "value"], _array_rows(state.nu))
    cl = state.clusters
    _write_csv(out / "labels.csv", ["i", "m", "g", "label"], _array_rows_int(cl.labels))
    atom_rows = []
    for m in range(cl.n_partitions):
        for g in range(cl.n_groups):
            for c, atom in enumerate(cl.atoms[m][g]):
                for (k, j), val in np.ndenumerate(atom):
                    atom_rows.append((m, g, c, k, j, float(val)))
    _write_csv(out / "atoms.csv", ["m", "g", "c", "k", "j", "value"], atom_rows)
    meta = {
        "n_sites": cl.n_sites,
        "n_partitions": cl.n_partitions,
        "n_groups": cl.n_groups,
        "shapes": {
            "gamma": list(state.gamma.shape),
            "lambda": list(state.lam.shape),
            "nu": list(state.nu.shape),
        },
    }
    (out / "state.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _array_rows_int(arr: np.ndarray):
    for idx in np.ndindex(arr.shape):
        yield (*idx, int(arr[idx]))


def _read_indexed(path: Path, n_index: int, shape, dtype=float) -> np.ndarray:
    arr = np.zeros(shape, dtype=dtype)
    with open(path) as fh:
        next(fh)
        for line in fh:
            parts = line.rstrip("\n").split(",")
            idx = tuple(int(p) for p in parts[:n_index])
            arr[idx] = dtype(parts[n_index])
    return arr


def load_state(in_dir: str | Path) -> ParameterState:
    """Inverse of :func:`save_state`; bit-exact for round trips."""
    src = Path(in_dir)
    meta = json.loads((src / "state.json").read_text())
    gamma = _read_indexed(src / "gamma.csv", 4, meta["shapes"]["gamma"])
    lam = _read_indexed(src / "lambda.csv", 3, meta["shapes"]["lambda"])
    K = lam.shape[0]
    coreg = _read_indexed(src / "coreg.csv", 2, (K, K))
    tau2 = _read_indexed(src / "tau2.csv", 1, (K,))
    nu = _read_indexed(src / "nu.csv", 3, meta["shapes"]["nu"])
    n, M, G = meta["n_sites"], meta["n_partitions"], meta["n_groups"]
    labels = _read_indexed(src / "labels.csv", 3, (n, M, G), dtype=int)
    raw: dict = {}
    with open(src / "atoms.csv") as fh:
        next(fh)
        for line in fh:
            m, g, c, k, j, val = line.rstrip("\n").split(",")
            raw.setdefault((int(m), int(g), int(c)), {})[(int(k), int(j))] = float(val)
    atoms = []
    for m in range(M):
        per_g = []
        for g in range(G):
            clusters = sorted(c for (mm, gg, c) in raw if mm == m and gg == g)
            table = []
            for c in clusters:
                entries = raw[(m, g, c)]
                kk = 1 + max(k for k, _ in entries)
                jj = 1 + max(j for _, j in entries)
                atom = np.zeros((kk, jj))
                for (k, j), val in entries.items():
                    atom[k, j] = val
                table.append(atom)
            per_g.append(table)
        atoms.append(per_g)
    counts = tuple(
        tuple(
            tuple(int(cnt) for cnt in np.bincount(labels[:, m, g],
                                                  minlength=len(atoms[m][g])))
            for g in range(G)
        )
        for m in range(M)
    )
    frozen_atoms = tuple(tuple(tuple(table) for table in per_g) for per_g in atoms)
    return ParameterState(gamma=gamma,
                          clusters=ClusterState(labels=labels, atoms=frozen_atoms,
                                                counts=counts),
                          lam=lam, coreg=coreg, tau2=tau2, nu=nu)


def save_dataset(data: Dataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "times.csv", ["t", "value"], _array_rows(data.times))
    _write_csv(out / "y.csv", ["i", "k", "t", "value"], _array_rows(data.y))
    _write_csv(out / "x.csv", ["i", "j", "t", "value"], _array_rows(data.x))
    _write_csv(out / "z.csv", ["i", "j", "t", "value"], _array_rows(data.z))
    _write_csv(out / "partition.csv", ["t", "partition"], _array_rows_int(data.partition_of))
    if data.site_coords is not None:
        _write_csv(out / "coords.csv", ["i", "axis", "value"], _array_rows(data.site_coords))
    meta = {
        "shapes": {"y": list(data.y.shape), "x": list(data.x.shape),
                   "z": list(data.z.shape)},
        "transform_log": data.transform_log,
    }
    (out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_dataset(in_dir: str | Path) -> Dataset:
    src = Path(in_dir)
    meta = json.loads((src / "dataset.json").read_text())
    y = _read_indexed(src / "y.csv", 3, meta["shapes"]["y"])
    x = _read_indexed(src / "x.csv", 3, meta["shapes"]["x"])
    z = _read_indexed(src / "z.csv", 3, meta["shapes"]["z"])
    T = y.shape[2]
    times = _read_indexed(src / "times.csv", 1, (T,))
    partition = _read_indexed(src / "partition.csv", 1, (T,), dtype=int)
    coords = None
    if (src / "coords.csv").exists():
        coords = _read_indexed(src / "coords.csv", 2, (y.shape[0], 2))
    return Dataset(times=times, y=y, x=x, z=z, partition_of=partition,
                   site_coords=coords, transform_log=meta.get("transform_log", {}))
