"""Hourly-table ingestion, transforms, design construction, exploration,
and the forward simulator.

Input format is long: one row per (station, timestamp, variable)
measurement, header ``station,timestamp,variable,value``, ISO-8601
timestamps at hour resolution.  Station coordinates ride in a sidecar
``station,x,y`` file (planar kilometers) and are only used for gap
filling and post-hoc distance diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .gp import assemble_eta_all, simulate_factors
from .model import Dataset, ModelConfig, ParameterState

OUTCOME_VARIABLES = ("ozone", "pm10")
COVARIATE_VARIABLES = ("relative_humidity", "temperature")
KNOWN_VARIABLES = OUTCOME_VARIABLES + COVARIATE_VARIABLES

REQUIRED_COLUMNS = ("station", "timestamp", "variable", "value")


class SchemaError(ValueError):
    """Input violates the documented table schema."""


class GapError(ValueError):
    """A missing measurement could not be resolved."""


@dataclass(frozen=True)
class RawTable:
    """Validated long table of hourly measurements."""

    frame: pd.DataFrame  # columns: station, timestamp, variable, value, imputed

    @property
    def stations(self) -> list[str]:
        return sorted(self.frame["station"].unique())

    @property
    def variables(self) -> list[str]:
        return sorted(self.frame["variable"].unique())

    def n_rows(self) -> int:
        return len(self.frame)


@dataclass(frozen=True)
class TransformSpec:
    """Per-outcome transform and the constants recorded after application.

    ``transforms`` maps outcome variable -> {'sqrt', 'log', 'none'};
    centering/scaling constants are filled in by :func:`build_dataset` and
    live in the resulting dataset's ``transform_log``.
    """

    transforms: dict = field(default_factory=lambda: {"ozone": "sqrt",
                                                      "pm10": "log"})
    scale_covariates: bool = True


def ingest(path, delimiter: str = ",", variables=KNOWN_VARIABLES) -> RawTable:
    """Read and validate a delimited long table.

    Raises SchemaError listing offending line numbers for unparseable
    rows, duplicate (station, timestamp, variable) keys, off-grid
    timestamps, or unknown variables.
    """
    try:
        raw = pd.read_csv(path, sep=delimiter, dtype=str)
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: empty input file") from exc
    missing = [c for c in REQUIRED_COLUMNS if c not in raw.columns]
    if missing:
        raise SchemaError(f"{path}: missing required columns {missing}")
    problems = []
    ts = pd.to_datetime(raw["timestamp"], errors="coerce", format="ISO8601")
    bad = np.nonzero(ts.isna().to_numpy())[0]
    if bad.size:
        problems.append("unparseable timestamps at lines "
                        + _line_list(bad))
    vals = pd.to_numeric(raw["value"], errors="coerce")
    bad = np.nonzero((vals.isna() & raw["value"].notna()).to_numpy())[0]
    if bad.size:
        problems.append("unparseable values at lines " + _line_list(bad))
    if not problems:
        off = np.nonzero(((ts.dt.minute != 0) | (ts.dt.second != 0)).to_numpy())[0]
        if off.size:
            problems.append("timestamps off the hourly grid at lines "
                            + _line_list(off))
        unknown = ~raw["variable"].isin(variables)
        if unknown.any():
            problems.append("unknown variables at lines "
                            + _line_list(np.nonzero(unknown.to_numpy())[0]))
        dup = raw.duplicated(subset=["station", "timestamp", "variable"],
                             keep=False)
        if dup.any():
            keys = raw.loc[dup, ["station", "timestamp", "variable"]]
            first = keys.iloc[0].tolist()
            problems.append(
                f"duplicate (station, timestamp, variable) keys, e.g. {first}, "
                "at lines " + _line_list(np.nonzero(dup.to_numpy())[0]))
    if problems:
        raise SchemaError(f"{path}: " + "; ".join(problems))
    frame = pd.DataFrame({
        "station": raw["station"],
        "timestamp": ts,
        "variable": raw["variable"],
        "value": vals.astype(float),
        "imputed": False,
    })
    frame = frame.sort_values(["station", "variable", "timestamp"],
                              kind="mergesort").reset_index(drop=True)
    return RawTable(frame=frame)


def _line_list(zero_based_rows, limit: int = 10) -> str:
    lines = [str(r + 2) for r in zero_based_rows[:limit]]  # +2: header + 1-based
    more = "" if len(zero_based_rows) <= limit else \
        f" (+{len(zero_based_rows) - limit} more)"
    return ", ".join(lines) + more


def read_coords(path, delimiter: str = ",") -> pd.DataFrame:
    """Station coordinate sidecar: columns station, x, y."""
    coords = pd.read_csv(path, sep=delimiter, dtype={"station": str})
    for col in ("station", "x", "y"):
        if col not in coords.columns:
            raise SchemaError(f"{path}: coordinate sidecar needs column '{col}'")
    return coords.set_index("station")[["x", "y"]].astype(float)


def fill_gaps(table: RawTable, policy: str = "nearest-station",
              coords: pd.DataFrame | None = None) -> RawTable:
    """Resolve missing (station, hour, variable) cells.

    ``nearest-station`` copies the value from the closest station (planar
    Euclidean distance, ties broken by station id) that recorded the
    variable at that hour and marks the row imputed; ``fail`` aborts on
    any gap.  A gap no station can donate for is always an error.
    """
    if policy not in ("nearest-station", "fail"):
        raise ValueError(f"unknown gap policy {policy!r}")
    frame = table.frame
    stations = table.stations
    variables = table.variables
    hours = pd.date_range(frame["timestamp"].min(), frame["timestamp"].max(),
                          freq="h")
    full = pd.MultiIndex.from_product([stations, hours, variables],
                                      names=["station", "timestamp", "variable"])
    indexed = frame.set_index(["station", "timestamp", "variable"])
    missing = full.difference(indexed.index)
    if missing.empty:
        return table
    if policy == "fail":
        first = missing[0]
        raise GapError(f"{len(missing)} missing measurements, e.g. {first}")
    if coords is None:
        raise GapError("nearest-station gap filling requires station coordinates")
    order = {}
    for st in stations:
        if st not in coords.index:
            raise GapError(f"no coordinates for station {st!r}")
        deltas = coords.loc[stations].to_numpy() - coords.loc[st].to_numpy()
        dist = np.hypot(deltas[:, 0], deltas[:, 1])
        order[st] = [stations[j] for j in np.lexsort((stations, dist))
                     if stations[j] != st]
    values = indexed["value"]
    new_rows = []
    for st, hour, var in missing:
        donor_value = None
        for donor in order[st]:
            key = (donor, hour, var)
            if key in values.index:
                donor_value = float(values.loc[key])
                break
        if donor_value is None:
            raise GapError(f"no station recorded {var} at {hour}; "
                           f"cannot fill gap for station {st!r}")
        new_rows.append((st, hour, var, donor_value, True))
    extra = pd.DataFrame(new_rows, columns=["station", "timestamp", "variable",
                                            "value", "imputed"])
    merged = pd.concat([frame, extra], ignore_index=True)
    merged = merged.sort_values(["station", "variable", "timestamp"],
                                kind="mergesort").reset_index(drop=True)
    return RawTable(frame=merged)


def _apply_transform(values: np.ndarray, kind: str, variable: str) -> np.ndarray:
    if kind == "none":
        return values.astype(float)
    if kind == "sqrt":
        if np.any(values < 0):
            bad = np.nonzero(values < 0)[0][:5]
            raise ValueError(f"{variable}: sqrt transform needs nonnegative "
                             f"values; offending indices {bad.tolist()}")
        return np.sqrt(values)
    if kind == "log":
        if np.any(values <= 0):
            bad = np.nonzero(values <= 0)[0][:5]
            raise ValueError(f"{variable}: log transform needs strictly "
                             f"positive values; offending indices {bad.tolist()}")
        return np.log(values)
    raise ValueError(f"unknown transform {kind!r} for {variable}")


def build_dataset(table: RawTable, transform: TransformSpec | None = None,
                  coords: pd.DataFrame | None = None,
                  covariates=COVARIATE_VARIABLES) -> Dataset:
    """Assemble the model arrays from a gap-free table.

    Outcomes are transformed, then centered and scaled with pooled
    (all-station, all-hour) constants; covariates are centered and scaled
    the same way.  The free-coefficient design is an intercept plus
    24-hour sine and cosine terms of the clock hour.  Partitions are
    calendar months in order of appearance.
    """
    transform = transform or TransformSpec()
    frame = table.frame
    outcomes = list(transform.transforms)
    stations = table.stations
    hours = np.sort(frame["timestamp"].unique())
    n, T, K, p_x = len(stations), len(hours), len(outcomes), len(covariates)

    wide = {}
    for var in outcomes + list(covariates):
        sub = frame[frame["variable"] == var]
        pivot = sub.pivot(index="station", columns="timestamp", values="value")
        pivot = pivot.reindex(index=stations, columns=hours)
        if pivot.isna().any().any():
            miss = int(pivot.isna().to_numpy().sum())
            raise GapError(f"variable {var!r} has {miss} missing cells; "
                           "run gap filling before building the dataset")
        wide[var] = pivot.to_numpy()

    log: dict = {"components": [], "covariates": [], "first_hour": str(hours[0])}
    y = np.empty((n, K, T))
    for k, var in enumerate(outcomes):
        kind = transform.transforms[var]
        tr = _apply_transform(wide[var], kind, var)
        center, scale = float(tr.mean()), float(tr.std())
        if scale == 0.0:
            scale = 1.0
        y[:, k, :] = (tr - center) / scale
        log["components"].append({"variable": var, "transform": kind,
                                  "center": center, "scale": scale})

    x = np.empty((n, p_x, T))
    for j, var in enumerate(covariates):
        vals = wide[var]
        if transform.scale_covariates:
            center, scale = float(vals.mean()), float(vals.std())
            if scale == 0.0:
                scale = 1.0
        else:
            center, scale = 0.0, 1.0
        x[:, j, :] = (vals - center) / scale
        log["covariates"].append({"variable": var, "center": center,
                                  "scale": scale})

    ts = pd.DatetimeIndex(hours)
    times = ((ts - ts[0]).total_seconds() / 3600.0).to_numpy()
    hod = ts.hour.to_numpy() + ts.minute.to_numpy() / 60.0
    z = np.empty((n, 3, T))
    z[:, 0, :] = 1.0
    z[:, 1, :] = np.sin(2 * np.pi * hod / 24.0)
    z[:, 2, :] = np.cos(2 * np.pi * hod / 24.0)

    month_key = ts.year.to_numpy() * 12 + ts.month.to_numpy()
    _, partition = np.unique(month_key, return_inverse=True)

    site_coords = None
    if coords is not None:
        site_coords = coords.loc[stations].to_numpy(dtype=float)

    return Dataset(times=times, y=y, x=x, z=z,
                   partition_of=partition.astype(np.int64),
                   site_coords=site_coords, transform_log=log)


def inverse_transform(dataset: Dataset, component: int,
                      values: np.ndarray) -> np.ndarray:
    """Undo center/scale and the nonlinear transform for one component."""
    info = dataset.transform_log["components"][component]
    raw = np.asarray(values, float) * info["scale"] + info["center"]
    if info["transform"] == "sqrt":
        return raw ** 2
    if info["transform"] == "log":
        return np.exp(raw)
    return raw


def explore_monthly_ols(dataset: Dataset) -> pd.DataFrame:
    """Per (station, month, component) least squares of the transformed
    outcome on an intercept plus the clustered covariates.

    Rank-deficient designs are flagged and their coefficients omitted.
    """
    n, K, T = dataset.y.shape
    p = dataset.p_x
    M = int(dataset.partition_of.max()) + 1
    rows = []
    for m in range(M):
        idx = dataset.partition_of == m
        for i in range(n):
            design = np.column_stack([np.ones(int(idx.sum())),
                                      dataset.x[i][:, idx].T])
            rank = np.linalg.matrix_rank(design)
            for k in range(K):
                if rank < p + 1:
                    rows.append((i, m, k, True) + (np.nan,) * (p + 1))
                    continue
                coef, *_ = np.linalg.lstsq(design, dataset.y[i, k, idx],
                                           rcond=None)
                rows.append((i, m, k, False) + tuple(float(c) for c in coef))
    cols = ["station", "month", "component", "rank_deficient", "intercept"] + \
        [f"slope_{j}" for j in range(p)]
    return pd.DataFrame(rows, columns=cols)


def daily_averages(dataset: Dataset) -> pd.DataFrame:
    """Mean transformed outcome per (station, component, day)."""
    day = (dataset.times // 24).astype(int)
    rows = []
    for d in np.unique(day):
        sel = day == d
        means = dataset.y[:, :, sel].mean(axis=2)
        for i in range(dataset.n_sites):
            for k in range(dataset.n_components):
                rows.append((i, k, int(d), float(means[i, k])))
    return pd.DataFrame(rows, columns=["station", "component", "day", "mean"])


def hourly_averages(dataset: Dataset) -> pd.DataFrame:
    """Mean transformed outcome per (station, component, hour of day)."""
    hod = np.mod(dataset.times, 24.0)
    rows = []
    for h in np.unique(hod):
        sel = hod == h
        means = dataset.y[:, :, sel].mean(axis=2)
        for i in range(dataset.n_sites):
            for k in range(dataset.n_components):
                rows.append((i, k, float(h), float(means[i, k])))
    return pd.DataFrame(rows, columns=["station", "component", "hour", "mean"])


# ---------------------------------------------------------------------------
# Forward simulation
# ---------------------------------------------------------------------------

def default_harmonic_design(n: int, times: np.ndarray) -> np.ndarray:
    """Intercept plus 24-hour sine/cosine shared by all sites."""
    z = np.empty((n, 3, times.size))
    z[:, 0, :] = 1.0
    z[:, 1, :] = np.sin(2 * np.pi * times / 24.0)
    z[:, 2, :] = np.cos(2 * np.pi * times / 24.0)
    return z


def equal_partition(times: np.ndarray, n_partitions: int) -> np.ndarray:
    """Contiguous equal-length partition of the time grid."""
    edges = np.linspace(0, times.size, n_partitions + 1).astype(int)
    part = np.empty(times.size, dtype=np.int64)
    for m in range(n_partitions):
        part[edges[m]:edges[m + 1]] = m
    return part


def simulate_responses(config: ModelConfig, data: Dataset,
                       state: ParameterState,
                       rng: np.random.Generator) -> np.ndarray:
    """Fresh responses given every parameter (including the latent paths)."""
    beta = state.clusters.expand_beta(config)
    y = np.empty_like(data.y)
    for m, sl in enumerate(data.partition_slices(config.n_partitions)):
        y[:, :, sl] = (np.einsum('ikp,ipt->ikt', beta[:, m], data.x[:, :, sl])
                       + np.einsum('ikp,ipt->ikt', state.gamma[:, m],
                                   data.z[:, :, sl]))
    y += assemble_eta_all(state.lam, state.coreg, state.nu)
    y += np.sqrt(state.tau2)[None, :, None] * rng.standard_normal(y.shape)
    return y


def simulate_dataset(config: ModelConfig, true_params: ParameterState,
                     times: np.ndarray, rng: np.random.Generator,
                     x: np.ndarray | None = None, z: np.ndarray | None = None,
                     partition_of: np.ndarray | None = None,
                     site_coords: np.ndarray | None = None):
    """Generate a dataset from the full forward model.

    Latent paths are redrawn (the ``nu`` in ``true_params`` is ignored);
    clustered/free coefficients, loadings, mixing, and noise come from
    ``true_params``.  Missing covariates are synthesized: unit-normal
    clustered covariates and the harmonic free design.  Returns
    (dataset, truth) where truth echoes ``true_params`` with the latent
    paths actually used.
    """
    times = np.asarray(times, float)
    n = config.n_sites
    if x is None:
        x = rng.standard_normal((n, config.priors.p_x, times.size))
    if z is None:
        z = default_harmonic_design(n, times)[:, :config.priors.p_z, :]
    if partition_of is None:
        partition_of = equal_partition(times, config.n_partitions)
    nu = simulate_factors(config, times, rng)
    truth = true_params.replace(nu=nu)
    shell = Dataset(times=times, y=np.zeros((n, config.n_components, times.size)),
                    x=x, z=z, partition_of=partition_of, site_coords=site_coords)
    y = simulate_responses(config, shell, truth, rng)
    data = Dataset(times=times, y=y, x=x, z=z, partition_of=partition_of,
                   site_coords=site_coords,
                   transform_log={"source": "simulation"})
    return data, truth
