"""Batch command-line front end.

Commands: simulate, fit, summarize, sweep, explore.  Every command writes
into --out a manifest recording the command line, input digests (hashed
before any computation), the seed, and wall-clock timings; all other
outputs are byte-reproducible given identical inputs and seed.

Exit codes: 0 success, 1 runtime or numerical failure, 2 validation
failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from . import runio, summaries
from .gibbs import ChainError, NumericalError
from .model import (ClusterState, Dataset, ModelConfig, ParameterState,
                    load_dataset, load_state, save_dataset, save_state,
                    validate_config)
from .pipeline import (GapError, SchemaError, TransformSpec, build_dataset,
                       daily_averages, explore_monthly_ols, fill_gaps,
                       hourly_averages, ingest, read_coords, simulate_dataset)


class ValidationFailure(ValueError):
    pass


# ---------------------------------------------------------------------------
# Truth files for the simulator
# ---------------------------------------------------------------------------

def _fill(spec, shape) -> np.ndarray:
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 0:
        return np.full(shape, float(arr))
    return np.broadcast_to(arr, shape).copy()


def truth_from_dict(doc: dict, config: ModelConfig) -> ParameterState:
    """Build the generating parameters from a truth JSON document."""
    n, K, M, r = (config.n_sites, config.n_components, config.n_partitions,
                  config.n_factors)
    G = config.n_label_groups
    p_x, p_z = config.priors.p_x, config.priors.p_z
    labels = np.asarray(doc["labels"], dtype=np.int64)
    if labels.shape == (n, M):
        labels = labels[:, :, None]
        if G != 1:
            labels = np.repeat(labels, G, axis=2)
    if labels.shape != (n, M, G):
        raise ValidationFailure(
            f"truth labels must have shape ({n}, {M}) or ({n}, {M}, {G})")
    atoms_doc = doc["atoms"]  # atoms[m][c] when joint, atoms[m][g][c] otherwise
    atoms, counts = [], []
    for m in range(M):
        per_g_atoms, per_g_counts = [], []
        for g in range(G):
            entry = atoms_doc[m] if G == 1 else atoms_doc[m][g]
            table = [np.asarray(a, dtype=float).reshape(-1, p_x)
                     for a in entry]
            occu = np.bincount(labels[:, m, g], minlength=len(table))
            if labels[:, m, g].max() >= len(table):
                raise ValidationFailure(
                    f"truth labels in partition {m} reference missing atoms")
            per_g_atoms.append(tuple(table))
            per_g_counts.append(tuple(int(c) for c in occu))
        atoms.append(tuple(per_g_atoms))
        counts.append(tuple(per_g_counts))
    clusters = ClusterState(labels=labels, atoms=tuple(atoms),
                            counts=tuple(counts))
    coreg_doc = doc.get("coreg", {"below_diagonal": 0.0})
    if isinstance(coreg_doc, dict):
        coreg = np.eye(K)
        coreg[np.tril_indices(K, k=-1)] = float(coreg_doc["below_diagonal"])
    else:
        coreg = np.asarray(coreg_doc, dtype=float)
    return ParameterState(
        gamma=_fill(doc.get("gamma", 0.0), (n, M, K, p_z)),
        clusters=clusters,
        lam=_fill(doc.get("lambda", 0.0), (K, n, r)),
        coreg=coreg,
        tau2=_fill(doc.get("tau2", 1.0), (K,)),
        nu=np.zeros((r, K, 1)),
    )


def times_from_dict(doc: dict) -> np.ndarray:
    spec = doc["times"]
    if "values" in spec:
        return np.asarray(spec["values"], dtype=float)
    n = int(spec["n"])
    spacing = float(spec.get("spacing", 1.0))
    return spacing * np.arange(n, dtype=float)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    watch = runio.Stopwatch()
    config = runio.load_config(args.config)
    if args.seed is not None:
        config = _with_seed(config, args.seed)
    truth_doc = json.loads(Path(args.truth).read_text())
    inputs = {"config": runio.file_digest(args.config),
              "truth": runio.file_digest(args.truth)}
    violations = validate_config(config)
    if violations:
        raise ValidationFailure("; ".join(violations))
    truth = truth_from_dict(truth_doc, config)
    times = times_from_dict(truth_doc)
    rng = np.random.default_rng(config.mcmc.rng_seed)
    data, truth = simulate_dataset(config, truth, times, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(data, out / "dataset")
    save_state(truth, out / "truth")
    runio.dump_config(config, out / "config.echo")
    watch.lap("simulate")
    runio.write_manifest(out, sys.argv[1:], inputs, config.mcmc.rng_seed,
                         watch.laps)
    return 0


def cmd_fit(args) -> int:
    watch = runio.Stopwatch()
    config = runio.load_config(args.config)
    if args.seed is not None:
        config = _with_seed(config, args.seed)
    data = load_dataset(Path(args.data) / "dataset"
                        if (Path(args.data) / "dataset").is_dir()
                        else args.data)
    inputs = {"config": runio.file_digest(args.config),
              "data": _dataset_digest(args.data)}
    violations = validate_config(config, data)
    if violations:
        raise ValidationFailure("; ".join(violations))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runio.fit_run(config, data, out, resume=args.resume,
                  progress_every=args.progress, n_workers=args.threads)
    watch.lap("fit")
    runio.write_manifest(out, sys.argv[1:], inputs, config.mcmc.rng_seed,
                         watch.laps)
    return 0


def _dataset_digest(path) -> dict | str:
    p = Path(path)
    return runio.tree_digest(p) if p.is_dir() else runio.file_digest(p)


def _with_seed(config: ModelConfig, seed: int) -> ModelConfig:
    from dataclasses import replace
    return replace(config, mcmc=replace(config.mcmc, rng_seed=seed))


def cmd_summarize(args) -> int:
    watch = runio.Stopwatch()
    run_dir = Path(args.run)
    chains = runio.load_run(run_dir)
    if not any(ch.draws for ch in chains):
        raise ValidationFailure(f"run {run_dir} holds no retained draws")
    inputs = {"run": str(run_dir)}
    summary = summaries.summarize(chains)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    draws = [s for ch in chains for s in ch.draws]
    coords = _find_coords(args)
    summaries.write_summary_tables(summary, out, site_coords=coords,
                                   draws=draws)
    config = chains[0].config
    if args.truth:
        truth = load_state(args.truth)
        _write_recovery(out, summary, truth, config)
    if args.figure_data:
        _write_figure_data(out, summary, coords)
    watch.lap("summarize")
    runio.write_manifest(out, sys.argv[1:], inputs, config.mcmc.rng_seed,
                         watch.laps)
    return 0


def _find_coords(args):
    if getattr(args, "coords", None):
        return read_coords(args.coords).to_numpy(dtype=float)
    if getattr(args, "data", None):
        ds = Path(args.data)
        candidate = ds / "dataset" if (ds / "dataset").is_dir() else ds
        try:
            return load_dataset(candidate).site_coords
        except FileNotFoundError:
            return None
    return None


def _write_recovery(out: Path, summary, truth: ParameterState,
                    config: ModelConfig) -> None:
    rows = []
    for m in range(config.n_partitions):
        true_lab = truth.clusters.labels[:, m, 0]
        ari = summaries.adjusted_rand_index(summary.modal_labels[m], true_lab)
        rows.append((m, repr(float(ari))))
    with open(out / "recovery_ari.csv", "w") as fh:
        fh.write("m,adjusted_rand_index\n")
        for m, ari in rows:
            fh.write(f"{m},{ari}\n")


def _write_figure_data(out: Path, summary, coords) -> None:
    """Exact series behind the figure analogues not already emitted."""
    n = summary.cooccurrence_average.shape[0]
    if coords is not None:
        with open(out / "figure_share_vs_distance.csv", "w") as fh:
            fh.write("i,j,distance,share\n")
            for i in range(n):
                for j in range(i + 1, n):
                    d = float(np.linalg.norm(np.asarray(coords[i])
                                             - np.asarray(coords[j])))
                    fh.write(f"{i},{j},{d!r},"
                             f"{float(summary.cooccurrence_average[i, j])!r}\n")
        with open(out / "figure_cluster_map.csv", "w") as fh:
            fh.write("m,i,x,y,label\n")
            for m in range(summary.modal_labels.shape[0]):
                for i in range(n):
                    fh.write(f"{m},{i},{float(coords[i][0])!r},"
                             f"{float(coords[i][1])!r},"
                             f"{int(summary.modal_labels[m, i])}\n")


def cmd_sweep(args) -> int:
    watch = runio.Stopwatch()
    base = runio.load_config(args.config)
    spec = json.loads(Path(args.spec).read_text())
    data_dir = Path(args.data)
    data = load_dataset(data_dir / "dataset"
                        if (data_dir / "dataset").is_dir() else data_dir)
    inputs = {"config": runio.file_digest(args.config),
              "spec": runio.file_digest(args.spec)}
    axes = _sweep_axes(base, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for idx, cell in enumerate(axes):
        config = _apply_cell(base, cell)
        if args.seed is not None:
            config = _with_seed(config, args.seed)
        jobs.append((cell, config, data, out / f"cell{idx:03d}"))
    if args.threads > 1 and len(jobs) > 1:
        # cells are independent; parallelism is opt-in and does not change
        # any output byte (each cell is seeded by its own config)
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_run_sweep_cell, jobs))
    else:
        results = [_run_sweep_cell(job) for job in jobs]
    keys = ["cell", "alpha", "tau2_shape", "tau2_rate", "beta_base_scale",
            "dp_mode", "status", "mean_clusters", "error"]
    with open(out / "sweep_results.csv", "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in results:
            fh.write(",".join(str(row.get(k, "")) for k in keys) + "\n")
    watch.lap("sweep")
    runio.write_manifest(out, sys.argv[1:], inputs, base.mcmc.rng_seed,
                         watch.laps)
    return 0


def _run_sweep_cell(job) -> dict:
    cell, config, data, cell_dir = job
    row = dict(cell, cell=cell_dir.name)
    try:
        violations = validate_config(config, data)
        if violations:
            raise ValidationFailure("; ".join(violations))
        runio.fit_run(config, data, cell_dir)
        chains = runio.load_run(cell_dir)
        summary = summaries.summarize(chains)
        row["status"] = "ok"
        row["mean_clusters"] = repr(summary.cluster_count_grand_mean)
    except Exception as exc:  # record and continue with the grid
        row["status"] = "failed"
        row["mean_clusters"] = ""
        row["error"] = str(exc).replace("\n", " ")[:200]
    return row


def _sweep_axes(base: ModelConfig, spec: dict) -> list[dict]:
    alphas = spec.get("alpha", [base.dp_concentration])
    tau2 = spec.get("tau2_priors",
                    [[float(base.priors.tau2_shape[0]),
                      float(base.priors.tau2_rate[0])]])
    scales = spec.get("beta_base_scales", [None])
    modes = spec.get("dp_modes", [base.dp_mode])
    cells = []
    for a, (sh, ra), sc, mode in itertools.product(alphas, tau2, scales, modes):
        cells.append({"alpha": a, "tau2_shape": sh, "tau2_rate": ra,
                      "beta_base_scale": "" if sc is None else sc,
                      "dp_mode": mode})
    return cells


def _apply_cell(base: ModelConfig, cell: dict) -> ModelConfig:
    from dataclasses import replace
    pri = base.priors
    K = base.n_components
    beta_cov = pri.beta_base_cov
    if cell["beta_base_scale"] != "":
        beta_cov = np.stack([float(cell["beta_base_scale"])
                             * np.eye(pri.p_x)] * K)
    priors = replace(pri,
                     beta_base_cov=beta_cov,
                     tau2_shape=np.full(K, float(cell["tau2_shape"])),
                     tau2_rate=np.full(K, float(cell["tau2_rate"])))
    return replace(base, dp_concentration=float(cell["alpha"]),
                   dp_mode=cell["dp_mode"], priors=priors)


def cmd_explore(args) -> int:
    watch = runio.Stopwatch()
    data_dir = Path(args.data)
    data = load_dataset(data_dir / "dataset"
                        if (data_dir / "dataset").is_dir() else data_dir)
    inputs = {"data": str(data_dir)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    daily_averages(data).to_csv(out / "daily_averages.csv", index=False)
    hourly_averages(data).to_csv(out / "hourly_averages.csv", index=False)
    explore_monthly_ols(data).to_csv(out / "monthly_ols.csv", index=False)
    watch.lap("explore")
    runio.write_manifest(out, sys.argv[1:], inputs, 0, watch.laps)
    return 0


def cmd_build(args) -> int:
    """Ingest a long table, optionally fill gaps, and write a model dataset."""
    watch = runio.Stopwatch()
    inputs = {"table": runio.file_digest(args.table)}
    table = ingest(args.table, delimiter=args.delimiter)
    coords = None
    if args.coords:
        inputs["coords"] = runio.file_digest(args.coords)
        coords = read_coords(args.coords, delimiter=args.delimiter)
    table = fill_gaps(table, policy=args.gap_policy, coords=coords)
    transforms = json.loads(args.transforms) if args.transforms else None
    spec = TransformSpec(transforms=transforms) if transforms else TransformSpec()
    data = build_dataset(table, spec, coords=coords)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(data, out / "dataset")
    watch.lap("build")
    runio.write_manifest(out, sys.argv[1:], inputs, 0, watch.laps)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgpclust",
        description="Time-varying clustering of multivariate functional data")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")
        p.add_argument("--threads", type=int, default=1,
                       help="parallel workers for chains / sweep cells")

    p = sub.add_parser("simulate", help="generate a dataset from the forward model")
    p.add_argument("config")
    p.add_argument("truth")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the sampler on a dataset")
    p.add_argument("config")
    p.add_argument("data", help="dataset directory (from simulate or build)")
    p.add_argument("--resume", action="store_true",
                   help="continue from the last checkpoint in --out")
    p.add_argument("--progress", type=int, default=0,
                   help="print progress every N iterations")
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="turn a fit run into summary tables")
    p.add_argument("run", help="fit run directory")
    p.add_argument("--truth", default=None,
                   help="truth state directory for recovery scoring")
    p.add_argument("--data", default=None,
                   help="dataset directory (site coordinates for diagnostics)")
    p.add_argument("--coords", default=None, help="station coordinate sidecar")
    p.add_argument("--figure-data", "--plot-data", dest="figure_data",
                   action="store_true",
                   help="emit the exact series behind the figure analogues")
    common(p)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("sweep", help="sensitivity grid of fits")
    p.add_argument("config")
    p.add_argument("spec", help="JSON sweep specification")
    p.add_argument("--data", required=True, help="dataset directory")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("explore", help="exploratory tables for a dataset")
    p.add_argument("data", help="dataset directory")
    common(p)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("build", help="ingest a raw table into a model dataset")
    p.add_argument("table", help="long-format delimited measurements")
    p.add_argument("--coords", default=None, help="station coordinate sidecar")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--gap-policy", default="fail",
                   choices=["fail", "nearest-station"])
    p.add_argument("--transforms", default=None,
                   help='JSON mapping outcome -> transform, e.g. '
                        '{"ozone": "sqrt", "pm10": "log"}')
    common(p)
    p.set_defaults(func=cmd_build)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationFailure, SchemaError, GapError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ChainError, NumericalError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
