"""Run-directory layout, config files, chain persistence, and manifests.

A fit run directory looks like

    run/
      manifest.json          command echo, digests, seed, version, timings
      config.echo            full resolved configuration (JSON)
      chain0/
        states/*.csv         one file per parameter block, leading draw column
        sweeps.csv           iteration, log_posterior, cluster counts
        checkpoint/          latest sampler state + generator state (resume)
      chain1/ ...

Floats are written with repr() everywhere, so identical inputs and seed
reproduce identical output bytes; wall-clock timings appear only inside
the manifest.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from . import __version__
from .gibbs import ChainOutput, GibbsSampler, SweepReport, chain_rngs, sample_prior_state
from .model import (Dataset, McmcSchedule, ModelConfig, ParameterState, PriorSpec,
                    load_state, save_state)

_F = repr


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

def _expand_mean(spec, K: int, p: int) -> np.ndarray:
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 0:
        return np.full((K, p), float(arr))
    if arr.shape == (p,):
        return np.tile(arr, (K, 1))
    if arr.shape == (K, p):
        return arr
    raise ValueError(f"mean spec must be scalar, ({p},), or ({K}, {p}); "
                     f"got shape {arr.shape}")


def _expand_cov(spec, K: int, p: int) -> np.ndarray:
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 0:
        return np.stack([float(arr) * np.eye(p)] * K)
    if arr.shape == (p, p):
        return np.tile(arr, (K, 1, 1))
    if arr.shape == (K, p, p):
        return arr
    raise ValueError(f"covariance spec must be scalar, ({p}, {p}), or "
                     f"({K}, {p}, {p}); got shape {arr.shape}")


def config_from_dict(doc: dict) -> ModelConfig:
    """Build a ModelConfig from the documented JSON schema."""
    model = doc["model"]
    priors = doc["priors"]
    mcmc = doc["mcmc"]
    K = int(model["n_components"])
    r = int(model["n_factors"])
    p_x = int(priors["p_x"])
    p_z = int(priors["p_z"])
    lam_cov = np.asarray(priors.get("lambda_cov", 1.0), dtype=float)
    if lam_cov.ndim == 0:
        lam_cov = float(lam_cov) * np.eye(r)
    spec = PriorSpec(
        gamma_mean=_expand_mean(priors.get("gamma_mean", 0.0), K, p_z),
        gamma_cov=_expand_cov(priors.get("gamma_cov", 100.0), K, p_z),
        beta_base_mean=_expand_mean(priors.get("beta_base_mean", 0.0), K, p_x),
        beta_base_cov=_expand_cov(priors.get("beta_base_cov", 1.0), K, p_x),
        lambda_cov=lam_cov,
        a_mean=float(priors.get("a_mean", 0.0)),
        a_var=float(priors.get("a_var", 100.0)),
        tau2_shape=np.broadcast_to(
            np.asarray(priors.get("tau2_shape", 1.0), dtype=float), (K,)).copy(),
        tau2_rate=np.broadcast_to(
            np.asarray(priors.get("tau2_rate", 1.0), dtype=float), (K,)).copy(),
    )
    schedule = McmcSchedule(
        n_iterations=int(mcmc["n_iterations"]),
        burn_in=int(mcmc.get("burn_in", 0)),
        thin=int(mcmc.get("thin", 1)),
        rng_seed=int(mcmc.get("rng_seed", 0)),
        n_chains=int(mcmc.get("n_chains", 1)),
    )
    return ModelConfig(
        n_sites=int(model["n_sites"]),
        n_components=K,
        n_factors=r,
        n_partitions=int(model["n_partitions"]),
        decay_rates=np.asarray(model["decay_rates"], dtype=float),
        dp_concentration=float(model["dp_concentration"]),
        dp_mode=model.get("dp_mode", "joint"),
        priors=spec,
        mcmc=schedule,
    )


def config_to_dict(config: ModelConfig) -> dict:
    pri = config.priors
    return {
        "model": {
            "n_sites": config.n_sites,
            "n_components": config.n_components,
            "n_factors": config.n_factors,
            "n_partitions": config.n_partitions,
            "decay_rates": config.decay_rates.tolist(),
            "dp_concentration": config.dp_concentration,
            "dp_mode": config.dp_mode,
        },
        "priors": {
            "p_x": pri.p_x,
            "p_z": pri.p_z,
            "gamma_mean": pri.gamma_mean.tolist(),
            "gamma_cov": pri.gamma_cov.tolist(),
            "beta_base_mean": pri.beta_base_mean.tolist(),
            "beta_base_cov": pri.beta_base_cov.tolist(),
            "lambda_cov": pri.lambda_cov.tolist(),
            "a_mean": pri.a_mean,
            "a_var": pri.a_var,
            "tau2_shape": pri.tau2_shape.tolist(),
            "tau2_rate": pri.tau2_rate.tolist(),
        },
        "mcmc": {
            "n_iterations": config.mcmc.n_iterations,
            "burn_in": config.mcmc.burn_in,
            "thin": config.mcmc.thin,
            "rng_seed": config.mcmc.rng_seed,
            "n_chains": config.mcmc.n_chains,
        },
    }


def load_config(path) -> ModelConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def dump_config(config: ModelConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2,
                                     sort_keys=True))


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digest(root) -> dict:
    root = Path(root)
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = file_digest(p)
    return out


def write_manifest(out_dir, command: list[str], inputs: dict, seed,
                   timings: dict) -> None:
    manifest = {
        "command": command,
        "inputs": inputs,          # name -> digest, recorded before compute
        "seed": seed,
        "version": __version__,
        "timings_s": timings,      # excluded from reproducibility contract
    }
    Path(out_dir, "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Chain persistence
# ---------------------------------------------------------------------------

_STATE_FILES = {
    "gamma": (["draw", "i", "m", "k", "j", "value"], "gamma"),
    "lambda": (["draw", "k", "i", "j", "value"], "lam"),
    "coreg": (["draw", "k", "l", "value"], "coreg"),
    "tau2": (["draw", "k", "value"], "tau2"),
    "nu": (["draw", "l", "k", "t", "value"], "nu"),
}


class _ChainWriter:
    """Appends retained draws and sweep rows to an open chain directory."""

    def __init__(self, chain_dir: Path, config: ModelConfig, append: bool = False):
        self.dir = Path(chain_dir)
        (self.dir / "states").mkdir(parents=True, exist_ok=True)
        self.config = config
        mode = "a" if append else "w"
        self.handles = {}
        for name, (header, _) in _STATE_FILES.items():
            fh = open(self.dir / "states" / f"{name}.csv", mode)
            if not append:
                fh.write(",".join(header) + "\n")
            self.handles[name] = fh
        for name, header in [
            ("labels", ["draw", "i", "m", "g", "label"]),
            ("atoms", ["draw", "m", "g", "c", "k", "j", "value"]),
        ]:
            fh = open(self.dir / "states" / f"{name}.csv", mode)
            if not append:
                fh.write(",".join(header) + "\n")
            self.handles[name] = fh
        M = config.n_partitions
        self.sweep_fh = open(self.dir / "sweeps.csv", mode)
        if not append:
            self.sweep_fh.write("iteration,log_posterior," + ",".join(
                f"clusters_m{m}" for m in range(M)) + "\n")

    def write_draw(self, draw_index: int, state: ParameterState) -> None:
        for name, (_, attr) in _STATE_FILES.items():
            fh = self.handles[name]
            arr = getattr(state, attr)
            for idx in np.ndindex(arr.shape):
                fh.write(f"{draw_index}," + ",".join(map(str, idx))
                         + f",{_F(float(arr[idx]))}\n")
        cl = state.clusters
        fh = self.handles["labels"]
        for idx in np.ndindex(cl.labels.shape):
            fh.write(f"{draw_index}," + ",".join(map(str, idx))
                     + f",{int(cl.labels[idx])}\n")
        fh = self.handles["atoms"]
        for m in range(cl.n_partitions):
            for g in range(cl.n_groups):
                for c, atom in enumerate(cl.atoms[m][g]):
                    for (k, j), val in np.ndenumerate(atom):
                        fh.write(f"{draw_index},{m},{g},{c},{k},{j},"
                                 f"{_F(float(val))}\n")

    def write_report(self, report: SweepReport) -> None:
        counts = ",".join(_F(float(c))
                          for c in report.cluster_count_per_partition)
        self.sweep_fh.write(f"{report.iteration},"
                            f"{_F(report.log_posterior)},{counts}\n")

    def close(self) -> None:
        for fh in self.handles.values():
            fh.close()
        self.sweep_fh.close()


def _save_checkpoint(chain_dir: Path, state: ParameterState, iteration: int,
                     n_draws: int, rng: np.random.Generator) -> None:
    ck = Path(chain_dir) / "checkpoint"
    save_state(state, ck / "state")
    meta = {"iteration": iteration, "n_draws": n_draws,
            "rng_state": rng.bit_generator.state}
    (ck / "progress.json").write_text(json.dumps(meta, sort_keys=True))


def _load_checkpoint(chain_dir: Path):
    ck = Path(chain_dir) / "checkpoint"
    meta = json.loads((ck / "progress.json").read_text())
    state = load_state(ck / "state")
    return state, meta


def run_chain_to_dir(config: ModelConfig, data: Dataset, chain_dir,
                     rng: np.random.Generator, chain_index: int = 0,
                     resume: bool = False, checkpoint_every: int | None = None,
                     progress_every: int = 0) -> int:
    """Run (or resume) one chain, streaming draws to disk.

    Checkpoints restore the exact sampler and generator state, so a
    resumed run produces the same retained draws as an uninterrupted one.
    Returns the number of retained draws written by this call.
    """
    chain_dir = Path(chain_dir)
    sched = config.mcmc
    if checkpoint_every is None:
        checkpoint_every = max(sched.thin, (sched.n_iterations + 19) // 20)
    if resume and (chain_dir / "checkpoint" / "progress.json").exists():
        state, meta = _load_checkpoint(chain_dir)
        start, n_draws = meta["iteration"], meta["n_draws"]
        rng.bit_generator.state = meta["rng_state"]
        writer = _ChainWriter(chain_dir, config, append=True)
    else:
        state = sample_prior_state(config, data.times, rng)
        start, n_draws = 0, 0
        writer = _ChainWriter(chain_dir, config, append=False)
    sampler = GibbsSampler(config, data)
    written = 0
    try:
        for it in range(start + 1, sched.n_iterations + 1):
            state, report = sampler.sweep(state, rng, iteration=it)
            writer.write_report(report)
            if it > sched.burn_in and (it - sched.burn_in) % sched.thin == 0:
                writer.write_draw(n_draws, state)
                n_draws += 1
                written += 1
            if it % checkpoint_every == 0 or it == sched.n_iterations:
                _save_checkpoint(chain_dir, state, it, n_draws, rng)
            if progress_every and it % progress_every == 0:
                print(f"chain {chain_index}: iteration {it}/{sched.n_iterations}",
                      flush=True)
    finally:
        writer.close()
    return written


def _read_draw_indexed(path: Path, n_idx: int, dtype=float):
    """Group rows of a draw-indexed CSV by draw; returns {draw: {idx: value}}."""
    out: dict = {}
    with open(path) as fh:
        next(fh)
        for line in fh:
            parts = line.rstrip("\n").split(",")
            d = int(parts[0])
            idx = tuple(int(p) for p in parts[1:1 + n_idx])
            out.setdefault(d, {})[idx] = dtype(parts[1 + n_idx])
    return out


def load_chain_output(chain_dir, config: ModelConfig) -> ChainOutput:
    """Rebuild a ChainOutput from a persisted chain directory."""
    from .model import ClusterState

    chain_dir = Path(chain_dir)
    states_dir = chain_dir / "states"
    arrays = {}
    for name, (header, attr) in _STATE_FILES.items():
        arrays[attr] = _read_draw_indexed(states_dir / f"{name}.csv",
                                          len(header) - 2)
    labels_raw = _read_draw_indexed(states_dir / "labels.csv", 3, dtype=int)
    atoms_raw = _read_draw_indexed(states_dir / "atoms.csv", 5)
    draw_ids = sorted(arrays["gamma"].keys())
    draws = []
    for d in draw_ids:
        built = {}
        for attr, per_draw in arrays.items():
            entries = per_draw[d]
            shape = tuple(max(ix[a] for ix in entries) + 1
                          for a in range(len(next(iter(entries)))))
            arr = np.zeros(shape)
            for ix, val in entries.items():
                arr[ix] = val
            built[attr] = arr
        lab_entries = labels_raw[d]
        shape = tuple(max(ix[a] for ix in lab_entries) + 1 for a in range(3))
        labels = np.zeros(shape, dtype=np.int64)
        for ix, val in lab_entries.items():
            labels[ix] = val
        atom_entries = atoms_raw.get(d, {})
        M, G = shape[1], shape[2]
        atoms = []
        for m in range(M):
            per_g = []
            for g in range(G):
                keys = [k for k in atom_entries if k[0] == m and k[1] == g]
                n_c = max((k[2] for k in keys), default=-1) + 1
                table = []
                for c in range(n_c):
                    sub = {k[3:]: v for k, v in atom_entries.items()
                           if k[:3] == (m, g, c)}
                    kk = max(k for k, _ in sub) + 1
                    jj = max(j for _, j in sub) + 1
                    atom = np.zeros((kk, jj))
                    for (k_, j_), v in sub.items():
                        atom[k_, j_] = v
                    table.append(atom)
                per_g.append(tuple(table))
            atoms.append(tuple(per_g))
        counts = tuple(
            tuple(tuple(int(c) for c in np.bincount(
                labels[:, m, g], minlength=len(atoms[m][g])))
                for g in range(G))
            for m in range(M))
        clusters = ClusterState(labels=labels, atoms=tuple(atoms), counts=counts)
        draws.append(ParameterState(gamma=built["gamma"], clusters=clusters,
                                    lam=built["lam"], coreg=built["coreg"],
                                    tau2=built["tau2"], nu=built["nu"]))
    reports = []
    sweeps_path = chain_dir / "sweeps.csv"
    if sweeps_path.exists():
        with open(sweeps_path) as fh:
            next(fh)
            for line in fh:
                parts = line.rstrip("\n").split(",")
                reports.append(SweepReport(
                    iteration=int(parts[0]),
                    log_posterior=float(parts[1]),
                    cluster_count_per_partition=tuple(float(p)
                                                      for p in parts[2:])))
    return ChainOutput(draws=tuple(draws), reports=tuple(reports), config=config,
                       rng_seed=config.mcmc.rng_seed,
                       chain_index=int(Path(chain_dir).name.replace("chain", "") or 0))


def fit_run(config: ModelConfig, data: Dataset, out_dir, resume: bool = False,
            progress_every: int = 0, n_workers: int = 1) -> None:
    """Fit all configured chains into a run directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(config, out / "config.echo")
    rngs = chain_rngs(config.mcmc.rng_seed, config.mcmc.n_chains)
    jobs = [(config, data, out / f"chain{j}", rngs[j], j, resume, progress_every)
            for j in range(config.mcmc.n_chains)]
    if n_workers > 1 and len(jobs) > 1:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(_fit_one_chain, job) for job in jobs]
            for fut in futures:
                fut.result()
    else:
        for job in jobs:
            _fit_one_chain(job)


def _fit_one_chain(job) -> None:
    config, data, chain_dir, rng, j, resume, progress_every = job
    run_chain_to_dir(config, data, chain_dir, rng, chain_index=j,
                     resume=resume, progress_every=progress_every)


def load_run(run_dir) -> list[ChainOutput]:
    run_dir = Path(run_dir)
    config = load_config(run_dir / "config.echo")
    chains = sorted(run_dir.glob("chain*"))
    if not chains:
        raise FileNotFoundError(f"no chain directories under {run_dir}")
    return [load_chain_output(c, config) for c in chains]


class Stopwatch:
    def __init__(self):
        self.t0 = time.perf_counter()
        self.laps: dict[str, float] = {}

    def lap(self, name: str) -> None:
        now = time.perf_counter()
        self.laps[name] = round(now - self.t0, 6)
        self.t0 = now
