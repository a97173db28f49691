"""The design loop: seed, select elites, train the generator, sample,
evaluate, merge; repeat for a fixed iteration budget.

State is checkpointed every iteration so an interrupted run resumes to a
bit-identical continuation. All randomness flows through one generator
whose state is part of the checkpoint; candidate evaluations are pure, so
the evaluation thread pool never affects results.
"""

from __future__ import annotations

import hashlib
import os
import pickle
import re
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import circuit, field, moo, vae
from .config import RunConfig, save_config

CHECKPOINT_MAGIC = b"DDTDCKP1"
CHECKPOINT_VERSION = 1

METRICS_HEADER = "iteration,elite_count,hypervolume,best_J1_db,best_J2_db"
PARETO_HEADER = "id,iteration,J1_db,J2_db,G_db,provenance"
HV_REF = (0.0, 0.0)


class EngineError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class IterationMetrics:
    iteration: int
    elite_count: int
    hypervolume: float
    best_j1: float
    best_j2: float


@dataclass
class RunState:
    iteration: int
    pool: List[moo.Candidate]
    metrics: List[IterationMetrics]
    rng: np.random.Generator
    vae_params: Optional[vae.VaeParams] = None
    next_uid: int = 0


def thread_count() -> int:
    env = os.environ.get("DDTD_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def parallel_map(fn, items):
    """Order-preserving map; runs on a thread pool when allowed more than
    one worker. Results never depend on the worker count."""
    items = list(items)
    workers = thread_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def evaluate_fields(fields, grid, cfg: RunConfig):
    """Evaluate density fields in order; errors name the failing index."""
    def one(pair):
        k, rho = pair
        try:
            layout = field.resolve(grid, rho)
            return circuit.evaluate(layout, cfg.physics, cfg.components,
                                    cfg.f1, cfg.f2, cfg.f3, cfg.g_bar)
        except circuit.CircuitError as exc:
            raise EngineError(f"evaluation failed for candidate {k}: {exc}") \
                from exc
    return parallel_map(one, list(enumerate(fields)))


def seed_population(cfg: RunConfig) -> RunState:
    """Draw, rasterize and evaluate the initial parametric seeds."""
    cfg.validate()
    grid = cfg.build_grid()
    bounds = cfg.build_seed_bounds(grid)
    rng = np.random.default_rng(cfg.rng_seed)
    fields = [field.rasterize_seed(field.random_seed(rng, grid, bounds), grid)
              for _ in range(cfg.n_initial)]
    records = evaluate_fields(fields, grid, cfg)
    pool = [moo.Candidate(rho=rho, record=rec, provenance="seed",
                          iteration=0, uid=k)
            for k, (rho, rec) in enumerate(zip(fields, records))]
    return RunState(iteration=0, pool=pool, metrics=[], rng=rng,
                    next_uid=cfg.n_initial)


def select_elites(pool, cfg: RunConfig) -> moo.EliteArchive:
    archive = moo.EliteArchive.select(pool, cfg.g_bar, cfg.elite_cap)
    if not archive.members:
        raise EngineError(
            "no feasible candidates: increase n_initial or relax g_bar")
    return archive


def archive_metrics(iteration, archive: moo.EliteArchive) -> IterationMetrics:
    pts = archive.points()
    return IterationMetrics(
        iteration=iteration,
        elite_count=len(archive.members),
        hypervolume=moo.hypervolume2d(pts, HV_REF),
        best_j1=float(pts[:, 0].min()),
        best_j2=float(pts[:, 1].min()),
    )


def iterate(state: RunState, cfg: RunConfig, grid,
            on_archive=None) -> moo.EliteArchive:
    """One loop cycle. Selects elites from the current pool, records their
    metrics, trains a fresh generator on them, samples and evaluates new
    fields, and replaces the pool with elites + feasible newcomers."""
    k = state.iteration
    archive = select_elites(state.pool, cfg)
    state.metrics.append(archive_metrics(k, archive))
    if on_archive is not None:
        on_archive(k, archive)

    dtype = np.float32 if cfg.train_dtype == "float32" else np.float64
    elite_mat = np.array([c.rho for c in archive.members])
    train_pool = archive.members
    if len(train_pool) > cfg.train.training_set_size:
        train_pool = moo.truncate(train_pool, cfg.train.training_set_size)
        elite_mat = np.array([c.rho for c in train_pool])
    training = vae.augment(elite_mat, cfg.train.training_set_size)

    params = vae.init_params(grid.n_design, state.rng, dtype=dtype)
    params, _report = vae.train(params, training, cfg.train, state.rng)
    state.vae_params = params

    samples = vae.sample_latent(params, cfg.n_generate, state.rng)
    transition = cfg.normalize_transition()
    fields = [field.normalize(np.asarray(s, dtype=float), grid, transition)
              for s in samples]
    records = evaluate_fields(fields, grid, cfg)

    newcomers = []
    for rho, rec in zip(fields, records):
        cand = moo.Candidate(rho=rho, record=rec, provenance="generated",
                             iteration=k + 1, uid=state.next_uid)
        state.next_uid += 1
        if rec.feasible:           # infeasible generated data is discarded
            newcomers.append(cand)

    state.pool = list(archive.members) + newcomers
    state.iteration = k + 1
    return archive


# -- run directory ------------------------------------------------------------

class RunWriter:
    """Owns the run directory layout and the deterministic CSV formats."""

    def __init__(self, out_dir, grid, render_layouts=True):
        self.out = Path(out_dir)
        self.grid = grid
        self.render_layouts = render_layouts
        (self.out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (self.out / "pareto").mkdir(exist_ok=True)
        (self.out / "layouts").mkdir(exist_ok=True)

    def checkpoint_path(self, iteration):
        return self.out / "checkpoints" / f"iter_{iteration}.bin"

    def write_metrics(self, metrics):
        rows = [METRICS_HEADER]
        for m in metrics:
            rows.append(f"{m.iteration},{m.elite_count},"
                        f"{m.hypervolume:.10g},{m.best_j1:.10g},"
                        f"{m.best_j2:.10g}")
        (self.out / "metrics.csv").write_text("\n".join(rows) + "\n",
                                              encoding="utf-8")

    def write_archive(self, iteration, archive: moo.EliteArchive):
        write_pareto_csv(archive, self.out / "pareto" / f"iter_{iteration}.csv")
        if not self.render_layouts:
            return
        layout_dir = self.out / "layouts" / f"iter_{iteration}"
        layout_dir.mkdir(parents=True, exist_ok=True)
        for cand in archive.members:
            resolved = field.resolve(self.grid, cand.rho)
            field.render_svg(resolved, layout_dir / f"{cand.uid}.svg")


def write_pareto_csv(archive: moo.EliteArchive, path):
    rows = [PARETO_HEADER]
    for c in archive.members:
        rows.append(f"{c.uid},{c.iteration},{c.j1:.6f},{c.j2:.6f},"
                    f"{c.g:.6f},{c.provenance}")
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


# -- checkpoints ---------------------------------------------------------------

def checkpoint_save(state: RunState, path, grid_signature):
    payload = pickle.dumps({
        "grid_signature": tuple(grid_signature),
        "iteration": state.iteration,
        "next_uid": state.next_uid,
        "rng_state": state.rng.bit_generator.state,
        "metrics": [(m.iteration, m.elite_count, m.hypervolume,
                     m.best_j1, m.best_j2) for m in state.metrics],
        "pool": [(c.uid, c.iteration, c.provenance, c.rho,
                  c.record.j1_db, c.record.j2_db, c.record.g_db,
                  c.record.feasible) for c in state.pool],
        "vae": None if state.vae_params is None else
               (state.vae_params.d, str(state.vae_params.dtype),
                state.vae_params.flat.tobytes()),
    }, protocol=4)
    digest = hashlib.sha256(payload).digest()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(digest)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
    tmp.replace(path)


def checkpoint_load(path, grid_signature) -> RunState:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise CheckpointError(f"not a checkpoint file: {path}")
            raw = fh.read(4)
            if len(raw) != 4:
                raise CheckpointError(f"truncated checkpoint: {path}")
            version = struct.unpack("<I", raw)[0]
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"unsupported checkpoint version {version}: {path}")
            digest = fh.read(32)
            raw = fh.read(8)
            if len(digest) != 32 or len(raw) != 8:
                raise CheckpointError(f"truncated checkpoint: {path}")
            length = struct.unpack("<Q", raw)[0]
            payload = fh.read(length)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    if len(payload) != length or hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"corrupt checkpoint (checksum): {path}")
    doc = pickle.loads(payload)
    if tuple(doc["grid_signature"]) != tuple(grid_signature):
        raise CheckpointError(
            f"checkpoint grid {doc['grid_signature']} does not match "
            f"configured grid {tuple(grid_signature)}")
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng_state"]
    pool = [moo.Candidate(
                rho=rho, provenance=prov, iteration=it, uid=uid,
                record=circuit.EvalRecord(j1_db=j1, j2_db=j2, g_db=g,
                                          feasible=feas))
            for uid, it, prov, rho, j1, j2, g, feas in doc["pool"]]
    metrics = [IterationMetrics(*row) for row in doc["metrics"]]
    params = None
    if doc["vae"] is not None:
        d, dtype, blob = doc["vae"]
        params = vae.VaeParams(d, np.frombuffer(blob, dtype=dtype).copy())
    return RunState(iteration=doc["iteration"], pool=pool, metrics=metrics,
                    rng=rng, vae_params=params, next_uid=doc["next_uid"])


def latest_checkpoint(out_dir):
    pattern = re.compile(r"iter_(\d+)\.bin$")
    best = None
    ckpt_dir = Path(out_dir) / "checkpoints"
    if not ckpt_dir.is_dir():
        return None
    for p in ckpt_dir.iterdir():
        m = pattern.match(p.name)
        if m:
            k = int(m.group(1))
            if best is None or k > best[0]:
                best = (k, p)
    return best[1] if best else None


# -- full run ------------------------------------------------------------------

def run(cfg: RunConfig, out_dir, resume=False, render_layouts=True,
        progress=None):
    """Execute the loop for cfg.iterations iterations, checkpointing each
    one. Returns (final archive, state)."""
    cfg.validate()
    grid = cfg.build_grid()
    writer = RunWriter(out_dir, grid, render_layouts=render_layouts)
    save_config(cfg, writer.out / "config.json")

    if resume:
        ckpt = latest_checkpoint(out_dir)
        if ckpt is None:
            raise CheckpointError(f"no checkpoint to resume in {out_dir}")
        state = checkpoint_load(ckpt, grid.signature())
    else:
        state = seed_population(cfg)
        checkpoint_save(state, writer.checkpoint_path(0), grid.signature())

    while state.iteration < cfg.iterations:
        iterate(state, cfg, grid, on_archive=writer.write_archive)
        checkpoint_save(state, writer.checkpoint_path(state.iteration),
                        grid.signature())
        writer.write_metrics(state.metrics)
        if progress is not None:
            progress(state)

    final = select_elites(state.pool, cfg)
    state.metrics.append(archive_metrics(cfg.iterations, final))
    writer.write_archive(cfg.iterations, final)
    writer.write_metrics(state.metrics)
    return final, state
