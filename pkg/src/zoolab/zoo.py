"""Two-stage zoo generation: pretrain every backbone, then fine-tune every grid cell."""

from __future__ import annotations

import json
import logging
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .data import make_dataset
from .errors import DivergedTraining, MalformedZoo
from .grid import GeneratingFactors, config_dump, expand_grid, pretrained_factors
from .nn import init_model, replace_head
from .store import (
    ModelEntry,
    ZooManifest,
    save_model_files,
    save_trajectory_checkpoints,
    scan_layout,
)
from .tensor import load_checkpoint, rng_for, checkpoint_dir
from .train import train_stage

log = logging.getLogger(__name__)


def default_workers() -> int:
    env = os.environ.get("ZOOLAB_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _train_one(root: str, factors: GeneratingFactors, index: int, global_seed: int) -> str:
    """Train one model and write its folder; result.json is written last."""
    root = Path(root)
    rel = factors.rel_path
    model_dir = root / rel
    dataset = make_dataset(factors.dataset)
    if factors.fine is None:
        start = init_model(factors.arch, factors.pre.seed)
        hp = factors.pre.hparams()
        parent_id = None
    else:
        parent_dir = root / f"pretraining/{factors.pre_id}"
        parent_res = json.loads((parent_dir / "result.json").read_text())
        last = parent_res["epochs"][-1]["epoch"] if parent_res["epochs"] else 0
        parent = load_checkpoint(checkpoint_dir(parent_dir, last) / "weights.bin")
        start = replace_head(parent, factors.arch, factors.fine.head_seed)
        hp = factors.fine.hparams()
        parent_id = factors.pre_id
    rng = rng_for(global_seed, "train", rel)
    status = "ok"
    try:
        traj = train_stage(start, dataset, hp, rng)
    except DivergedTraining as exc:
        log.warning("%s diverged at epoch %d", rel, exc.epoch)
        traj = exc.trajectory
        status = "diverged"
    save_trajectory_checkpoints(model_dir, traj.checkpoints)
    entry = ModelEntry(
        id=factors.model_id,
        path=rel,
        factors=factors,
        index=index,
        parent_id=parent_id,
        status=status,
        results=traj.per_epoch_metrics,
    )
    save_model_files(root, entry)
    return rel


def _run_jobs(jobs, workers):
    if not jobs:
        return
    if workers <= 1 or len(jobs) == 1:
        for job in jobs:
            _train_one(*job)
        return
    ctx = mp.get_context("spawn")
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs)), mp_context=ctx) as pool:
        for _ in pool.map(_train_one, *zip(*jobs), chunksize=1):
            pass


def _is_complete(root: Path, factors: GeneratingFactors) -> bool:
    return (root / factors.rel_path / "result.json").exists()


def generate_zoo(zoo_config: dict, out_dir, workers: int | None = None) -> ZooManifest:
    """Train (or resume) the zoo described by ``zoo_config`` into ``out_dir``.

    Models whose ``result.json`` already exists are not retrained, so a
    second call on a completed directory only rescans it.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    workers = default_workers() if workers is None else workers
    cfg_path = root / "zoo_config.json"
    text = config_dump(zoo_config)
    if cfg_path.exists():
        if cfg_path.read_text() != text:
            raise MalformedZoo("output directory holds a zoo generated from a different config", root)
    else:
        cfg_path.write_text(text)
    seed = int(zoo_config.get("x_global_seed", 0))

    pres = [GeneratingFactors(p) for p in pretrained_factors(zoo_config)]
    cells = expand_grid(zoo_config)
    pre_jobs = [(str(root), f, i, seed) for i, f in enumerate(pres) if not _is_complete(root, f)]
    log.info("pretraining %d of %d models", len(pre_jobs), len(pres))
    _run_jobs(pre_jobs, workers)
    ft_jobs = [(str(root), f, i, seed) for i, f in enumerate(cells) if not _is_complete(root, f)]
    log.info("fine-tuning %d of %d models", len(ft_jobs), len(cells))
    _run_jobs(ft_jobs, workers)
    return scan_layout(root)
