"""Hyperparameter grid execution and label-free model selection.

The selection criterion is the total membership-weighted squared distance of
the training embeddings to the frozen centroids (smaller is better). It never
reads labels; the grid runner can optionally score a labelled evaluation set
per config for reporting, but that plays no part in selection.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .data import Database
from .estimator import AdammDetector, DivergenceError

GRID_K = (1, 2, 4)
GRID_LR = (1e-4, 1e-3)
GRID_WD = (1e-5, 1e-4)
GRID_LAMBDA2 = (0.0, 0.1)
LAMBDA1 = 0.1


@dataclass
class HPConfig:
    n_centroids: int
    learning_rate: float
    weight_decay: float
    entropy_weight: float = LAMBDA1
    diversity_weight: float = 0.0
    epochs: int = 100
    batch_size: int = 128

    def validate(self) -> None:
        if self.n_centroids < 1:
            raise ValueError("n_centroids must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0 or self.entropy_weight < 0 or self.diversity_weight < 0:
            raise ValueError("weights must be nonnegative")
        if self.n_centroids == 1 and self.diversity_weight != 0.0:
            raise ValueError("diversity_weight must be 0 when n_centroids is 1")
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("epochs must be >= 1 and batch_size >= 2")

    def sort_key(self):
        return (self.n_centroids, self.learning_rate, self.weight_decay, self.diversity_weight)

    @classmethod
    def from_dict(cls, d: dict) -> "HPConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


def default_grid(epochs: int = 100, batch_size: int = 128) -> list[HPConfig]:
    """The full hyperparameter grid: 24 combinations minus the invalid

    (K=1, lambda2>0) ones, i.e. 20 valid configs, in tie-break order.
    """
    grid = []
    for k in GRID_K:
        for lr in GRID_LR:
            for wd in GRID_WD:
                for lam2 in GRID_LAMBDA2:
                    if k == 1 and lam2 != 0.0:
                        continue
                    grid.append(HPConfig(k, lr, wd, LAMBDA1, lam2, epochs, batch_size))
    return grid


def load_grid_file(path) -> list[HPConfig]:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not raw:
        raise ValueError(f"{path}: grid file must be a nonempty JSON list of configs")
    return [HPConfig.from_dict(d) for d in raw]


# training data shared with forked grid workers (copy-on-write, read-only)
_GRID_DB: Database | None = None
_GRID_EXTRA: dict = {}


def _run_one(args):
    i, cfg_dict, seed, out_dir = args
    cfg = HPConfig(**cfg_dict)
    detector = AdammDetector(seed=seed, **cfg_dict, **_GRID_EXTRA)
    t0 = time.perf_counter()
    result = {"id": i, "params": cfg_dict, "checkpoint": f"config-{i:02d}.ckpt"}
    try:
        detector.fit(_GRID_DB)
    except DivergenceError as exc:
        result.update(diverged=True, selection_score=None, error=str(exc))
        result["wall_clock_sec"] = time.perf_counter() - t0
        return result
    result["wall_clock_sec"] = time.perf_counter() - t0
    result.update(diverged=False, selection_score=detector.selection_score_)
    detector.save(os.path.join(out_dir, result["checkpoint"]))
    return result


def choose_best(entries: list[dict]) -> int | None:
    """Argmin of the selection score; exact ties broken by

    (n_centroids, learning_rate, weight_decay, diversity_weight) ascending.
    """
    live = [e for e in entries if not e["diverged"]]
    if not live:
        return None
    best = min(live, key=lambda e: (e["selection_score"], HPConfig(**e["params"]).sort_key()))
    return best["id"]


def run_grid(train_db: Database, grid: list[HPConfig], seed: int, out_dir,
             n_jobs: int | None = None, estimator_kwargs: dict | None = None) -> dict:
    """Train every config on the same data and seed; write checkpoints and a

    manifest; pick the config minimizing the selection criterion.
    """
    if not grid:
        raise ValueError("empty hyperparameter grid")
    for cfg in grid:
        cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    global _GRID_DB, _GRID_EXTRA
    _GRID_DB = train_db
    _GRID_EXTRA = estimator_kwargs or {}
    jobs = [(i, asdict(cfg), seed, str(out_dir)) for i, cfg in enumerate(grid)]
    t0 = time.perf_counter()
    if n_jobs is None:
        n_jobs = os.cpu_count() or 1
    n_jobs = max(1, min(n_jobs, len(jobs)))
    if n_jobs == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    _GRID_DB = None
    _GRID_EXTRA = {}

    results.sort(key=lambda r: r["id"])
    selected = choose_best(results)
    manifest = {
        "seed": seed,
        "n_train": len(train_db),
        "configs": results,
        "selected": selected,
        "total_wall_clock_sec": time.perf_counter() - t0,
    }
    if selected is None:
        write_manifest(manifest, out_dir)
        raise DivergenceError(0, [])
    write_manifest(manifest, out_dir)
    return manifest


def write_manifest(manifest: dict, out_dir) -> None:
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(run_dir) -> dict:
    path = os.path.join(run_dir, "manifest.json")
    with open(path) as fh:
        return json.load(fh)
