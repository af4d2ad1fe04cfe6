"""Partitions, balanced problems, paired HL/AWL runs and the resumable sweep."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .data import CategoryLabeling, FeatureMatrix, RoiMap, VoxelMatrix, select_voxels
from .seeding import derive_seed
from .svm import KernelSpec, TrainingProblem, sqdist, train
from .weights import (DEFAULT_C_GRID, DEFAULT_GAMMA_GRID, LITERAL, ActivityWeightSet,
                      generate_activity_weights, scale_voxels)

log = logging.getLogger(__name__)

SCHEMA = "#sidestream-results v1"
COLUMNS = ("category", "roi_combo", "partition", "problem", "feature", "loss",
           "accuracy", "n_test", "n_train", "seed_lineage")
LOSSES = ("HL", "AWL")


class LeakageError(RuntimeError):
    pass


class StoreError(RuntimeError):
    pass


@dataclass(frozen=True)
class Partition:
    id: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int


@dataclass(frozen=True)
class BalancedProblem:
    category: str
    index: int
    positives: tuple[str, ...]
    negatives: tuple[str, ...]
    seed: int

    @property
    def ids(self) -> tuple[str, ...]:
        return self.positives + self.negatives

    @property
    def labels(self) -> np.ndarray:
        return np.r_[np.ones(len(self.positives)), -np.ones(len(self.negatives))]


@dataclass(frozen=True)
class ExperimentRecord:
    category: str
    roi_combo: tuple[str, ...]
    partition: int
    problem: int
    feature: str
    loss: str
    accuracy: float
    n_test: int
    n_train: int
    seed_lineage: str
    runtime_ms: float = field(default=0.0, compare=False)

    @property
    def group(self) -> tuple:
        return (self.roi_combo, self.category, self.feature, self.partition)

    def to_line(self) -> str:
        return "\t".join([self.category, combo_key(self.roi_combo), str(self.partition),
                          str(self.problem), self.feature, self.loss,
                          format(self.accuracy, ".17g"), str(self.n_test), str(self.n_train),
                          self.seed_lineage])

    @classmethod
    def from_line(cls, line: str) -> "ExperimentRecord":
        f = line.rstrip("\n").split("\t")
        if len(f) != len(COLUMNS):
            raise StoreError(f"record has {len(f)} fields, expected {len(COLUMNS)}")
        return cls(f[0], parse_combo(f[1]), int(f[2]), int(f[3]), f[4], f[5], float(f[6]),
                   int(f[7]), int(f[8]), f[9])


def combo_key(combo: Iterable[str]) -> str:
    return "+".join(sorted(combo))


def parse_combo(text: str) -> tuple[str, ...]:
    return tuple(sorted(t for t in text.split("+") if t))


# ---------------------------------------------------------------- design


def make_partitions(ids: Sequence[str], n: int = 4, train_fraction: float = 0.8,
                    seed: int = 0) -> list[Partition]:
    """``n`` independent shuffle-splits with ``round(train_fraction * N)`` training ids."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    ids = tuple(ids)
    if len(ids) < 10:
        raise ValueError(f"need at least 10 stimuli to partition, got {len(ids)}")
    n_train = int(np.floor(train_fraction * len(ids) + 0.5))
    out = []
    for pid in range(n):
        pseed = derive_seed(seed, "partition", pid)
        perm = np.random.default_rng(pseed).permutation(len(ids))
        tr = sorted(perm[:n_train])
        te = sorted(perm[n_train:])
        out.append(Partition(pid, tuple(ids[i] for i in tr), tuple(ids[i] for i in te), pseed))
    return out


def make_balanced_problems(partition: Partition, labeling: CategoryLabeling, category: str,
                           k: int = 5, seed: int = 0) -> list[BalancedProblem]:
    """All training positives plus an equal-size random negative subset, ``k`` times."""
    pos = tuple(s for s in partition.train_ids if category in labeling.membership[s])
    neg = [s for s in partition.train_ids if category not in labeling.membership[s]]
    if not pos:
        raise ValueError(f"partition {partition.id} has no training positives for {category!r}")
    if len(neg) < len(pos):
        raise ValueError(f"cannot balance {category!r}: {len(neg)} negatives < {len(pos)} positives")
    out = []
    for i in range(k):
        pseed = derive_seed(seed, "balanced", category, partition.id, i)
        pick = np.sort(np.random.default_rng(pseed).choice(len(neg), size=len(pos), replace=False))
        out.append(BalancedProblem(category, i, pos, tuple(neg[j] for j in pick), pseed))
    return out


def roi_combinations(rois: Sequence[str]) -> list[tuple[str, ...]]:
    """All non-empty subsets, by binary counting over the sorted names."""
    names = sorted(rois)
    if len(set(names)) != len(names):
        raise ValueError("duplicate ROI names")
    out = []
    for mask in range(1, 2 ** len(names)):
        out.append(tuple(n for b, n in enumerate(names) if mask >> b & 1))
    return out


def run_comparison(combo: Sequence[str], category: str, features: FeatureMatrix,
                   partition: Partition, problems: Sequence[BalancedProblem],
                   weights: ActivityWeightSet, labeling: CategoryLabeling,
                   base_penalty: float = 1.0) -> list[ExperimentRecord]:
    """Train HL and AWL on each balanced problem and score both on the test split."""
    test = set(partition.test_ids)
    leaked = [s for s in weights.coverage if s in test]
    if leaked:
        raise LeakageError(f"activity weight for test stimulus {leaked[0]!r}")
    kernel = KernelSpec(features.default_gamma)
    Xte = features.rows(partition.test_ids)
    yte = np.array([labeling.label(s, category) for s in partition.test_ids])
    combo = tuple(sorted(combo))
    records = []
    for prob in problems:
        X = features.rows(prob.ids)
        y = prob.labels
        D = sqdist(X)
        lineage = f"p{partition.seed}/b{prob.seed}/w{weights.seed}"
        for loss in LOSSES:
            t0 = time.perf_counter()
            c = weights.vector(prob.ids) if loss == "AWL" else None
            model = train(TrainingProblem(X, y, base_penalty, c), kernel, sqdist_matrix=D)
            acc = float(np.mean(model.predict(Xte) == yte))
            records.append(ExperimentRecord(category, combo, partition.id, prob.index, features.feature_name,
                                            loss, acc, len(yte), len(y), lineage,
                                            1000 * (time.perf_counter() - t0)))
    return records


# ---------------------------------------------------------------- sweep


@dataclass
class Dataset:
    voxels: VoxelMatrix
    rois: RoiMap
    labeling: CategoryLabeling
    features: Mapping[str, FeatureMatrix]

    def population(self, mode: str = "clear") -> tuple[str, ...]:
        if mode == "clear":
            return self.labeling.clear_set
        if mode == "full":
            return tuple(self.voxels.stimulus_ids)
        raise ValueError(f"unknown population mode {mode!r}")


@dataclass
class SweepConfig:
    categories: Sequence[str]
    roi_names: Sequence[str]
    combos: Sequence[tuple[str, ...]] | None = None
    feature_names: Sequence[str] | None = None
    seed: int = 0
    n_partitions: int = 4
    train_fraction: float = 0.8
    n_problems: int = 5
    folds: int = 5
    inner_folds: int = 5
    grid: tuple = (DEFAULT_C_GRID, DEFAULT_GAMMA_GRID)
    policy: str = LITERAL
    population: str = "clear"
    base_penalty: float = 1.0

    def combo_list(self) -> list[tuple[str, ...]]:
        if self.combos is None:
            return roi_combinations(self.roi_names)
        return [tuple(sorted(c)) for c in self.combos]


def weight_seed(cfg: SweepConfig, category: str, combo, pid: int) -> int:
    return derive_seed(cfg.seed, "weights", category, combo_key(combo), pid)


def task_weights(dataset: Dataset, cfg: SweepConfig, partition: Partition, category: str,
                 combo) -> ActivityWeightSet:
    vox = select_voxels(dataset.voxels, dataset.rois, combo).with_reference(partition.train_ids)
    return generate_activity_weights(scale_voxels(vox), dataset.labeling, category,
                                     partition.train_ids, cfg.folds, cfg.policy,
                                     weight_seed(cfg, category, combo, partition.id), cfg.grid,
                                     cfg.inner_folds, combo)


def run_task(dataset: Dataset, cfg: SweepConfig, combo, category: str, pid: int,
             feature_names: Sequence[str]) -> list[ExperimentRecord]:
    partition = make_partitions(dataset.population(cfg.population), cfg.n_partitions,
                                cfg.train_fraction, cfg.seed)[pid]
    weights = task_weights(dataset, cfg, partition, category, combo)
    problems = make_balanced_problems(partition, dataset.labeling, category, cfg.n_problems, cfg.seed)
    out = []
    for name in feature_names:
        out += run_comparison(combo, category, dataset.features[name], partition, problems, weights,
                              dataset.labeling, cfg.base_penalty)
    return out


_WORKER: dict = {}


def _init_worker(dataset, cfg):
    _WORKER["dataset"], _WORKER["cfg"] = dataset, cfg


def _run_remote(args):
    return run_task(_WORKER["dataset"], _WORKER["cfg"], *args)


def _store_header(cfg: SweepConfig) -> str:
    return f"{SCHEMA} partitions={cfg.n_partitions} problems={cfg.n_problems}"


def read_store(path) -> tuple[dict, list[ExperimentRecord]]:
    """Parse a store; a truncated final line (interrupted write) is ignored."""
    text = Path(path).read_text()
    lines = text.split("\n")
    if text and not text.endswith("\n"):
        lines = lines[:-1]
    if not lines or not lines[0].startswith(SCHEMA):
        raise StoreError(f"{path}: missing '{SCHEMA}' header")
    meta = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
    meta = {k: int(v) for k, v in meta.items()}
    records = []
    for line in lines[2:]:
        if line:
            records.append(ExperimentRecord.from_line(line))
    return meta, records


def _canonical(records, cfg_order: Mapping[str, dict]) -> list[ExperimentRecord]:
    def key(r):
        return (cfg_order["category"].get(r.category, len(cfg_order["category"])), r.category,
                cfg_order["combo"].get(r.roi_combo, len(cfg_order["combo"])), r.roi_combo,
                cfg_order["feature"].get(r.feature, len(cfg_order["feature"])), r.feature,
                r.partition, r.problem, LOSSES.index(r.loss))
    return sorted(records, key=key)


def _write_store(path: Path, header: str, records) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(header + "\n" + "\t".join(COLUMNS) + "\n")
        fh.writelines(r.to_line() + "\n" for r in records)
    os.replace(tmp, path)


def sweep(dataset: Dataset, cfg: SweepConfig, store_path, workers: int = 1, resume: bool = True,
          max_tasks: int | None = None, progress: Callable[[str], None] | None = None) -> Path:
    """Run every (combo, category, partition) task and persist paired records.

    Completed (combo, category, feature, partition) groups already in the
    store are skipped.  The finished store is rewritten in canonical order,
    so its bytes do not depend on ``workers`` or on interruptions.
    ``max_tasks`` stops early (leaving a resumable store).
    """
    store_path = Path(store_path)
    features = list(cfg.feature_names or dataset.features)
    combos = cfg.combo_list()
    for name in features:
        dataset.features[name].check_join(dataset.voxels.stimulus_ids)
    header = _store_header(cfg)
    per_group = 2 * cfg.n_problems

    done: list[ExperimentRecord] = []
    if resume and store_path.exists():
        meta, existing = read_store(store_path)
        if meta != {"partitions": cfg.n_partitions, "problems": cfg.n_problems}:
            raise StoreError(f"{store_path}: store design {meta} does not match the configuration")
        groups: dict = {}
        for r in existing:
            groups.setdefault(r.group, []).append(r)
        done = [r for g in groups.values() if len(g) == per_group for r in g]
    complete = {r.group for r in done}
    _write_store(store_path, header, done)

    tasks = []
    for category in cfg.categories:
        for combo in combos:
            for pid in range(cfg.n_partitions):
                todo = [f for f in features if (combo, category, f, pid) not in complete]
                if todo:
                    tasks.append((combo, category, pid, todo))
    if max_tasks is not None:
        tasks = tasks[:max_tasks]

    timing = store_path.with_name(store_path.name + ".timing")
    with open(store_path, "a") as fh, open(timing, "a") as tfh:
        def emit(recs):
            fh.write("".join(r.to_line() + "\n" for r in recs))
            fh.flush()
            tfh.write("".join(f"{r.to_line()}\t{r.runtime_ms:.3f}\n" for r in recs))
            if progress and recs:
                r = recs[0]
                progress(f"done {r.category} {combo_key(r.roi_combo)} partition {r.partition}")

        if workers <= 1:
            for t in tasks:
                emit(_with_context(run_task, dataset, cfg, *t))
        else:
            with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(dataset, cfg)) as pool:
                futures = [(t, pool.submit(_run_remote, t)) for t in tasks]
                for t, fut in futures:
                    try:
                        emit(fut.result())
                    except Exception as exc:
                        raise RuntimeError(f"task {t[1]} {combo_key(t[0])} partition {t[2]}: {exc}") from exc

    if max_tasks is None:
        _, records = read_store(store_path)
        order = {"category": {c: i for i, c in enumerate(cfg.categories)},
                 "combo": {c: i for i, c in enumerate(combos)},
                 "feature": {f: i for i, f in enumerate(features)}}
        _write_store(store_path, header, _canonical(records, order))
    return store_path


def _with_context(fn, dataset, cfg, combo, category, pid, feats):
    try:
        return fn(dataset, cfg, combo, category, pid, feats)
    except Exception as exc:
        raise RuntimeError(f"task {category} {combo_key(combo)} partition {pid}: {exc}") from exc
