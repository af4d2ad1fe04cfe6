"""Activity weights from voxel responses.

A voxel-only RBF SVM is trained per outer fold and its held-out decision
scores are calibrated into probabilities; every weight is therefore an
out-of-fold prediction for its stimulus.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .calibration import PlattParams, fit_platt, platt_probability
from .data import CategoryLabeling, VoxelMatrix
from .seeding import derive_rng
from .svm import KernelSpec, TrainingProblem, decision_from_sqdist, sqdist, train

log = logging.getLogger(__name__)

LITERAL = "literal-probability"
CLASS_CONDITIONAL = "class-conditional"
POLICIES = (LITERAL, CLASS_CONDITIONAL)

DEFAULT_C_GRID = tuple(2.0**k for k in range(-5, 16, 2))
DEFAULT_GAMMA_GRID = tuple(2.0**k for k in range(-15, 4, 2))


@dataclass(frozen=True)
class GridSearchResult:
    best_c: float
    best_gamma: float
    cv_accuracy: float
    grid: tuple[tuple[float, float, float], ...]


@dataclass(frozen=True)
class ActivityWeightSet:
    category: str
    roi_combo: tuple[str, ...]
    weights: dict
    policy: str = LITERAL
    seed: int = 0
    grid: tuple = ()
    coverage: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown weight policy {self.policy!r}")
        for sid, w in self.weights.items():
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"weight {w} for {sid!r} outside [0, 1]")
        object.__setattr__(self, "roi_combo", tuple(sorted(self.roi_combo)))
        if not self.coverage:
            object.__setattr__(self, "coverage", tuple(self.weights))

    def weight(self, stimulus_id: str) -> float:
        return self.weights.get(stimulus_id, 0.0)

    def vector(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self.weights.get(i, 0.0) for i in ids])


# ---------------------------------------------------------------- rescaling


def scale_voxels(matrix: VoxelMatrix) -> VoxelMatrix:
    """Min-max rescale each voxel by its range over the reference rows, clipped to [0, 1]."""
    ref = matrix.values[list(matrix.reference_rows)]
    lo = ref.min(axis=0)
    hi = ref.max(axis=0)
    span = hi - lo
    const = span == 0
    scaled = (matrix.values - lo) / np.where(const, 1.0, span)
    scaled = np.clip(scaled, 0.0, 1.0)
    scaled[:, const] = 0.0
    return VoxelMatrix(scaled, matrix.stimulus_ids, matrix.reference_rows, matrix.voxel_indices)


# ---------------------------------------------------------------- cross validation


def stratified_folds(labels, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold index per sample; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    out = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for cls in (1, -1):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < folds:
            raise ValueError(f"class {cls:+d} has {len(idx)} samples, fewer than {folds} folds")
        idx = idx[rng.permutation(len(idx))]
        out[idx] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return out


def _fit(X, D, y, idx, c, gamma, tol=1e-3):
    prob = TrainingProblem(X[idx], y[idx], c)
    return train(prob, KernelSpec(gamma), tol, sqdist_matrix=D[np.ix_(idx, idx)])


def _scores(model, D, train_idx, query_idx):
    return decision_from_sqdist(model, D[np.ix_(query_idx, train_idx)])


def grid_search_rbf(features, labels, folds: int = 5,
                    grid: tuple[Sequence[float], Sequence[float]] = (DEFAULT_C_GRID, DEFAULT_GAMMA_GRID),
                    seed: int = 0, sqdist_matrix=None) -> GridSearchResult:
    """Exhaustive stratified-CV search over ``(C, gamma)``.

    Ties on mean fold accuracy go to the smaller C, then the smaller gamma.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    D = sqdist(X) if sqdist_matrix is None else sqdist_matrix
    fold_of = stratified_folds(y, folds, np.random.default_rng(seed))
    splits = [(np.flatnonzero(fold_of != k), np.flatnonzero(fold_of == k)) for k in range(folds)]
    rows = []
    for c in sorted(grid[0]):
        for g in sorted(grid[1]):
            accs = []
            for tr, te in splits:
                model = _fit(X, D, y, tr, c, g)
                pred = np.where(_scores(model, D, tr, te) >= 0, 1.0, -1.0)
                accs.append(float(np.mean(pred == y[te])))
            rows.append((float(c), float(g), float(np.mean(accs))))
    best = rows[0]
    for row in rows[1:]:
        if row[2] > best[2]:  # strict: earlier (smaller C, then gamma) wins ties
            best = row
    return GridSearchResult(best[0], best[1], best[2], tuple(rows))


# ---------------------------------------------------------------- weight generation


def _category_labels(labeling: CategoryLabeling, category: str, ids: Sequence[str]) -> np.ndarray:
    return np.array([labeling.label(s, category) for s in ids], dtype=np.float64)


def generate_activity_weights(scaled: VoxelMatrix, labeling: CategoryLabeling, category: str,
                              training_ids: Iterable[str], folds: int = 5, policy: str = LITERAL,
                              seed: int = 0, grid=(DEFAULT_C_GRID, DEFAULT_GAMMA_GRID),
                              inner_folds: int = 5, roi_combo: Sequence[str] = ()
                              ) -> ActivityWeightSet:
    """Out-of-fold Platt probabilities for the clear-set members of ``training_ids``.

    For each of ``folds`` stratified folds, a grid-searched voxel SVM is
    trained on the remaining folds; its Platt parameters come from an inner
    80/20 split of those folds, and the held-out fold is scored.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown weight policy {policy!r}")
    train_set = set(training_ids)
    unknown = train_set - set(scaled.stimulus_ids)
    if unknown:
        raise ValueError(f"training id {sorted(unknown)[0]!r} not in voxel matrix")
    ids = [s for s in labeling.clear_set if s in train_set]
    if not ids:
        raise ValueError("no clear-set stimuli among the training ids")
    y = _category_labels(labeling, category, ids)
    n_pos = int(np.sum(y > 0))
    if n_pos < folds:
        raise ValueError(f"category {category!r} has {n_pos} positives, fewer than {folds} folds")

    X = scaled.rows(ids)
    D = sqdist(X)
    fold_of = stratified_folds(y, folds, derive_rng(seed, "outer-folds"))
    prob = np.empty(len(ids))
    for k in range(folds):
        tr = np.flatnonzero(fold_of != k)
        held = np.flatnonzero(fold_of == k)
        Dtr = D[np.ix_(tr, tr)]
        gs = grid_search_rbf(X[tr], y[tr], inner_folds, grid, seed=int(derive_rng(seed, "grid", k).integers(2**62)),
                             sqdist_matrix=Dtr)
        params = _inner_platt(X, D, y, tr, gs, derive_rng(seed, "platt-split", k))
        model = _fit(X, D, y, tr, gs.best_c, gs.best_gamma)
        prob[held] = platt_probability(params, _scores(model, D, tr, held))
        log.debug("fold %d: C=%g gamma=%g cv=%.3f", k, gs.best_c, gs.best_gamma, gs.cv_accuracy)

    if policy == CLASS_CONDITIONAL:
        prob = np.where(y > 0, prob, 1.0 - prob)
    weights = {s: float(p) for s, p in zip(ids, prob)}
    return ActivityWeightSet(category, tuple(roi_combo), weights, policy, seed,
                             (tuple(grid[0]), tuple(grid[1])), tuple(ids))


def _inner_platt(X, D, y, tr, gs: GridSearchResult, rng) -> PlattParams:
    # 80/20 stratified split of the outer training folds
    ytr = y[tr]
    part = np.zeros(len(tr), dtype=bool)
    for cls in (1.0, -1.0):
        idx = np.flatnonzero(ytr == cls)
        idx = idx[rng.permutation(len(idx))]
        n_hold = max(1, int(np.floor(0.2 * len(idx) + 0.5)))
        part[idx[:n_hold]] = True
    fit_idx, cal_idx = tr[~part], tr[part]
    model = _fit(X, D, y, fit_idx, gs.best_c, gs.best_gamma)
    return fit_platt(_scores(model, D, fit_idx, cal_idx), y[cal_idx])


def decode_voxels(scaled: VoxelMatrix, labeling: CategoryLabeling, category: str,
                  train_ids: Sequence[str], test_ids: Sequence[str], seed: int = 0,
                  grid=(DEFAULT_C_GRID, DEFAULT_GAMMA_GRID), folds: int = 5) -> float:
    """Accuracy of a grid-searched voxel-only SVM on ``test_ids``."""
    train_ids, test_ids = list(train_ids), list(test_ids)
    if not test_ids:
        raise ValueError("test set is empty")
    ytr = _category_labels(labeling, category, train_ids)
    yte = _category_labels(labeling, category, test_ids)
    Xtr, Xte = scaled.rows(train_ids), scaled.rows(test_ids)
    Dtr = sqdist(Xtr)
    gs = grid_search_rbf(Xtr, ytr, folds, grid, seed, sqdist_matrix=Dtr)
    model = train(TrainingProblem(Xtr, ytr, gs.best_c), KernelSpec(gs.best_gamma), sqdist_matrix=Dtr)
    return float(np.mean(model.predict(Xte) == yte))


# ---------------------------------------------------------------- files


def save_weights(path, ws: ActivityWeightSet) -> None:
    lines = [
        "#weights v1",
        f"#category {ws.category}",
        f"#combo {'+'.join(ws.roi_combo)}",
        f"#policy {ws.policy}",
        f"#seed {ws.seed}",
    ]
    if ws.grid:
        lines.append("#grid C=" + ",".join(format(c, ".17g") for c in ws.grid[0])
                     + " gamma=" + ",".join(format(g, ".17g") for g in ws.grid[1]))
    lines += [f"{sid} {format(ws.weights[sid], '.17g')}" for sid in ws.coverage]
    Path(path).write_text("\n".join(lines) + "\n")


def load_weights(path) -> ActivityWeightSet:
    meta, weights, order = {}, {}, []
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "#weights v1":
        raise ValueError(f"{path}: not a weights v1 file")
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, value = line[1:].partition(" ")
            meta[key] = value
        elif line.strip():
            sid, w = line.split()
            weights[sid] = float(w)
            order.append(sid)
    grid = ()
    if "grid" in meta:
        cpart, gpart = meta["grid"].split()
        grid = (tuple(float(v) for v in cpart[2:].split(",")),
                tuple(float(v) for v in gpart[6:].split(",")))
    combo = tuple(meta.get("combo", "").split("+")) if meta.get("combo") else ()
    return ActivityWeightSet(meta.get("category", ""), combo, weights, meta.get("policy", LITERAL),
                             int(meta.get("seed", 0)), grid, tuple(order))
