"""Synthetic datasets with a known link between voxel response and recognisability.

Each stimulus has a primary category, a second "confusable" category and a
difficulty ``d`` in [0, 1].  Voxels in ROIs selective for the primary
category respond with amplitude ``selectivity * (1 - d)`` times a per-voxel
gain, plus unit Gaussian noise; ``voxel_confusion`` adds a response to the
confusable category in proportion to ``d``.  Features start at the primary
category's prototype, drift toward the confusable prototype by
``confusion * d`` and carry Gaussian noise of standard deviation
``feature_noise + difficulty_noise * d``.  Stimuli the voxels mark as easy
are therefore also easy in feature space.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (CategoryLabeling, FeatureMatrix, RoiMap, VoxelMatrix, derive_category_labels,
                   save_feature_matrix, save_pixel_fractions, save_roi_map, save_voxel_matrix)

ROIS = ("EBA", "FFA", "LO", "OFA", "PPA", "RSC", "TOS")
CATEGORIES = ("humans", "animals", "buildings", "foods")


def _default_selectivity():
    return {
        "EBA": {"humans": 3.0, "animals": 2.5},
        "FFA": {"humans": 2.5},
        "OFA": {"humans": 1.0},
        "PPA": {"buildings": 3.0, "foods": 2.5},
        "RSC": {"buildings": 1.0},
        "TOS": {"buildings": 1.0},
        "LO": {},
    }


@dataclass
class SynthSpec:
    n_stimuli: int = 690
    categories: tuple = CATEGORIES
    category_share: tuple = (0.32, 0.28, 0.24, 0.16)
    roi_layout: dict = field(default_factory=lambda: {r: 12 for r in ROIS})
    selectivity: dict = field(default_factory=_default_selectivity)
    feature_dim: int = 32
    feature_noise: float = 0.5
    prototype_scale: float = 0.7
    confusion: float = 0.6
    difficulty_noise: float = 1.0
    voxel_confusion: float = 0.0
    difficulty_shape: float = 1.0
    ambiguous_fraction: float = 0.06
    unassigned_voxels: int = 20
    seed: int = 7

    def __post_init__(self):
        if self.n_stimuli <= 0 or self.feature_dim <= 0:
            raise ValueError("n_stimuli and feature_dim must be positive")
        if len(self.category_share) != len(self.categories):
            raise ValueError("category_share needs one entry per category")
        if any(c <= 0 for c in self.roi_layout.values()):
            raise ValueError("every ROI needs a positive voxel count")
        for roi, sel in self.selectivity.items():
            if roi not in self.roi_layout:
                raise ValueError(f"selectivity for unknown ROI {roi!r}")
            for cat, v in sel.items():
                if cat not in self.categories or not np.isfinite(v) or v < 0:
                    raise ValueError(f"bad selectivity {roi}/{cat}={v}")
        if not (self.feature_noise >= 0 and 0 <= self.ambiguous_fraction < 1):
            raise ValueError("feature_noise must be >= 0 and ambiguous_fraction in [0, 1)")
        for name in ("prototype_scale", "confusion", "difficulty_noise", "voxel_confusion"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not self.difficulty_shape > 0:
            raise ValueError("difficulty_shape must be positive")
        self.categories = tuple(self.categories)
        self.category_share = tuple(self.category_share)

    def selective_roi(self, category: str) -> str:
        return max(self.roi_layout, key=lambda r: self.selectivity.get(r, {}).get(category, 0.0))

    def nonselective_rois(self, category: str) -> list[str]:
        return [r for r in self.roi_layout if self.selectivity.get(r, {}).get(category, 0.0) == 0.0]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        raw = json.loads(text)
        for key in ("categories", "category_share"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)


@dataclass(frozen=True)
class SynthDataset:
    voxels: VoxelMatrix
    rois: RoiMap
    labeling: CategoryLabeling
    features: FeatureMatrix
    pixel_fractions: dict
    difficulty: dict
    primary: dict
    confused_with: dict


def generate(spec: SynthSpec) -> SynthDataset:
    rng = np.random.default_rng(spec.seed)
    n, cats = spec.n_stimuli, spec.categories
    k = len(cats)
    ids = tuple(f"s{i:05d}" for i in range(n))
    share = np.asarray(spec.category_share) / np.sum(spec.category_share)
    primary = rng.choice(k, size=n, p=share)
    difficulty = rng.uniform(0.0, 1.0, size=n) ** spec.difficulty_shape
    other = (primary + 1 + rng.integers(k - 1, size=n)) % k

    # pixel fractions: one dominant category; a few stimuli are ambiguous
    frac = rng.uniform(0.0, 0.15, size=(n, k))
    frac[np.arange(n), primary] = rng.uniform(0.3, 0.9, size=n)
    ambiguous = rng.random(n) < spec.ambiguous_fraction
    for i in np.flatnonzero(ambiguous):
        if rng.random() < 0.5:
            second = (primary[i] + 1 + rng.integers(k - 1)) % k
            frac[i, second] = rng.uniform(0.2, 0.5)
        else:
            frac[i, primary[i]] = rng.uniform(0.0, 0.19)
    fractions = {sid: {c: float(frac[i, j]) for j, c in enumerate(cats)} for i, sid in enumerate(ids)}
    labeling = derive_category_labels(fractions, 0.20, cats)

    # voxels, ROI by ROI in layout order, then unassigned voxels
    cols, assignment = [], {}
    v = 0
    for roi, count in spec.roi_layout.items():
        sel = np.array([spec.selectivity.get(roi, {}).get(c, 0.0) for c in cats])
        gain = rng.uniform(0.5, 1.5, size=(count, k))
        drive = (sel[primary] * (1.0 - difficulty))[:, None] * gain[:, primary].T
        drive += (spec.voxel_confusion * sel[other] * difficulty)[:, None] * gain[:, other].T
        cols.append(drive + rng.normal(size=(n, count)))
        for _ in range(count):
            assignment[v] = roi
            v += 1
    cols.append(rng.normal(size=(n, spec.unassigned_voxels)))
    voxels = VoxelMatrix(np.hstack(cols), ids)
    rois = RoiMap(tuple(spec.roi_layout), assignment)

    protos = spec.prototype_scale * rng.normal(size=(k, spec.feature_dim))
    d = spec.confusion * difficulty[:, None]
    feats = (1.0 - d) * protos[primary] + d * protos[other]
    noise_sd = spec.feature_noise + spec.difficulty_noise * difficulty[:, None]
    feats += noise_sd * rng.normal(size=feats.shape)
    features = FeatureMatrix("synth", feats, ids)

    return SynthDataset(voxels, rois, labeling, features, fractions,
                        dict(zip(ids, difficulty.tolist())),
                        {sid: cats[p] for sid, p in zip(ids, primary)},
                        {sid: cats[o] for sid, o in zip(ids, other)})


FILES = ("voxels.mat", "rois.txt", "labels.txt", "features_synth.mat")


def write_bundle(ds: SynthDataset, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f for f in FILES]
    save_voxel_matrix(paths[0], ds.voxels)
    save_roi_map(paths[1], ds.rois)
    save_pixel_fractions(paths[2], ds.pixel_fractions)
    save_feature_matrix(paths[3], ds.features)
    return paths
