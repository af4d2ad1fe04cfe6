"""INI run configuration.

Example::

    [data]
    voxels = voxels.mat
    rois = rois.txt
    labels = labels.txt
    label_threshold = 0.20
    features = synth:features_synth.mat

    [experiment]
    seed = 0
    categories = humans, animals, buildings, foods
    combos = singletons, full
    partitions = 4
    problems = 5
    store = results.tsv

    [weights]
    policy = literal-probability
    grid_c = -5:15:2
    grid_gamma = -15:3:2

Relative paths are resolved against the directory holding the file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .data import load_feature_matrix, load_pixel_fractions, load_roi_map, load_voxel_matrix, \
    derive_category_labels
from .experiment import Dataset, SweepConfig, parse_combo, roi_combinations
from .weights import DEFAULT_C_GRID, DEFAULT_GAMMA_GRID, LITERAL, POLICIES


class ConfigError(ValueError):
    pass


def _log2_range(text: str) -> tuple[float, ...]:
    """``lo:hi:step`` over exponents of two, inclusive; or a comma list of exponents."""
    text = text.strip()
    try:
        if ":" in text:
            lo, hi, step = (int(t) for t in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            return tuple(2.0**k for k in range(lo, hi + 1, step))
        return tuple(2.0 ** float(t) for t in text.split(","))
    except ValueError:
        raise ConfigError(f"bad log2 grid {text!r}; expected lo:hi:step or a comma list") from None


def _list(text: str | None) -> list[str]:
    if not text:
        return []
    return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]


@dataclass
class RunConfig:
    path: Path
    voxels: Path
    rois: Path
    labels: Path
    features: dict
    label_threshold: float = 0.20
    seed: int = 0
    categories: list = field(default_factory=list)
    roi_names: list = field(default_factory=list)
    combos: str = "all"
    partitions: int = 4
    train_fraction: float = 0.8
    problems: int = 5
    population: str = "clear"
    base_penalty: float = 1.0
    store: Path = Path("results.tsv")
    policy: str = LITERAL
    folds: int = 5
    inner_folds: int = 5
    grid_c: tuple = DEFAULT_C_GRID
    grid_gamma: tuple = DEFAULT_GAMMA_GRID
    raw: dict = field(default_factory=dict)

    def inputs(self) -> list[Path]:
        return [self.voxels, self.rois, self.labels] + list(self.features.values())

    def load_dataset(self) -> Dataset:
        voxels = load_voxel_matrix(self.voxels)
        rois = load_roi_map(self.rois, self.roi_names or None)
        # [experiment] categories selects what to run; labels keep every category they mention
        labeling = derive_category_labels(load_pixel_fractions(self.labels), self.label_threshold)
        feats = {name: load_feature_matrix(p, voxels.stimulus_ids) for name, p in self.features.items()}
        return Dataset(voxels, rois, labeling, feats)

    def combo_list(self, roi_names) -> list[tuple[str, ...]]:
        names = sorted(roi_names)
        spec = self.combos.strip()
        if spec == "all":
            return roi_combinations(names)
        out = []
        for item in _list(spec.replace(";", ",")):
            if item == "singletons":
                out += [(r,) for r in names]
            elif item == "full":
                out.append(tuple(names))
            else:
                combo = parse_combo(item)
                unknown = [r for r in combo if r not in names]
                if unknown:
                    raise ConfigError(f"combination {item!r} names unknown ROI {unknown[0]!r}")
                out.append(combo)
        return list(dict.fromkeys(out))

    def sweep_config(self, dataset: Dataset, combos=None, categories=None, features=None) -> SweepConfig:
        roi_names = list(self.roi_names or dataset.rois.roi_names)
        cats = list(categories or self.categories or dataset.labeling.categories)
        return SweepConfig(categories=cats, roi_names=roi_names,
                           combos=combos if combos is not None else self.combo_list(roi_names),
                           feature_names=list(features or self.features), seed=self.seed,
                           n_partitions=self.partitions, train_fraction=self.train_fraction,
                           n_problems=self.problems, folds=self.folds, inner_folds=self.inner_folds,
                           grid=(self.grid_c, self.grid_gamma), policy=self.policy,
                           population=self.population, base_penalty=self.base_penalty)


def load_config(path, seed_override: int | None = None) -> RunConfig:
    path = Path(path)
    cp = configparser.ConfigParser()
    try:
        if not cp.read(path):
            raise ConfigError(f"{path}: cannot read configuration")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    def get(section, key, conv=str, default=None):
        if not cp.has_option(section, key):
            if default is None:
                raise ConfigError(f"{path}: missing [{section}] {key}")
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"{path}: [{section}] {key} = {raw!r} is not a valid value") from None

    feats = {}
    for item in _list(get("data", "features")):
        name, sep, p = item.partition(":")
        if not sep or not name:
            raise ConfigError(f"{path}: [data] features entry {item!r} must be name:path")
        feats[name.strip()] = resolve(p.strip())

    cfg = RunConfig(
        path=path,
        voxels=resolve(get("data", "voxels")),
        rois=resolve(get("data", "rois")),
        labels=resolve(get("data", "labels")),
        features=feats,
        label_threshold=get("data", "label_threshold", float, 0.20),
        seed=get("experiment", "seed", int, 0),
        categories=_list(get("experiment", "categories", str, "")),
        roi_names=_list(get("experiment", "rois", str, "")),
        combos=get("experiment", "combos", str, "all"),
        partitions=get("experiment", "partitions", int, 4),
        train_fraction=get("experiment", "train_fraction", float, 0.8),
        problems=get("experiment", "problems", int, 5),
        population=get("experiment", "population", str, "clear"),
        base_penalty=get("experiment", "base_penalty", float, 1.0),
        store=resolve(get("experiment", "store", str, "results.tsv")),
        policy=get("weights", "policy", str, LITERAL),
        folds=get("weights", "folds", int, 5),
        inner_folds=get("weights", "inner_folds", int, 5),
        grid_c=_log2_range(get("weights", "grid_c", str, "-5:15:2")),
        grid_gamma=_log2_range(get("weights", "grid_gamma", str, "-15:3:2")),
        raw={s: dict(cp.items(s)) for s in cp.sections()},
    )
    if seed_override is not None:
        cfg.seed = seed_override
    if cfg.policy not in POLICIES:
        raise ConfigError(f"{path}: [weights] policy must be one of {', '.join(POLICIES)}")
    if cfg.population not in ("clear", "full"):
        raise ConfigError(f"{path}: [experiment] population must be clear or full")
    if not feats:
        raise ConfigError(f"{path}: [data] features lists no feature matrices")
    return cfg
