"""``sidestream`` command line: validate, synth, weights, sweep, report.

Exit codes: 0 success, 1 invalid input, 2 runtime failure.  Failures are
printed as lines starting with ``error:``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .data import IngestionError, select_voxels
from .experiment import (StoreError, combo_key, make_partitions, parse_combo, read_store, sweep,
                         weight_seed)
from .stats import IncompleteResultsError, bonferroni_threshold, summarize
from .synth import SynthSpec, generate, write_bundle
from .weights import generate_activity_weights, save_weights, scale_voxels

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
INPUT_ERRORS = (ConfigError, IngestionError, IncompleteResultsError, StoreError, FileNotFoundError,
                ValueError)

log = logging.getLogger("sidestream")


class InvalidInput(Exception):
    pass


def _error(msg: str) -> None:
    for line in str(msg).splitlines() or [""]:
        print(f"error: {line}", file=sys.stderr)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _seed_override() -> int | None:
    raw = os.environ.get("SIDESTREAM_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise InvalidInput(f"SIDESTREAM_SEED={raw!r} is not an integer") from None


def write_manifest(path, command: str, argv, started: str, *, config: RunConfig | None = None,
                   inputs=(), seeds: dict | None = None, extra: dict | None = None) -> Path:
    """Record what is needed to rerun ``command`` and check its inputs."""
    manifest = {
        "tool": "sidestream",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "started": started,
        "finished": _now(),
        "master_seed": config.seed if config else None,
        "seed_source": "SIDESTREAM_SEED" if os.environ.get("SIDESTREAM_SEED") else "config",
        "config": config.raw if config else None,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "seeds": seeds or {},
        "bonferroni": {"m": 127, "alpha_0.05": bonferroni_threshold(0.05),
                       "alpha_0.01": bonferroni_threshold(0.01),
                       "line": f"0.05/127 = {bonferroni_threshold(0.05):.7f}"},
    }
    if extra:
        manifest.update(extra)
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------- validate


def validate(cfg: RunConfig) -> list[str]:
    """Problems found in the configured dataset; empty when it is usable."""
    problems = []
    for p in cfg.inputs():
        if not Path(p).is_file():
            problems.append(f"{p}: file not found")
    if problems:
        return problems
    try:
        ds = cfg.load_dataset()
    except (IngestionError, ValueError) as exc:
        return [str(exc)]

    vox_ids = set(ds.voxels.stimulus_ids)
    for sid in ds.labeling.stimulus_ids:
        if sid not in vox_ids:
            problems.append(f"{cfg.labels}: stimulus {sid!r} has no voxel row")
    for sid in ds.voxels.stimulus_ids:
        if sid not in ds.labeling.membership:
            problems.append(f"{cfg.voxels}: stimulus {sid!r} has no label entry")
    for name, fm in ds.features.items():
        try:
            fm.check_join(ds.voxels.stimulus_ids)
        except (IngestionError, ValueError) as exc:
            problems.append(f"{cfg.features[name]}: {exc}")

    counts = ds.rois.counts()
    if not counts or not any(counts.values()):
        problems.append(f"{cfg.rois}: ROI map assigns no voxels")
    for roi, n in counts.items():
        if n == 0:
            problems.append(f"{cfg.rois}: ROI {roi!r} has no voxels")
    bad = [v for v in ds.rois.assignment if not 0 <= v < ds.voxels.n_voxels]
    if bad:
        problems.append(f"{cfg.rois}: voxel index {bad[0]} outside the {ds.voxels.n_voxels}-column matrix")
    for roi in cfg.roi_names:
        if roi not in counts:
            problems.append(f"{cfg.path}: [experiment] rois names unknown ROI {roi!r}")
    try:
        cfg.combo_list(cfg.roi_names or ds.rois.roi_names)
    except ConfigError as exc:
        problems.append(str(exc))

    clear = set(ds.labeling.clear_set)
    for cat in cfg.categories or ds.labeling.categories:
        if cat not in ds.labeling.categories:
            problems.append(f"{cfg.path}: [experiment] categories names unknown category {cat!r}")
            continue
        n_pos = sum(1 for s in ds.labeling.positives(cat) if s in clear)
        if n_pos < cfg.folds:
            problems.append(f"{cfg.labels}: category {cat!r} has {n_pos} clear positives, "
                            f"fewer than {cfg.folds} folds")
    return problems


def cmd_validate(args) -> int:
    cfg = load_config(args.config, _seed_override())
    problems = validate(cfg)
    for p in problems:
        _error(p)
    if problems:
        return EXIT_INVALID
    ds = cfg.load_dataset()
    print(f"ok: {ds.voxels.n_stimuli} stimuli, {ds.voxels.n_voxels} voxels, "
          f"{len(ds.rois.roi_names)} ROIs, {len(ds.labeling.clear_set)} clear stimuli")
    for cat in cfg.categories or ds.labeling.categories:
        print(f"  {cat}: {len(ds.labeling.positives(cat))} positives")
    return EXIT_OK


# ---------------------------------------------------------------- synth

SYNTH_CONFIG = """\
[data]
voxels = voxels.mat
rois = rois.txt
labels = labels.txt
label_threshold = 0.20
features = synth:features_synth.mat

[experiment]
seed = 0
categories = {categories}
combos = all
partitions = 4
problems = 5
store = results.tsv

[weights]
policy = literal-probability
folds = 5
inner_folds = 5
grid_c = -5:15:2
grid_gamma = -15:3:2
"""


def cmd_synth(args) -> int:
    started = _now()
    if args.spec:
        try:
            spec = SynthSpec.from_json(Path(args.spec).read_text())
        except (TypeError, json.JSONDecodeError) as exc:
            raise InvalidInput(f"{args.spec}: {exc}") from None
    else:
        spec = SynthSpec()
    seed = _seed_override()
    if seed is not None:
        spec.seed = seed
    ds = generate(spec)
    out = Path(args.out_dir)
    paths = write_bundle(ds, out)
    (out / "spec.json").write_text(spec.to_json() + "\n")
    cfg_path = out / "sidestream.ini"
    if not cfg_path.exists():
        cfg_path.write_text(SYNTH_CONFIG.format(categories=", ".join(spec.categories)))
    write_manifest(out / "synth.manifest.json", "synth", sys.argv[1:], started,
                   inputs=[Path(args.spec)] if args.spec else [],
                   seeds={"synth": spec.seed},
                   extra={"outputs": {str(p): _sha256(p) for p in paths}})
    for p in paths:
        print(p)
    return EXIT_OK


# ---------------------------------------------------------------- weights


def cmd_weights(args) -> int:
    started = _now()
    cfg = load_config(args.config, _seed_override())
    ds = cfg.load_dataset()
    combo = parse_combo(args.combo)
    for roi in combo:
        if roi not in ds.rois.roi_names:
            raise InvalidInput(f"unknown ROI {roi!r} in combination {args.combo!r}")
    if args.category not in ds.labeling.categories:
        raise InvalidInput(f"unknown category {args.category!r}")
    sweep_cfg = cfg.sweep_config(ds, combos=[combo])
    if not 0 <= args.partition < cfg.partitions:
        raise InvalidInput(f"partition must lie in [0, {cfg.partitions})")
    part = make_partitions(ds.population(cfg.population), cfg.partitions, cfg.train_fraction,
                           cfg.seed)[args.partition]
    seed = weight_seed(sweep_cfg, args.category, combo, part.id)
    vox = select_voxels(ds.voxels, ds.rois, combo).with_reference(part.train_ids)
    ws = generate_activity_weights(scale_voxels(vox), ds.labeling, args.category, part.train_ids,
                                   cfg.folds, cfg.policy, seed, (cfg.grid_c, cfg.grid_gamma),
                                   cfg.inner_folds, combo)
    out = Path(args.out)
    save_weights(out, ws)
    write_manifest(out.with_name(out.name + ".manifest.json"), "weights", sys.argv[1:], started,
                   config=cfg, inputs=cfg.inputs(),
                   seeds={"partition": part.seed, "weights": seed})
    print(f"{out}: {len(ws.weights)} weights for {args.category} / {combo_key(combo)}")
    return EXIT_OK


# ---------------------------------------------------------------- sweep


def _filter(values, text, what):
    if not text:
        return None
    wanted = [t.strip() for t in text.split(",") if t.strip()]
    unknown = [w for w in wanted if w not in values]
    if unknown:
        raise InvalidInput(f"unknown {what} {unknown[0]!r}")
    return wanted


def cmd_sweep(args) -> int:
    started = _now()
    cfg = load_config(args.config, _seed_override())
    ds = cfg.load_dataset()
    roi_names = cfg.roi_names or list(ds.rois.roi_names)
    combos = cfg.combo_list(roi_names)
    if args.combos:
        wanted = [parse_combo(c) for c in args.combos.replace(";", ",").split(",") if c.strip()]
        missing = [c for c in wanted if c not in combos]
        if missing:
            raise InvalidInput(f"combination {combo_key(missing[0])!r} is not in the configured set")
        combos = wanted
    cats = _filter(cfg.categories or ds.labeling.categories, args.categories, "category")
    feats = _filter(list(cfg.features), args.features, "feature set")
    sweep_cfg = cfg.sweep_config(ds, combos=combos, categories=cats, features=feats)
    store = Path(args.store) if args.store else cfg.store
    t0 = time.perf_counter()
    progress = (lambda msg: print(msg, file=sys.stderr, flush=True)) if args.progress else None
    sweep(ds, sweep_cfg, store, workers=args.workers, resume=args.resume, max_tasks=args.max_tasks,
          progress=progress)
    seeds = {f"partition{p.id}": p.seed
             for p in make_partitions(ds.population(cfg.population), cfg.partitions,
                                      cfg.train_fraction, cfg.seed)}
    write_manifest(store.with_name(store.name + ".manifest.json"), "sweep", sys.argv[1:], started,
                   config=cfg, inputs=cfg.inputs(), seeds=seeds,
                   extra={"store_sha256": _sha256(store), "workers": args.workers,
                          "categories": list(sweep_cfg.categories),
                          "combos": [combo_key(c) for c in combos],
                          "features": list(sweep_cfg.feature_names),
                          "elapsed_s": round(time.perf_counter() - t0, 3)})
    print(store)
    return EXIT_OK


# ---------------------------------------------------------------- report


def cmd_report(args) -> int:
    started = _now()
    seed = _seed_override()
    seed = args.seed if seed is None else seed
    meta, records = read_store(args.store)
    if not records:
        raise InvalidInput(f"{args.store}: no records")
    report = summarize(records, meta["partitions"], meta["problems"], args.null_samples, seed)
    out = Path(args.out)
    written = report.write(out)
    write_manifest(out / "report.manifest.json", "report", sys.argv[1:], started,
                   inputs=[Path(args.store)], seeds={"null": seed},
                   extra={"null_samples": args.null_samples,
                          "outputs": [str(p) for p in written]})
    for row in report.accuracy:
        cat, feat, combo, n, hl, hl_se, awl, awl_se, dm, _, t, p, flag = row
        mark = "  *" if flag else ""
        print(f"{cat:12s} {feat:8s} {combo:28s} HL {hl:.4f}+-{hl_se:.4f}  AWL {awl:.4f}+-{awl_se:.4f}  "
              f"p {p:.3g}{mark}")
    print(f"Bonferroni threshold 0.05/127 = {bonferroni_threshold(0.05):.7f}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sidestream", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"sidestream {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a dataset configuration")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="write a synthetic dataset bundle")
    p.add_argument("out_dir")
    p.add_argument("--spec", help="JSON SynthSpec (defaults otherwise)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("weights", help="activity weights for one category, combination and partition")
    p.add_argument("config")
    p.add_argument("--category", required=True)
    p.add_argument("--combo", required=True, help="ROI names joined with '+'")
    p.add_argument("--partition", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("sweep", help="run paired HL/AWL comparisons into a result store")
    p.add_argument("config")
    p.add_argument("--store", help="overrides [experiment] store")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--combos", help="comma-separated combinations such as EBA,EBA+FFA")
    p.add_argument("--categories", help="comma-separated category filter")
    p.add_argument("--features", help="comma-separated feature-set filter")
    p.add_argument("--max-tasks", type=int, help="stop after this many tasks (resumable)")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="tables, charts and ROI significance from a result store")
    p.add_argument("store")
    p.add_argument("--out", required=True)
    p.add_argument("--null-samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidInput, *INPUT_ERRORS) as exc:
        _error(exc)
        return EXIT_INVALID
    except Exception as exc:  # anything else is a failure of the run itself
        log.debug("traceback", exc_info=True)
        _error(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
