"""Acceptance criteria, one printed pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
are produced; they are also collected in the terminal summary.
"""

import math
import time
from collections import defaultdict

import numpy as np
import pytest
from skimage.feature import hog as sk_hog

from conftest import acceptance_line
from oracles import platt_grid, platt_grid_refined, rbf_gram, svm_dual_bruteforce, t_upper_tail_quadrature
from sidestream.calibration import _targets, fit_platt, platt_nll
from sidestream.data import VoxelMatrix
from sidestream.experiment import Dataset, SweepConfig, read_store, roi_combinations, sweep
from sidestream.features import GrayImage, cell_histograms, hog_dimension, hog_features, hog_from_histograms
from sidestream.stats import (bonferroni_threshold, hypergeometric_moments, paired_summary,
                              permutation_null, student_t_sf)
from sidestream.svm import KernelSpec, TrainingProblem, dual_objective, kkt_violations, train
from sidestream.synth import SynthSpec, generate
from sidestream.weights import scale_voxels

# desk-scale hyperparameter grid for the end-to-end sweep
SWEEP_GRID = ((0.5, 2.0, 8.0), (2.0**-7, 2.0**-5, 2.0**-3, 2.0**-1))


def test_criterion_1_solver_matches_bruteforce():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_gap, kkt_fail = 0.0, 0
    for _ in range(200):
        n = int(rng.integers(2, 9))
        X = rng.normal(size=(n, 3))
        y = rng.permutation(np.r_[np.ones(n // 2), -np.ones(n - n // 2)])
        prob = TrainingProblem(X, y, base_penalty=float(rng.choice([0.3, 1.0, 5.0])),
                               sample_weights=rng.uniform(0, 1, n))
        gamma = float(rng.choice([0.1, 0.5, 2.0]))
        K = rbf_gram(X, gamma)
        _, f_ref = svm_dual_bruteforce(K, prob.labels, prob.upper_bounds)
        model = train(prob, KernelSpec(gamma), tolerance=1e-8)
        f = dual_objective(model.alpha, prob.labels, K)
        worst_gap = max(worst_gap, abs(f - f_ref) / max(1.0, abs(f_ref)))
        kkt_fail += bool(kkt_violations(model, prob, tol=1e-3))
    elapsed = time.perf_counter() - t0
    ok = worst_gap <= 1e-6 and kkt_fail == 0 and elapsed < 60
    assert acceptance_line(1, "solver vs brute-force QP", ok,
                           f"worst relative gap {worst_gap:.2e} (<= 1e-6), KKT failures {kkt_fail}, "
                           f"{elapsed:.1f} s (< 60 s)")


def test_criterion_2_zero_weights_reduce_to_hinge():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(10, 60))
        X = rng.normal(size=(n, 4))
        y = np.where(X[:, 0] + rng.normal(size=n) > 0, 1, -1)
        y[:2] = (1, -1)
        kernel = KernelSpec(float(rng.choice([0.1, 0.5, 2.0])))
        c = float(rng.choice([0.5, 1.0, 4.0]))
        hl = train(TrainingProblem(X, y, base_penalty=c), kernel)
        awl = train(TrainingProblem(X, y, base_penalty=c, sample_weights=np.zeros(n)), kernel)
        probe = rng.normal(size=(100, 4))
        worst = max(worst, np.max(np.abs(hl.decision_function(probe) - awl.decision_function(probe))))
    assert acceptance_line(2, "zero weights reproduce hinge training", worst <= 1e-9,
                           f"max decision difference {worst:.1e} (<= 1e-9)")


def test_criterion_3_platt_beats_oracle_grid():
    rng = np.random.default_rng(3)
    s = rng.uniform(-3, 3, size=1000)
    y = np.where(rng.uniform(size=1000) < 1 / (1 + np.exp(-2.0 * s)), 1, -1)
    t0 = time.perf_counter()
    params = fit_platt(s, y)
    elapsed = time.perf_counter() - t0
    a_grid, b_grid, f_grid, nll = platt_grid(s, y)
    a_ref, b_ref, _ = platt_grid_refined(s, y, resolution=1e-3)
    f_fit = platt_nll(params.slope_a, params.offset_b, s, _targets(y))
    beats = bool(np.all(f_fit <= nll))
    gap = max(abs(params.slope_a - a_ref), abs(params.offset_b - b_ref))
    ok = beats and gap <= 1e-3 and elapsed < 10
    assert acceptance_line(3, "Platt fit vs 201x201 NLL grid", ok,
                           f"NLL {f_fit:.4f} vs grid best {f_grid:.4f}; (A, B) = ({params.slope_a:.4f}, "
                           f"{params.offset_b:.4f}), refined oracle off by {gap:.1e} (<= 1e-3); "
                           f"{elapsed * 1e3:.1f} ms")


def test_criterion_4_scaling_endpoints():
    rng = np.random.default_rng(4)
    values = rng.normal(size=(80, 30)) * rng.uniform(0.1, 5, 30) + rng.normal(size=30)
    values[:, [5, 17]] = 1.25
    ref = tuple(range(0, 80, 2))
    scaled = scale_voxels(VoxelMatrix(values, tuple(map(str, range(80))), reference_rows=ref)).values
    r = scaled[list(ref)]
    varying = [j for j in range(30) if j not in (5, 17)]
    ends = all(r[np.argmin(values[list(ref), j]), j] == 0.0 and r[np.argmax(values[list(ref), j]), j] == 1.0
               for j in varying)
    constant = bool(np.all(scaled[:, [5, 17]] == 0.0))
    clipped = bool(np.all((scaled >= 0) & (scaled <= 1)))
    outside = int(np.sum((values[1::2][:, varying] < values[list(ref)][:, varying].min(0))
                         | (values[1::2][:, varying] > values[list(ref)][:, varying].max(0))))
    ok = ends and constant and clipped
    assert acceptance_line(4, "voxel scaling endpoints", ok,
                           f"min->0 and max->1 on {len(varying)} voxels: {ends}; constant->0: {constant}; "
                           f"{outside} out-of-range values clipped into [0, 1]: {clipped}")


def test_criterion_5_combinatorics():
    rois = ("EBA", "FFA", "LO", "OFA", "PPA", "RSC", "TOS")
    combos = roi_combinations(rois)
    counts = {r: sum(r in c for c in combos) for r in rois}
    ok = len(combos) == 127 and len(set(combos)) == 127 and set(counts.values()) == {64}
    assert acceptance_line(5, "ROI combinations", ok,
                           f"{len(combos)} combos, per-ROI counts {sorted(set(counts.values()))}")


def test_criterion_6_permutation_null():
    acc = np.r_[np.ones(40), np.zeros(87)]
    t0 = time.perf_counter()
    null = permutation_null(acc, 64, 1_000_000, seed=0)
    elapsed = time.perf_counter() - t0
    mean, var = hypergeometric_moments(40)
    se = math.sqrt(var / null.n_samples)
    z = (null.samples.mean() - mean) / se
    rel_var = null.samples.var() / var - 1
    line = f"0.05/127 = {bonferroni_threshold():.7f}"
    ok = abs(z) <= 3 and abs(rel_var) <= 0.05 and elapsed < 30 and line == "0.05/127 = 0.0003937"
    assert acceptance_line(6, "permutation null calibration", ok,
                           f"mean off by {z:+.2f} SE, variance off by {100 * rel_var:+.2f}%, "
                           f"{elapsed:.1f} s (< 30 s); Bonferroni {line}")


@pytest.fixture(scope="module")
def end_to_end(tmp_path_factory):
    """Default synthetic dataset swept over the 7 singletons and the all-ROI combo."""
    spec = SynthSpec()
    ds = generate(spec)
    dataset = Dataset(ds.voxels, ds.rois, ds.labeling, {"synth": ds.features})
    rois = sorted(spec.roi_layout)
    cfg = SweepConfig(categories=list(spec.categories), roi_names=rois,
                      combos=[(r,) for r in rois] + [tuple(rois)], seed=0, n_partitions=4,
                      n_problems=5, inner_folds=3, grid=SWEEP_GRID)
    store = tmp_path_factory.mktemp("e2e") / "results.tsv"
    t0 = time.perf_counter()
    sweep(dataset, cfg, store, workers=1)
    elapsed = time.perf_counter() - t0
    _, records = read_store(store)
    trials = defaultdict(lambda: {"HL": {}, "AWL": {}})
    for r in records:
        trials[(r.category, r.roi_combo)][r.loss][(r.partition, r.problem)] = r.accuracy
    summary = {}
    for key, v in trials.items():
        k = sorted(v["HL"])
        summary[key] = paired_summary([v["HL"][i] for i in k], [v["AWL"][i] for i in k])
        summary[key]["n"] = len(k)
    return spec, dataset, cfg, store, summary, elapsed


def test_criterion_7a_awl_beats_hl_per_category(end_to_end):
    spec, _, _, _, summary, elapsed = end_to_end
    full = tuple(sorted(spec.roi_layout))
    parts, ok = [], elapsed < 15 * 60
    for cat in spec.categories:
        s = summary[(cat, full)]
        ok &= s["n"] == 20 and s["delta_mean"] > 0 and s["p"] < 0.01
        parts.append(f"{cat} HL {s['hl_mean']:.3f} AWL {s['awl_mean']:.3f} p {s['p']:.2g}")
    assert acceptance_line("7a", "AWL > HL on every category, all-ROI weights", ok,
                           "; ".join(parts) + f"; sweep {elapsed:.0f} s (< 900 s)")


def test_criterion_7b_selective_roi_helps_more(end_to_end):
    spec, _, _, _, summary, _ = end_to_end
    parts, ok = [], True
    for cat in spec.categories:
        sel = summary[(cat, (spec.selective_roi(cat),))]["delta_mean"]
        non = np.mean([summary[(cat, (r,))]["delta_mean"] for r in spec.nonselective_rois(cat)])
        ok &= sel > non
        parts.append(f"{cat} {spec.selective_roi(cat)} {sel:+.4f} vs non-selective {non:+.4f}")
    assert acceptance_line("7b", "selective ROI weights gain more than non-selective", ok,
                           "; ".join(parts))


def test_criterion_8_t_tail_oracle():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        df = int(rng.integers(1, 60))
        t = float(rng.uniform(-6, 12))
        worst = max(worst, abs(student_t_sf(t, df) - t_upper_tail_quadrature(t, df)))
    assert acceptance_line(8, "t-test p-values vs quadrature", worst <= 1e-9,
                           f"max absolute difference {worst:.1e} (<= 1e-9) on 100 cases")


def test_criterion_9_determinism(end_to_end, tmp_path):
    _, dataset, cfg, one, _, _ = end_to_end
    many = sweep(dataset, cfg, tmp_path / "many.tsv", workers=8)
    same_workers = one.read_bytes() == many.read_bytes()
    part = tmp_path / "resumed.tsv"
    sweep(dataset, cfg, part, workers=1, max_tasks=40)
    with open(part, "a") as fh:
        fh.write("humans\tEBA\t3\t0\tsyn")  # interrupted mid-line
    sweep(dataset, cfg, part, workers=1, resume=True)
    same_resume = part.read_bytes() == one.read_bytes()
    assert acceptance_line(9, "deterministic sweep store", same_workers and same_resume,
                           f"workers 1 vs 8 byte-identical: {same_workers}; "
                           f"resume after interrupt byte-identical: {same_resume}")


def test_criterion_10_hog_sanity():
    rng = np.random.default_rng(10)
    img = rng.uniform(size=(250, 250))
    ref = sk_hog(img, orientations=9, pixels_per_cell=(32, 32), cells_per_block=(1, 1),
                 feature_vector=False)
    dim_ok = hog_dimension(250, 250, 32) == 1519 == hog_features(GrayImage(img), 32).size \
        == ref.shape[0] * ref.shape[1] * 31
    zero_ok = all(not np.any(hog_features(GrayImage(np.full((250, 250), v)), 32)) for v in (0.0, 0.5, 1.0))

    # gradients at exactly +-45 degrees, so a quarter turn is a clean four-bin shift
    prof = np.cumsum(rng.normal(size=512))
    prof = (prof - prof.min()) / np.ptp(prof)
    yy, xx = np.mgrid[0:256, 0:256]
    diag = prof[xx + yy]
    F = hog_from_histograms(cell_histograms(GrayImage(diag), 32))
    Fr = hog_from_histograms(cell_histograms(GrayImage(np.rot90(diag)), 32))
    perm = [(k - 4) % 18 for k in range(18)] + [18 + (k - 4) % 9 for k in range(9)] \
        + [27 + t for t in (2, 0, 3, 1)]
    nc = F.shape[0]
    worst = max(np.max(np.abs(Fr[nc - 1 - cx, cy][perm] - F[cy, cx]))
                for cy in range(2, nc - 2) for cx in range(2, nc - 2))
    ok = dim_ok and zero_ok and worst <= 1e-6
    assert acceptance_line(10, "HOG sanity", ok,
                           f"250x250 cell 32 -> 1519 dims, reference grid {ref.shape[:2]}: {dim_ok}; "
                           f"constant image zero: {zero_ok}; quarter-turn permutation error {worst:.1e} "
                           f"(<= 1e-6)")
