import numpy as np
import pytest

from sidestream.data import CategoryLabeling, VoxelMatrix
from sidestream.weights import (CLASS_CONDITIONAL, LITERAL, ActivityWeightSet, decode_voxels,
                                generate_activity_weights, grid_search_rbf, load_weights,
                                save_weights, scale_voxels, stratified_folds)

GRID = ((0.5, 2.0, 8.0), (0.03, 0.25, 1.0))


def make_data(n=120, signal=3.0, n_vox=6, seed=0, n_mixed=10):
    rng = np.random.default_rng(seed)
    ids = [f"s{i:03d}" for i in range(n)]
    pos = rng.uniform(size=n) < 0.35
    membership = {}
    for i, s in enumerate(ids):
        membership[s] = {"humans"} if pos[i] else {"buildings"}
    for s in ids[:n_mixed]:
        membership[s] = {"humans", "buildings"}
    values = rng.normal(size=(n, n_vox))
    values[:, :2] += signal * np.where(pos, 1.0, -1.0)[:, None]
    labeling = CategoryLabeling(("humans", "buildings"), membership, tuple(ids))
    return scale_voxels(VoxelMatrix(values, tuple(ids))), labeling, ids


def test_scale_voxels_endpoints():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(10, 5))
    values[:, 3] = 2.5
    vm = VoxelMatrix(values, tuple(map(str, range(10))), reference_rows=(0, 1, 2, 3, 4, 5))
    scaled = scale_voxels(vm).values
    ref = scaled[:6]
    for j in (0, 1, 2, 4):
        assert ref[:, j].min() == 0.0 and ref[:, j].max() == 1.0
        assert ref[np.argmin(values[:6, j]), j] == 0.0
        assert ref[np.argmax(values[:6, j]), j] == 1.0
    np.testing.assert_array_equal(scaled[:, 3], 0.0)
    assert np.all((scaled >= 0) & (scaled <= 1))
    varying = [0, 1, 2, 4]
    v, r = values[6:, varying], values[:6, varying]
    inside = (v >= r.min(0)) & (v <= r.max(0))
    expected = (v - r.min(0)) / np.ptp(r, axis=0)
    np.testing.assert_allclose(scaled[6:, varying][inside], expected[inside], rtol=1e-12)


def test_stratified_folds_balance():
    y = np.array([1] * 13 + [-1] * 27)
    f = stratified_folds(y, 5, np.random.default_rng(0))
    for k in range(5):
        assert np.sum((f == k) & (y == 1)) in (2, 3)
        assert np.sum((f == k) & (y == -1)) in (5, 6)
    np.testing.assert_array_equal(f, stratified_folds(y, 5, np.random.default_rng(0)))
    with pytest.raises(ValueError, match="fewer than 5 folds"):
        stratified_folds(np.array([1, 1, -1, -1, -1, -1]), 5, np.random.default_rng(0))


def test_grid_search_tie_break_prefers_small_values():
    # perfectly separable: every grid point ties at accuracy 1
    X = np.r_[np.zeros((10, 1)), np.ones((10, 1)) * 5]
    y = np.r_[np.ones(10), -np.ones(10)]
    gs = grid_search_rbf(X, y, 5, ((4.0, 1.0, 16.0), (0.5, 0.1)))
    assert (gs.best_c, gs.best_gamma) == (1.0, 0.1)
    assert gs.cv_accuracy == 1.0
    assert len(gs.grid) == 6
    assert [r[:2] for r in gs.grid][:2] == [(1.0, 0.1), (1.0, 0.5)]


def test_separable_responses_give_confident_weights():
    # smoothed Platt targets cap confidence at (n+1)/(n+2) of the calibration split,
    # so the split needs a few dozen positives for weights above 0.9
    scaled, labeling, ids = make_data(n=400, signal=3.0)
    ws = generate_activity_weights(scaled, labeling, "humans", ids, grid=GRID, inner_folds=3, seed=1)
    assert set(ws.coverage) == set(labeling.clear_set)
    pos = [s for s in ws.coverage if labeling.label(s, "humans") > 0]
    neg = [s for s in ws.coverage if labeling.label(s, "humans") < 0]
    assert np.mean(ws.vector(pos)) > 0.9
    assert np.mean(ws.vector(neg)) < 0.1
    # mixed stimuli are outside the clear set and get no weight
    assert ws.weight(ids[0]) == 0.0 and ids[0] not in ws.coverage


@pytest.mark.filterwarnings("ignore:fitted Platt slope is positive")
def test_noise_responses_give_base_rate_weights():
    scaled, labeling, ids = make_data(signal=0.0, n=150, seed=3)
    ws = generate_activity_weights(scaled, labeling, "humans", ids, grid=GRID, inner_folds=3, seed=2)
    y = np.array([labeling.label(s, "humans") for s in ws.coverage])
    base = np.mean(y > 0)
    w = ws.vector(ws.coverage)
    assert abs(np.mean(w) - base) < 0.1
    assert abs(np.mean(w[y > 0]) - np.mean(w[y < 0])) < 0.15


def test_class_conditional_relation():
    scaled, labeling, ids = make_data(signal=1.0, seed=4)
    lit = generate_activity_weights(scaled, labeling, "humans", ids, grid=GRID, inner_folds=3,
                                    seed=5, policy=LITERAL)
    cc = generate_activity_weights(scaled, labeling, "humans", ids, grid=GRID, inner_folds=3,
                                   seed=5, policy=CLASS_CONDITIONAL)
    for s in lit.coverage:
        if labeling.label(s, "humans") > 0:
            assert cc.weight(s) == lit.weight(s)
        else:
            np.testing.assert_allclose(cc.weight(s), 1.0 - lit.weight(s), atol=1e-15)


def test_weights_deterministic_and_seed_sensitive():
    scaled, labeling, ids = make_data(signal=0.5, seed=6)
    kw = dict(grid=GRID, inner_folds=3)
    a = generate_activity_weights(scaled, labeling, "humans", ids, seed=9, **kw)
    b = generate_activity_weights(scaled, labeling, "humans", ids, seed=9, **kw)
    c = generate_activity_weights(scaled, labeling, "humans", ids, seed=10, **kw)
    assert a.weights == b.weights
    assert a.weights != c.weights


def test_weight_generation_errors():
    scaled, labeling, ids = make_data()
    with pytest.raises(ValueError, match="policy"):
        generate_activity_weights(scaled, labeling, "humans", ids, policy="bogus")
    with pytest.raises(ValueError, match="not in voxel matrix"):
        generate_activity_weights(scaled, labeling, "humans", ids + ["zz"])
    with pytest.raises(ValueError, match="no clear-set"):
        generate_activity_weights(scaled, labeling, "humans", ids[:5])
    with pytest.raises(ValueError, match="fewer than 5 folds"):
        generate_activity_weights(scaled, labeling, "humans", ids[:20])


def test_decode_voxels_above_chance():
    scaled, labeling, ids = make_data(signal=1.5, seed=7)
    acc = decode_voxels(scaled, labeling, "humans", ids[:90], ids[90:], grid=GRID, folds=3)
    assert acc > 0.8


def test_weight_set_contract(tmp_path):
    with pytest.raises(ValueError, match="outside"):
        ActivityWeightSet("humans", ("FFA",), {"a": 1.5})
    with pytest.raises(ValueError, match="policy"):
        ActivityWeightSet("humans", ("FFA",), {"a": 0.5}, policy="x")
    ws = ActivityWeightSet("humans", ("FFA", "EBA"), {"a": 0.25, "b": 1 / 3}, LITERAL, 4, GRID)
    assert ws.roi_combo == ("EBA", "FFA")
    save_weights(tmp_path / "w.txt", ws)
    back = load_weights(tmp_path / "w.txt")
    assert back == ws
    (tmp_path / "bad.txt").write_text("a 0.1\n")
    with pytest.raises(ValueError):
        load_weights(tmp_path / "bad.txt")
