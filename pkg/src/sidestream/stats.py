"""Paired t-tests and the ROI permutation procedure with Bonferroni thresholds."""

from __future__ import annotations

import math
from pathlib import Path
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import betainc

from .plots import bar_chart_svg
from .seeding import derive_rng, derive_seed

N_COMBOS = 127
ALPHAS = (0.05, 0.01)


def bonferroni_threshold(alpha: float = 0.05, m: int = N_COMBOS) -> float:
    return alpha / m


def student_t_sf(t: float, df: float) -> float:
    """Upper tail ``P(T > t)`` through the regularized incomplete beta function."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    x = df / (df + t * t)
    tail = 0.5 * float(betainc(0.5 * df, 0.5, x))
    return tail if t >= 0 else 1.0 - tail


def paired_t_test_one_tailed(baseline, treatment) -> tuple[float, float]:
    """Test ``mean(treatment - baseline) > 0``; returns ``(t, p)``."""
    b = np.asarray(baseline, dtype=np.float64)
    a = np.asarray(treatment, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("baseline and treatment must be equal-length vectors")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    mean = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            raise ValueError("all paired differences are zero")
        warnings.warn("zero-variance differences; t-test is degenerate", RuntimeWarning, stacklevel=2)
        return (math.inf if mean > 0 else -math.inf), (0.0 if mean > 0 else 1.0)
    t = mean / (sd / math.sqrt(n))
    return t, student_t_sf(t, n - 1)


# ---------------------------------------------------------------- permutation null


@dataclass(frozen=True)
class NullDistribution:
    samples: np.ndarray
    subset_size: int
    n_samples: int
    seed: int

    def ecdf(self, x: float) -> float:
        """Fraction of samples ``<= x``."""
        return float(np.count_nonzero(self.samples <= x)) / len(self.samples)

    def right_tail(self, observed: float) -> float:
        """``1 - F(observed-)``: fraction of samples ``>= observed``."""
        return float(np.count_nonzero(self.samples >= observed)) / len(self.samples)


def above_mean(accuracies) -> np.ndarray:
    acc = np.asarray(accuracies, dtype=np.float64)
    return acc > acc.mean()


def permutation_null(combo_accuracies, subset_size: int = 64, n_samples: int = 1_000_000,
                     seed: int = 0, replace: bool = False, shard_size: int = 50_000) -> NullDistribution:
    """Fraction of above-mean combos in random ``subset_size`` draws.

    Shard ``k`` uses an RNG derived from ``(seed, k)`` so the result does not
    depend on how shards are scheduled.
    """
    hit = above_mean(combo_accuracies).astype(np.int64)
    pop = len(hit)
    if subset_size > pop and not replace:
        raise ValueError(f"subset of {subset_size} exceeds population of {pop}")
    out = np.empty(n_samples)
    for k, start in enumerate(range(0, n_samples, shard_size)):
        m = min(shard_size, n_samples - start)
        rng = derive_rng(seed, "null-shard", k)
        if replace:
            idx = rng.integers(0, pop, size=(m, subset_size))
        else:
            keys = rng.random((m, pop))
            idx = np.argpartition(keys, subset_size - 1, axis=1)[:, :subset_size]
        out[start:start + m] = hit[idx].sum(axis=1) / subset_size
    return NullDistribution(out, subset_size, n_samples, seed)


def hypergeometric_moments(n_above: int, population: int = N_COMBOS, subset_size: int = 64):
    """Mean and variance of the null fraction under draws without replacement."""
    p = n_above / population
    var_count = subset_size * p * (1 - p) * (population - subset_size) / (population - 1)
    return p, var_count / subset_size**2


@dataclass(frozen=True)
class RoiSignificance:
    roi: str
    observed: float
    p_value: float
    significant: dict

    def as_row(self):
        return [self.roi, self.observed, self.p_value] + [self.significant[a] for a in ALPHAS]


def roi_significance(combo_accuracies: Mapping[tuple, float], roi: str, null: NullDistribution,
                     m: int = N_COMBOS) -> RoiSignificance:
    """Observed above-mean fraction among combos containing ``roi`` and its right-tail p."""
    combos = list(combo_accuracies)
    if len(combos) != m:
        raise ValueError(f"expected accuracies for {m} combinations, got {len(combos)}")
    acc = np.array([combo_accuracies[c] for c in combos])
    hit = above_mean(acc)
    member = np.array([roi in c for c in combos])
    if not member.any():
        raise ValueError(f"ROI {roi!r} appears in no combination")
    observed = float(hit[member].sum()) / int(member.sum())
    p = null.right_tail(observed)
    return RoiSignificance(roi, observed, p, {a: p < bonferroni_threshold(a, m) for a in ALPHAS})


def mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def paired_summary(hl: Sequence[float], awl: Sequence[float]) -> dict:
    hl_m, hl_se = mean_se(hl)
    awl_m, awl_se = mean_se(awl)
    delta = np.asarray(awl) - np.asarray(hl)
    d_m, d_se = mean_se(delta)
    if np.all(delta == 0):
        t, p = 0.0, 1.0
    else:
        t, p = paired_t_test_one_tailed(hl, awl)
    return dict(hl_mean=hl_m, hl_se=hl_se, awl_mean=awl_m, awl_se=awl_se,
                delta_mean=d_m, delta_se=d_se, t=t, p=p, n=len(delta))


# ---------------------------------------------------------------- reporting


class IncompleteResultsError(ValueError):
    pass


@dataclass(frozen=True)
class Report:
    """Tables derived from a result store; each is a list of rows under ``*_columns``."""

    accuracy: list
    roi_deltas: list
    significance: list
    threshold_05: float = bonferroni_threshold(0.05)
    threshold_01: float = bonferroni_threshold(0.01)

    accuracy_columns = ("category", "feature", "roi_combo", "n", "hl_mean", "hl_se", "awl_mean",
                        "awl_se", "delta_mean", "delta_se", "t", "p", "awl_better_p01")
    roi_delta_columns = ("category", "feature", "roi", "n", "error_reduction", "se")
    significance_columns = ("category", "feature", "roi", "observed", "p", "sig_05", "sig_01")

    def tables(self) -> dict:
        return {"accuracy": (self.accuracy_columns, self.accuracy),
                "roi_deltas": (self.roi_delta_columns, self.roi_deltas),
                "roi_significance": (self.significance_columns, self.significance)}

    def write(self, out_dir) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, (cols, rows) in self.tables().items():
            path = out / f"{name}.tsv"
            lines = ["\t".join(cols)] + ["\t".join(_cell(v) for v in row) for row in rows]
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
        for (cat, feat), rows in _by_key(self.accuracy, 2).items():
            # one pair of bars per combination
            path = out / f"accuracy_{cat}_{feat}.svg"
            path.write_text(bar_chart_svg(
                [r[2] for r in rows], [("HL", [r[4] for r in rows], [r[5] for r in rows]),
                                       ("AWL", [r[6] for r in rows], [r[7] for r in rows])],
                title=f"{cat} / {feat}: mean accuracy", ylabel="accuracy"))
            written.append(path)
        for (cat, feat), rows in _by_key(self.roi_deltas, 2).items():
            path = out / f"roi_deltas_{cat}_{feat}.svg"
            path.write_text(bar_chart_svg(
                [r[2] for r in rows], [("AWL - HL", [r[4] for r in rows], [r[5] for r in rows])],
                title=f"{cat} / {feat}: error reduction by ROI", ylabel="error reduction"))
            written.append(path)
        return written


def _cell(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)


def _by_key(rows, width):
    out: dict = {}
    for r in rows:
        out.setdefault(tuple(r[:width]), []).append(r)
    return out


def _trials(records, partitions: int, problems: int) -> dict:
    """``(category, feature, combo) -> (hl, awl)`` accuracy vectors in trial order."""
    expected = {(p, b) for p in range(partitions) for b in range(problems)}
    cells: dict = {}
    for r in records:
        cells.setdefault((r.category, r.feature, r.roi_combo), {})[(r.partition, r.problem, r.loss)] = r.accuracy
    out, missing = {}, []
    for key, cell in cells.items():
        for p, b in sorted(expected):
            for loss in ("HL", "AWL"):
                if (p, b, loss) not in cell:
                    missing.append(f"{key[0]}/{key[1]}/{'+'.join(key[2])} partition {p} problem {b} {loss}")
        order = sorted(expected)
        if not missing:
            out[key] = (np.array([cell[(p, b, "HL")] for p, b in order]),
                        np.array([cell[(p, b, "AWL")] for p, b in order]))
    if missing:
        head = "; ".join(missing[:10])
        more = f" (and {len(missing) - 10} more)" if len(missing) > 10 else ""
        raise IncompleteResultsError(f"incomplete results: {head}{more}")
    return out


def summarize(records, partitions: int, problems: int, n_null: int = 1_000_000,
              seed: int = 0) -> Report:
    """Accuracy, per-ROI error reduction and, with all combinations present, ROI significance.

    ``records`` are :class:`~sidestream.experiment.ExperimentRecord` objects;
    every (category, feature, combination) must have both losses for every
    partition and balanced problem.
    """
    records = list(records)
    if not records:
        raise IncompleteResultsError("no records")
    trials = _trials(records, partitions, problems)
    keys = sorted(trials, key=lambda k: (k[0], k[1], len(k[2]), k[2]))

    accuracy, deltas = [], []
    for cat, feat, combo in keys:
        hl, awl = trials[(cat, feat, combo)]
        s = paired_summary(hl, awl)
        accuracy.append([cat, feat, "+".join(combo), s["n"], s["hl_mean"], s["hl_se"], s["awl_mean"],
                         s["awl_se"], s["delta_mean"], s["delta_se"], s["t"], s["p"],
                         bool(s["delta_mean"] > 0 and s["p"] < 0.01)])
        if len(combo) == 1:
            m, se = mean_se(awl - hl)
            deltas.append([cat, feat, combo[0], len(hl), m, se])

    significance = []
    for (cat, feat), group in _by_key([list(k) for k in keys], 2).items():
        combos = [tuple(k[2]) for k in group]
        rois = sorted({r for c in combos for r in c})
        if len(combos) != 2 ** len(rois) - 1 or len(rois) < 2:
            continue
        acc = {c: float(np.mean(trials[(cat, feat, c)][1])) for c in combos}
        null = permutation_null(list(acc.values()), 2 ** (len(rois) - 1), n_null,
                                derive_seed(seed, "null", cat, feat))
        for roi in rois:
            sig = roi_significance(acc, roi, null, len(combos))
            significance.append([cat, feat, roi, sig.observed, sig.p_value,
                                 sig.significant[0.05], sig.significant[0.01]])
    return Report(accuracy, deltas, significance)

