"""Platt scaling: logistic map from decision scores to class probabilities."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PlattParams:
    """``p(s) = 1 / (1 + exp(slope_a * s + offset_b))``."""

    slope_a: float
    offset_b: float

    def __post_init__(self):
        if not (math.isfinite(self.slope_a) and math.isfinite(self.offset_b)):
            raise ValueError("Platt parameters must be finite")


def _targets(labels: np.ndarray) -> np.ndarray:
    n_pos = int(np.sum(labels > 0))
    n_neg = len(labels) - n_pos
    return np.where(labels > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))


def platt_nll(a: float, b: float, scores, targets) -> float:
    """Cross-entropy of the smoothed targets under ``(a, b)``, overflow-safe."""
    f = np.asarray(scores) * a + b
    t = np.asarray(targets)
    # -[t log p + (1-t) log(1-p)] with p = 1/(1+e^f)  ==  t*f + log(1+e^-f) ... rearranged per sign
    return float(np.sum(np.where(f >= 0, t * f + np.log1p(np.exp(-np.abs(f))),
                                 (t - 1.0) * f + np.log1p(np.exp(-np.abs(f))))))


def fit_platt(scores, labels, max_iter: int = 100, grad_tol: float = 1e-10) -> PlattParams:
    """Fit ``(a, b)`` by Newton's method with backtracking on the smoothed-target likelihood."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be vectors of equal length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if not (np.any(y > 0) and np.any(y <= 0)):
        raise ValueError("Platt fitting needs both classes")
    t = _targets(y)
    n_pos = int(np.sum(y > 0))
    n_neg = len(y) - n_pos
    a, b = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = platt_nll(a, b, s, t)
    sigma = 1e-12

    for _ in range(max_iter):
        f = s * a + b
        # p = P(y=+1) = 1/(1+e^f), q = 1-p, evaluated without overflow
        e = np.exp(-np.abs(f))
        p = np.where(f >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
        q = 1.0 - p
        d2 = p * q
        h11 = float(np.sum(s * s * d2)) + sigma
        h22 = float(np.sum(d2)) + sigma
        h21 = float(np.sum(s * d2))
        d1 = t - p
        g1 = float(np.sum(s * d1))
        g2 = float(np.sum(d1))
        if max(abs(g1), abs(g2)) < grad_tol:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            nf = platt_nll(na, nb, s, t)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        else:
            break  # no further decrease available at working precision
    params = PlattParams(float(a), float(b))
    if params.slope_a > 0:
        warnings.warn("fitted Platt slope is positive: higher scores map to lower probabilities",
                      RuntimeWarning, stacklevel=2)
    return params


def platt_probability(params: PlattParams, score):
    """Probability of the positive class; scalar in, scalar out."""
    f = params.slope_a * np.asarray(score, dtype=np.float64) + params.offset_b
    e = np.exp(-np.abs(f))
    p = np.where(f >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    # keep strictly inside (0, 1)
    p = np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return float(p) if p.ndim == 0 else p
