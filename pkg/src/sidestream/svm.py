"""RBF-kernel binary SVM with per-sample penalty caps, solved by SMO.

Activity weighted loss multiplies the hinge penalty of sample ``i`` by
``1 + c_i`` whenever it violates the margin.  In the dual this is a box
constraint ``0 <= alpha_i <= C * (1 + c_i)``, so one solver serves both
losses: all-zero weights give plain hinge-loss training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

TAU = 1e-12
DEFAULT_MAX_ITER = 10**7
FULL_CACHE_LIMIT = 4000


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, violation: float):
        super().__init__(
            f"SMO did not converge in {iterations} pair updates (final KKT violation {violation:.3e})")
        self.iterations = iterations
        self.violation = violation


@dataclass(frozen=True)
class KernelSpec:
    gamma: float
    kind: str = "rbf"

    def __post_init__(self):
        if self.kind != "rbf":
            raise ValueError(f"unsupported kernel {self.kind!r}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError(f"rbf gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class TrainingProblem:
    features: np.ndarray
    labels: np.ndarray
    base_penalty: float = 1.0
    sample_weights: np.ndarray | None = None

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError("features must be (n, d) and labels (n,)")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite values")
        if not np.all((y == 1) | (y == -1)):
            raise ValueError("labels must be +1 or -1")
        if not (np.any(y == 1) and np.any(y == -1)):
            raise ValueError("training problem needs both classes")
        if not self.base_penalty > 0:
            raise ValueError("base_penalty must be positive")
        w = np.zeros(len(y)) if self.sample_weights is None else np.asarray(self.sample_weights, dtype=np.float64)
        if w.shape != y.shape:
            raise ValueError("sample_weights must have one entry per sample")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("sample_weights must be finite and nonnegative")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y.astype(np.float64))
        object.__setattr__(self, "sample_weights", w)

    @property
    def upper_bounds(self) -> np.ndarray:
        return self.base_penalty * (1.0 + self.sample_weights)


@dataclass(frozen=True)
class SvmModel:
    support_indices: np.ndarray
    dual_coefficients: np.ndarray
    bias: float
    kernel: KernelSpec
    support_vectors: np.ndarray
    upper_bounds: np.ndarray
    iterations: int = 0
    objective: float = float("nan")
    alpha: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.support_indices) == 0:
            raise ValueError("an SVM model needs at least one support vector")

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def decision_function(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        if X.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} features, got {X.shape[1]}")
        return _decision(self.support_vectors, self.dual_coefficients, self.bias, self.kernel.gamma, X)

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1, -1)


# ---------------------------------------------------------------- losses


def rbf_kernel(a, b, gamma: float) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    d = a - b
    return math.exp(-gamma * float(d @ d))


def hinge_loss(z: float) -> float:
    return max(0.0, 1.0 - z)


def awl_loss(z: float, c: float) -> float:
    """Hinge penalty scaled by ``1 + c`` on the violating side of the margin."""
    if c < 0:
        raise ValueError(f"activity weight must be nonnegative, got {c}")
    m = 1.0 + c if z < 1 else 1.0
    return max(0.0, (1.0 - z) * m)


# ---------------------------------------------------------------- numba core


@numba.njit(cache=True)
def _sqdist_rows(A, B):
    n, m, d = A.shape[0], B.shape[0], A.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = A[i, k] - B[j, k]
                s += t * t
            out[i, j] = s
    return out


@numba.njit(cache=True)
def _decision(sv, coef, bias, gamma, X):
    n, k, d = X.shape[0], sv.shape[0], X.shape[1]
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(k):
            s = 0.0
            for q in range(d):
                t = X[i, q] - sv[j, q]
                s += t * t
            acc += coef[j] * math.exp(-gamma * s)
        out[i] = acc + bias
    return out


@numba.njit(cache=True)
def _decision_sqdist(D, coef, bias, gamma):
    n, k = D.shape
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(k):
            acc += coef[j] * math.exp(-gamma * D[i, j])
        out[i] = acc + bias
    return out


@numba.njit(cache=True)
def _kernel_row(X, D, use_d, gamma, i, out):
    n = out.shape[0]
    if use_d:
        for t in range(n):
            out[t] = math.exp(-gamma * D[i, t])
    else:
        d = X.shape[1]
        for t in range(n):
            s = 0.0
            for k in range(d):
                v = X[i, k] - X[t, k]
                s += v * v
            out[t] = math.exp(-gamma * s)


@numba.njit(cache=True)
def _smo(X, D, use_d, gamma, y, caps, eps, max_iter, cache_rows):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    cache = np.empty((cache_rows, n))
    slot_of = -np.ones(n, dtype=np.int64)
    owner = -np.ones(cache_rows, dtype=np.int64)
    stamp = np.zeros(cache_rows, dtype=np.int64)
    clock = 0
    it = 0
    violation = np.inf

    while True:
        # i: maximal violator in I_up
        gmax = -np.inf
        i = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < caps[t] and -G[t] > gmax:
                    gmax = -G[t]
                    i = t
            else:
                if alpha[t] > 0 and G[t] > gmax:
                    gmax = G[t]
                    i = t
        if i < 0:
            violation = 0.0
            break

        # row i through the LRU cache
        clock += 1
        si = slot_of[i]
        if si < 0:
            si = 0
            for s in range(cache_rows):
                if stamp[s] < stamp[si]:
                    si = s
            if owner[si] >= 0:
                slot_of[owner[si]] = -1
            _kernel_row(X, D, use_d, gamma, i, cache[si])
            owner[si] = i
            slot_of[i] = si
        stamp[si] = clock
        Ki = cache[si]

        # j: second-order choice in I_low
        gmax2 = -np.inf
        j = -1
        best = np.inf
        for t in range(n):
            if y[t] > 0:
                if alpha[t] > 0:
                    gd = gmax + G[t]
                    if G[t] > gmax2:
                        gmax2 = G[t]
                else:
                    continue
            else:
                if alpha[t] < caps[t]:
                    gd = gmax - G[t]
                    if -G[t] > gmax2:
                        gmax2 = -G[t]
                else:
                    continue
            if gd > 0:
                quad = 2.0 - 2.0 * Ki[t]
                if quad <= 0:
                    quad = TAU
                obj = -(gd * gd) / quad
                if obj < best:
                    best = obj
                    j = t

        violation = gmax + gmax2
        if violation < eps or j < 0:
            break
        if it >= max_iter:
            return alpha, G, 0.0, it, False, violation

        # keep row i pinned while fetching row j
        clock += 1
        stamp[si] = clock
        sj = slot_of[j]
        if sj < 0:
            sj = -1
            for s in range(cache_rows):
                if s != si and (sj < 0 or stamp[s] < stamp[sj]):
                    sj = s
            if owner[sj] >= 0:
                slot_of[owner[sj]] = -1
            _kernel_row(X, D, use_d, gamma, j, cache[sj])
            owner[sj] = j
            slot_of[j] = sj
        stamp[sj] = clock
        Kj = cache[sj]
        Kij = Kj[i]

        Ci = caps[i]
        Cj = caps[j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        ai = ai_old
        aj = aj_old
        if y[i] != y[j]:
            quad = 2.0 - 2.0 * Kij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai = Ci
                    aj = Ci - diff
            else:
                if aj > Cj:
                    aj = Cj
                    ai = Cj + diff
        else:
            quad = 2.0 - 2.0 * Kij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > Ci:
                if ai > Ci:
                    ai = Ci
                    aj = total - Ci
            else:
                if aj < 0:
                    aj = 0.0
                    ai = total
            if total > Cj:
                if aj > Cj:
                    aj = Cj
                    ai = total - Cj
            else:
                if ai < 0:
                    ai = 0.0
                    aj = total
        alpha[i] = ai
        alpha[j] = aj

        dai = (ai - ai_old) * y[i]
        daj = (aj - aj_old) * y[j]
        for t in range(n):
            G[t] += y[t] * (Ki[t] * dai + Kj[t] * daj)
        it += 1

    # bias: mean over free vectors, midpoint of the feasible interval otherwise
    ub = np.inf
    lb = -np.inf
    total = 0.0
    nfree = 0
    for t in range(n):
        yg = y[t] * G[t]
        if alpha[t] >= caps[t]:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            total += yg
    if nfree > 0:
        rho = total / nfree
    else:
        rho = 0.5 * (ub + lb)
    return alpha, G, rho, it, True, violation


# ---------------------------------------------------------------- training


def sqdist(A, B=None) -> np.ndarray:
    """Pairwise squared Euclidean distances with a fixed summation order."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = A if B is None else np.ascontiguousarray(B, dtype=np.float64)
    return _sqdist_rows(A, B)


def solve_dual(problem: TrainingProblem, kernel: KernelSpec, tolerance: float = 1e-3,
               max_iter: int = DEFAULT_MAX_ITER, cache_rows: int | None = None,
               sqdist_matrix: np.ndarray | None = None):
    """Run SMO and return ``(alpha, gradient, bias, iterations)``."""
    n = len(problem.labels)
    if cache_rows is None:
        cache_rows = n if n <= FULL_CACHE_LIMIT else FULL_CACHE_LIMIT
    cache_rows = max(2, min(int(cache_rows), n))
    if sqdist_matrix is not None:
        D = np.ascontiguousarray(sqdist_matrix, dtype=np.float64)
        if D.shape != (n, n):
            raise ValueError("sqdist_matrix must be (n, n)")
        use_d = True
    else:
        D = np.zeros((1, 1))
        use_d = False
    alpha, G, rho, it, ok, viol = _smo(problem.features, D, use_d, float(kernel.gamma),
                                       problem.labels, problem.upper_bounds,
                                       float(tolerance), int(max_iter), cache_rows)
    if not ok:
        raise ConvergenceError(it, viol)
    return alpha, G, -rho, it


def train(problem: TrainingProblem, kernel: KernelSpec, tolerance: float = 1e-3, *,
          max_iter: int = DEFAULT_MAX_ITER, cache_rows: int | None = None,
          sqdist_matrix: np.ndarray | None = None) -> SvmModel:
    """Train an SVM whose sample ``i`` may carry dual mass up to ``C * (1 + c_i)``.

    ``tolerance`` bounds the maximal KKT violation of the returned solution.
    ``sqdist_matrix`` optionally supplies precomputed pairwise squared
    distances of ``problem.features`` (as returned by :func:`sqdist`).
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    alpha, G, bias, it = solve_dual(problem, kernel, tolerance, max_iter, cache_rows, sqdist_matrix)
    sv = np.flatnonzero(alpha > 0)
    y = problem.labels
    return SvmModel(
        support_indices=sv,
        dual_coefficients=alpha[sv] * y[sv],
        bias=float(bias),
        kernel=kernel,
        support_vectors=problem.features[sv].copy(),
        upper_bounds=problem.upper_bounds[sv].copy(),
        iterations=int(it),
        objective=float(0.5 * alpha @ (G - 1.0)),
        alpha=alpha,
    )


def decision_value(model: SvmModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.dim:
        raise ValueError(f"expected a vector of length {model.dim}")
    return float(model.decision_function(x[None, :])[0])


def decision_from_sqdist(model: SvmModel, D_to_train: np.ndarray) -> np.ndarray:
    """Decision values given squared distances from query rows to all training rows."""
    D = np.ascontiguousarray(D_to_train[:, model.support_indices], dtype=np.float64)
    return _decision_sqdist(D, model.dual_coefficients, model.bias, model.kernel.gamma)


def dual_objective(alpha, labels, K) -> float:
    """``0.5 a'Qa - sum(a)`` with ``Q = yy' * K``."""
    a = np.asarray(alpha, dtype=np.float64) * np.asarray(labels, dtype=np.float64)
    return float(0.5 * a @ K @ a - np.sum(alpha))


def kkt_violations(model: SvmModel, problem: TrainingProblem, tol: float = 1e-3) -> list[str]:
    """Describe every sample whose margin/alpha relationship breaks the KKT conditions."""
    alpha = model.alpha
    f = model.decision_function(problem.features)
    yf = problem.labels * f
    caps = problem.upper_bounds
    out = []
    for i, (a, m, c) in enumerate(zip(alpha, yf, caps)):
        if a < 0 or a > c:
            out.append(f"sample {i}: alpha {a} outside [0, {c}]")
        elif a == 0 and m < 1 - tol:
            out.append(f"sample {i}: alpha=0 but y*f={m:.6g}")
        elif 0 < a < c and abs(m - 1) > tol:
            out.append(f"sample {i}: free but y*f={m:.6g}")
        elif a == c and m > 1 + tol:
            out.append(f"sample {i}: at cap but y*f={m:.6g}")
    eq = abs(float(alpha @ problem.labels))
    if eq > 1e-9 * float(np.sum(caps)):
        out.append(f"equality constraint violated: |sum(alpha*y)| = {eq:.3e}")
    return out


# ---------------------------------------------------------------- serialization


def save_model(path, model: SvmModel) -> None:
    g = lambda v: format(float(v), ".17g")  # noqa: E731
    lines = [
        "#svm-model v1",
        f"kernel {model.kernel.kind} gamma={g(model.kernel.gamma)}",
        f"bias {g(model.bias)}",
        f"support {len(model.support_indices)} dim {model.dim}",
    ]
    for idx, coef, cap, sv in zip(model.support_indices, model.dual_coefficients,
                                  model.upper_bounds, model.support_vectors):
        lines.append(" ".join([str(int(idx)), g(coef), g(cap)] + [g(v) for v in sv]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> SvmModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "#svm-model v1":
        raise ValueError(f"{path}: not an svm-model v1 file")
    kind, gamma = lines[1].split()[1], float(lines[1].split("gamma=")[1])
    bias = float(lines[2].split()[1])
    _, k, _, d = lines[3].split()
    k, d = int(k), int(d)
    rows = [ln.split() for ln in lines[4:4 + k]]
    if len(rows) != k or any(len(r) != 3 + d for r in rows):
        raise ValueError(f"{path}: support vector block does not match header")
    return SvmModel(
        support_indices=np.array([int(r[0]) for r in rows]),
        dual_coefficients=np.array([float(r[1]) for r in rows]),
        bias=bias,
        kernel=KernelSpec(gamma, kind),
        support_vectors=np.array([[float(v) for v in r[3:]] for r in rows]).reshape(k, d),
        upper_bounds=np.array([float(r[2]) for r in rows]),
    )
