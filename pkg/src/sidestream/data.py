"""Dataset entities and their on-disk formats.

Text matrix format::

    #matrix v1 rows=<R> cols=<C> name=<id>
    #ids <id_0> <id_1> ... <id_R-1>        (optional)
    <C space-separated decimals>           (R lines)

The binary variant starts with the 16-byte ``MAGIC``, followed by
little-endian u64 rows and cols and row-major float64 values.  Row ids may
follow as a u64 byte length and a newline-joined UTF-8 block.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MAGIC = b"SIDESTREAM-MAT1\x00"
assert len(MAGIC) == 16


class IngestionError(ValueError):
    """Raised when an input file or in-memory dataset violates its contract."""


def _as_ids(ids: Iterable, n: int) -> tuple[str, ...]:
    out = tuple(str(i) for i in ids)
    if len(out) != n:
        raise IngestionError(f"expected {n} stimulus ids, got {len(out)}")
    if len(set(out)) != n:
        seen = set()
        dup = next(i for i in out if i in seen or seen.add(i))
        raise IngestionError(f"duplicate stimulus id {dup!r}")
    return out


def _check_finite(values: np.ndarray, what: str) -> None:
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        r, c = bad[0]
        raise IngestionError(f"{what}: non-finite value at row {r}, column {c}")


@dataclass(frozen=True)
class VoxelMatrix:
    """Stimulus-by-voxel response amplitudes.

    ``reference_rows`` indexes the rows whose per-voxel range defines the
    rescaling in :func:`sidestream.weights.scale_voxels`.
    """

    values: np.ndarray
    stimulus_ids: tuple[str, ...]
    reference_rows: tuple[int, ...] = ()
    voxel_indices: tuple[int, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise IngestionError("voxel matrix must be two-dimensional")
        _check_finite(values, "voxel matrix")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "stimulus_ids", _as_ids(self.stimulus_ids, values.shape[0]))
        ref = tuple(int(r) for r in self.reference_rows) or tuple(range(values.shape[0]))
        if any(r < 0 or r >= values.shape[0] for r in ref):
            raise IngestionError("reference row out of bounds")
        object.__setattr__(self, "reference_rows", ref)
        vox = tuple(int(v) for v in self.voxel_indices) or tuple(range(values.shape[1]))
        if len(vox) != values.shape[1]:
            raise IngestionError("voxel_indices length must equal column count")
        object.__setattr__(self, "voxel_indices", vox)

    @property
    def n_stimuli(self) -> int:
        return self.values.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.values.shape[1]

    def row_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.stimulus_ids)}

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        index = self.row_index()
        try:
            return self.values[[index[i] for i in ids]]
        except KeyError as exc:
            raise IngestionError(f"unknown stimulus id {exc.args[0]!r}") from None

    def with_reference(self, ids: Iterable[str]) -> "VoxelMatrix":
        """Copy with the scaling reference set to the rows of ``ids``."""
        index = self.row_index()
        ref = sorted(index[i] for i in ids)
        if not ref:
            raise IngestionError("reference set is empty")
        return VoxelMatrix(self.values, self.stimulus_ids, tuple(ref), self.voxel_indices)


@dataclass(frozen=True)
class RoiMap:
    roi_names: tuple[str, ...]
    assignment: Mapping[int, str]

    def __post_init__(self):
        names = tuple(self.roi_names)
        if len(set(names)) != len(names):
            raise IngestionError("duplicate ROI names")
        unknown = set(self.assignment.values()) - set(names)
        if unknown:
            raise IngestionError(f"assignment references unknown ROI {sorted(unknown)[0]!r}")
        object.__setattr__(self, "roi_names", names)
        object.__setattr__(self, "assignment", dict(self.assignment))

    def voxels(self, roi: str) -> list[int]:
        return sorted(v for v, r in self.assignment.items() if r == roi)

    def counts(self) -> dict[str, int]:
        return {r: len(self.voxels(r)) for r in self.roi_names}


@dataclass(frozen=True)
class CategoryLabeling:
    """Per-stimulus category membership; ``clear_set`` holds single-category stimuli."""

    categories: tuple[str, ...]
    membership: Mapping[str, frozenset]
    stimulus_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        membership = {str(k): frozenset(v) for k, v in self.membership.items()}
        object.__setattr__(self, "membership", membership)
        if not self.stimulus_ids:
            object.__setattr__(self, "stimulus_ids", tuple(membership))
        extra = {c for cats in membership.values() for c in cats} - set(self.categories)
        if extra:
            raise IngestionError(f"membership uses undeclared category {sorted(extra)[0]!r}")

    @property
    def clear_set(self) -> tuple[str, ...]:
        return tuple(s for s in self.stimulus_ids if len(self.membership[s]) == 1)

    def positives(self, category: str) -> tuple[str, ...]:
        if category not in self.categories:
            raise IngestionError(f"unknown category {category!r}")
        return tuple(s for s in self.stimulus_ids if category in self.membership[s])

    def label(self, stimulus_id: str, category: str) -> int:
        return 1 if category in self.membership[stimulus_id] else -1


@dataclass(frozen=True)
class FeatureMatrix:
    feature_name: str
    values: np.ndarray
    stimulus_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise IngestionError(f"feature matrix {self.feature_name!r} is empty")
        _check_finite(values, f"feature matrix {self.feature_name!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        ids = self.stimulus_ids or tuple(str(i) for i in range(values.shape[0]))
        object.__setattr__(self, "stimulus_ids", _as_ids(ids, values.shape[0]))

    @property
    def n_stimuli(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def default_gamma(self) -> float:
        return 1.0 / self.dim

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        index = {s: i for i, s in enumerate(self.stimulus_ids)}
        return self.values[[index[i] for i in ids]]

    def check_join(self, ids: Iterable[str]) -> None:
        known = set(ids)
        for s in self.stimulus_ids:
            if s not in known:
                raise IngestionError(
                    f"feature matrix {self.feature_name!r}: stimulus id {s!r} not in dataset")
        missing = known - set(self.stimulus_ids)
        if missing:
            raise IngestionError(
                f"feature matrix {self.feature_name!r}: no row for stimulus {sorted(missing)[0]!r}")


# ---------------------------------------------------------------- matrices


def write_matrix(path, values, name: str = "matrix", ids: Sequence[str] | None = None,
                 binary: bool = False) -> None:
    values = np.asarray(values, dtype=np.float64)
    rows, cols = values.shape
    path = Path(path)
    if binary:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<QQ", rows, cols))
            fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
            if ids is not None:
                blob = "\n".join(ids).encode()
                fh.write(struct.pack("<Q", len(blob)))
                fh.write(blob)
        return
    lines = [f"#matrix v1 rows={rows} cols={cols} name={name}"]
    if ids is not None:
        lines.append("#ids " + " ".join(ids))
    lines.extend(" ".join(format(v, ".17g") for v in row) for row in values)
    path.write_text("\n".join(lines) + "\n")


def read_matrix(path) -> tuple[str, np.ndarray, tuple[str, ...] | None]:
    """Read either matrix format; returns ``(name, values, ids or None)``."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(16)
    if head == MAGIC:
        return _read_binary(path)
    return _read_text(path)


def _read_binary(path: Path):
    raw = path.read_bytes()
    if len(raw) < 32:
        raise IngestionError(f"{path}: truncated binary header")
    rows, cols = struct.unpack_from("<QQ", raw, 16)
    end = 32 + 8 * rows * cols
    if len(raw) < end:
        raise IngestionError(f"{path}: expected {rows}x{cols} values, file is truncated")
    values = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=32).reshape(rows, cols)
    ids = None
    if len(raw) > end:
        (n,) = struct.unpack_from("<Q", raw, end)
        ids = tuple(raw[end + 8:end + 8 + n].decode().split("\n"))
    _check_finite(values, str(path))
    return path.stem, values.astype(np.float64), ids


def _read_text(path: Path):
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("#matrix v1"):
        raise IngestionError(f"{path}: malformed header (expected '#matrix v1 rows=R cols=C name=ID')")
    try:
        meta = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
        rows, cols, name = int(meta["rows"]), int(meta["cols"]), meta.get("name", path.stem)
    except (KeyError, ValueError):
        raise IngestionError(f"{path}: malformed header {lines[0]!r}") from None
    body = lines[1:]
    ids = None
    if body and body[0].startswith("#ids"):
        ids = tuple(body[0].split()[1:])
        body = body[1:]
        if len(ids) != rows:
            raise IngestionError(f"{path}: header declares {rows} rows but #ids lists {len(ids)}")
    body = [ln for ln in body if ln.strip()]
    if len(body) != rows:
        raise IngestionError(f"{path}: header declares {rows} rows, found {len(body)}")
    values = np.empty((rows, cols), dtype=np.float64)
    for r, line in enumerate(body):
        toks = line.split(" ")
        if len(toks) != cols:
            raise IngestionError(
                f"{path}: dimension mismatch at row {r}: header declares {cols} columns, found {len(toks)}")
        for c, tok in enumerate(toks):
            try:
                v = float(tok)
            except ValueError:
                raise IngestionError(f"{path}: unparseable value {tok!r} at row {r}, column {c}") from None
            if not math.isfinite(v):
                raise IngestionError(f"{path}: non-finite token {tok!r} at row {r}, column {c}")
            values[r, c] = v
    return name, values, ids


def load_voxel_matrix(path) -> VoxelMatrix:
    _, values, ids = read_matrix(path)
    if ids is None:
        ids = tuple(str(i) for i in range(values.shape[0]))
    return VoxelMatrix(values, ids)


def save_voxel_matrix(path, matrix: VoxelMatrix, binary: bool = False) -> None:
    write_matrix(path, matrix.values, "voxels", matrix.stimulus_ids, binary=binary)


def load_feature_matrix(path, dataset_ids: Iterable[str] | None = None) -> FeatureMatrix:
    """Load a feature matrix; with ``dataset_ids`` the rows must join one-to-one."""
    name, values, ids = read_matrix(path)
    if values.size == 0:
        raise IngestionError(f"{path}: empty feature matrix")
    fm = FeatureMatrix(name, values, ids or ())
    if dataset_ids is not None:
        fm.check_join(dataset_ids)
    return fm


def save_feature_matrix(path, fm: FeatureMatrix, binary: bool = False) -> None:
    write_matrix(path, fm.values, fm.feature_name, fm.stimulus_ids, binary=binary)


# ---------------------------------------------------------------- ROIs and labels


def load_roi_map(path, roi_names: Sequence[str] | None = None) -> RoiMap:
    assignment: dict[int, str] = {}
    order: list[str] = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise IngestionError(f"{path}:{n}: expected '<voxel_index> <roi_name>'")
        try:
            vox = int(parts[0])
        except ValueError:
            raise IngestionError(f"{path}:{n}: bad voxel index {parts[0]!r}") from None
        if vox in assignment and assignment[vox] != parts[1]:
            raise IngestionError(f"{path}:{n}: voxel {vox} assigned to two ROIs")
        assignment[vox] = parts[1]
        if parts[1] not in order:
            order.append(parts[1])
    names = tuple(roi_names) if roi_names is not None else tuple(sorted(order))
    return RoiMap(names, assignment)


def save_roi_map(path, rois: RoiMap) -> None:
    lines = [f"{v} {r}" for v, r in sorted(rois.assignment.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_pixel_fractions(path) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        sid, *pairs = line.split()
        fr = {}
        for pair in pairs:
            try:
                cat, val = pair.split("=", 1)
                fr[cat] = float(val)
            except ValueError:
                raise IngestionError(f"{path}:{n}: bad '<category>=<fraction>' token {pair!r}") from None
        if sid in out:
            raise IngestionError(f"{path}:{n}: duplicate stimulus id {sid!r}")
        out[sid] = fr
    return out


def save_pixel_fractions(path, fractions: Mapping[str, Mapping[str, float]]) -> None:
    lines = []
    for sid, fr in fractions.items():
        lines.append(" ".join([sid] + [f"{c}={format(v, '.17g')}" for c, v in fr.items()]))
    Path(path).write_text("\n".join(lines) + "\n")


def derive_category_labels(pixel_fractions: Mapping[str, Mapping[str, float]],
                           threshold: float = 0.20,
                           categories: Sequence[str] | None = None) -> CategoryLabeling:
    """Label a stimulus positive for every category covering ``threshold`` of its pixels."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    seen = set()
    membership = {}
    for sid, fractions in pixel_fractions.items():
        cats = set()
        for cat, frac in fractions.items():
            if not 0.0 <= frac <= 1.0:
                raise IngestionError(f"stimulus {sid!r}: fraction {frac} for {cat!r} outside [0, 1]")
            seen.add(cat)
            if frac >= threshold:
                cats.add(cat)
        membership[str(sid)] = frozenset(cats)
    cats = tuple(categories) if categories is not None else tuple(sorted(seen))
    return CategoryLabeling(cats, membership, tuple(membership))


def select_voxels(matrix: VoxelMatrix, rois: RoiMap, combo: Iterable[str]) -> VoxelMatrix:
    """Columns of every voxel assigned to an ROI in ``combo``, ascending voxel index."""
    combo = set(combo)
    if not combo:
        raise IngestionError("ROI combination is empty")
    unknown = combo - set(rois.roi_names)
    if unknown:
        raise IngestionError(f"unknown ROI {sorted(unknown)[0]!r}")
    position = {v: j for j, v in enumerate(matrix.voxel_indices)}
    cols = sorted(position[v] for v, r in rois.assignment.items() if r in combo and v in position)
    if not cols:
        raise IngestionError(f"ROI combination {'+'.join(sorted(combo))} selects no voxels")
    return VoxelMatrix(matrix.values[:, cols], matrix.stimulus_ids, matrix.reference_rows,
                       tuple(matrix.voxel_indices[c] for c in cols))
