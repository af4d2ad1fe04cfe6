"""Image preprocessing and UoCTTI-style HOG descriptors."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import FeatureMatrix

N_ORIENT = 9
TRUNCATION = 0.2
NORM_EPS = 1e-4
TEXTURE_SCALE = 0.2357  # ~ 1/sqrt(18)
LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class GrayImage:
    values: np.ndarray

    def __post_init__(self):
        v = np.clip(np.asarray(self.values, dtype=np.float64), 0.0, 1.0)
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise ValueError("gray image must be a non-empty 2-D array")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def load_image(path) -> np.ndarray:
    """Read an 8-bit PGM/PPM (or anything Pillow reads) as floats in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    return arr.astype(np.float64) / 255.0


def save_image(path, img: GrayImage) -> None:
    from PIL import Image

    Image.fromarray(np.round(img.values * 255).astype(np.uint8), mode="L").save(path)


def preprocess_image(img, seed: int = 0, noise_variance: float = 0.01, factor: int = 2) -> GrayImage:
    """Luminance, ``factor``-fold area-average downsampling, seeded Gaussian noise, clamp."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        if a.shape[2] < 3:
            a = a[..., 0]
        else:
            a = a[..., 0] * LUMA[0] + a[..., 1] * LUMA[1] + a[..., 2] * LUMA[2]
    if a.ndim != 2:
        raise ValueError("image must be (H, W) or (H, W, 3)")
    h, w = a.shape
    if h != w:
        raise ValueError(f"only square images are supported, got {h}x{w}")
    if h < 2:
        raise ValueError("image must be at least 2x2")
    if factor > 1:
        m = h // factor
        a = a[:m * factor, :m * factor].reshape(m, factor, m, factor).mean(axis=(1, 3))
    if noise_variance > 0:
        rng = np.random.default_rng(seed)
        a = a + rng.normal(0.0, np.sqrt(noise_variance), size=a.shape)
    return GrayImage(np.clip(a, 0.0, 1.0))


def orientation_vectors() -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors of the 2*9 signed bins, built so mirrored bins are bitwise symmetric."""
    c = np.empty(2 * N_ORIENT)
    s = np.empty(2 * N_ORIENT)
    half = N_ORIENT // 2
    for k in range(half + 1):
        ang = 2 * np.pi * k / (2 * N_ORIENT)
        c[k], s[k] = np.cos(ang), np.sin(ang)
    c[0], s[0] = 1.0, 0.0
    for k in range(half + 1, N_ORIENT):
        c[k], s[k] = -c[N_ORIENT - k], s[N_ORIENT - k]
    c[N_ORIENT:], s[N_ORIENT:] = -c[:N_ORIENT], -s[:N_ORIENT]
    return c, s


def gradients(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with replicated borders."""
    p = np.pad(values, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


def cell_histograms(img: GrayImage, cell: int = 32) -> np.ndarray:
    """Signed orientation histograms, shape ``(cells_y, cells_x, 18)``.

    Each pixel votes its gradient magnitude into its nearest orientation
    bin (lowest index on ties), spread bilinearly over the four nearest
    cell centres.
    """
    h, w = img.values.shape
    ncy, ncx = h // cell, w // cell
    gx, gy = gradients(img.values)
    mag = np.sqrt(gx * gx + gy * gy)
    c, s = orientation_vectors()
    proj = gx[..., None] * c + gy[..., None] * s
    obin = np.argmax(proj, axis=-1)

    ys, xs = np.mgrid[0:h, 0:w]
    hx = (xs + 0.5) / cell - 0.5
    hy = (ys + 0.5) / cell - 0.5
    bx = np.floor(hx).astype(np.int64)
    by = np.floor(hy).astype(np.int64)
    wx2 = hx - bx
    wy2 = hy - by
    wx1 = 1.0 - wx2
    wy1 = 1.0 - wy2
    hist = np.zeros((ncy, ncx, 2 * N_ORIENT))
    for dy, wy in ((0, wy1), (1, wy2)):
        for dx, wx in ((0, wx1), (1, wx2)):
            cy, cx = by + dy, bx + dx
            ok = (cy >= 0) & (cy < ncy) & (cx >= 0) & (cx < ncx)
            np.add.at(hist, (cy[ok], cx[ok], obin[ok]), (mag * wx * wy)[ok])
    return hist


def hog_from_histograms(hist: np.ndarray) -> np.ndarray:
    """31 features per cell: 18 signed, 9 unsigned, 4 texture."""
    ncy, ncx, _ = hist.shape
    unsigned = hist[..., :N_ORIENT] + hist[..., N_ORIENT:]
    energy = np.sum(unsigned * unsigned, axis=-1)
    yy, xx = np.mgrid[0:ncy, 0:ncx]
    ym, yp = np.maximum(yy - 1, 0), np.minimum(yy + 1, ncy - 1)
    xm, xp = np.maximum(xx - 1, 0), np.minimum(xx + 1, ncx - 1)
    e = energy
    # the four 2x2 blocks touching each cell
    blocks = (
        e[ym, xm] + e[ym, xx] + e[yy, xm] + e[yy, xx],
        e[ym, xx] + e[ym, xp] + e[yy, xx] + e[yy, xp],
        e[yy, xm] + e[yy, xx] + e[yp, xm] + e[yp, xx],
        e[yy, xx] + e[yy, xp] + e[yp, xx] + e[yp, xp],
    )
    out = np.zeros((ncy, ncx, 31))
    for b in blocks:
        factor = (1.0 / np.sqrt(b + NORM_EPS))[..., None]
        hs = np.minimum(hist * factor, TRUNCATION)
        hu = np.minimum(unsigned * factor, TRUNCATION)
        out[..., :18] += 0.5 * hs
        out[..., 18:27] += 0.5 * hu
    for i, b in enumerate(blocks):
        factor = (1.0 / np.sqrt(b + NORM_EPS))[..., None]
        out[..., 27 + i] = TEXTURE_SCALE * np.sum(np.minimum(hist * factor, TRUNCATION), axis=-1)
    return out


def hog_features(img: GrayImage, cell: int = 32) -> np.ndarray:
    """Flattened HOG descriptor, ``(H//cell) * (W//cell) * 31`` values in row-major cell order."""
    if not isinstance(img, GrayImage):
        img = GrayImage(img)
    if img.height < 2 * cell or img.width < 2 * cell:
        raise ValueError(f"image {img.height}x{img.width} is smaller than 2 cells of {cell} px per axis")
    return hog_from_histograms(cell_histograms(img, cell)).reshape(-1)


def hog_dimension(height: int, width: int, cell: int = 32) -> int:
    return (height // cell) * (width // cell) * 31


def extract_hog_matrix(paths: Sequence, ids: Sequence[str], seed: int = 0, cell: int = 32,
                       noise_variance: float = 0.01) -> FeatureMatrix:
    """Preprocess and describe each image; image ``k`` gets noise seed ``seed + k``."""
    rows = [hog_features(preprocess_image(load_image(p), seed + k, noise_variance), cell)
            for k, p in enumerate(paths)]
    return FeatureMatrix("hog", np.vstack(rows), tuple(ids))


def image_stimulus_id(path) -> str:
    return Path(path).stem
