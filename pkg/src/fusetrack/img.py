"""Image buffers ([0,1] float arrays), patch extraction, resampling and features.

Images are numpy arrays, (H, W) grayscale or (H, W, 3) RGB, float64 in [0,1].
Feature maps are (H_cells, W_cells, C) float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage


class ImageError(ValueError):
    pass


class DimensionMismatchError(ImageError):
    pass


def to_gray(img: np.ndarray) -> np.ndarray:
    """Luminance conversion; identity for 1-channel input."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img[:, :, 0] * 0.299 + img[:, :, 1] * 0.587 + img[:, :, 2] * 0.114
    raise ImageError(f"expected 1- or 3-channel image, got shape {img.shape}")


def crop_patch(img: np.ndarray, center, size) -> np.ndarray:
    """Crop a (w,h) patch around `center`; out-of-bounds samples replicate edges."""
    w, h = int(round(size[0])), int(round(size[1]))
    if w <= 0 or h <= 0:
        raise ImageError(f"non-positive patch size {size}")
    cx, cy = center
    x0 = int(round(cx - w / 2.0))
    y0 = int(round(cy - h / 2.0))
    xs = np.clip(np.arange(x0, x0 + w), 0, img.shape[1] - 1)
    ys = np.clip(np.arange(y0, y0 + h), 0, img.shape[0] - 1)
    return img[np.ix_(ys, xs)] if img.ndim == 2 else img[np.ix_(ys, xs)][:, :, :]


def resize_bilinear(img: np.ndarray, new_size) -> np.ndarray:
    """Bilinear resize to (w,h); sample centers at (i+0.5)/n (align-corners false)."""
    w, h = int(new_size[0]), int(new_size[1])
    if w <= 0 or h <= 0:
        raise ImageError(f"non-positive target size {new_size}")
    H, W = img.shape[:2]
    if (W, H) == (w, h):
        return img.copy()
    sx = (np.arange(w) + 0.5) * (W / w) - 0.5
    sy = (np.arange(h) + 0.5) * (H / h) - 0.5
    x0 = np.clip(np.floor(sx).astype(int), 0, W - 1)
    y0 = np.clip(np.floor(sy).astype(int), 0, H - 1)
    x1 = np.clip(x0 + 1, 0, W - 1)
    y1 = np.clip(y0 + 1, 0, H - 1)
    fx = np.clip(sx - x0, 0.0, 1.0)
    fy = np.clip(sy - y0, 0.0, 1.0)
    if img.ndim == 3:
        fx = fx[None, :, None]
        fy = fy[:, None, None]
    else:
        fx = fx[None, :]
        fy = fy[:, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def hann2d(w: int, h: int) -> np.ndarray:
    """Outer product of 1-D Hann windows; a 1-sample window is [1]."""
    if w < 1 or h < 1:
        raise ImageError("window size must be >= 1")
    return np.outer(np.hanning(h), np.hanning(w))


def frame_diff_ratio(prev: np.ndarray, cur: np.ndarray, pixel_thresh: float) -> float:
    if prev.shape != cur.shape:
        raise DimensionMismatchError(f"frame shapes differ: {prev.shape} vs {cur.shape}")
    return float(np.mean(np.abs(cur - prev) > pixel_thresh))


@dataclass(frozen=True)
class FeatureConfig:
    cell: int = 4
    orientations: int = 9

    @property
    def channels(self) -> int:
        return self.orientations + 2


def extract_features(img: np.ndarray, cell: int = 4, orientations: int = 9) -> np.ndarray:
    """Per-cell features: mean gray, hard-binned unsigned gradient orientation
    histogram (magnitude weighted), and gradient energy.

    Each of the three channel groups is L2-normalized per cell (norm + 1e-3).
    Output shape (H//cell, W//cell, orientations + 2).
    """
    g = to_gray(img)
    H, W = g.shape
    ch, cw = H // cell, W // cell
    if ch < 1 or cw < 1:
        raise ImageError(f"image {W}x{H} smaller than one {cell}px cell")
    g = g[: ch * cell, : cw * cell]

    gy, gx = np.gradient(g)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.minimum((ang / np.pi * orientations).astype(int), orientations - 1)

    def per_cell(a):
        return a.reshape(ch, cell, cw, cell)

    eps = 1e-3
    out = np.zeros((ch, cw, orientations + 2))

    gray = per_cell(g).mean(axis=(1, 3))
    out[:, :, 0] = gray / (np.abs(gray) + eps)

    hist = np.zeros((ch, cw, orientations))
    cb = per_cell(bins)
    cm = per_cell(mag)
    for b in range(orientations):
        hist[:, :, b] = np.where(cb == b, cm, 0.0).sum(axis=(1, 3))
    hist /= np.linalg.norm(hist, axis=2, keepdims=True) + eps
    out[:, :, 1 : orientations + 1] = hist

    energy = per_cell(mag**2).sum(axis=(1, 3))
    out[:, :, -1] = energy / (np.abs(energy) + eps)
    return out


def load_image(path) -> np.ndarray:
    """Load 8-bit PNG/PGM/PPM into [0,1] floats."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr


def save_image(path, img: np.ndarray) -> None:
    """Save [0,1] floats as an 8-bit image; format chosen by extension."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    PILImage.fromarray(data, mode=mode).save(path)
