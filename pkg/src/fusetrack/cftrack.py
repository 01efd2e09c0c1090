"""Per-modality appearance tracker: a regularized multi-channel correlation
filter learned and applied in the frequency domain.

The filter is trained on windowed feature channels of the search patch against
a centered 2-D Gaussian, giving an M x N response map whose peak marks the
target. PSR and MAX-PSR quality scores measure response reliability.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import img
from .geom import Box


class TrackerError(RuntimeError):
    pass


@dataclass(frozen=True)
class CfConfig:
    padding: float = 2.0          # search region = target size * padding
    lam: float = 1e-2             # ridge regularizer
    eta: float = 0.02             # filter learning rate
    n_scales: int = 5
    scale_step: float = 1.02
    sigma_factor: float = 0.1     # label sigma = sigma_factor * sqrt(w*h) px
    cell: int = 4
    orientations: int = 9

    def scales(self) -> np.ndarray:
        k = np.arange(self.n_scales) - (self.n_scales - 1) / 2
        return self.scale_step**k


@dataclass
class CfState:
    cfg: CfConfig
    target_size: tuple[float, float]     # (w, h) px
    patch_px: tuple[int, int]            # fixed search-patch pixel size (w, h)
    map_size: tuple[int, int]            # (M, N) = feature cells (w, h)
    numerator: np.ndarray                # (C, N, M) complex
    denominator: np.ndarray              # (N, M) complex, includes lam
    label_fft: np.ndarray = field(repr=False, default=None)
    window: np.ndarray = field(repr=False, default=None)


def _patch_geometry(cfg: CfConfig, target_size):
    w, h = target_size
    pw = max(cfg.cell * 2, int(round(w * cfg.padding / cfg.cell)) * cfg.cell)
    ph = max(cfg.cell * 2, int(round(h * cfg.padding / cfg.cell)) * cfg.cell)
    return (pw, ph), (pw // cfg.cell, ph // cfg.cell)


def _gaussian_label(map_size, sigma_cells) -> np.ndarray:
    m, n = map_size
    xs = np.arange(m) - m // 2
    ys = np.arange(n) - n // 2
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.exp(-(xx**2 + yy**2) / (2.0 * sigma_cells**2))


def _features(state_cfg: CfConfig, frame, center, patch_px, window):
    patch = img.crop_patch(img.to_gray(frame), center, patch_px)
    feats = img.extract_features(patch, cell=state_cfg.cell,
                                 orientations=state_cfg.orientations)
    return feats * window[:, :, None]


def _train_terms(cfg: CfConfig, feats, label_fft):
    f_fft = np.fft.fft2(feats, axes=(0, 1)).transpose(2, 0, 1)
    num = np.conj(f_fft) * label_fft[None]
    den = np.sum(np.conj(f_fft) * f_fft, axis=0) + cfg.lam
    return num, den


def cf_init(frame: np.ndarray, box: Box, cfg: CfConfig = CfConfig()) -> CfState:
    """Train a fresh filter on the patch around `box`."""
    if box.w < cfg.cell or box.h < cfg.cell:
        raise TrackerError(f"target {box.w}x{box.h} smaller than one feature cell")
    patch_px, map_size = _patch_geometry(cfg, (box.w, box.h))
    sigma_px = cfg.sigma_factor * np.sqrt(box.w * box.h)
    sigma_cells = max(sigma_px / cfg.cell, 0.5)
    label = _gaussian_label(map_size, sigma_cells)
    label_fft = np.fft.fft2(label)
    window = img.hann2d(map_size[0], map_size[1])
    feats = _features(cfg, frame, box.center, patch_px, window)
    num, den = _train_terms(cfg, feats, label_fft)
    return CfState(cfg=cfg, target_size=(box.w, box.h), patch_px=patch_px,
                   map_size=map_size, numerator=num, denominator=den,
                   label_fft=label_fft, window=window)


def cf_respond(state: CfState, frame: np.ndarray, center) -> tuple[np.ndarray, int]:
    """Response maps for every scale, stacked (n_scales, N, M), plus the index
    of the best scale. The previous center sits at the map center."""
    cfg = state.cfg
    maps = []
    gray = img.to_gray(frame)
    for s in cfg.scales():
        pw = max(1, int(round(state.patch_px[0] * s)))
        ph = max(1, int(round(state.patch_px[1] * s)))
        patch = img.crop_patch(gray, center, (pw, ph))
        patch = img.resize_bilinear(patch, state.patch_px)
        feats = img.extract_features(patch, cell=cfg.cell,
                                     orientations=cfg.orientations)
        feats = feats * state.window[:, :, None]
        f_fft = np.fft.fft2(feats, axes=(0, 1)).transpose(2, 0, 1)
        spec = np.sum(state.numerator * f_fft, axis=0) / state.denominator
        maps.append(np.real(np.fft.ifft2(spec)))
    maps = np.stack(maps)
    best = int(np.argmax(maps.reshape(len(maps), -1).max(axis=1)))
    return maps, best


def cf_update(state: CfState, frame: np.ndarray, box: Box) -> None:
    """Linear interpolation of filter terms toward a fresh fit at `box`."""
    cfg = state.cfg
    if cfg.eta == 0.0:
        return
    feats = _features(cfg, frame, box.center, state.patch_px, state.window)
    num, den = _train_terms(cfg, feats, state.label_fft)
    state.numerator = (1.0 - cfg.eta) * state.numerator + cfg.eta * num
    state.denominator = (1.0 - cfg.eta) * state.denominator + cfg.eta * den
    state.target_size = (box.w, box.h)


def peak_location(r: np.ndarray) -> tuple[float, float]:
    """Sub-cell peak (x, y) in map coordinates via 3x3 parabolic interpolation."""
    n, m = r.shape
    iy, ix = np.unravel_index(int(np.argmax(r)), r.shape)

    def refine(f_m, f_0, f_p):
        denom = f_m - 2.0 * f_0 + f_p
        if abs(denom) < 1e-12:
            return 0.0
        d = 0.5 * (f_m - f_p) / denom
        return float(np.clip(d, -0.5, 0.5))

    dx = dy = 0.0
    if 0 < ix < m - 1:
        dx = refine(r[iy, ix - 1], r[iy, ix], r[iy, ix + 1])
    if 0 < iy < n - 1:
        dy = refine(r[iy - 1, ix], r[iy, ix], r[iy + 1, ix])
    return (ix + dx, iy + dy)


def displacement_px(state: CfState, r: np.ndarray, scale: float) -> tuple[float, float]:
    """Peak offset from map center in frame pixels at the given scale."""
    px, py = peak_location(r)
    m, n = state.map_size
    return ((px - m // 2) * state.cfg.cell * scale,
            (py - n // 2) * state.cfg.cell * scale)


def psr(r: np.ndarray) -> float:
    """(max - mean) / (variance + eps); variance, not standard deviation."""
    r = np.asarray(r, dtype=np.float64)
    if r.size == 0:
        raise TrackerError("empty response map")
    return float((r.max() - r.mean()) / (r.var() + 1e-12))


def quality(r: np.ndarray) -> float:
    """MAX-PSR reliability: PSR times the response maximum."""
    return psr(r) * float(np.asarray(r).max())
