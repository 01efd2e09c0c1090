"""Template matching between the first-frame target crop and candidate result
crops: nearest-neighbor patch matches scored with diversity weighting and a
deformation penalty.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import img
from .geom import Box

TEMPLATE_SIZE = 64
PATCH = 8
GRID = TEMPLATE_SIZE // PATCH           # 8x8 grid of patches
SCORE_SCALE = 25.0 / (GRID * GRID)      # map raw [0, 64] scores onto [0, 25]


class MatchError(ValueError):
    pass


@dataclass(frozen=True)
class Template:
    patch: np.ndarray        # 64x64 gray
    descriptors: np.ndarray  # (64, 64) rows: mean-subtracted unit patch vectors
    grid: np.ndarray         # (64, 2) patch grid coordinates (col, row)


def _descriptors(patch64: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    desc = np.zeros((GRID * GRID, PATCH * PATCH))
    grid = np.zeros((GRID * GRID, 2))
    k = 0
    for r in range(GRID):
        for c in range(GRID):
            v = patch64[r * PATCH:(r + 1) * PATCH, c * PATCH:(c + 1) * PATCH].reshape(-1)
            v = v - v.mean()
            n = np.linalg.norm(v)
            desc[k] = v / n if n > 1e-12 else 0.0
            grid[k] = (c, r)
            k += 1
    return desc, grid


def _to_template_patch(frame: np.ndarray, box: Box) -> np.ndarray:
    crop = img.crop_patch(img.to_gray(frame), box.center, (box.w, box.h))
    return img.resize_bilinear(crop, (TEMPLATE_SIZE, TEMPLATE_SIZE))


def build_template(frame: np.ndarray, box: Box) -> Template:
    patch = _to_template_patch(frame, box)
    desc, grid = _descriptors(patch)
    return Template(patch=patch, descriptors=desc, grid=grid)


def ddis_similarity(tpl: Template, candidate: np.ndarray) -> float:
    """Diversity-weighted deformable similarity; maximum = grid cell count (64).

    Each candidate patch votes for its nearest template patch; a template patch
    matched by many candidates contributes 1/count, and each vote is damped by
    1/(1 + grid distance between matched positions).
    """
    cand = np.asarray(candidate, dtype=np.float64)
    if cand.shape != (TEMPLATE_SIZE, TEMPLATE_SIZE):
        raise MatchError(f"candidate must be {TEMPLATE_SIZE}x{TEMPLATE_SIZE}, got {cand.shape}")
    cdesc, cgrid = _descriptors(cand)
    d2 = (np.sum(cdesc**2, axis=1)[:, None] + np.sum(tpl.descriptors**2, axis=1)[None, :]
          - 2.0 * cdesc @ tpl.descriptors.T)
    nn = np.argmin(d2, axis=1)
    counts = np.bincount(nn, minlength=len(tpl.descriptors))
    rho = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)
    delta = 1.0 / (1.0 + np.linalg.norm(cgrid - tpl.grid[nn], axis=1))
    return float(np.sum(rho[nn] * delta))


def score_box(tpl: Template, frame: np.ndarray, box: Box) -> float:
    """Similarity of the template against the crop at `box`, rescaled to [0, 25]
    so the switcher thresholds keep their published meaning."""
    return ddis_similarity(tpl, _to_template_patch(frame, box)) * SCORE_SCALE
