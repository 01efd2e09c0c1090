"""Camera-motion estimation on the thermal stream: Harris keypoints, normalized
patch descriptors, mutual-NN matching and MSAC-robust transform fitting, plus
the frame-difference pre-gate, drastic-motion test and search-region shift.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom, img
from .geom import Box, MotionModel, Transform2D


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    response: float


@dataclass(frozen=True)
class CmeConfig:
    max_keypoints: int = 400
    harris_k: float = 0.04
    response_rel_thresh: float = 1e-3   # keep responses > rel_thresh * max
    descriptor_half: int = 8            # 16x16 patches
    ratio_thresh: float = 0.8
    msac_iters: int = 500
    msac_tau: float = 3.0               # px
    pixel_thresh: float = 0.1
    ratio_gate: float = 0.05
    drastic_frac: float = 0.2           # of frame diagonal
    model: MotionModel = MotionModel.AFFINE
    seed: int = 7


def _gauss_blur(a: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    r = int(np.ceil(3 * sigma))
    x = np.arange(-r, r + 1)
    k = np.exp(-(x**2) / (2 * sigma**2))
    k /= k.sum()
    pad = np.pad(a, ((r, r), (r, r)), mode="edge")
    tmp = np.apply_along_axis(lambda v: np.convolve(v, k, mode="valid"), 1, pad)
    return np.apply_along_axis(lambda v: np.convolve(v, k, mode="valid"), 0, tmp)


def detect(image: np.ndarray, max_n: int = 400, cfg: CmeConfig = CmeConfig()) -> list[Keypoint]:
    """Harris corners with 3x3 non-max suppression and sub-pixel refinement,
    sorted by descending response."""
    g = img.to_gray(image)
    gy, gx = np.gradient(g)
    ixx = _gauss_blur(gx * gx)
    iyy = _gauss_blur(gy * gy)
    ixy = _gauss_blur(gx * gy)
    det = ixx * iyy - ixy * ixy
    tr = ixx + iyy
    resp = det - cfg.harris_k * tr * tr

    rmax = resp.max(initial=0.0)
    if rmax <= 0:
        return []
    thresh = cfg.response_rel_thresh * rmax
    H, W = resp.shape
    kps = []
    padded = np.pad(resp, 1, constant_values=-np.inf)
    neigh = np.stack([padded[1 + dy : 1 + dy + H, 1 + dx : 1 + dx + W]
                      for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)])
    is_peak = (resp > thresh) & (resp > neigh.max(axis=0))
    ys, xs = np.nonzero(is_peak)
    for y, x in zip(ys, xs):
        sx, sy = float(x), float(y)
        if 0 < x < W - 1:
            d = resp[y, x - 1] - 2 * resp[y, x] + resp[y, x + 1]
            if abs(d) > 1e-18:
                sx += float(np.clip(0.5 * (resp[y, x - 1] - resp[y, x + 1]) / d, -0.5, 0.5))
        if 0 < y < H - 1:
            d = resp[y - 1, x] - 2 * resp[y, x] + resp[y + 1, x]
            if abs(d) > 1e-18:
                sy += float(np.clip(0.5 * (resp[y - 1, x] - resp[y + 1, x]) / d, -0.5, 0.5))
        kps.append(Keypoint(sx, sy, float(resp[y, x])))
    kps.sort(key=lambda k: -k.response)
    return kps[:max_n]


def describe(image: np.ndarray, kps, cfg: CmeConfig = CmeConfig()):
    """Mean-subtracted, L2-normalized 16x16 patches; keypoints closer than
    8 px to the border are dropped. Returns (kept keypoints, descriptor rows)."""
    g = img.to_gray(image)
    H, W = g.shape
    r = cfg.descriptor_half
    kept, rows = [], []
    for kp in kps:
        x, y = int(round(kp.x)), int(round(kp.y))
        if x - r < 0 or y - r < 0 or x + r > W or y + r > H:
            continue
        v = g[y - r : y + r, x - r : x + r].reshape(-1).astype(np.float64)
        v = v - v.mean()
        n = np.linalg.norm(v)
        rows.append(v / n if n > 1e-12 else np.zeros_like(v))
        kept.append(kp)
    return kept, np.array(rows) if rows else np.zeros((0, (2 * r) ** 2))


def match(ref_kps, ref_desc, search_kps, search_desc, cfg: CmeConfig = CmeConfig()):
    """Mutual nearest neighbors passing the best/second-best ratio test.

    Returns a list of ((x,y) ref, (x,y) search, distance)."""
    if len(ref_desc) == 0 or len(search_desc) == 0:
        return []
    d2 = (np.sum(ref_desc**2, axis=1)[:, None] + np.sum(search_desc**2, axis=1)[None, :]
          - 2.0 * ref_desc @ search_desc.T)
    d2 = np.maximum(d2, 0.0)
    nn_rs = np.argmin(d2, axis=1)
    nn_sr = np.argmin(d2, axis=0)
    out = []
    for i, j in enumerate(nn_rs):
        if nn_sr[j] != i:
            continue
        row = np.sqrt(d2[i])
        best = row[j]
        rest = np.delete(row, j)
        if rest.size and best >= cfg.ratio_thresh * rest.min():
            continue
        out.append(((ref_kps[i].x, ref_kps[i].y),
                    (search_kps[j].x, search_kps[j].y), float(best)))
    return out


class InsufficientMatchesError(RuntimeError):
    pass


def msac_fit(matches, model: MotionModel, iters: int = 500, tau: float = 3.0,
             seed: int = 7):
    """MSAC with truncated squared-residual scoring and a final least-squares
    refit on the inliers of the best hypothesis. Returns (transform, mask)."""
    model = MotionModel(model)
    k = geom.MIN_SAMPLE[model]
    if len(matches) < k:
        raise InsufficientMatchesError(f"{len(matches)} matches < minimal sample {k}")
    src = np.array([m[0] for m in matches], dtype=np.float64)
    dst = np.array([m[1] for m in matches], dtype=np.float64)
    tau2 = tau * tau

    def residuals(t):
        pred = geom.apply_points(t, src)
        return np.sum((pred - dst) ** 2, axis=1)

    def score_of(t):
        return float(np.sum(np.minimum(residuals(t), tau2)))

    rng = np.random.default_rng(seed)
    best_t = Transform2D.identity(model)
    best_score = score_of(best_t)
    any_sample = False
    for _ in range(iters):
        idx = rng.choice(len(matches), size=k, replace=False)
        try:
            t = geom.fit(model, list(zip(src[idx], dst[idx])))
        except geom.GeometryError:
            continue
        any_sample = True
        sc = score_of(t)
        if sc < best_score:
            best_score, best_t = sc, t
    if not any_sample and len(matches) > k:
        raise geom.DegenerateConfigurationError("all MSAC samples degenerate")

    mask = residuals(best_t) < tau2
    if mask.sum() >= k:
        try:
            refit = geom.fit(model, list(zip(src[mask], dst[mask])))
            if score_of(refit) <= best_score:
                best_t = refit
        except geom.GeometryError:
            pass
    mask = residuals(best_t) < tau2
    return best_t, mask


def estimate_camera_motion(ref_t: np.ndarray, cur_t: np.ndarray,
                           model: MotionModel = MotionModel.AFFINE,
                           cfg: CmeConfig = CmeConfig()) -> Transform2D:
    """Full pipeline; falls back to the identity when matching cannot proceed."""
    if ref_t.shape != cur_t.shape:
        raise img.DimensionMismatchError("frame sizes differ")
    ref_kps = detect(ref_t, cfg.max_keypoints, cfg)
    cur_kps = detect(cur_t, cfg.max_keypoints, cfg)
    ref_kps, ref_desc = describe(ref_t, ref_kps, cfg)
    cur_kps, cur_desc = describe(cur_t, cur_kps, cfg)
    pairs = match(ref_kps, ref_desc, cur_kps, cur_desc, cfg)
    if len(pairs) < geom.MIN_SAMPLE[MotionModel(model)]:
        return Transform2D.identity(MotionModel(model))
    try:
        t, _ = msac_fit(pairs, model, cfg.msac_iters, cfg.msac_tau, cfg.seed)
    except (InsufficientMatchesError, geom.GeometryError):
        return Transform2D.identity(MotionModel(model))
    return t


def motion_gate(prev_t: np.ndarray, cur_t: np.ndarray, pixel_thresh: float = 0.1,
                ratio_thresh: float = 0.05) -> bool:
    """True (run estimation) iff the changed-pixel fraction strictly exceeds
    the gate threshold."""
    return img.frame_diff_ratio(prev_t, cur_t, pixel_thresh) > ratio_thresh


def drastic_motion(t: Transform2D, frame_size, frac: float = 0.2) -> bool:
    """True iff the mean frame-corner displacement strictly exceeds
    `frac` x frame diagonal."""
    w, h = frame_size
    corners = np.array([[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]])
    moved = geom.apply_points(t, corners)
    mean_disp = float(np.mean(np.linalg.norm(moved - corners, axis=1)))
    return mean_disp > frac * float(np.hypot(w, h))


def compensate(box: Box, t: Transform2D) -> Box:
    """Relocate the box center by the camera transform; size is kept."""
    cx, cy = geom.apply(t, box.center)
    return Box(cx - box.w / 2.0, cy - box.h / 2.0, box.w, box.h)
