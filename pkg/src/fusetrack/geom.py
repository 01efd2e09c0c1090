"""Axis-aligned boxes and 2-D point transforms with least-squares fitting."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class GeometryError(ValueError):
    pass


class DegenerateConfigurationError(GeometryError):
    pass


@dataclass(frozen=True)
class Box:
    """(left, top, width, height) in continuous pixel coordinates."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(np.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"non-positive box size {self.w}x{self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self):
        return (self.x, self.y, self.w, self.h)


class MotionModel(str, Enum):
    TRANSLATION = "translation"
    SIMILARITY = "similarity"
    AFFINE = "affine"
    PROJECTIVE = "projective"


# minimal number of point correspondences per model
MIN_SAMPLE = {
    MotionModel.TRANSLATION: 1,
    MotionModel.SIMILARITY: 2,
    MotionModel.AFFINE: 3,
    MotionModel.PROJECTIVE: 4,
}


@dataclass(frozen=True)
class Transform2D:
    model: MotionModel
    m: np.ndarray  # 3x3 homogeneous

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise GeometryError("transform matrix must be finite 3x3")
        if abs(np.linalg.det(m)) < 1e-12:
            raise DegenerateConfigurationError("singular transform matrix")
        object.__setattr__(self, "m", m)

    @staticmethod
    def identity(model: MotionModel = MotionModel.AFFINE) -> "Transform2D":
        return Transform2D(model, np.eye(3))

    def inverse(self) -> "Transform2D":
        return Transform2D(self.model, np.linalg.inv(self.m))

    def compose(self, other: "Transform2D") -> "Transform2D":
        """Transform applying `other` first, then self."""
        model = self.model
        if other.model != self.model:
            model = MotionModel.PROJECTIVE
        return Transform2D(model, self.m @ other.m)


def iou(a: Box, b: Box) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def center_error(a: Box, b: Box) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return float(np.hypot(ax - bx, ay - by))


def apply(t: Transform2D, p) -> tuple[float, float]:
    x, y = p
    v = t.m @ np.array([x, y, 1.0])
    if abs(v[2]) < 1e-9:
        raise DegenerateConfigurationError(f"point {p} projects to infinity")
    return (float(v[0] / v[2]), float(v[1] / v[2]))


def apply_points(t: Transform2D, pts: np.ndarray) -> np.ndarray:
    """Vectorized apply over an (n,2) array."""
    pts = np.asarray(pts, dtype=np.float64)
    hom = np.column_stack([pts, np.ones(len(pts))]) @ t.m.T
    w = hom[:, 2]
    if np.any(np.abs(w) < 1e-9):
        raise DegenerateConfigurationError("point projects to infinity")
    return hom[:, :2] / w[:, None]


def _check_rank(s: np.ndarray):
    if s[-1] < 1e-10 * s[0]:
        raise DegenerateConfigurationError("rank-deficient correspondence system")


def fit(model: MotionModel, pairs) -> Transform2D:
    """Least-squares transform mapping src points onto dst points.

    `pairs` is a sequence of ((x,y), (x',y')) correspondences.
    """
    model = MotionModel(model)
    src = np.array([p[0] for p in pairs], dtype=np.float64)
    dst = np.array([p[1] for p in pairs], dtype=np.float64)
    n = len(src)
    if n < MIN_SAMPLE[model]:
        raise GeometryError(f"{model.value} fit needs >= {MIN_SAMPLE[model]} pairs, got {n}")

    if model is MotionModel.TRANSLATION:
        d = np.mean(dst - src, axis=0)
        m = np.eye(3)
        m[0, 2], m[1, 2] = d
        return Transform2D(model, m)

    if model is MotionModel.SIMILARITY:
        # params (a, b, tx, ty): x' = a x - b y + tx ; y' = b x + a y + ty
        A = np.zeros((2 * n, 4))
        A[0::2, 0], A[0::2, 1], A[0::2, 2] = src[:, 0], -src[:, 1], 1.0
        A[1::2, 0], A[1::2, 1], A[1::2, 3] = src[:, 1], src[:, 0], 1.0
        rhs = dst.reshape(-1)
        sol, _, _, sv = np.linalg.lstsq(A, rhs, rcond=None)
        _check_rank(sv)
        a, b, tx, ty = sol
        if np.hypot(a, b) < 1e-12:
            raise DegenerateConfigurationError("zero-scale similarity")
        m = np.array([[a, -b, tx], [b, a, ty], [0, 0, 1.0]])
        return Transform2D(model, m)

    if model is MotionModel.AFFINE:
        A = np.column_stack([src, np.ones(n)])
        sol, _, _, sv = np.linalg.lstsq(A, dst, rcond=None)
        _check_rank(sv)
        m = np.eye(3)
        m[:2, :] = sol.T
        return Transform2D(model, m)

    # projective: normalized DLT
    def normalizer(pts):
        c = pts.mean(axis=0)
        d = np.mean(np.linalg.norm(pts - c, axis=1))
        s = np.sqrt(2.0) / max(d, 1e-12)
        T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
        return T

    Ts, Td = normalizer(src), normalizer(dst)
    sn = (np.column_stack([src, np.ones(n)]) @ Ts.T)[:, :2]
    dn = (np.column_stack([dst, np.ones(n)]) @ Td.T)[:, :2]
    A = np.zeros((2 * n, 9))
    for i in range(n):
        x, y = sn[i]
        u, v = dn[i]
        A[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y, -u]
        A[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y, -v]
    _, s, vt = np.linalg.svd(A)
    if s[7] < 1e-10 * s[0]:
        raise DegenerateConfigurationError("degenerate projective configuration")
    h = vt[-1].reshape(3, 3)
    m = np.linalg.inv(Td) @ h @ Ts
    if abs(m[2, 2]) > 1e-12:
        m = m / m[2, 2]
    return Transform2D(model, m)
