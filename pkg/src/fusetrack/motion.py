"""Constant-velocity Kalman filter over target center position.

State is (p_x, v_x, p_y, v_y). The transition, measurement and noise matrices
are fixed literal constants; gated frames simply skip the update step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

A = np.array([[1.0, 1.0, 0.0, 0.0],
              [0.0, 1.0, 0.0, 0.0],
              [0.0, 0.0, 1.0, 1.0],
              [0.0, 0.0, 0.0, 1.0]])

H = np.array([[1.0, 0.0, 0.0, 0.0],
              [0.0, 0.0, 1.0, 0.0]])

Q = np.diag([25.0, 10.0, 25.0, 10.0])

R = np.diag([25.0, 25.0])

P0_DIAG = (25.0, 100.0, 25.0, 100.0)


@dataclass
class KalmanState:
    x: np.ndarray
    P: np.ndarray
    predicted: bool = field(default=False)


def kf_init(center, p0_diag=P0_DIAG) -> KalmanState:
    cx, cy = center
    if not (np.isfinite(cx) and np.isfinite(cy)):
        raise ValueError(f"non-finite center {center}")
    return KalmanState(x=np.array([cx, 0.0, cy, 0.0]),
                       P=np.diag(np.asarray(p0_diag, dtype=np.float64)))


def kf_predict(s: KalmanState) -> tuple[float, float]:
    """Advance one frame: x <- A x, P <- A P A^T + Q; returns predicted center."""
    s.x = A @ s.x
    s.P = A @ s.P @ A.T + Q
    s.predicted = True
    return (float(s.x[0]), float(s.x[2]))


def kf_update(s: KalmanState, z) -> None:
    """Standard correction with measurement z = (c_x, c_y)."""
    if not s.predicted:
        raise RuntimeError("kf_update called before kf_predict in this frame")
    z = np.asarray(z, dtype=np.float64)
    innov_cov = H @ s.P @ H.T + R
    K = s.P @ H.T @ np.linalg.inv(innov_cov)
    s.x = s.x + K @ (z - H @ s.x)
    P = (np.eye(4) - K @ H) @ s.P
    s.P = 0.5 * (P + P.T)  # keep symmetry against round-off
    s.predicted = False


def center(s: KalmanState) -> tuple[float, float]:
    return (float(s.x[0]), float(s.x[2]))
