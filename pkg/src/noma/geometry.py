"""Small rigid-transform helpers (4x4 homogeneous matrices, z is up)."""

from __future__ import annotations

import numpy as np


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def make_pose(rotation=None, translation=None) -> np.ndarray:
    T = np.eye(4)
    if rotation is not None:
        T[:3, :3] = rotation
    if translation is not None:
        T[:3, 3] = translation
    return T


def yaw_pose(position, yaw: float) -> np.ndarray:
    return make_pose(rot_z(yaw), np.asarray(position, dtype=float))


def invert_pose(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def transform_points(T: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts)
    return pts @ T[:3, :3].T + T[:3, 3]


def transform_dirs(T: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    return np.asarray(dirs) @ T[:3, :3].T


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose for an OpenCV-style camera (x right, y down, z forward)."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, (0.0, 1.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return make_pose(np.stack([right, down, fwd], axis=1), eye)


def yaw_of(T: np.ndarray) -> float:
    return float(np.arctan2(T[1, 0], T[0, 0]) % (2 * np.pi))


def angle_diff(a: float, b: float, period: float = 2 * np.pi) -> float:
    """Smallest absolute difference between two angles modulo ``period``."""
    d = (a - b) % period
    return float(min(d, period - d))
