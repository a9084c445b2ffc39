"""Object-frame rays, uniform sampling, compositing and the training loss.

Rays live in the metric object frame (object pose removed, no scaling). Sample
positions are handed to the field in normalized box coordinates, and each ray
carries the factor that converts metric step lengths into normalized-cube
lengths, which is the unit field densities are expressed in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .geometry import invert_pose, transform_dirs, transform_points


class RenderError(ValueError):
    pass


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray  # camera -> world, OpenCV axes

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=float)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        R = self.pose[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() >= 1e-5:
            raise ValueError("camera rotation is not orthonormal")

    @property
    def center(self) -> np.ndarray:
        return self.pose[:3, 3]

    def with_pose(self, pose) -> "Camera":
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)

    def pixel_dirs(self, u, v) -> np.ndarray:
        """Unit camera-frame directions through continuous pixel coordinates."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], -1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def project(self, pts_world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (n, 2) and camera-frame depth (n,) of world points."""
        pc = transform_points(invert_pose(self.pose), pts_world)
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.stack([self.fx * pc[:, 0] / z + self.cx, self.fy * pc[:, 1] / z + self.cy], -1)
        return uv, z


@dataclass
class Frame:
    camera: Camera
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W) camera z-depth in meters, 0 = invalid
    mask: np.ndarray  # (H, W) bool


class ObjectRay(NamedTuple):
    origin: np.ndarray
    direction: np.ndarray
    kind: str  # "object" | "background"
    target_color: np.ndarray
    target_depth: float | None


@dataclass
class RayBatch:
    origins: np.ndarray  # (R, 3) object frame
    dirs: np.ndarray  # (R, 3) unit
    is_object: np.ndarray  # (R,) bool
    target_rgb: np.ndarray  # (R, 3)
    target_depth: np.ndarray  # (R,) along-ray distance in meters, NaN = absent

    def __len__(self):
        return self.origins.shape[0]

    def __getitem__(self, i) -> ObjectRay:
        d = self.target_depth[i]
        return ObjectRay(self.origins[i], self.dirs[i],
                         "object" if self.is_object[i] else "background",
                         self.target_rgb[i], None if np.isnan(d) else float(d))

    def subset(self, sel) -> "RayBatch":
        return RayBatch(self.origins[sel], self.dirs[sel], self.is_object[sel],
                        self.target_rgb[sel], self.target_depth[sel])

    @classmethod
    def from_rays(cls, rays: list[ObjectRay]) -> "RayBatch":
        return cls(
            np.array([r.origin for r in rays], dtype=float).reshape(-1, 3),
            np.array([r.direction for r in rays], dtype=float).reshape(-1, 3),
            np.array([r.kind == "object" for r in rays], dtype=bool),
            np.array([r.target_color for r in rays], dtype=float).reshape(-1, 3),
            np.array([np.nan if r.target_depth is None else r.target_depth for r in rays]),
        )


def background_band(mask: np.ndarray, width: int = 8, exclude: np.ndarray | None = None) -> np.ndarray:
    band = ndimage.binary_dilation(mask, structure=np.ones((3, 3), bool), iterations=width) & ~mask
    if exclude is not None:
        band &= ~exclude
    return band


def generate_rays(frame: Frame, obj_pose: np.ndarray, n: int, rng: np.random.Generator,
                  bg_fraction: float = 0.25, band_width: int = 8,
                  exclude: np.ndarray | None = None) -> RayBatch:
    """Draw ``n`` pixel rays of one frame and express them in the object frame.

    ``exclude`` marks pixels that may not serve as background (other objects).
    """
    cam = frame.camera
    mask = np.asarray(frame.mask, bool)
    if mask.shape != (cam.height, cam.width):
        raise RenderError("mask size does not match camera")
    if n < 1:
        raise RenderError("need at least one ray")
    obj_pix = np.flatnonzero(mask)
    if obj_pix.size == 0:
        raise RenderError("no object pixels")
    band_pix = np.flatnonzero(background_band(mask, band_width, exclude))
    return rays_from_pixels(frame, obj_pose, obj_pix, band_pix, n, rng, bg_fraction)


def rays_from_pixels(frame: Frame, obj_pose: np.ndarray, obj_pix: np.ndarray,
                     band_pix: np.ndarray, n: int, rng: np.random.Generator,
                     bg_fraction: float = 0.25) -> RayBatch:
    cam = frame.camera
    n_bg = int(round(n * bg_fraction)) if band_pix.size else 0
    n_obj = n - n_bg
    pix = np.concatenate([obj_pix[rng.integers(0, obj_pix.size, n_obj)],
                          band_pix[rng.integers(0, band_pix.size, n_bg)]])
    rows, cols = np.divmod(pix, cam.width)
    d_cam = cam.pixel_dirs(cols + 0.5, rows + 0.5)
    obj_from_cam = invert_pose(np.asarray(obj_pose, dtype=float)) @ cam.pose
    origins = np.repeat(obj_from_cam[None, :3, 3], pix.size, axis=0)
    dirs = transform_dirs(obj_from_cam, d_cam)
    z = frame.depth.reshape(-1)[pix].astype(float)
    is_obj = np.zeros(pix.size, bool)
    is_obj[:n_obj] = True
    tdepth = np.where(is_obj & (z > 0), z / d_cam[:, 2], np.nan)
    rgb = frame.rgb.reshape(-1, 3)[pix].astype(float)
    return RayBatch(origins, dirs, is_obj, rgb, tdepth)


# --------------------------------------------------------------------------
# sampling


@dataclass
class RaySampleSet:
    positions: np.ndarray  # (R, N, 3) normalized box coordinates
    depths: np.ndarray  # (R, N) meters along the ray
    deltas: np.ndarray  # (R, N) meters
    escaped: np.ndarray  # (R,) bool
    scale: np.ndarray  # (R,) normalized length per meter along the ray
    t_near: np.ndarray  # (R,)
    t_far: np.ndarray  # (R,)

    @property
    def optical_deltas(self) -> np.ndarray:
        return self.deltas * self.scale[:, None]

    @property
    def n_samples(self) -> int:
        return self.depths.shape[1]

    def subset(self, sel) -> "RaySampleSet":
        return RaySampleSet(self.positions[sel], self.depths[sel], self.deltas[sel],
                            self.escaped[sel], self.scale[sel], self.t_near[sel], self.t_far[sel])


def ray_box(origins, dirs, lo, hi, near: float = 1e-4):
    """Slab intersection; returns (t_near, t_far, hit)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    tmax = np.where(np.isnan(t0), np.inf, np.maximum(t0, t1))
    t_near = np.maximum(tmin.max(axis=-1), near)
    t_far = tmax.min(axis=-1)
    return t_near, t_far, t_far > t_near


def positions_at(origins, dirs, depths, lo, hi) -> np.ndarray:
    p = origins[:, None, :] + depths[..., None] * dirs[:, None, :]
    return np.clip((p - lo) / (hi - lo), 0.0, 1.0)


def uniform_samples(rays: RayBatch, lo, hi, n: int,
                    jitter: np.random.Generator | None = None) -> RaySampleSet:
    """``n`` midpoint samples per ray over its span inside the box [lo, hi].

    With a ``jitter`` generator each sample moves to a uniform position inside
    its interval (stratified sampling); deltas then reach to the next sample and
    the last one to the far end of the span.
    """
    if n < 2:
        raise ValueError("need at least two samples per ray")
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    t_near, t_far, hit = ray_box(rays.origins, rays.dirs, lo, hi)
    t_near = np.where(hit, t_near, 0.0)
    t_far = np.where(hit, t_far, 1.0)
    step = (t_far - t_near) / n
    if jitter is None:
        depths = t_near[:, None] + (np.arange(n) + 0.5)[None, :] * step[:, None]
        deltas = np.repeat(step[:, None], n, axis=1)
    else:
        u = jitter.random((len(t_near), n))
        depths = t_near[:, None] + (np.arange(n)[None, :] + u) * step[:, None]
        deltas = np.empty_like(depths)
        deltas[:, :-1] = np.diff(depths, axis=1)
        deltas[:, -1] = t_far - depths[:, -1]
        deltas = np.maximum(deltas, 1e-9)
    pos = positions_at(rays.origins, rays.dirs, depths, lo, hi)
    scale = np.linalg.norm(rays.dirs / (hi - lo), axis=-1)
    return RaySampleSet(pos, depths, deltas, ~hit, scale, t_near, t_far)


# --------------------------------------------------------------------------
# compositing


def termination_weights(sigmas, optical_deltas):
    """Occupancy, termination probabilities and transmittance before each sample."""
    alpha = 1.0 - np.exp(-sigmas * optical_deltas)
    trans = np.cumprod(1.0 - alpha, axis=-1)
    T_before = np.concatenate([np.ones_like(trans[..., :1]), trans[..., :-1]], axis=-1)
    return alpha, alpha * T_before, T_before


def composite(sigmas, colors, deltas, depths):
    """Composited color, depth and per-sample termination probabilities.

    ``deltas`` must be expressed in the density's length unit.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    _, w, _ = termination_weights(sigmas, np.asarray(deltas, dtype=float))
    C = (w[..., None] * np.asarray(colors, dtype=float)).sum(axis=-2)
    D = (w * np.asarray(depths, dtype=float)).sum(axis=-1)
    return C, D, w


def composite_sigma_grad(w, alpha, T_before, optical_deltas, s):
    """d(sum_k w_k s_k)/d(sigma_i) for per-sample scalars ``s``."""
    T_after = T_before * (1.0 - alpha)
    ws = w * s
    # sum_{k>i} w_k s_k
    tail = np.cumsum(ws[..., ::-1], axis=-1)[..., ::-1] - ws
    return optical_deltas * (T_after * s - tail)


@dataclass
class LossTerms:
    total: float
    color: float
    depth: float
    density: float


def batch_loss(rays: RayBatch, samples: RaySampleSet, sigma, rgb, lambda_d: float,
               lambda_sigma: float, rng: np.random.Generator | None = None,
               bg_colors: np.ndarray | None = None):
    """Weighted photometric + depth + background-density loss.

    ``sigma`` is (R, N), ``rgb`` (R, N, 3). Background rays are composited over
    a random color drawn per ray, so only zero opacity matches the target.
    Returns (LossTerms, d_sigma (R, N), d_rgb (R, N, 3)); escaped rays get zero
    gradients.
    """
    if len(rays) == 0:
        raise RenderError("no rays")
    if lambda_d < 0 or lambda_sigma < 0:
        raise ValueError("loss weights must be non-negative")
    R = len(rays)
    sigma = np.asarray(sigma, dtype=float).reshape(R, -1)
    rgb = np.asarray(rgb, dtype=float).reshape(R, -1, 3)
    if bg_colors is None:
        if rng is None:
            raise ValueError("need an rng to draw background colors")
        bg_colors = rng.random((R, 3))
    active = ~samples.escaped
    obj = rays.is_object & active
    bg = ~rays.is_object & active

    od = samples.optical_deltas
    alpha, w, T_before = termination_weights(sigma, od)
    C = (w[..., None] * rgb).sum(axis=1)
    acc = w.sum(axis=1)
    D = (w * samples.depths).sum(axis=1)
    C = np.where(bg[:, None], C + (1 - acc)[:, None] * bg_colors, C)
    target = np.where(bg[:, None], bg_colors, rays.target_rgb)

    diff = C - target
    norm = np.linalg.norm(diff, axis=1)
    use_c = obj | bg
    L_c = norm[use_c].sum()
    g_C = np.where((use_c & (norm > 0))[:, None], diff / np.where(norm > 0, norm, 1)[:, None], 0)

    has_d = obj & ~np.isnan(rays.target_depth)
    dd = np.where(has_d, D - np.nan_to_num(rays.target_depth), 0.0)
    L_d = np.abs(dd).sum()
    g_D = lambda_d * np.sign(dd)

    L_s = sigma[bg].sum()
    total = L_c + lambda_d * L_d + lambda_sigma * L_s

    shift = np.where(bg[:, None], bg_colors, 0.0)
    s = ((rgb - shift[:, None, :]) * g_C[:, None, :]).sum(-1) + g_D[:, None] * samples.depths
    d_sigma = composite_sigma_grad(w, alpha, T_before, od, s)
    d_sigma[bg] += lambda_sigma
    d_sigma[~active] = 0
    d_rgb = w[..., None] * g_C[:, None, :]
    return LossTerms(float(total), float(L_c), float(L_d), float(L_s)), d_sigma, d_rgb
