"""Online multi-object mapping: association, coarse state, canonicalization and training."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from . import field as nf
from . import priorgrid as pg
from .geometry import transform_points, yaw_pose
from .meshmetrics import Mesh, sample_surface
from .render import Camera, Frame
from .shapes import SYMMETRIC
from .stats import t_test_one_sample, wilcoxon_rank_sum
from .training import BOX_MARGIN, ObjectView, TrainConfig, Trainer, field_to_canonical

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class MapperConfig:
    iou_threshold: float = 0.5
    piou_threshold: float = 0.3
    alpha_w: float = 0.05
    alpha_t: float = 0.05
    voxel: float = 0.02
    radius: float = 0.05
    min_count: int = 20
    test_points: int = 20  # per-sample subsample size for the rank-sum test
    cloud_voxel: float = 0.004  # resolution kept in accumulated track clouds
    min_frames: int = 6
    min_span_deg: float = 60.0
    yaw_samples: int = 72
    icp_iters: int = 30
    icp_tol: float = 1e-6
    icp_points: int = 2000
    iters_per_object: int = 200
    use_priors: bool = True
    prior_sampling: bool = True
    grid_res: int = pg.DEFAULT_RESOLUTION
    train: TrainConfig = field(default_factory=TrainConfig)
    threads: int | None = None
    seed: int = 0

    def with_(self, **kw) -> "MapperConfig":
        return replace(self, **kw)


def thread_cap(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("NOMA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"NOMA_THREADS must be an integer, got {env!r}") from None
    return max(1, os.cpu_count() or 1)


# --------------------------------------------------------------------------
# detections and tracks


@dataclass
class Detection:
    frame_id: int
    bbox: tuple  # (u0, v0, u1, v1), half-open pixel bounds
    mask: np.ndarray
    cloud: np.ndarray  # world frame, meters
    category: str
    camera: Camera | None = None
    instance: int = 0


@dataclass
class ObjectTrack:
    id: int
    category: str
    cloud: np.ndarray
    boxes: dict = field(default_factory=dict)  # frame id -> bbox
    centroids: list = field(default_factory=list)
    last_points: np.ndarray | None = None
    bearings: list = field(default_factory=list)
    views: list = field(default_factory=list)  # (frame index, instance id)
    position: np.ndarray | None = None
    yaw: float = 0.0
    size: np.ndarray | None = None
    status: str = "accumulating"
    prior: object = None
    gamma: float | None = None

    @property
    def last_frame(self) -> int:
        return max(self.boxes) if self.boxes else -1

    @property
    def pose(self) -> np.ndarray:
        return yaw_pose(self.position, self.yaw)


def mask_bbox(mask: np.ndarray) -> tuple:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return (int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def backproject(frame: Frame, mask: np.ndarray) -> np.ndarray:
    """World points of the masked pixels with valid (z) depth."""
    sel = mask & (frame.depth > 0) & np.isfinite(frame.depth)
    v, u = np.nonzero(sel)
    z = frame.depth[v, u].astype(float)
    cam = frame.camera
    x = (u + 0.5 - cam.cx) / cam.fx * z
    y = (v + 0.5 - cam.cy) / cam.fy * z
    return transform_points(cam.pose, np.stack([x, y, z], axis=1))


def detections_from_frame(frame_id: int, frame: Frame, instance: np.ndarray, labels: dict) -> list[Detection]:
    dets = []
    for inst in sorted(int(i) for i in np.unique(instance) if i != 0):
        mask = instance == inst
        cloud = backproject(frame, mask)
        if len(cloud) == 0 or inst not in labels:
            continue
        dets.append(Detection(frame_id, mask_bbox(mask), mask, cloud, labels[inst], frame.camera, inst))
    return dets


# --------------------------------------------------------------------------
# geometric gates


def iou_2d(a, b) -> float:
    ax0, ay0, ax1, ay1 = (float(x) for x in a)
    bx0, by0, bx1, by1 = (float(x) for x in b)
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def box_corners(position, yaw: float, size) -> np.ndarray:
    h = 0.5 * np.asarray(size, dtype=float)
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
    return transform_points(yaw_pose(position, yaw), signs * h)


def track_corners(track: ObjectTrack) -> np.ndarray:
    if track.size is not None:
        return box_corners(track.position, track.yaw, track.size)
    lo, hi = track.cloud.min(0), track.cloud.max(0)
    return box_corners(0.5 * (lo + hi), 0.0, np.maximum(hi - lo, 1e-6))


def projected_iou(track: ObjectTrack, cam: Camera, det: Detection) -> float:
    uv, z = cam.project(track_corners(track))
    front = z > 1e-6
    if not front.any():
        return 0.0
    uv = uv[front]
    lo = np.clip(uv.min(0), 0, [cam.width, cam.height])
    hi = np.clip(uv.max(0), 0, [cam.width, cam.height])
    if np.any(hi <= lo):
        return 0.0
    return iou_2d((lo[0], lo[1], hi[0], hi[1]), det.bbox)


# --------------------------------------------------------------------------
# clustering


def voxel_downsample(cloud: np.ndarray, voxel: float) -> np.ndarray:
    """Centroid of the points in each occupied voxel."""
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        return cloud.reshape(0, 3)
    keys = np.floor(cloud / voxel).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inv, cloud)
    return sums / counts[:, None]


def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def radius_clusters(points: np.ndarray, radius: float) -> list[np.ndarray]:
    """Single-linkage components of the ``radius`` neighbourhood graph (union-find)."""
    n = len(points)
    parent = list(range(n))
    if n:
        for i, j in cKDTree(points).query_pairs(radius, output_type="ndarray"):
            ri, rj = _find(parent, int(i)), _find(parent, int(j))
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([_find(parent, i) for i in range(n)], dtype=np.int64)
    return [np.flatnonzero(roots == r) for r in np.unique(roots)]


def cluster_filter(cloud, voxel: float, radius: float, min_count: int) -> list[np.ndarray]:
    """Downsample, cluster by radius and drop clusters smaller than ``min_count``.

    Clusters come back largest first.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = voxel_downsample(np.asarray(cloud, dtype=float).reshape(-1, 3), voxel)
    clusters = [pts[idx] for idx in radius_clusters(pts, radius) if len(idx) >= min_count]
    return sorted(clusters, key=len, reverse=True)


# --------------------------------------------------------------------------
# association


def _subsample(points: np.ndarray, k: int) -> np.ndarray:
    # evenly spaced over the voxel order, so equal inputs give equal samples
    if len(points) <= k:
        return points
    return points[np.linspace(0, len(points) - 1, k).round().astype(int)]


def statistical_gate(track: ObjectTrack, cluster: np.ndarray, cfg: MapperConfig) -> bool:
    """Per-axis rank-sum test against the latest observation plus the centroid t-test."""
    ref = track.last_points if track.last_points is not None else track.cloud
    a = _subsample(cluster, cfg.test_points)
    b = _subsample(ref, cfg.test_points)
    if len(a) >= 2 and len(b) >= 2:
        p_w = min(wilcoxon_rank_sum(a[:, k], b[:, k]) for k in range(3))
        if p_w < cfg.alpha_w:
            return False
    if len(track.centroids) >= 2:
        hist = np.asarray(track.centroids)
        c = cluster.mean(axis=0)
        p_t = min(t_test_one_sample(hist[:, k], c[k]) for k in range(3))
        if p_t < cfg.alpha_t:
            return False
    return True


def associate(track: ObjectTrack, det: Detection, cam: Camera, consecutive: bool,
              cfg: MapperConfig, clusters: list | None = None) -> str:
    """'merge' when the detection passes the overlap and statistical gates, else 'new'.

    On merge the retained cluster points are appended to the track cloud.
    """
    if det.category != track.category:
        return "new"
    if consecutive and track.last_frame in track.boxes:
        overlap = iou_2d(track.boxes[track.last_frame], det.bbox)
        if overlap < cfg.iou_threshold:
            return "new"
    elif projected_iou(track, cam, det) < cfg.piou_threshold:
        return "new"
    if clusters is None:
        clusters = cluster_filter(det.cloud, cfg.voxel, cfg.radius, cfg.min_count)
    kept = [c for c in clusters if statistical_gate(track, c, cfg)]
    if not kept:
        return "new"
    merge_detection(track, det, np.concatenate(kept), cfg)
    return "merge"


def merge_detection(track: ObjectTrack, det: Detection, points: np.ndarray, cfg: MapperConfig) -> None:
    track.cloud = voxel_downsample(np.concatenate([track.cloud, points]), cfg.cloud_voxel)
    track.boxes[det.frame_id] = det.bbox
    track.centroids.append(points.mean(axis=0))
    track.last_points = points
    if det.camera is not None:
        track.bearings.append(det.camera.center.copy())
    track.views.append((det.frame_id, det.instance))


def new_track(track_id: int, det: Detection, points: np.ndarray, cfg: MapperConfig) -> ObjectTrack:
    tr = ObjectTrack(track_id, det.category, np.zeros((0, 3)))
    merge_detection(tr, det, points, cfg)
    return tr


def bearing_span(track: ObjectTrack) -> float:
    """Angular coverage (radians) of the camera bearings seen from the cloud centre."""
    if len(track.bearings) < 2:
        return 0.0
    c = track.cloud.mean(axis=0)
    d = np.asarray(track.bearings) - c
    ang = np.sort(np.arctan2(d[:, 1], d[:, 0]) % TWO_PI)
    gaps = np.diff(np.concatenate([ang, ang[:1] + TWO_PI]))
    return float(TWO_PI - gaps.max())


def is_ready(track: ObjectTrack, cfg: MapperConfig) -> bool:
    return (len(track.views) >= cfg.min_frames
            and bearing_span(track) >= np.deg2rad(cfg.min_span_deg) - 1e-12)


# --------------------------------------------------------------------------
# state estimation


def convex_hull_2d(pts: np.ndarray) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise, without repeated end point."""
    pts = np.unique(np.asarray(pts, dtype=float), axis=0)
    if len(pts) < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def min_area_yaw(xy: np.ndarray) -> float:
    """Orientation in [0, pi/2) of the minimum-area rectangle; 0 for degenerate input."""
    hull = convex_hull_2d(xy)
    if len(hull) < 3:
        return 0.0
    best, best_yaw = np.inf, 0.0
    edges = np.roll(hull, -1, axis=0) - hull
    for ex, ey in edges:
        if ex == 0 and ey == 0:
            continue
        yaw = np.arctan2(ey, ex) % (np.pi / 2)
        c, s = np.cos(yaw), np.sin(yaw)
        u = hull @ np.array([c, s])
        v = hull @ np.array([-s, c])
        area = (u.max() - u.min()) * (v.max() - v.min())
        if area < best - 1e-15:
            best, best_yaw = area, yaw
    if best <= 1e-18:
        return 0.0
    return float(best_yaw % (np.pi / 2))


def extents_state(cloud: np.ndarray, yaw: float) -> tuple[np.ndarray, np.ndarray]:
    """Centre and size of the cloud's box in the frame rotated by ``yaw``."""
    c, s = np.cos(yaw), np.sin(yaw)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    local = cloud @ R
    lo, hi = local.min(0), local.max(0)
    return R @ (0.5 * (lo + hi)), hi - lo


def coarse_state(track_or_cloud, min_points: int = 3) -> tuple[np.ndarray, float, np.ndarray]:
    cloud = getattr(track_or_cloud, "cloud", track_or_cloud)
    cloud = np.asarray(cloud, dtype=float)
    if len(cloud) < min_points:
        raise ValueError(f"need at least {min_points} points for a state estimate")
    yaw = min_area_yaw(cloud[:, :2])
    pos, size = extents_state(cloud, yaw)
    return pos, yaw, np.maximum(size, 1e-6)


def _rotate_z(points: np.ndarray, gamma: float) -> np.ndarray:
    c, s = np.cos(gamma), np.sin(gamma)
    return points @ np.array([[c, s, 0], [-s, c, 0], [0, 0, 1.0]])


def normalize_rotated(cloud_local: np.ndarray, gamma: float):
    """Rotate the centred cloud by ``gamma`` and map its padded extents onto the unit cube."""
    p = _rotate_z(cloud_local, gamma)
    lo, hi = p.min(0), p.max(0)
    size = np.maximum(hi - lo, 1e-9)
    centre = 0.5 * (lo + hi)
    q = np.clip((p - centre) / (size * (1.0 + BOX_MARGIN)) + 0.5, 0.0, 1.0)
    return q, size, centre


def canonical_yaw(cloud: np.ndarray, grid: pg.DensityGrid, K: int = 72,
                  centre=None, cap: float | None = None) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Yaw sample maximizing the accumulated prior density of the normalized cloud.

    Densities are capped at ``cap`` (default: the grid's iso level) before
    accumulating. Trained grids hold a few voxels at the density clamp, and
    uncapped they outweigh the shape itself. Returns (gamma, size,
    rotated-frame centre, scores). Ties go to the smallest sampled yaw.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    cloud = np.asarray(cloud, dtype=float)
    centre = cloud.mean(0) if centre is None else np.asarray(centre, dtype=float)
    local = cloud - centre
    cap = pg.default_iso(grid) if cap is None else cap
    scored = pg.DensityGrid(np.minimum(grid.values, cap))
    scores = np.empty(K)
    for k in range(K):
        q, _, _ = normalize_rotated(local, TWO_PI * k / K)
        scores[k] = pg.trilerp(scored, q).sum()
    if np.all(scores == scores[0]) and not np.any(grid.values):
        log.warning("prior grid is empty; canonical yaw defaults to 0")
    k_best = int(np.argmax(scores))  # first maximum = smallest yaw
    gamma = TWO_PI * k_best / K
    _, size, c_rot = normalize_rotated(local, gamma)
    return gamma, size, c_rot, scores


def canonicalize(track: ObjectTrack, grid: pg.DensityGrid, K: int = 72) -> None:
    """Set the track's yaw, size and position from the prior grid (object yaw = -gamma)."""
    centre = track.cloud.mean(0)
    gamma, size, c_rot, _ = canonical_yaw(track.cloud, grid, K, centre)
    track.gamma = gamma
    track.yaw = float((-gamma) % TWO_PI)
    track.size = size
    track.position = centre + _rotate_z(c_rot[None], -gamma)[0]


# --------------------------------------------------------------------------
# ICP


@dataclass
class ICPResult:
    transform: np.ndarray
    converged: bool
    errors: list


def best_rigid(src: np.ndarray, dst: np.ndarray, planar: bool = False) -> np.ndarray:
    """Least-squares rotation and translation taking ``src`` onto ``dst`` (SVD)."""
    cs, cd = src.mean(0), dst.mean(0)
    a, b = src - cs, dst - cd
    T = np.eye(4)
    if planar:
        H = a[:, :2].T @ b[:, :2]
        U, _, Vt = np.linalg.svd(H)
        D = np.diag([1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
        R = np.eye(3)
        R[:2, :2] = Vt.T @ D @ U.T
    else:
        H = a.T @ b
        U, _, Vt = np.linalg.svd(H)
        D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
        R = Vt.T @ D @ U.T
    T[:3, :3] = R
    T[:3, 3] = cd - R @ cs
    return T


def icp_refine(reference: np.ndarray, cloud: np.ndarray, max_iters: int = 30, tol: float = 1e-6,
               planar: bool = False) -> ICPResult:
    """Point-to-point ICP moving ``reference`` onto ``cloud``.

    Every cloud point is matched to its nearest transformed reference point, so a
    partial cloud can be aligned against a complete reference. ``errors`` holds
    the mean matched distance before each alignment step and after the last one.
    """
    reference = np.asarray(reference, dtype=float)
    cloud = np.asarray(cloud, dtype=float)
    if len(reference) < 3 or len(cloud) < 3:
        raise ValueError("ICP needs at least 3 points on each side")
    T = np.eye(4)
    cur = reference.copy()
    errors: list[float] = []
    converged = False
    best = (np.inf, T)
    for _ in range(max_iters):
        d, idx = cKDTree(cur).query(cloud)
        err = float(d.mean())
        errors.append(err)
        if err < best[0]:
            best = (err, T.copy())
        if len(errors) >= 2 and errors[-2] - err < tol:
            converged = True
            break
        step = best_rigid(cur[idx], cloud, planar)
        cur = transform_points(step, cur)
        T = step @ T
    else:
        d, _ = cKDTree(cur).query(cloud)
        errors.append(float(d.mean()))
        if errors[-1] < best[0]:
            best = (errors[-1], T.copy())
        converged = len(errors) >= 2 and errors[-2] - errors[-1] < tol
    return ICPResult(best[1], converged, errors)


# --------------------------------------------------------------------------
# mapping loop


@dataclass
class MapObject:
    track: ObjectTrack
    mesh: Mesh | None
    prior_used: bool
    iterations: int
    wall_time: float
    note: str = ""


def _prior_reference(bundle, track: ObjectTrack, n: int, seed: int) -> np.ndarray | None:
    if bundle.mesh.is_empty:
        return None
    pts = sample_surface(bundle.mesh, n, seed)
    return transform_points(track.pose, field_to_canonical(pts, track.size))


def estimate_state(track: ObjectTrack, bundle, cfg: MapperConfig) -> None:
    pos, yaw, size = coarse_state(track)
    track.position, track.yaw, track.size = pos, yaw, size
    if bundle is None or track.category in SYMMETRIC:
        return
    canonicalize(track, bundle.grid, cfg.yaw_samples)
    ref = _prior_reference(bundle, track, cfg.icp_points, cfg.seed + track.id)
    if ref is None:
        return
    res = icp_refine(ref, track.cloud, cfg.icp_iters, cfg.icp_tol, planar=True)
    pose = res.transform @ track.pose
    track.position = pose[:3, 3].copy()
    track.yaw = float(np.arctan2(pose[1, 0], pose[0, 0]) % TWO_PI)


def train_track(track: ObjectTrack, frames: list[Frame], instances: list[np.ndarray],
                bundle, cfg: MapperConfig) -> MapObject:
    t0 = time.perf_counter()
    rng = np.random.default_rng([cfg.seed, track.id])
    if bundle is not None:
        arch, params, grid = bundle.arch, bundle.theta, bundle.grid
    else:
        arch = nf.FieldArch()
        params = nf.init_params(arch, cfg.seed + track.id)
        grid = None
    tcfg = cfg.train.with_(guided=cfg.prior_sampling, grid_res=cfg.grid_res)
    views = []
    for fid, inst in track.views:
        ids = instances[fid]
        fr = frames[fid]
        obj = ids == inst
        views.append(ObjectView.build(Frame(fr.camera, fr.rgb, fr.depth, obj), tcfg.band_width,
                                      exclude=(ids != 0) & ~obj))
    try:
        trainer = Trainer(arch, params, views, track.pose, track.size, tcfg, rng, grid)
    except ValueError as exc:
        return MapObject(track, None, bundle is not None, 0, time.perf_counter() - t0, str(exc))
    trainer.run(cfg.iters_per_object)
    _, mesh = pg.bake_prior(trainer.params, arch, cfg.grid_res)
    if not mesh.is_empty:
        size, pose = track.size, track.pose
        mesh = mesh.transformed(lambda v: transform_points(pose, field_to_canonical(v, size)))
    track.status = "done"
    return MapObject(track, mesh, bundle is not None, cfg.iters_per_object,
                     time.perf_counter() - t0, "" if not mesh.is_empty else "empty mesh")


def run_mapper(frames: list[Frame], instances: list[np.ndarray], labels: dict, priors: dict | None,
               cfg: MapperConfig | None = None) -> list[MapObject]:
    """Associate detections frame by frame, then train every ready object.

    ``instances`` holds per-frame instance-id images and ``labels`` maps an
    instance id to its category. Objects train concurrently, at most
    ``NOMA_THREADS`` at a time.
    """
    cfg = cfg or MapperConfig()
    priors = priors if (priors and cfg.use_priors) else {}
    if len(frames) != len(instances):
        raise ValueError("one instance image per frame is required")
    tracks: list[ObjectTrack] = []
    for fid, (frame, ids) in enumerate(zip(frames, instances)):
        for det in detections_from_frame(fid, frame, ids, labels):
            clusters = cluster_filter(det.cloud, cfg.voxel, cfg.radius, cfg.min_count)
            if not clusters:
                continue
            merged = False
            candidates = sorted((t for t in tracks if t.category == det.category),
                                key=lambda t: -t.last_frame)
            for tr in candidates:
                if tr.last_frame == fid:
                    continue
                consecutive = tr.last_frame == fid - 1
                if associate(tr, det, frame.camera, consecutive, cfg, clusters) == "merge":
                    merged = True
                    break
            if not merged:
                tracks.append(new_track(len(tracks), det, np.concatenate(clusters), cfg))
    tracks = fuse_duplicates(tracks, cfg)
    ready = []
    for tr in tracks:
        if is_ready(tr, cfg):
            tr.status = "ready"
            bundle = priors.get(tr.category)
            tr.prior = bundle
            estimate_state(tr, bundle, cfg)
            ready.append(tr)
    results: list[MapObject] = []
    if ready:
        with ThreadPoolExecutor(max_workers=thread_cap(cfg.threads)) as pool:
            futures = []
            for tr in ready:
                tr.status = "training"
                futures.append(pool.submit(train_track, tr, frames, instances, tr.prior, cfg))
            results = [f.result() for f in futures]
    for tr in tracks:
        if tr.status == "accumulating":
            results.append(MapObject(tr, None, False, 0, 0.0, "not enough viewpoints"))
    return results


def fuse_duplicates(tracks: list[ObjectTrack], cfg: MapperConfig) -> list[ObjectTrack]:
    """Fold a track into an earlier one of the same category when their boxes overlap.

    Overlap is measured against the smaller box, so a partial view that failed
    a statistical gate still joins the object it was cut from.
    """
    out: list[ObjectTrack] = []
    for tr in tracks:
        host = None
        for other in out:
            if other.category == tr.category and _aabb_overlap(other.cloud, tr.cloud) >= cfg.iou_threshold:
                host = other
                break
        if host is None:
            out.append(tr)
            continue
        host.cloud = voxel_downsample(np.concatenate([host.cloud, tr.cloud]), cfg.cloud_voxel)
        for fid, box in tr.boxes.items():
            host.boxes.setdefault(fid, box)
        host.centroids.extend(tr.centroids)
        host.bearings.extend(tr.bearings)
        host.views.extend(v for v in tr.views if v not in host.views)
    for i, tr in enumerate(out):
        tr.id = i
    return out


def _aabb_overlap(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection volume of two axis-aligned boxes over the smaller volume."""
    lo = np.maximum(a.min(0), b.min(0))
    hi = np.minimum(a.max(0), b.max(0))
    inter = float(np.prod(np.clip(hi - lo, 0, None)))
    small = min(float(np.prod(a.max(0) - a.min(0))), float(np.prod(b.max(0) - b.min(0))))
    return inter / small if small > 0 else 0.0
