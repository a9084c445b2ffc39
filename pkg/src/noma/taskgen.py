"""Synthetic RGB-D reconstruction tasks and multi-object scenes.

Frames are rendered by sphere tracing the shape SDFs. Depth images store the
camera z-depth in meters with 0 marking pixels that hit nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import invert_pose, look_at, transform_dirs, transform_points, yaw_pose
from .meshmetrics import Mesh, extract_isosurface, read_obj, write_obj
from .render import Camera, Frame
from .shapes import CATEGORIES, ShapeSpec, sample_shape, sdf_eval

MAX_STEPS = 128
HIT_EPS = 1e-4
GT_MESH_RES = 96
DEFAULT_RES = 96
DEFAULT_FOV = np.deg2rad(50.0)
LIGHT_DIR = np.array([0.3, -0.4, 0.85]) / np.linalg.norm([0.3, -0.4, 0.85])


def make_intrinsics(res: int = DEFAULT_RES, fov: float = DEFAULT_FOV) -> dict:
    f = 0.5 * res / np.tan(0.5 * fov)
    return {"fx": f, "fy": f, "cx": res / 2, "cy": res / 2, "width": res, "height": res}


@dataclass
class PlacedShape:
    spec: ShapeSpec
    pose: np.ndarray  # world <- canonical

    def sdf_world(self, p):
        return sdf_eval(self.spec, transform_points(invert_pose(self.pose), p))


def sphere_trace(sdf, origins, dirs, t_near, t_far, max_steps=MAX_STEPS, eps=HIT_EPS):
    """March each ray by the SDF bound; returns (t, hit)."""
    t = t_near.copy()
    hit = np.zeros(len(t), bool)
    live = t < t_far
    for _ in range(max_steps):
        idx = np.flatnonzero(live)
        if idx.size == 0:
            break
        d = sdf(origins[idx] + t[idx, None] * dirs[idx])
        done = np.abs(d) < eps
        hit[idx[done]] = True
        t[idx] += np.where(done, 0.0, d)
        live[idx[done]] = False
        live[idx] &= t[idx] < t_far[idx]
    return t, hit


def _sdf_normals(sdf, pts, h=1e-4):
    g = np.zeros_like(pts)
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        g[:, a] = sdf(pts + e) - sdf(pts - e)
    n = np.linalg.norm(g, axis=1, keepdims=True)
    return g / np.where(n > 0, n, 1)


def render_scene(shapes: list[PlacedShape], camera: Camera, light_dir=LIGHT_DIR):
    """RGB (H,W,3), z-depth (H,W) and instance ids (H,W; 0 = background, i+1 = shapes[i])."""
    H, W = camera.height, camera.width
    v, u = np.mgrid[0:H, 0:W]
    d_cam = camera.pixel_dirs(u.ravel() + 0.5, v.ravel() + 0.5)
    dirs = transform_dirs(camera.pose, d_cam)
    origins = np.repeat(camera.center[None], len(dirs), axis=0)

    centers = np.array([s.pose[:3, 3] for s in shapes])
    radii = np.array([s.spec.radius for s in shapes]) * 1.05

    def scene_sdf(p):
        return np.min([s.sdf_world(p) for s in shapes], axis=0)

    # bound marching by the union of bounding spheres
    oc = centers[None, :, :] - origins[:, None, :]
    proj = (oc * dirs[:, None, :]).sum(-1)
    perp2 = (oc ** 2).sum(-1) - proj ** 2
    half = np.sqrt(np.maximum(radii[None] ** 2 - perp2, 0))
    inter = perp2 < radii[None] ** 2
    t0 = np.where(inter, proj - half, np.inf).min(1)
    t1 = np.where(inter, proj + half, -np.inf).max(1)
    t0 = np.maximum(t0, 0.0)
    any_hit = np.isfinite(t0) & (t1 > t0)
    t0 = np.where(any_hit, t0, 0.0)
    t1 = np.where(any_hit, t1, 0.0)

    t, hit = sphere_trace(scene_sdf, origins, dirs, t0, t1)
    depth = np.zeros(H * W)
    inst = np.zeros(H * W, np.uint8)
    rgb = np.zeros((H * W, 3))
    if hit.any():
        pts = origins[hit] + t[hit, None] * dirs[hit]
        per = np.stack([s.sdf_world(pts) for s in shapes])
        owner = per.argmin(0)
        normals = _sdf_normals(scene_sdf, pts)
        shade = 0.25 + 0.75 * np.clip(normals @ np.asarray(light_dir), 0, None)
        albedo = np.array([s.spec.albedo for s in shapes])[owner]
        rgb[hit] = albedo * shade[:, None]
        depth[hit] = t[hit] * d_cam[hit, 2]
        inst[hit] = owner + 1
    return (rgb.reshape(H, W, 3).astype(np.float32), depth.reshape(H, W).astype(np.float32),
            inst.reshape(H, W))


def render_frame(spec: ShapeSpec, camera: Camera, light_dir=LIGHT_DIR, pose=None):
    """Single-object render: (rgb, depth, mask)."""
    pose = np.eye(4) if pose is None else pose
    rgb, depth, inst = render_scene([PlacedShape(spec, pose)], camera, light_dir)
    return rgb, depth, inst > 0


def gt_mesh(spec: ShapeSpec, res: int = GT_MESH_RES) -> Mesh:
    """Ground-truth surface in the canonical frame."""
    half = 0.5 * spec.size + 0.05 * spec.size.max()
    t = [np.linspace(-h, h, res) for h in half]
    X, Y, Z = np.meshgrid(*t, indexing="ij")
    vals = sdf_eval(spec, np.stack([X, Y, Z], -1))
    return extract_isosurface(vals, 0.0, -half, half)


# --------------------------------------------------------------------------


@dataclass
class Task:
    category: str
    seed: int
    spec: ShapeSpec
    frames: list[Frame]
    gt_pose: np.ndarray  # world <- canonical
    gt_size: np.ndarray  # bbox extents in meters
    gt_mesh: Mesh  # canonical frame

    @property
    def cameras(self) -> list[Camera]:
        return [f.camera for f in self.frames]


def ring_cameras(center, radius, count, rng, intr, elev=(15.0, 50.0), look_jitter=0.0):
    az0 = rng.uniform(0, 2 * np.pi)
    cams = []
    for i in range(count):
        az = az0 + 2 * np.pi * i / count + rng.uniform(-0.3, 0.3) * np.pi / count
        el = np.deg2rad(rng.uniform(*elev))
        r = radius * rng.uniform(0.9, 1.1)
        eye = center + r * np.array([np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)])
        target = center + rng.uniform(-look_jitter, look_jitter, 3)
        cams.append(Camera(intr["fx"], intr["fy"], intr["cx"], intr["cy"], intr["width"],
                           intr["height"], look_at(eye, target)))
    return cams


def make_task(category: str, seed: int, frame_count_range=(8, 16), resolution: int = DEFAULT_RES,
              gt_res: int = GT_MESH_RES) -> Task:
    lo, hi = frame_count_range
    if not (4 <= lo <= hi <= 64):
        raise ValueError("frame_count_range must lie within [4, 64]")
    spec = sample_shape(category, seed)
    rng = np.random.default_rng([seed, 7919, CATEGORIES.index(category)])
    n = int(rng.integers(lo, hi + 1))
    position = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), spec.size[2] / 2])
    pose = yaw_pose(position, rng.uniform(0, 2 * np.pi))
    intr = make_intrinsics(resolution)
    dist = spec.radius / np.sin(DEFAULT_FOV / 2) * 1.25
    frames = []
    for cam in ring_cameras(position, dist, n, rng, intr, look_jitter=0.1 * spec.radius):
        rgb, depth, mask = render_frame(spec, cam, pose=pose)
        frames.append(Frame(cam, rgb, depth, mask))
    return Task(category, seed, spec, frames, pose, spec.size.copy(), gt_mesh(spec, gt_res))


def split_seeds(n_train: int, n_test: int, seed: int) -> tuple[list[int], list[int]]:
    if n_train < 1 or n_test < 1:
        raise ValueError("both splits need at least one task")
    perm = np.random.default_rng(seed).permutation(1_000_000)[: n_train + n_test]
    return [int(s) for s in perm[:n_train]], [int(s) for s in perm[n_train:]]


def build_splits(category: str, n_train: int, n_test: int, seed: int, **task_kw):
    tr, te = split_seeds(n_train, n_test, seed)
    return ([make_task(category, s, **task_kw) for s in tr],
            [make_task(category, s, **task_kw) for s in te])


# --------------------------------------------------------------------------
# dataset format


def _fmt(xs) -> str:
    return " ".join(repr(float(x)) for x in np.ravel(xs))


def _parse_kv(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out


def write_task(task: Task, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    cam = task.frames[0].camera
    lines = [
        f"category={task.category}",
        f"seed={task.seed}",
        f"frames={len(task.frames)}",
        f"width={cam.width}",
        f"height={cam.height}",
        f"intrinsics={_fmt([cam.fx, cam.fy, cam.cx, cam.cy])}",
        f"gt_size={_fmt(task.gt_size)}",
        f"gt_pose={_fmt(task.gt_pose)}",
    ]
    lines += [f"camera{i}={_fmt(f.camera.pose)}" for i, f in enumerate(task.frames)]
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")
    (path / "rgb.bin").write_bytes(np.stack([f.rgb for f in task.frames]).astype("<f4").tobytes())
    (path / "depth.bin").write_bytes(np.stack([f.depth for f in task.frames]).astype("<f4").tobytes())
    (path / "mask.bin").write_bytes(np.stack([f.mask for f in task.frames]).astype(np.uint8).tobytes())
    write_obj(task.gt_mesh, path / "gt_mesh.obj")


def read_task(path) -> Task:
    path = Path(path)
    kv = _parse_kv((path / "manifest.txt").read_text())
    n, W, H = int(kv["frames"]), int(kv["width"]), int(kv["height"])
    fx, fy, cx, cy = (float(x) for x in kv["intrinsics"].split())
    rgb = np.frombuffer((path / "rgb.bin").read_bytes(), "<f4").reshape(n, H, W, 3)
    depth = np.frombuffer((path / "depth.bin").read_bytes(), "<f4").reshape(n, H, W)
    mask = np.frombuffer((path / "mask.bin").read_bytes(), np.uint8).reshape(n, H, W)
    frames = []
    for i in range(n):
        pose = np.array([float(x) for x in kv[f"camera{i}"].split()]).reshape(4, 4)
        frames.append(Frame(Camera(fx, fy, cx, cy, W, H, pose), rgb[i].astype(np.float32),
                            depth[i].astype(np.float32), mask[i].astype(bool)))
    category, seed = kv["category"], int(kv["seed"])
    return Task(category, seed, sample_shape(category, seed), frames,
                np.array([float(x) for x in kv["gt_pose"].split()]).reshape(4, 4),
                np.array([float(x) for x in kv["gt_size"].split()]),
                read_obj(path / "gt_mesh.obj"))


def task_dirname(task: Task) -> str:
    return f"{task.category}_{task.seed:06d}"


# --------------------------------------------------------------------------
# multi-object scenes


@dataclass
class Scene:
    shapes: list[PlacedShape]
    frames: list[Frame]
    instance: list[np.ndarray]  # per-frame instance id images
    labels: dict = field(default_factory=dict)  # instance id -> category


def make_scene(categories, seed: int, n_frames: int = 24, resolution: int = DEFAULT_RES,
               spacing: float = 0.45) -> Scene:
    """Objects spread on the ground, cameras on a ring around the group."""
    rng = np.random.default_rng([seed, 104729])
    shapes = []
    k = len(categories)
    for i, cat in enumerate(categories):
        spec = sample_shape(cat, int(rng.integers(0, 1_000_000)))
        ang = 2 * np.pi * i / k + rng.uniform(-0.2, 0.2)
        r = spacing if k > 1 else 0.0
        pos = np.array([r * np.cos(ang), r * np.sin(ang), spec.size[2] / 2])
        shapes.append(PlacedShape(spec, yaw_pose(pos, rng.uniform(0, 2 * np.pi))))
    center = np.array([0.0, 0.0, 0.1])
    intr = make_intrinsics(resolution)
    extent = max(np.linalg.norm(s.pose[:2, 3]) + s.spec.radius for s in shapes)
    dist = extent / np.sin(DEFAULT_FOV / 2) * 1.15
    cams = ring_cameras(center, dist, n_frames, rng, intr, elev=(25.0, 45.0))
    order = np.argsort([np.arctan2(c.center[1], c.center[0]) % (2 * np.pi) for c in cams])
    frames, inst = [], []
    for j in order:
        rgb, depth, ids = render_scene(shapes, cams[j])
        frames.append(Frame(cams[j], rgb, depth, ids > 0))
        inst.append(ids)
    return Scene(shapes, frames, inst, {i + 1: s.spec.category for i, s in enumerate(shapes)})


def write_scene(scene: Scene, path) -> None:
    path = Path(path)
    (path / "frames").mkdir(parents=True, exist_ok=True)
    (path / "gt").mkdir(exist_ok=True)
    cam = scene.frames[0].camera
    (path / "intrinsics.txt").write_text(
        f"fx={_fmt(cam.fx)}\nfy={_fmt(cam.fy)}\ncx={_fmt(cam.cx)}\ncy={_fmt(cam.cy)}\n"
        f"width={cam.width}\nheight={cam.height}\nframes={len(scene.frames)}\n")
    (path / "labels.txt").write_text("".join(f"{i}={c}\n" for i, c in sorted(scene.labels.items())))
    for j, (fr, ids) in enumerate(zip(scene.frames, scene.instance)):
        stem = path / "frames" / f"{j:06d}"
        (stem.parent / f"{stem.name}_pose.txt").write_text(_fmt(fr.camera.pose) + "\n")
        (stem.parent / f"{stem.name}_rgb.bin").write_bytes(fr.rgb.astype("<f4").tobytes())
        (stem.parent / f"{stem.name}_depth.bin").write_bytes(fr.depth.astype("<f4").tobytes())
        (stem.parent / f"{stem.name}_inst.bin").write_bytes(ids.astype(np.uint8).tobytes())
    for i, s in enumerate(scene.shapes, start=1):
        name = f"obj{i}_{s.spec.category}"
        write_obj(gt_mesh(s.spec).transformed(lambda v, T=s.pose: transform_points(T, v)),
                  path / "gt" / f"{name}.obj")
        (path / "gt" / f"{name}.state").write_text(
            f"pose={_fmt(s.pose)}\nsize={_fmt(s.spec.size)}\n")


@dataclass
class SceneData:
    """A scene as read back from disk (ground truth optional)."""

    frames: list[Frame]
    instance: list[np.ndarray]
    labels: dict
    gt: dict = field(default_factory=dict)  # object name -> (category, pose, size, mesh path)


def read_scene(path) -> SceneData:
    path = Path(path)
    try:
        intr = _parse_kv((path / "intrinsics.txt").read_text())
        labels = {int(k): v for k, v in _parse_kv((path / "labels.txt").read_text()).items()}
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"scene is missing {Path(exc.filename).name}") from None
    fx, fy, cx, cy = (float(intr[k]) for k in ("fx", "fy", "cx", "cy"))
    W, H, n = int(intr["width"]), int(intr["height"]), int(intr["frames"])
    frames, inst = [], []
    for j in range(n):
        stem = path / "frames" / f"{j:06d}"
        pose_file = stem.parent / f"{stem.name}_pose.txt"
        if not pose_file.exists():
            raise FileNotFoundError(f"frame {j:06d} has no pose file ({pose_file.name})")
        pose = np.array([float(x) for x in pose_file.read_text().split()]).reshape(4, 4)
        blobs = {}
        for kind in ("rgb", "depth", "inst"):
            f = stem.parent / f"{stem.name}_{kind}.bin"
            if not f.exists():
                raise FileNotFoundError(f"frame {j:06d} has no {kind} file ({f.name})")
            blobs[kind] = f.read_bytes()
        rgb = np.frombuffer(blobs["rgb"], "<f4").reshape(H, W, 3).astype(np.float32)
        depth = np.frombuffer(blobs["depth"], "<f4").reshape(H, W).astype(np.float32)
        ids = np.frombuffer(blobs["inst"], np.uint8).reshape(H, W).copy()
        frames.append(Frame(Camera(fx, fy, cx, cy, W, H, pose), rgb, depth, ids > 0))
        inst.append(ids)
    gt = {}
    gdir = path / "gt"
    if gdir.is_dir():
        for st in sorted(gdir.glob("*.state")):
            kv = _parse_kv(st.read_text())
            name = st.stem
            gt[name] = (name.split("_", 1)[1],
                        np.array([float(x) for x in kv["pose"].split()]).reshape(4, 4),
                        np.array([float(x) for x in kv["size"].split()]),
                        gdir / f"{name}.obj")
    return SceneData(frames, inst, labels, gt)
