"""Isosurface extraction, surface sampling and reconstruction metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from skimage import measure


@dataclass
class Mesh:
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def transformed(self, fn) -> "Mesh":
        return Mesh(fn(self.vertices), self.triangles.copy())


def cleanup(mesh: Mesh, min_area: float = 0.0) -> Mesh:
    """Drop zero-area triangles and unreferenced vertices."""
    if mesh.is_empty:
        return Mesh()
    tri = mesh.triangles[mesh.areas() > min_area]
    used, inverse = np.unique(tri.ravel(), return_inverse=True)
    return Mesh(mesh.vertices[used], inverse.reshape(-1, 3))


def extract_isosurface(values: np.ndarray, iso: float, lo, hi) -> Mesh:
    """Isosurface of a vertex-sampled volume spanning the box [lo, hi]."""
    values = np.asarray(values, dtype=float)
    if values.min() > iso or values.max() < iso or values.min() == values.max():
        return Mesh()
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    spacing = (hi - lo) / (np.array(values.shape) - 1)
    try:
        verts, faces, _, _ = measure.marching_cubes(values, level=iso, spacing=tuple(spacing),
                                                    method="lorensen")
    except (ValueError, RuntimeError):
        return Mesh()
    return cleanup(Mesh(verts + lo, faces.astype(np.int64)))


def marching_cubes(grid, iso: float) -> Mesh:
    """Mesh of the ``iso`` level set of a density grid over the unit cube."""
    values = grid.values if hasattr(grid, "values") else np.asarray(grid)
    if values.shape[0] < 2:
        raise ValueError("grid resolution must be at least 2")
    mesh = extract_isosurface(values, iso, np.zeros(3), np.ones(3))
    mesh.vertices = np.clip(mesh.vertices, 0.0, 1.0)
    return mesh


def sample_surface(mesh: Mesh, n: int, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Area-weighted uniform points on the mesh surface."""
    if mesh.is_empty:
        raise ValueError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.areas()
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    v = mesh.vertices[mesh.triangles[tri]]
    return ((1 - r1)[:, None] * v[:, 0] + (r1 * (1 - r2))[:, None] * v[:, 1]
            + (r1 * r2)[:, None] * v[:, 2])


def nn_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return cKDTree(dst).query(src, k=1)[0]


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs two non-empty clouds")
    return 0.5 * (float(nn_distances(a, b).mean()) + float(nn_distances(b, a).mean()))


def completion_ratio(gt: np.ndarray, rec: np.ndarray, tau: float) -> float:
    if tau <= 0:
        raise ValueError("tau must be positive")
    if len(rec) == 0:
        return 0.0
    return float((nn_distances(np.asarray(gt, float), np.asarray(rec, float)) <= tau).mean())


def emd(a: np.ndarray, b: np.ndarray, n_sub: int = 512, seed: int = 0) -> float:
    """Mean matched distance of the optimal one-to-one assignment of equal subsamples."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if n_sub > min(len(a), len(b)):
        raise ValueError("n_sub exceeds cloud size")
    rng = np.random.default_rng(seed)
    sa = a[np.sort(rng.choice(len(a), n_sub, replace=False))]
    rng = np.random.default_rng(seed)
    sb = b[np.sort(rng.choice(len(b), n_sub, replace=False))]
    cost = np.linalg.norm(sa[:, None, :] - sb[None, :, :], axis=-1)
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].mean())


@dataclass
class MeshScores:
    cd: float
    cr: dict
    emd: float | None = None


def mesh_scores(rec: Mesh, gt: Mesh, taus=(0.004, 0.01), n_points: int = 10000,
                seed: int = 0, n_emd: int | None = None) -> MeshScores:
    """CD / CR (and optionally EMD) between two meshes via surface samples."""
    g = sample_surface(gt, n_points, seed)
    if rec.is_empty:
        return MeshScores(float("inf"), {t: 0.0 for t in taus}, None)
    # one seed for both sides, so a mesh scored against itself gives exact zeros
    r = sample_surface(rec, n_points, seed)
    e = emd(r, g, n_emd, seed) if n_emd else None
    return MeshScores(chamfer(r, g), {t: completion_ratio(g, r, t) for t in taus}, e)


# --------------------------------------------------------------------------
# OBJ


def write_obj(mesh: Mesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.astype(float).tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> Mesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return Mesh(np.array(verts, dtype=float).reshape(-1, 3),
                np.array(faces, dtype=np.int64).reshape(-1, 3))
