"""Prior density grid: lookup, per-ray termination CDF and guided ray sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import field as nf
from .meshmetrics import Mesh, extract_isosurface, marching_cubes
from .render import RayBatch, RaySampleSet, positions_at, uniform_samples

DEFAULT_RESOLUTION = 64
DEFAULT_EPS = 1e-4
REFRESH_EVERY = 50
ISO_FLOOR = 5.0


@dataclass(frozen=True)
class DensityGrid:
    """Vertex-centred densities; ``values[i, j, k]`` sits at ``(i, j, k) / (R - 1)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or len(set(v.shape)) != 1 or v.shape[0] < 2:
            raise ValueError("density grid must be R x R x R with R >= 2")
        if not np.all(np.isfinite(v)) or v.min() < 0:
            raise ValueError("density grid values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, R: int = DEFAULT_RESOLUTION) -> "DensityGrid":
        return cls(np.zeros((R, R, R), np.float32))

    def to_bytes(self) -> bytes:
        R = self.resolution
        return (np.uint32(R).tobytes()
                + self.values.astype("<f4").ravel(order="F").tobytes())

    @classmethod
    def from_bytes(cls, buf: bytes) -> "DensityGrid":
        if len(buf) < 4:
            raise ValueError("truncated grid header")
        R = int(np.frombuffer(buf[:4], "<u4")[0])
        need = 4 + 4 * R ** 3
        if len(buf) != need:
            raise ValueError(f"grid payload has {len(buf)} bytes, expected {need}")
        vals = np.frombuffer(buf[4:], "<f4").reshape((R, R, R), order="F")
        return cls(vals.astype(np.float32))


def trilerp(grid: DensityGrid, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    shape = p.shape[:-1]
    p = np.clip(p.reshape(-1, 3), 0.0, 1.0)
    R = grid.resolution
    x = p * (R - 1)
    i0 = np.clip(np.floor(x).astype(np.int64), 0, R - 2)
    f = x - i0
    v = grid.values
    out = np.zeros(len(p))
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1 - f[:, 2]
                out += wx * wy * wz * v[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
    return out.reshape(shape)


def build_ray_cdf(grid: DensityGrid, samples: RaySampleSet, eps: float = DEFAULT_EPS):
    """Termination probabilities of the grid along each ray, their CDF and escape flags.

    Escaped rows (box miss or total termination below ``eps``) carry a NaN CDF.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    sigma = trilerp(grid, samples.positions)
    alpha = 1.0 - np.exp(-sigma * samples.optical_deltas)
    T_before = np.cumprod(np.concatenate([np.ones_like(alpha[:, :1]), 1 - alpha[:, :-1]], 1), 1)
    w = alpha * T_before
    total = w.sum(axis=1)
    escaped = samples.escaped | (total < eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        cdf = np.cumsum(w, axis=1) / total[:, None]
    cdf[escaped] = np.nan
    cdf[~escaped, -1] = 1.0
    return w, cdf, escaped


def inverse_transform_sample(samples: RaySampleSet, cdf: np.ndarray, n: int,
                             rng: np.random.Generator) -> RaySampleSet:
    """Draw ``n`` depths per ray from the piecewise-uniform bins of a discrete CDF.

    Bin ``i`` is the segment its termination probability was computed over:
    from sample ``i`` to sample ``i + 1`` (the last one ends at the far side of
    the box). Depths come back sorted; each delta reaches to the next sample
    (the last one to the far end of the ray's box span).
    """
    Rn, Nc = cdf.shape
    u = rng.random((Rn, n))
    bins = (cdf[:, None, :] < u[:, :, None]).sum(axis=-1)
    bins = np.minimum(bins, Nc - 1)
    starts = samples.depths
    ends = np.concatenate([samples.depths[:, 1:], samples.t_far[:, None]], axis=1)
    lo = np.take_along_axis(starts, bins, axis=1)
    hi = np.take_along_axis(ends, bins, axis=1)
    depths = lo + rng.random((Rn, n)) * (hi - lo)
    depths.sort(axis=1)
    deltas = np.empty_like(depths)
    deltas[:, :-1] = np.diff(depths, axis=1)
    deltas[:, -1] = samples.t_far - depths[:, -1]
    deltas = np.maximum(deltas, 1e-9)
    return RaySampleSet(np.empty((Rn, n, 3)), depths, deltas, np.zeros(Rn, bool),
                        samples.scale.copy(), samples.t_near.copy(), samples.t_far.copy())


def sample_rays(grid: DensityGrid | None, rays: RayBatch, lo, hi, n_coarse: int = 32,
                n_fine: int = 32, eps: float = DEFAULT_EPS,
                rng: np.random.Generator | None = None, stratified: bool = False) -> RaySampleSet:
    """Grid-guided samples where the grid stops the ray, uniform samples elsewhere.

    ``stratified`` jitters the uniform samples (training); the coarse pass that
    builds the CDF always uses interval midpoints.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    fallback = uniform_samples(rays, lo, hi, n_fine, rng if stratified else None)
    if grid is None:
        return fallback
    coarse = uniform_samples(rays, lo, hi, n_coarse)
    _, cdf, escaped = build_ray_cdf(grid, coarse, eps)
    guided = ~escaped
    if not guided.any():
        return fallback
    fine = inverse_transform_sample(coarse.subset(guided), cdf[guided], n_fine, rng)
    out = fallback
    out.depths[guided] = fine.depths
    out.deltas[guided] = fine.deltas
    out.positions[guided] = positions_at(rays.origins[guided], rays.dirs[guided],
                                         fine.depths, lo, hi)
    return out


def sample_ray(grid, ray, lo, hi, n_coarse=32, n_fine=32, eps=DEFAULT_EPS, rng=None):
    """Single-ray convenience wrapper around :func:`sample_rays`."""
    return sample_rays(grid, RayBatch.from_rays([ray]), lo, hi, n_coarse, n_fine, eps, rng)


def grid_points(R: int) -> np.ndarray:
    """Vertex positions in x-fastest order, shape (R**3, 3)."""
    t = np.linspace(0.0, 1.0, R)
    z, y, x = np.meshgrid(t, t, t, indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def refresh_grid(params: np.ndarray, arch: nf.FieldArch, R: int = DEFAULT_RESOLUTION) -> DensityGrid:
    sigma, _ = nf.field_eval(params, arch, grid_points(R).astype(params.dtype))
    return DensityGrid(sigma.reshape((R, R, R), order="F"))


def default_iso(grid: DensityGrid, floor: float = ISO_FLOOR) -> float:
    """Density at which one grid cell is half opaque, capped at half the grid
    maximum and never below ``floor``.

    Half the maximum alone is useless once densities saturate at the clamp;
    the cap keeps diffuse, under-trained fields from baking to nothing.
    """
    cell = float(np.log(2.0)) * (grid.resolution - 1)
    return max(min(cell, 0.5 * float(grid.values.max())), floor)


def bake_prior(params: np.ndarray, arch: nf.FieldArch, R: int = DEFAULT_RESOLUTION,
               iso: float | None = None, iso_floor: float = ISO_FLOOR) -> tuple[DensityGrid, Mesh]:
    """Density grid and level-set mesh of a field, both in the unit cube.

    Space outside the object box is empty, so the grid is closed with a layer
    of zeros before extraction; a field saturated up to the box walls still
    yields a surface there.
    """
    grid = refresh_grid(params, arch, R)
    level = default_iso(grid, iso_floor) if iso is None else iso
    if level <= 0:
        return grid, marching_cubes(grid, level)
    pad = 1.0 / (R - 1)
    mesh = extract_isosurface(np.pad(grid.values, 1), level, np.full(3, -pad), np.full(3, 1 + pad))
    mesh.vertices = np.clip(mesh.vertices, 0.0, 1.0)
    return grid, mesh
