"""Per-object field optimization shared by meta-learning, search and mapping."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import field as nf
from . import priorgrid as pg
from .render import Frame, RenderError, background_band, batch_loss, rays_from_pixels

BOX_MARGIN = 0.15


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    lr_final: float = 0.1  # learning rate at the end of a run, relative to lr
    n_rays: int = 128
    n_coarse: int = 32
    n_samples: int = 32
    lambda_d: float = 10.0
    lambda_sigma: float = 1e-3
    bg_fraction: float = 0.25
    band_width: int = 8
    eps: float = pg.DEFAULT_EPS
    refresh_every: int = pg.REFRESH_EVERY
    grid_res: int = pg.DEFAULT_RESOLUTION
    guided: bool = False
    stratified: bool = True

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


def object_box(size) -> tuple[np.ndarray, np.ndarray]:
    """Metric box in the object frame holding the normalized field cube."""
    half = 0.5 * np.asarray(size, dtype=float) * (1.0 + BOX_MARGIN)
    return -half, half


@dataclass
class ObjectView:
    """One keyframe prepared for ray sampling."""

    frame: Frame
    obj_pix: np.ndarray
    band_pix: np.ndarray

    @classmethod
    def build(cls, frame: Frame, band_width: int = 8, exclude=None) -> "ObjectView":
        obj = np.flatnonzero(frame.mask & (frame.depth > 0))
        return cls(frame, obj, np.flatnonzero(background_band(frame.mask, band_width, exclude)))


@dataclass
class FitResult:
    params: np.ndarray
    losses: list = field(default_factory=list)
    iter_times: list = field(default_factory=list)
    grid: pg.DensityGrid | None = None


class Trainer:
    """Optimizes one field against the keyframes of one object.

    ``pose`` maps the object frame to the world; ``size`` is the tight object
    extent, which the normalized cube covers with a small margin.
    """

    def __init__(self, arch: nf.FieldArch, params: np.ndarray, views: list[ObjectView],
                 pose: np.ndarray, size, cfg: TrainConfig, rng: np.random.Generator,
                 grid: pg.DensityGrid | None = None):
        views = [v for v in views if v.obj_pix.size]
        if not views:
            raise RenderError("no object pixels")
        nf.check_params(arch, params)
        self.arch = arch
        self.params = np.array(params, dtype=np.float32, copy=True)
        self.views = views
        self.pose = np.asarray(pose, dtype=float)
        self.lo, self.hi = object_box(size)
        self.cfg = cfg
        self.rng = rng
        self.grid = grid if cfg.guided else None
        self.adam = nf.AdamState.fresh(arch.param_count, lr=cfg.lr)
        self.iteration = 0
        self._run_start, self._run_len = 0, 0

    def _schedule(self) -> None:
        if self._run_len > 0 and self.cfg.lr_final != 1.0:
            frac = (self.iteration - self._run_start) / self._run_len
            self.adam.lr = self.cfg.lr * self.cfg.lr_final ** frac

    def step(self) -> float:
        cfg = self.cfg
        self._schedule()
        if cfg.guided and self.iteration > 0 and self.iteration % cfg.refresh_every == 0:
            self.grid = pg.refresh_grid(self.params, self.arch, cfg.grid_res)
        view = self.views[self.rng.integers(len(self.views))]
        rays = rays_from_pixels(view.frame, self.pose, view.obj_pix, view.band_pix, cfg.n_rays,
                                self.rng, cfg.bg_fraction)
        samples = pg.sample_rays(self.grid, rays, self.lo, self.hi, cfg.n_coarse,
                                 cfg.n_samples, cfg.eps, self.rng, cfg.stratified)
        active = ~samples.escaped
        self.iteration += 1
        if not active.any():
            return 0.0
        rays, samples = rays.subset(active), samples.subset(active)
        n = samples.n_samples
        cache = nf.field_forward(self.params, self.arch,
                                 samples.positions.reshape(-1, 3).astype(np.float32))
        terms, d_sigma, d_rgb = batch_loss(
            rays, samples, cache.sigma.reshape(-1, n), cache.rgb.reshape(-1, n, 3),
            cfg.lambda_d, cfg.lambda_sigma, self.rng)
        if not np.isfinite(terms.total):
            raise FloatingPointError("non-finite training loss")
        grads = nf.field_backward(self.params, self.arch, cache, d_sigma.ravel(),
                                  d_rgb.reshape(-1, 3))
        self.adam, self.params = nf.adam_step(self.adam, self.params, grads)
        return terms.total

    def run(self, iters: int, timed: bool = False) -> FitResult:
        """``iters`` steps with the learning rate decayed geometrically to ``lr_final``."""
        res = FitResult(self.params)
        self._run_start, self._run_len = self.iteration, iters
        for _ in range(iters):
            t0 = time.perf_counter()
            res.losses.append(self.step())
            if timed:
                res.iter_times.append(time.perf_counter() - t0)
        res.params = self.params
        res.grid = self.grid
        return res


def fit_task(arch, params, task, iters: int, cfg: TrainConfig, rng, grid=None,
             timed: bool = False) -> FitResult:
    """Fit a field to a reconstruction task using its ground-truth pose and size."""
    views = [ObjectView.build(f, cfg.band_width) for f in task.frames]
    tr = Trainer(arch, params, views, task.gt_pose, task.gt_size, cfg, rng, grid)
    return tr.run(iters, timed)


def field_to_canonical(vertices: np.ndarray, size) -> np.ndarray:
    """Normalized cube coordinates -> metric object frame."""
    lo, hi = object_box(size)
    return lo + np.asarray(vertices) * (hi - lo)
