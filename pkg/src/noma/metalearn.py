"""Reptile meta-learning of category-level initial field parameters."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import field as nf
from .training import TrainConfig, fit_task

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetaConfig:
    N: int = 300  # meta steps
    q: int = 40  # inner iterations per task
    eta: float = 1e-2  # inner learning rate
    beta: float = 0.1  # meta step size
    rays_per_iter: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.N < 0 or self.q < 1 or self.eta <= 0 or not (0 < self.beta <= 1):
            raise ValueError(f"invalid meta-learning config {self}")


def inner_adapt(theta: np.ndarray, arch: nf.FieldArch, task, q: int, eta: float,
                rng: np.random.Generator, cfg: TrainConfig | None = None,
                losses: list | None = None, times: list | None = None) -> np.ndarray:
    """``q`` Adam steps at constant rate ``eta`` on one task, starting from ``theta``.

    ``theta`` itself is left untouched; a fresh optimizer state is used.
    """
    cfg = (cfg or TrainConfig()).with_(lr=eta, lr_final=1.0, guided=False)
    res = fit_task(arch, theta, task, q, cfg, rng, timed=times is not None)
    if losses is not None:
        losses.extend(res.losses)
    if times is not None:
        times.extend(res.iter_times)
    return res.params


def reptile_update(theta_meta: np.ndarray, theta_adapted: np.ndarray, beta: float) -> np.ndarray:
    if theta_meta.shape != theta_adapted.shape:
        raise ValueError("parameter vectors differ in length")
    # interpolation form keeps both endpoints exact
    return ((1.0 - beta) * theta_meta + beta * theta_adapted).astype(theta_meta.dtype)


def meta_train(tasks: list, arch: nf.FieldArch, cfg: MetaConfig,
               train_cfg: TrainConfig | None = None, theta0: np.ndarray | None = None,
               step_times: list | None = None) -> np.ndarray:
    """Meta-learned initialization after ``cfg.N`` single-task Reptile steps.

    Tasks are visited round-robin over a shuffle that is redrawn every epoch.
    """
    if not tasks:
        raise ValueError("meta-training needs at least one task")
    inner = (train_cfg or TrainConfig()).with_(n_rays=cfg.rays_per_iter)
    rng = np.random.default_rng(cfg.seed)
    theta = nf.init_params(arch, cfg.seed) if theta0 is None else np.array(theta0, np.float32)
    order: list[int] = []
    for i in range(cfg.N):
        if not order:
            order = list(rng.permutation(len(tasks)))
        task = tasks[order.pop(0)]
        losses: list[float] = []
        adapted = inner_adapt(theta, arch, task, cfg.q, cfg.eta, rng, inner, losses, step_times)
        if not np.all(np.isfinite(adapted)):
            raise FloatingPointError("inner adaptation diverged")
        theta = reptile_update(theta, adapted, cfg.beta)
        if (i + 1) % 50 == 0:
            log.info("meta step %d/%d, last inner loss %.4f", i + 1, cfg.N, losses[-1])
    return theta
