"""Hash-grid neural field: multi-resolution hash encoding + shallow MLP.

Everything here is plain numpy with hand-written reverse mode. The trainable
state is a single flat float32 vector whose layout is::

    [level 0 table | level 1 table | ... | layer 0 W, b | layer 1 W, b | ...]

Each hash table holds ``2**T`` rows of ``F`` features (row-major), and every
level owns a full table even when its dense grid would fit in fewer rows.
MLP weights are stored ``(fan_in, fan_out)`` row-major followed by the bias.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

DENSITY_ACTIVATIONS = ("exp_clamped", "softplus")
SIGMA_MAX = 1e4
_LOG_SIGMA_MAX = float(np.log(SIGMA_MAX))
HASH_PRIMES = (1, 2654435761, 805459861)
HASH_INIT_RANGE = 1e-4
N_OUT = 4  # raw density + 3 color channels

class FieldNumericError(FloatingPointError):
    """Raised when a field evaluation meets non-finite parameters."""


@dataclass(frozen=True)
class FieldArch:
    hash_levels: int = 8
    features_per_level: int = 2
    log2_table_size: int = 14
    base_resolution: int = 4
    per_level_scale: float = 1.5
    hidden_width: int = 64
    hidden_layers: int = 2
    density_activation: str = "exp_clamped"

    def __post_init__(self):
        for name in ("hash_levels", "features_per_level", "base_resolution",
                     "hidden_width", "hidden_layers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.log2_table_size < 0 or self.log2_table_size > 24:
            raise ValueError("log2_table_size must be within [0, 24]")
        if self.per_level_scale < 1.0:
            raise ValueError("per_level_scale must be >= 1.0")
        if self.density_activation not in DENSITY_ACTIVATIONS:
            raise ValueError(f"unknown density_activation {self.density_activation!r}")

    @property
    def table_size(self) -> int:
        return 1 << self.log2_table_size

    @property
    def encoding_dim(self) -> int:
        return self.hash_levels * self.features_per_level

    @property
    def hash_param_count(self) -> int:
        return self.hash_levels * self.table_size * self.features_per_level

    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.encoding_dim] + [self.hidden_width] * self.hidden_layers + [N_OUT]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def mlp_param_count(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes())

    @property
    def param_count(self) -> int:
        return self.hash_param_count + self.mlp_param_count

    def resolutions(self) -> list[int]:
        return [int(np.floor(self.base_resolution * self.per_level_scale ** l))
                for l in range(self.hash_levels)]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "FieldArch":
        kw = {}
        for f in fields(cls):
            if f.name in d:
                kw[f.name] = type(getattr(cls, f.name))(d[f.name])
        return cls(**kw)


def mlp_slices(arch: FieldArch) -> list[tuple[slice, slice, tuple[int, int]]]:
    """(weight slice, bias slice, weight shape) per layer in the flat vector."""
    out = []
    off = arch.hash_param_count
    for i, o in arch.layer_shapes():
        w = slice(off, off + i * o)
        off += i * o
        b = slice(off, off + o)
        off += o
        out.append((w, b, (i, o)))
    return out


def init_params(arch: FieldArch, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    params = np.zeros(arch.param_count, dtype=np.float32)
    params[: arch.hash_param_count] = rng.uniform(
        -HASH_INIT_RANGE, HASH_INIT_RANGE, arch.hash_param_count
    )
    for w, _, (fan_in, fan_out) in mlp_slices(arch):
        params[w] = rng.standard_normal(fan_in * fan_out) * np.sqrt(2.0 / fan_in)
    return params


def check_params(arch: FieldArch, params: np.ndarray) -> None:
    if params.ndim != 1 or params.shape[0] != arch.param_count:
        raise ValueError(
            f"parameter vector has {params.size} entries, architecture needs {arch.param_count}"
        )


# --------------------------------------------------------------------------
# encoding


def _level_lookup(arch: FieldArch, points: np.ndarray, dtype) -> tuple[np.ndarray, np.ndarray]:
    """Global table rows (L, n, 8) of the cell corners and their weights (L, n, 8).

    Corner ``c`` has offsets ``(c & 1, (c >> 1) & 1, (c >> 2) & 1)`` along x, y, z.
    """
    n = points.shape[0]
    T = arch.table_size
    mask = np.uint64(T - 1)
    idx = np.empty((arch.hash_levels, n, 8), dtype=np.int64)
    wts = np.empty((arch.hash_levels, n, 8), dtype=dtype)
    for l, res in enumerate(arch.resolutions()):
        x = points * dtype(res)
        base = np.clip(np.floor(x).astype(np.int64), 0, res - 1)
        frac = x - base.astype(dtype)
        lo = np.stack([base, base + 1], axis=-1)  # (n, 3, 2)
        side = res + 1
        if side ** 3 <= T:
            row = (lo[:, 2, :, None, None] * (side * side)
                   + lo[:, 1, None, :, None] * side + lo[:, 0, None, None, :])
        else:
            c = lo.astype(np.uint64)
            row = ((c[:, 2, :, None, None] * np.uint64(HASH_PRIMES[2]))
                   ^ (c[:, 1, None, :, None] * np.uint64(HASH_PRIMES[1]))
                   ^ (c[:, 0, None, None, :] * np.uint64(HASH_PRIMES[0]))) & mask
        idx[l] = row.reshape(n, 8).astype(np.int64) + l * T
        w = np.stack([1 - frac, frac], axis=-1)  # (n, 3, 2)
        wts[l] = (w[:, 2, :, None, None] * w[:, 1, None, :, None] * w[:, 0, None, None, :]).reshape(n, 8)
    return idx, wts


def _encode(arch: FieldArch, params: np.ndarray, idx: np.ndarray, wts: np.ndarray) -> np.ndarray:
    F = arch.features_per_level
    L, n, _ = idx.shape
    rows = params[: arch.hash_param_count].reshape(-1, F)[idx]  # (L, n, 8, F)
    feats = np.einsum("lncf,lnc->lnf", rows, wts)
    return feats.transpose(1, 0, 2).reshape(n, L * F)


def hash_encode(point, arch: FieldArch, params: np.ndarray) -> np.ndarray:
    """Encode one point (or a batch) into ``L*F`` features; points are clamped to the cube."""
    p = np.asarray(point, dtype=params.dtype)
    single = p.ndim == 1
    p = np.clip(p.reshape(-1, 3), 0, 1)
    idx, wts = _level_lookup(arch, p, params.dtype.type)
    enc = _encode(arch, params, idx, wts)
    return enc[0] if single else enc


# --------------------------------------------------------------------------
# MLP and activations


def _softplus(x):
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    return (0.5 * (1 + np.tanh(0.5 * x))).astype(x.dtype, copy=False)


class FieldCache(NamedTuple):
    idx: np.ndarray
    wts: np.ndarray
    acts: list  # inputs to each linear layer
    pre: list  # hidden pre-activations
    raw: np.ndarray  # (n, 4) output pre-activations
    sigma: np.ndarray
    rgb: np.ndarray


def field_forward(params: np.ndarray, arch: FieldArch, points: np.ndarray) -> FieldCache:
    check_params(arch, params)
    if not np.all(np.isfinite(params)):
        raise FieldNumericError("non-finite field parameter")
    dtype = params.dtype.type
    pts = np.clip(np.asarray(points, dtype=dtype).reshape(-1, 3), 0, 1)
    idx, wts = _level_lookup(arch, pts, dtype)
    h = _encode(arch, params, idx, wts)
    acts, pre = [h], []
    layers = mlp_slices(arch)
    for k, (ws, bs, shape) in enumerate(layers):
        z = h @ params[ws].reshape(shape) + params[bs]
        if k < len(layers) - 1:
            pre.append(z)
            h = _softplus(z)
            acts.append(h)
        else:
            raw = z
    if arch.density_activation == "exp_clamped":
        sigma = np.exp(np.minimum(raw[:, 0], dtype(_LOG_SIGMA_MAX)))
    else:
        sigma = _softplus(raw[:, 0])
    rgb = _sigmoid(raw[:, 1:])
    return FieldCache(idx, wts, acts, pre, raw, sigma, rgb)


def field_eval(params: np.ndarray, arch: FieldArch, points: np.ndarray,
               chunk: int = 1 << 16) -> tuple[np.ndarray, np.ndarray]:
    """Density (n,) and color (n, 3) for a batch of points in the unit cube."""
    pts = np.asarray(points).reshape(-1, 3)
    if pts.shape[0] <= chunk:
        c = field_forward(params, arch, pts)
        return c.sigma, c.rgb
    sig, rgb = [], []
    for s in range(0, pts.shape[0], chunk):
        c = field_forward(params, arch, pts[s:s + chunk])
        sig.append(c.sigma)
        rgb.append(c.rgb)
    return np.concatenate(sig), np.concatenate(rgb)


def field_backward(params: np.ndarray, arch: FieldArch, cache: FieldCache,
                   d_sigma: np.ndarray, d_rgb: np.ndarray) -> np.ndarray:
    """Exact parameter gradient given upstream gradients on density and color."""
    dtype = params.dtype.type
    grad = np.zeros_like(params)
    d_sigma = np.asarray(d_sigma, dtype=dtype)
    d_rgb = np.asarray(d_rgb, dtype=dtype).reshape(-1, 3)

    raw0 = cache.raw[:, 0]
    if arch.density_activation == "exp_clamped":
        d_raw0 = np.where(raw0 < _LOG_SIGMA_MAX, d_sigma * cache.sigma, 0)
    else:
        d_raw0 = d_sigma * _sigmoid(raw0)
    dz = np.empty_like(cache.raw)
    dz[:, 0] = d_raw0
    dz[:, 1:] = d_rgb * cache.rgb * (1 - cache.rgb)

    layers = mlp_slices(arch)
    for k in range(len(layers) - 1, -1, -1):
        ws, bs, shape = layers[k]
        a = cache.acts[k]
        grad[ws] = (a.T @ dz).ravel()
        grad[bs] = dz.sum(axis=0)
        da = dz @ params[ws].reshape(shape).T
        if k > 0:
            dz = da * _sigmoid(cache.pre[k - 1])
        else:
            d_enc = da

    L, F = arch.hash_levels, arch.features_per_level
    n = d_enc.shape[0]
    d_feat = d_enc.reshape(n, L, F)
    flat = cache.idx.ravel()
    table = grad[: arch.hash_param_count]
    for f in range(F):
        contrib = cache.wts * d_feat[:, :, f].T[:, :, None]  # (L, n, 8)
        table[f::F] = np.bincount(flat, weights=contrib.ravel(), minlength=L * arch.table_size)
    return grad


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, dtype=np.float32) -> "AdamState":
        return cls(np.zeros(n, dtype), np.zeros(n, dtype), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> tuple[AdamState, np.ndarray]:
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("Adam shapes disagree")
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grads
    v = state.beta2 * state.v + (1 - state.beta2) * grads * grads
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new = params - (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(params.dtype)
    new_state = AdamState(m.astype(state.m.dtype), v.astype(state.v.dtype), t,
                          state.lr, state.beta1, state.beta2, state.eps)
    return new_state, new.astype(params.dtype, copy=False)
