"""Parametric CSG shape families used as stand-ins for object datasets.

Every shape is expressed in its canonical frame: z up, bounding box centred
at the origin, lengths in meters. Canonical orientation per category:

* mug: handle on the +y side
* laptop: screen hinged at +x, so +x points into the screen
* chair: backrest on the -x side, seat facing +x
* book: lying flat, long side along y
* ball: sphere
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CATEGORIES = ("mug", "chair", "laptop", "book", "ball")
SYMMETRIC = {"ball"}

_CATEGORY_SALT = {c: i + 1 for i, c in enumerate(CATEGORIES)}


# --------------------------------------------------------------------------
# primitives (all exact or conservative, 1-Lipschitz)


def sd_sphere(p, r):
    return np.linalg.norm(p, axis=-1) - r


def sd_box(p, half):
    q = np.abs(p) - half
    return np.linalg.norm(np.maximum(q, 0), axis=-1) + np.minimum(q.max(axis=-1), 0)


def sd_cylinder_z(p, r, z0, z1):
    """Capped cylinder around the z axis spanning [z0, z1]."""
    dxy = np.linalg.norm(p[..., :2], axis=-1) - r
    dz = np.abs(p[..., 2] - 0.5 * (z0 + z1)) - 0.5 * (z1 - z0)
    d = np.stack([dxy, dz], -1)
    return np.linalg.norm(np.maximum(d, 0), axis=-1) + np.minimum(d.max(axis=-1), 0)


def sd_torus_x(p, center, major, minor):
    """Torus whose ring lies in the y-z plane (axis along x)."""
    q = p - center
    ring = np.linalg.norm(q[..., 1:], axis=-1) - major
    return np.sqrt(ring ** 2 + q[..., 0] ** 2) - minor


def sd_capsule_z(p, center_xy, z0, z1, r):
    q = p.copy()
    q[..., 0] -= center_xy[0]
    q[..., 1] -= center_xy[1]
    q[..., 2] -= np.clip(q[..., 2], z0, z1)
    return np.linalg.norm(q, axis=-1) - r


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ShapeSpec:
    category: str
    params: dict
    albedo: tuple
    offset: tuple = field(default=(0.0, 0.0, 0.0))  # raw-frame bbox centre
    extent: tuple = field(default=(1.0, 1.0, 1.0))  # bbox size

    @property
    def size(self) -> np.ndarray:
        return np.asarray(self.extent, dtype=float)

    @property
    def radius(self) -> float:
        return float(0.5 * np.linalg.norm(self.size))


def _u(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def _raw_mug(p, P):
    R, H, w, fl = P["radius"], P["height"], P["wall"], P["floor"]
    outer = sd_cylinder_z(p, R, 0.0, H)
    cavity = sd_cylinder_z(p, R - w, fl, H + 0.05)
    body = np.maximum(outer, -cavity)
    return np.minimum(body, mug_handle(p, P))


def mug_handle(p, P):
    R, H = P["radius"], P["height"]
    torus = sd_torus_x(p, np.array([0.0, R, 0.5 * H]), P["handle_major"], P["handle_minor"])
    return np.maximum(torus, -sd_cylinder_z(p, R, -1.0, H + 1.0))


def _raw_book(p, P):
    return sd_box(p, np.array([P["width"], P["length"], P["thickness"]]) / 2)


def _raw_ball(p, P):
    return sd_sphere(p, P["radius"])


def _raw_laptop(p, P):
    d, wid, t, ts, ang = P["depth"], P["width"], P["base_t"], P["screen_t"], P["open_angle"]
    base = sd_box(p - np.array([0.0, 0.0, t / 2]), np.array([d / 2, wid / 2, t / 2]))
    # screen local frame: origin at hinge, u along the panel (away from hinge)
    hinge = np.array([d / 2, 0.0, t])
    q = p - hinge
    c, s = np.cos(ang), np.sin(ang)
    # panel direction in x-z plane: rotate -x by (pi - ang) upward
    u_dir = np.array([-c, 0.0, s])
    n_dir = np.array([s, 0.0, c])
    qu = q @ u_dir
    qn = q @ n_dir
    local = np.stack([qu - d / 2, q[..., 1], qn + ts / 2], -1)
    screen = sd_box(local, np.array([d / 2, wid / 2, ts / 2]))
    return np.minimum(base, screen)


def _raw_chair(p, P):
    sw, sd_, sh, st = P["seat_w"], P["seat_d"], P["seat_h"], P["seat_t"]
    bh, bt, lr = P["back_h"], P["back_t"], P["leg_r"]
    seat = sd_box(p - np.array([0.0, 0.0, sh - st / 2]), np.array([sd_ / 2, sw / 2, st / 2]))
    back = sd_box(p - np.array([-sd_ / 2 + bt / 2, 0.0, sh + bh / 2]),
                  np.array([bt / 2, sw / 2, bh / 2]))
    d = np.minimum(seat, back)
    for sx in (-1, 1):
        for sy in (-1, 1):
            cxy = (sx * (sd_ / 2 - lr * 1.5), sy * (sw / 2 - lr * 1.5))
            d = np.minimum(d, sd_capsule_z(p, cxy, lr, sh - st / 2, lr))
    return d


_RAW = {"mug": _raw_mug, "book": _raw_book, "ball": _raw_ball,
        "laptop": _raw_laptop, "chair": _raw_chair}


def _raw_bounds(category: str, P: dict) -> tuple[np.ndarray, np.ndarray]:
    if category == "mug":
        R, H = P["radius"], P["height"]
        ymax = max(R, R + P["handle_major"] + P["handle_minor"])
        zlo = min(0.0, 0.5 * H - P["handle_major"] - P["handle_minor"])
        zhi = max(H, 0.5 * H + P["handle_major"] + P["handle_minor"])
        xh = max(R, P["handle_minor"])
        return np.array([-xh, -R, zlo]), np.array([xh, ymax, zhi])
    if category == "book":
        h = np.array([P["width"], P["length"], P["thickness"]]) / 2
        return -h, h
    if category == "ball":
        r = P["radius"]
        return -np.full(3, r), np.full(3, r)
    if category == "laptop":
        d, wid, t, ts, ang = P["depth"], P["width"], P["base_t"], P["screen_t"], P["open_angle"]
        c, s = np.cos(ang), np.sin(ang)
        hinge = np.array([d / 2, 0.0, t])
        u_dir = np.array([-c, 0.0, s])
        n_dir = np.array([s, 0.0, c])
        corners = [hinge + a * d * u_dir + b * ts * n_dir for a in (0, 1) for b in (0, -1)]
        xs = [c_[0] for c_ in corners] + [-d / 2, d / 2]
        zs = [c_[2] for c_ in corners] + [0.0, t]
        return np.array([min(xs), -wid / 2, min(zs)]), np.array([max(xs), wid / 2, max(zs)])
    if category == "chair":
        sw, sd_, sh, bh = P["seat_w"], P["seat_d"], P["seat_h"], P["back_h"]
        return np.array([-sd_ / 2, -sw / 2, 0.0]), np.array([sd_ / 2, sw / 2, sh + bh])
    raise KeyError(category)


def _draw_params(category: str, rng: np.random.Generator) -> dict:
    if category == "mug":
        R = _u(rng, 0.035, 0.055)
        return {"radius": R, "height": _u(rng, 0.08, 0.12), "wall": _u(rng, 0.006, 0.01),
                "floor": _u(rng, 0.008, 0.014), "handle_major": _u(rng, 0.022, 0.03),
                "handle_minor": _u(rng, 0.006, 0.009)}
    if category == "book":
        return {"width": _u(rng, 0.12, 0.18), "length": _u(rng, 0.19, 0.26),
                "thickness": _u(rng, 0.025, 0.05)}
    if category == "ball":
        return {"radius": _u(rng, 0.08, 0.13)}
    if category == "laptop":
        return {"depth": _u(rng, 0.2, 0.26), "width": _u(rng, 0.28, 0.36),
                "base_t": _u(rng, 0.015, 0.025), "screen_t": _u(rng, 0.008, 0.014),
                "open_angle": _u(rng, np.deg2rad(95), np.deg2rad(120))}
    if category == "chair":
        return {"seat_w": _u(rng, 0.38, 0.48), "seat_d": _u(rng, 0.38, 0.46),
                "seat_h": _u(rng, 0.4, 0.48), "seat_t": _u(rng, 0.04, 0.06),
                "back_h": _u(rng, 0.3, 0.45), "back_t": _u(rng, 0.04, 0.06),
                "leg_r": _u(rng, 0.018, 0.028)}
    raise KeyError(category)


def sample_shape(category: str, seed: int) -> ShapeSpec:
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}")
    rng = np.random.default_rng([seed, _CATEGORY_SALT[category]])
    P = _draw_params(category, rng)
    albedo = tuple(float(x) for x in rng.uniform(0.2, 0.9, 3))
    lo, hi = _raw_bounds(category, P)
    return ShapeSpec(category, P, albedo, tuple((lo + hi) / 2), tuple(hi - lo))


def sdf_eval(spec: ShapeSpec, p) -> np.ndarray:
    """Signed distance in the canonical (bbox-centred) frame."""
    p = np.asarray(p, dtype=float)
    return _RAW[spec.category](p + np.asarray(spec.offset), spec.params)


def handle_sdf(spec: ShapeSpec, p) -> np.ndarray:
    if spec.category != "mug":
        raise ValueError("only mugs have a handle")
    return mug_handle(np.asarray(p, dtype=float) + np.asarray(spec.offset), spec.params)
