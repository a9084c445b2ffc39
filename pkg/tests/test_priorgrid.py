from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from noma import field as nf
from noma import priorgrid as pg
from noma import render as rd

LO, HI = np.full(3, -0.5), np.full(3, 0.5)


def zray(x=0.0, y=0.0) -> rd.RayBatch:
    """Ray along +z through the unit box centred at the origin."""
    return rd.RayBatch(np.array([[x, y, -1.5]]), np.array([[0.0, 0.0, 1.0]]), np.ones(1, bool),
                       np.zeros((1, 3)), np.full(1, np.nan))


def linear_grid(R=9) -> pg.DensityGrid:
    t = np.linspace(0, 1, R)
    x, y, z = np.meshgrid(t, t, t, indexing="ij")
    return pg.DensityGrid(2 * x + 3 * y + 5 * z)


def constant_field(arch: nf.FieldArch, sigma: float) -> np.ndarray:
    """Parameters whose density is ``sigma`` everywhere (zero weights, output bias only)."""
    p = np.zeros(arch.param_count, np.float32)
    _, b, _ = nf.mlp_slices(arch)[-1]
    p[b.start] = np.log(sigma)
    return p


def test_grid_validation():
    with pytest.raises(ValueError):
        pg.DensityGrid(np.zeros((1, 1, 1)))
    with pytest.raises(ValueError):
        pg.DensityGrid(-np.ones((3, 3, 3)))
    with pytest.raises(ValueError):
        pg.DensityGrid(np.zeros((3, 3, 4)))


def test_trilerp_at_vertex():
    rng = np.random.default_rng(0)
    g = pg.DensityGrid(rng.random((5, 5, 5)))
    assert pg.trilerp(g, [0.25, 0.5, 1.0]) == pytest.approx(g.values[1, 2, 4])


def test_trilerp_reproduces_linear_field():
    g = linear_grid()
    p = np.random.default_rng(1).random((100, 3))
    assert np.allclose(pg.trilerp(g, p), 2 * p[:, 0] + 3 * p[:, 1] + 5 * p[:, 2], atol=1e-5)


def test_trilerp_constant():
    g = pg.DensityGrid(np.full((4, 4, 4), 3.5))
    assert np.allclose(pg.trilerp(g, np.random.default_rng(2).random((20, 3))), 3.5)


def test_trilerp_continuity_across_cells():
    rng = np.random.default_rng(3)
    R = 8
    g = pg.DensityGrid(rng.random((R, R, R)))
    for _ in range(100):
        p = rng.random(3)
        axis = rng.integers(3)
        p[axis] = rng.integers(1, R - 1) / (R - 1)
        a, b = p.copy(), p.copy()
        a[axis] -= 1e-6
        b[axis] += 1e-6
        assert abs(pg.trilerp(g, a) - pg.trilerp(g, b)) < 1e-3


def test_grid_bytes_round_trip_x_fastest():
    v = np.arange(27, dtype=np.float32).reshape(3, 3, 3)
    g = pg.DensityGrid(v)
    buf = g.to_bytes()
    assert np.frombuffer(buf[:4], "<u4")[0] == 3
    # x-fastest: the second stored value is values[1, 0, 0]
    assert np.frombuffer(buf[4:], "<f4")[1] == v[1, 0, 0]
    assert np.array_equal(pg.DensityGrid.from_bytes(buf).values, v)


def test_zero_grid_escapes():
    s = rd.uniform_samples(zray(), LO, HI, 32)
    _, cdf, esc = pg.build_ray_cdf(pg.DensityGrid.zeros(8), s, 1e-4)
    assert esc[0]


def test_constant_grid_geometric_weights():
    # four samples, each 0.1 long in normalized units
    rays = zray()
    s = rd.uniform_samples(rays, np.array([-0.5, -0.5, -0.2]), np.array([0.5, 0.5, 0.2]), 4)
    s.scale[:] = 1.0  # densities per metre here: delta 0.1 each
    g = pg.DensityGrid(np.ones((4, 4, 4)))
    w, cdf, esc = pg.build_ray_cdf(g, s, 1e-4)
    rho = 1 - np.exp(-0.1)
    expected = rho * (1 - rho) ** np.arange(4)
    assert not esc[0]
    assert np.allclose(w[0], expected, rtol=1e-9)
    assert np.allclose(cdf[0], np.cumsum(expected) / expected.sum())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_cdf_monotone_and_escape_rule(seed):
    rng = np.random.default_rng(seed)
    g = pg.DensityGrid(rng.exponential(rng.uniform(0, 3), (6, 6, 6)) * (rng.random((6, 6, 6)) < 0.3))
    s = rd.uniform_samples(zray(*rng.uniform(-0.4, 0.4, 2)), LO, HI, 16)
    w, cdf, esc = pg.build_ray_cdf(g, s, 1e-4)
    assert esc[0] == (w[0].sum() < 1e-4)
    if not esc[0]:
        assert np.all(np.diff(cdf[0]) >= -1e-12)
        assert cdf[0, -1] == pytest.approx(1.0, abs=1e-6)


def test_all_mass_in_one_bin():
    s = rd.uniform_samples(zray(), LO, HI, 8)
    cdf = np.array([[0, 0, 1, 1, 1, 1, 1, 1.0]])
    out = pg.inverse_transform_sample(s, cdf, 500, np.random.default_rng(0))
    # bin 2 runs from the third coarse sample to the fourth
    assert np.all((out.depths >= s.depths[0, 2]) & (out.depths <= s.depths[0, 3]))


def test_inverse_transform_outputs_sorted_in_span_and_seeded():
    rng = np.random.default_rng(4)
    s = rd.uniform_samples(zray(0.1, -0.2), LO, HI, 16)
    w = rng.random(16)
    cdf = (np.cumsum(w) / w.sum())[None]
    a = pg.inverse_transform_sample(s, cdf, 64, np.random.default_rng(9))
    b = pg.inverse_transform_sample(s, cdf, 64, np.random.default_rng(9))
    assert np.array_equal(a.depths, b.depths)
    assert np.all(np.diff(a.depths[0]) >= 0)
    assert np.all((a.depths >= s.t_near[0]) & (a.depths <= s.t_far[0]))
    assert np.all(a.deltas > 0)


def test_inverse_transform_chi_square():
    rng = np.random.default_rng(5)
    s = rd.uniform_samples(zray(), LO, HI, 12)
    w = rng.random(12) ** 2
    cdf = (np.cumsum(w) / w.sum())[None]
    out = pg.inverse_transform_sample(s, cdf, 100_000, np.random.default_rng(6))
    bins = np.searchsorted(s.depths[0], out.depths[0], side="right") - 1
    counts = np.bincount(bins, minlength=12)
    p = sps.chisquare(counts, 100_000 * w / w.sum()).pvalue
    assert p > 0.01


def test_sampler_falls_back_to_uniform_on_zero_grid():
    rays = zray(0.05, 0.1)
    out = pg.sample_rays(pg.DensityGrid.zeros(8), rays, LO, HI, 32, 32, 1e-4,
                         np.random.default_rng(0))
    ref = rd.uniform_samples(rays, LO, HI, 32)
    assert np.array_equal(out.depths, ref.depths)
    assert np.array_equal(out.deltas, ref.deltas)
    assert np.array_equal(out.positions, ref.positions)


def test_sampler_concentrates_on_slab():
    R = 33
    v = np.zeros((R, R, R))
    k = np.arange(R) / (R - 1)
    v[:, :, (k >= 0.4) & (k <= 0.5)] = 50.0
    g = pg.DensityGrid(v)
    rays = zray()
    rng = np.random.default_rng(7)
    inside = total = 0
    for _ in range(313):
        out = pg.sample_rays(g, rays, LO, HI, 32, 32, 1e-4, rng)
        z = out.positions[0, :, 2]
        inside += int(((z >= 0.4) & (z <= 0.5)).sum())
        total += z.size
    assert total >= 10_000
    assert inside / total >= 0.8


def test_sampler_output_shape():
    g = pg.DensityGrid(np.ones((8, 8, 8)))
    out = pg.sample_ray(g, zray()[0], LO, HI, 32, 32,
                        rng=np.random.default_rng(0))
    assert out.depths.shape == (1, 32)
    assert np.all(np.diff(out.depths[0]) >= 0)


def test_refresh_grid_matches_field_at_vertices():
    arch = nf.FieldArch(hash_levels=2, log2_table_size=8, hidden_width=8)
    p = nf.init_params(arch, 0)
    g = pg.refresh_grid(p, arch, 12)
    assert g.resolution == 12
    rng = np.random.default_rng(0)
    for ijk in rng.integers(0, 12, (50, 3)):
        sigma, _ = nf.field_eval(p, arch, (ijk / 11.0)[None].astype(np.float32))
        assert g.values[tuple(ijk)] == pytest.approx(sigma[0], rel=1e-6)


def test_refresh_constant_field():
    arch = nf.FieldArch(hash_levels=1, log2_table_size=4, hidden_width=4)
    g = pg.refresh_grid(constant_field(arch, 3.0), arch, 5)
    assert np.allclose(g.values, 3.0, rtol=1e-6)


def test_default_grid_resolution():
    arch = nf.FieldArch(hash_levels=1, log2_table_size=4, hidden_width=4)
    assert pg.refresh_grid(nf.init_params(arch, 0), arch).values.shape == (64, 64, 64)


def test_bake_zero_field_is_empty_and_grid_shared():
    arch = nf.FieldArch(hash_levels=1, log2_table_size=4, hidden_width=4)
    p = constant_field(arch, 1e-3)
    g, m = pg.bake_prior(p, arch, 16)
    assert m.is_empty
    assert np.array_equal(g.values, pg.refresh_grid(p, arch, 16).values)


def test_bake_saturated_field_closes_at_box():
    arch = nf.FieldArch(hash_levels=1, log2_table_size=4, hidden_width=4)
    _, m = pg.bake_prior(constant_field(arch, 1e4), arch, 16)
    assert not m.is_empty
    assert np.all((m.vertices >= 0) & (m.vertices <= 1))
    assert m.vertices.min() == 0.0 and m.vertices.max() == 1.0


def test_default_iso_rule():
    R = 64
    sat = pg.DensityGrid(np.full((R, R, R), 1e4, np.float32))
    assert pg.default_iso(sat) == pytest.approx(np.log(2) * 63)
    diffuse = pg.DensityGrid(np.full((R, R, R), 30.0, np.float32))
    assert pg.default_iso(diffuse) == pytest.approx(15.0)
    faint = pg.DensityGrid(np.full((R, R, R), 2.0, np.float32))
    assert pg.default_iso(faint) == 5.0
