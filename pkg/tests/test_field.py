from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noma import field as nf

from oracles import busy_params, fd_check, ref_encode, ref_field, ref_param_count, tiny_arch



def test_init_deterministic():
    arch = nf.FieldArch(hash_levels=2, log2_table_size=6, hidden_width=8)
    assert np.array_equal(nf.init_params(arch, 7), nf.init_params(arch, 7))
    assert nf.init_params(arch, 7).dtype == np.float32


def test_param_count_small_arch():
    arch = nf.FieldArch(hash_levels=2, features_per_level=2, log2_table_size=4, hidden_width=8,
                        hidden_layers=1)
    assert arch.param_count == ref_param_count(arch)
    assert arch.hash_param_count == 2 * 2 * 2 ** 4
    assert len(nf.init_params(arch, 0)) == arch.param_count


def test_param_count_degenerate_table():
    arch = nf.FieldArch(hash_levels=1, features_per_level=1, log2_table_size=0, hidden_width=3,
                        hidden_layers=1)
    assert arch.hash_param_count == 1
    assert arch.param_count == ref_param_count(arch)


def test_param_count_matches_init_for_random_archs():
    rng = np.random.default_rng(0)
    for _ in range(50):
        arch = tiny_arch(rng)
        assert len(nf.init_params(arch, 1)) == arch.param_count == ref_param_count(arch)


def test_init_ranges():
    arch = nf.FieldArch(hash_levels=2, log2_table_size=8, hidden_width=16)
    p = nf.init_params(arch, 3)
    assert np.abs(p[: arch.hash_param_count]).max() <= 1e-4
    w, b, (fan_in, _) = nf.mlp_slices(arch)[0]
    assert abs(p[w].std() - np.sqrt(2.0 / fan_in)) < 0.2 * np.sqrt(2.0 / fan_in)
    assert np.all(p[b] == 0)


def test_invalid_arch_rejected():
    with pytest.raises(ValueError):
        nf.FieldArch(hidden_width=0)
    with pytest.raises(ValueError):
        nf.FieldArch(per_level_scale=0.9)
    with pytest.raises(ValueError):
        nf.FieldArch(density_activation="relu")


def test_encoding_length_and_determinism():
    arch = nf.FieldArch(hash_levels=4, features_per_level=2, log2_table_size=8, hidden_width=4)
    p = busy_params(arch, 0).astype(np.float32)
    a = nf.hash_encode([0.3, 0.6, 0.9], arch, p)
    assert a.shape == (8,)
    assert np.array_equal(a, nf.hash_encode([0.3, 0.6, 0.9], arch, p))


def test_encoding_at_level0_vertex_is_a_single_row():
    arch = nf.FieldArch(hash_levels=1, features_per_level=2, log2_table_size=8, base_resolution=4,
                        hidden_width=4)
    p = busy_params(arch, 1).astype(np.float32)
    # vertex (1, 2, 3) of the 4-cell level: dense indexing, row = x + 5 y + 25 z
    enc = nf.hash_encode([0.25, 0.5, 0.75], arch, p)
    row = 1 + 5 * 2 + 25 * 3
    assert np.allclose(enc, p[2 * row: 2 * row + 2], atol=1e-7)


def test_encoding_matches_reference_with_hashing():
    rng = np.random.default_rng(5)
    arch = nf.FieldArch(hash_levels=3, features_per_level=2, log2_table_size=5, base_resolution=3,
                        per_level_scale=2.0, hidden_width=4)
    p = busy_params(arch, 2)
    for x in rng.random((20, 3)):
        assert np.allclose(nf.hash_encode(x, arch, p), ref_encode(p, arch, x), atol=1e-12)


def test_outside_points_clamp():
    arch = nf.FieldArch(hash_levels=2, log2_table_size=6, hidden_width=4)
    p = busy_params(arch, 0).astype(np.float32)
    assert np.array_equal(nf.hash_encode([1.5, -0.2, 0.5], arch, p),
                          nf.hash_encode([1.0, 0.0, 0.5], arch, p))


def test_forward_matches_reference_field():
    rng = np.random.default_rng(11)
    for _ in range(5):
        arch = tiny_arch(rng)
        p = busy_params(arch, int(rng.integers(1000)))
        pts = rng.random((6, 3))
        sigma, rgb = nf.field_eval(p, arch, pts)
        for i, x in enumerate(pts):
            s_ref, c_ref = ref_field(p, arch, x)
            assert sigma[i] == pytest.approx(s_ref, rel=1e-10, abs=1e-12)
            assert np.allclose(rgb[i], c_ref, atol=1e-12)


def test_output_ranges_and_batching():
    rng = np.random.default_rng(2)
    arch = nf.FieldArch(hash_levels=3, log2_table_size=8, hidden_width=8)
    p = (busy_params(arch, 4) * 3).astype(np.float32)
    pts = rng.random((64, 3)).astype(np.float32)
    sigma, rgb = nf.field_eval(p, arch, pts)
    assert np.all(sigma >= 0) and np.all((rgb >= 0) & (rgb <= 1))
    singles = [nf.field_eval(p, arch, x[None]) for x in pts]
    assert np.allclose(sigma, [s[0][0] for s in singles], rtol=1e-5)
    assert np.allclose(rgb, [s[1][0] for s in singles], atol=1e-6)


def test_eval_is_pure_and_chunking_invariant():
    arch = nf.FieldArch(hash_levels=2, log2_table_size=6, hidden_width=8)
    p = nf.init_params(arch, 0)
    before = p.copy()
    pts = np.random.default_rng(0).random((100, 3)).astype(np.float32)
    a = nf.field_eval(p, arch, pts)
    b = nf.field_eval(p, arch, pts, chunk=7)
    assert np.array_equal(p, before)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_non_finite_params_are_fatal():
    arch = nf.FieldArch(hash_levels=1, log2_table_size=4, hidden_width=4)
    p = nf.init_params(arch, 0)
    p[-1] = np.nan
    with pytest.raises(FloatingPointError):
        nf.field_eval(p, arch, np.zeros((1, 3), np.float32))


def test_wrong_length_rejected():
    arch = nf.FieldArch(hash_levels=1, log2_table_size=4, hidden_width=4)
    with pytest.raises(ValueError):
        nf.field_eval(np.zeros(3, np.float32), arch, np.zeros((1, 3), np.float32))


def test_zero_upstream_gives_zero_gradient():
    arch = nf.FieldArch(hash_levels=2, log2_table_size=5, hidden_width=4)
    p = busy_params(arch, 0).astype(np.float32)
    cache = nf.field_forward(p, arch, np.random.default_rng(0).random((10, 3)))
    g = nf.field_backward(p, arch, cache, np.zeros(10), np.zeros((10, 3)))
    assert not g.any()


def test_untouched_rows_get_no_gradient():
    arch = nf.FieldArch(hash_levels=1, features_per_level=1, log2_table_size=10, base_resolution=4,
                        hidden_width=4)
    p = busy_params(arch, 0)
    cache = nf.field_forward(p, arch, np.array([[0.1, 0.1, 0.1]]))
    g = nf.field_backward(p, arch, cache, np.ones(1), np.ones((1, 3)))
    table = g[: arch.hash_param_count]
    touched = {x + 5 * y + 25 * z for x in (0, 1) for y in (0, 1) for z in (0, 1)}
    untouched = np.setdiff1d(np.arange(arch.table_size), sorted(touched))
    assert not table[untouched].any()
    assert np.count_nonzero(table) == 8


def test_gradient_matches_finite_differences_few_archs():
    rng = np.random.default_rng(100)
    for _ in range(3):
        arch = tiny_arch(rng)
        p = busy_params(arch, int(rng.integers(1000)))
        pts = rng.random((4, 3))
        assert fd_check(arch, p, pts, rng.normal(size=4), rng.normal(size=(4, 3))) < 1e-3


def test_adam_hand_value():
    st0 = nf.AdamState.fresh(1, lr=0.1, dtype=np.float64)
    st1, p = nf.adam_step(st0, np.array([1.0]), np.array([1.0]))
    assert p[0] == pytest.approx(1 - 0.1 / (1 + 1e-8), abs=1e-12)
    assert st1.step == 1


def test_adam_zero_grad_and_zero_lr():
    p = np.arange(5, dtype=np.float32)
    _, q = nf.adam_step(nf.AdamState.fresh(5), p, np.zeros(5, np.float32))
    assert np.array_equal(p, q)
    _, q = nf.adam_step(nf.AdamState.fresh(5, lr=0.0), p, np.ones(5, np.float32))
    assert np.array_equal(p, q)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        nf.adam_step(nf.AdamState.fresh(3), np.zeros(4, np.float32), np.zeros(4, np.float32))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-5, 1e-3))
def test_encoding_continuity_within_cell(seed, delta):
    rng = np.random.default_rng(seed)
    arch = nf.FieldArch(hash_levels=2, features_per_level=2, log2_table_size=6, base_resolution=4,
                        per_level_scale=1.5, hidden_width=4)
    p = busy_params(arch, seed)
    x = rng.random(3)
    a = nf.hash_encode(x, arch, p)
    b = nf.hash_encode(np.clip(x + delta, 0, 1), arch, p)
    # features are trilinear per cell; even across a cell face the blend is continuous
    assert np.abs(a - b).max() <= 3 * delta * 6 * 2 * np.abs(p[: arch.hash_param_count]).max() + 1e-12
