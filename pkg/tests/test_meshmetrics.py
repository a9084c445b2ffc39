from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noma import meshmetrics as mm

from oracles import brute_chamfer, brute_emd, brute_nn


def sphere_grid(R=64, r=0.3):
    t = np.linspace(0, 1, R)
    x, y, z = np.meshgrid(t, t, t, indexing="ij")
    return np.where((x - 0.5) ** 2 + (y - 0.5) ** 2 + (z - 0.5) ** 2 < r * r, 10.0, 0.0)


def test_below_iso_is_empty():
    assert mm.marching_cubes(np.zeros((8, 8, 8)), 5.0).is_empty


def test_sphere_vertices_on_radius():
    m = mm.marching_cubes(sphere_grid(), 5.0)
    r = np.linalg.norm(m.vertices - 0.5, axis=1)
    assert np.all(np.abs(r - 0.3) <= 2 / 64)
    assert np.all((m.vertices >= 0) & (m.vertices <= 1))


def test_sphere_is_edge_manifold():
    m = mm.marching_cubes(sphere_grid(), 5.0)
    edges = Counter()
    for a, b, c in m.triangles.tolist():
        for e in ((a, b), (b, c), (c, a)):
            edges[tuple(sorted(e))] += 1
    assert set(edges.values()) == {2}


def test_vertices_bracketed_by_iso():
    rng = np.random.default_rng(0)
    g = rng.random((10, 10, 10))
    m = mm.marching_cubes(g, 0.5)
    R = 10
    x = m.vertices * (R - 1)
    lo = np.floor(x + 1e-9).astype(int)
    for v, l in zip(x, lo):
        # the vertex lies on a grid edge: two coordinates are integral
        axis = int(np.argmax(np.abs(v - np.round(v))))
        a = np.clip(np.round(v).astype(int), 0, R - 1)
        b = a.copy()
        a[axis], b[axis] = l[axis], min(l[axis] + 1, R - 1)
        va, vb = g[tuple(a)], g[tuple(b)]
        assert min(va, vb) - 1e-9 <= 0.5 <= max(va, vb) + 1e-9


def test_cleanup_drops_degenerate_triangles():
    m = mm.Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0], [5, 5, 5.0]]),
                np.array([[0, 1, 2], [0, 1, 3]]))
    c = mm.cleanup(m)
    assert len(c.triangles) == 1 and len(c.vertices) == 3


def test_bad_indices_rejected():
    with pytest.raises(ValueError):
        mm.Mesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))


def test_single_triangle_samples_inside():
    tri = mm.Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]), np.array([[0, 1, 2]]))
    p = mm.sample_surface(tri, 2000, 3)
    assert np.allclose(p[:, 2], 0)
    assert np.all(p[:, :2] >= -1e-12) and np.all(p[:, 0] + p[:, 1] <= 1 + 1e-12)
    assert np.array_equal(p, mm.sample_surface(tri, 2000, 3))


def test_area_weighting_nine_to_one():
    # two disjoint right triangles with legs 3 and 1: areas 4.5 and 0.5
    v = np.array([[0, 0, 0], [3, 0, 0], [0, 3, 0], [10, 0, 0], [11, 0, 0], [10, 1, 0.0]])
    m = mm.Mesh(v, np.array([[0, 1, 2], [3, 4, 5]]))
    p = mm.sample_surface(m, 10_000, 0)
    big = int((p[:, 0] < 5).sum())
    ratio = big / (10_000 - big)
    assert abs(ratio - 9) <= 0.05 * 9


def test_empty_mesh_sampling_error():
    with pytest.raises(ValueError):
        mm.sample_surface(mm.Mesh(), 5)


def test_chamfer_basics():
    a = np.random.default_rng(0).random((30, 3))
    assert mm.chamfer(a, a) == 0
    assert mm.chamfer([[0, 0, 0]], [[1, 0, 0]]) == pytest.approx(1.0)


def test_chamfer_and_cr_match_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(3):
        a, b = rng.random((200, 3)), rng.random((200, 3))
        assert mm.chamfer(a, b) == pytest.approx(brute_chamfer(a, b), abs=1e-6)
        for tau in (0.02, 0.05, 0.1):
            assert mm.completion_ratio(a, b, tau) == float((brute_nn(a, b) <= tau).mean())


def test_cr_edge_cases():
    a = np.random.default_rng(2).random((20, 3))
    assert mm.completion_ratio(a, a, 1e-3) == 1.0
    assert mm.completion_ratio(a, np.zeros((0, 3)), 1e-3) == 0.0
    with pytest.raises(ValueError):
        mm.completion_ratio(a, a, 0.0)


def test_emd_identity_and_permutation():
    a = np.random.default_rng(3).random((50, 3))
    assert mm.emd(a, a, 50, seed=4) == 0.0
    assert mm.emd([[0, 0, 0], [1, 0, 0]], [[1, 0, 0], [0, 0, 0]], 2) == 0.0


def test_emd_hand_case():
    a = np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0.0]])
    b = np.array([[0, 2.5, 0], [1.2, 0, 0], [0, 0, 0.5]])
    assert mm.emd(a, b, 3) == pytest.approx(brute_emd(a, b), abs=1e-12)


def test_emd_matches_enumeration_small():
    rng = np.random.default_rng(5)
    for n in range(2, 7):
        a, b = rng.random((n, 3)), rng.random((n, 3))
        assert mm.emd(a, b, n) == pytest.approx(brute_emd(a, b), abs=1e-12)


def test_emd_subsample_bound():
    with pytest.raises(ValueError):
        mm.emd(np.zeros((3, 3)), np.zeros((5, 3)), 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_metric_symmetry_and_translation(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((40, 3)), rng.random((35, 3))
    assert mm.chamfer(a, b) == mm.chamfer(b, a)
    t = rng.normal(size=3) * 10
    assert mm.chamfer(a + t, b + t) == pytest.approx(mm.chamfer(a, b), abs=1e-6)
    assert mm.emd(a + t, b + t, 20, 1) == pytest.approx(mm.emd(a, b, 20, 1), abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.floats(1e-3, 0.5), st.floats(1e-3, 0.5))
def test_cr_monotone_in_tau(seed, t1, t2):
    rng = np.random.default_rng(seed)
    a, b = rng.random((50, 3)), rng.random((50, 3))
    lo, hi = sorted((t1, t2))
    assert mm.completion_ratio(a, b, lo) <= mm.completion_ratio(a, b, hi)


def test_obj_round_trip(tmp_path):
    m = mm.marching_cubes(sphere_grid(16, 0.3), 5.0)
    mm.write_obj(m, tmp_path / "s.obj")
    back = mm.read_obj(tmp_path / "s.obj")
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)


def test_mesh_scores_identical_meshes():
    m = mm.marching_cubes(sphere_grid(24, 0.3), 5.0)
    m = mm.Mesh(m.vertices * 0.1, m.triangles)  # a 3 cm ball
    s = mm.mesh_scores(m, m, (0.004, 0.01), n_points=5000, n_emd=64)
    # two independent surface samplings of one mesh: only sampling noise remains
    assert s.cd < 2e-3 and s.cr[0.01] > 0.99 and s.cr[0.004] > 0.9
    assert s.emd is not None and s.emd < 0.02  # 64-point subsample spacing is ~1.3 cm


def test_mesh_scored_against_itself_is_exact():
    m = mm.marching_cubes(sphere_grid(32), 5.0)
    s = mm.mesh_scores(m, m, (0.004, 0.01), n_points=2000, seed=3, n_emd=32)
    assert s.cd == 0.0 and s.emd == 0.0 and all(v == 1.0 for v in s.cr.values())
