from __future__ import annotations

import struct

import numpy as np
import pytest

from noma import bundle as bd
from noma import field as nf
from noma import meshmetrics as mm
from noma import priorgrid as pg


def random_bundle(seed=0, R=8, arch=None) -> bd.PriorBundle:
    rng = np.random.default_rng(seed)
    arch = arch or nf.FieldArch(hash_levels=2, log2_table_size=6, hidden_width=8)
    theta = rng.normal(size=arch.param_count).astype(np.float32)
    grid = pg.DensityGrid(rng.exponential(size=(R, R, R)).astype(np.float32))
    mesh = mm.Mesh(rng.random((5, 3)), np.array([[0, 1, 2], [2, 3, 4]]))
    return bd.PriorBundle("mug", arch, theta, grid, mesh,
                          {"search_seed": 3, "genes.eta": 0.012345678901234, "genes.N": 40})


def test_round_trip_is_bit_exact(tmp_path):
    b = random_bundle()
    bd.save_prior(b, tmp_path / "mug.prior")
    back = bd.load_prior(tmp_path / "mug.prior")
    assert back.category == "mug" and back.arch == b.arch
    assert np.array_equal(back.theta, b.theta)
    assert np.array_equal(back.grid.values, b.grid.values)
    assert np.array_equal(back.mesh.vertices, b.mesh.vertices)
    assert np.array_equal(back.mesh.triangles, b.mesh.triangles)
    assert float(back.provenance["genes.eta"]) == 0.012345678901234
    assert back.format_version == bd.FORMAT_VERSION


def test_empty_mesh_round_trip():
    b = random_bundle()
    b.mesh = mm.Mesh()
    assert bd.decode_prior(bd.encode_prior(b)).mesh.is_empty


def test_truncation_is_an_integrity_error():
    buf = bd.encode_prior(random_bundle())
    for cut in (len(buf) - 1, len(buf) - 100, 40, 12):
        with pytest.raises(bd.BundleError, match="integrity|truncated"):
            bd.decode_prior(buf[:cut])


def test_corruption_is_detected():
    buf = bytearray(bd.encode_prior(random_bundle()))
    buf[len(buf) // 2] ^= 0xFF
    with pytest.raises(bd.BundleError, match="integrity"):
        bd.decode_prior(bytes(buf))


def test_bad_magic_and_version():
    buf = bd.encode_prior(random_bundle())
    with pytest.raises(bd.BundleError, match="not a prior bundle"):
        bd.decode_prior(b"XXXX" + buf[4:])
    bumped = buf[:4] + struct.pack("<H", 99) + buf[6:]
    with pytest.raises(bd.BundleError, match="version 99"):
        bd.decode_prior(bumped)


def test_theta_arch_mismatch_rejected():
    b = random_bundle()
    with pytest.raises(bd.BundleError, match="integrity"):
        bd.PriorBundle("mug", b.arch, b.theta[:-1], b.grid, b.mesh)


def test_size_formula_for_default_arch():
    arch = nf.FieldArch()
    R = 64
    b = random_bundle(1, R=R, arch=arch)
    buf = bd.encode_prior(b)
    (hlen,) = struct.unpack("<I", buf[6:10])
    assert len(buf) == bd.expected_size(arch.param_count, R, 5, 2, hlen)
    # dominated by parameters and grid, as the layout implies
    assert abs(len(buf) - (arch.param_count * 4 + R ** 3 * 4)) < 2000


def test_inspect_reports_without_loading_theta(tmp_path):
    b = random_bundle()
    bd.save_prior(b, tmp_path / "m.prior")
    info = bd.inspect_prior(tmp_path / "m.prior")
    assert info["category"] == "mug"
    assert info["param_count"] == b.arch.param_count
    assert info["grid_max"] == pytest.approx(float(b.grid.values.max()))
    assert info["file_bytes"] == (tmp_path / "m.prior").stat().st_size


def test_param_file_round_trip():
    b = random_bundle()
    arch, params = bd.decode_params(bd.encode_params(b.arch, b.theta))
    assert arch == b.arch and np.array_equal(params, b.theta)
    with pytest.raises(bd.BundleError):
        bd.decode_params(bd.encode_params(b.arch, b.theta)[:-4])
