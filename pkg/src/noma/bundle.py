"""Single-file category prior: architecture, parameters, density grid and mesh.

Layout (all integers little-endian)::

    b"NOMA" | u16 version | u32 header length | header (UTF-8 key=value lines)
    | u64 length + theta (<f4) | u64 length + grid (u32 R, <f4 x-fastest)
    | u64 length + mesh (u32 nv, u32 nt, <f8 vertices, <u4 triangles)
    | u32 CRC-32 of everything before it
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import field as nf
from .meshmetrics import Mesh
from .priorgrid import DensityGrid

MAGIC = b"NOMA"
FORMAT_VERSION = 1


class BundleError(ValueError):
    """Unreadable, corrupt or incompatible prior file."""


@dataclass
class PriorBundle:
    category: str
    arch: nf.FieldArch
    theta: np.ndarray
    grid: DensityGrid
    mesh: Mesh
    provenance: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float32)
        if len(self.theta) != self.arch.param_count:
            raise BundleError(f"integrity error: theta has {len(self.theta)} values, "
                              f"architecture needs {self.arch.param_count}")


def _kv_text(d: dict) -> str:
    return "".join(f"{k}={float(v)!r}\n" if isinstance(v, float) else f"{k}={v}\n" for k, v in d.items())


def parse_kv(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed line {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _header(b: PriorBundle) -> dict:
    h = {"category": b.category}
    h.update({f"arch.{k}": v for k, v in b.arch.to_dict().items()})
    h["grid_resolution"] = b.grid.resolution
    h["theta_count"] = len(b.theta)
    h["mesh_vertices"] = len(b.mesh.vertices)
    h["mesh_triangles"] = len(b.mesh.triangles)
    h.update({f"provenance.{k}": v for k, v in b.provenance.items()})
    return h


def _mesh_bytes(m: Mesh) -> bytes:
    return (struct.pack("<II", len(m.vertices), len(m.triangles))
            + np.asarray(m.vertices, "<f8").tobytes() + np.asarray(m.triangles, "<u4").tobytes())


def encode_prior(b: PriorBundle) -> bytes:
    head = _kv_text(_header(b)).encode()
    parts = [MAGIC, struct.pack("<H", b.format_version), struct.pack("<I", len(head)), head]
    for sec in (b.theta.astype("<f4").tobytes(), b.grid.to_bytes(), _mesh_bytes(b.mesh)):
        parts += [struct.pack("<Q", len(sec)), sec]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def expected_size(param_count: int, R: int, n_vertices: int, n_triangles: int, header_len: int) -> int:
    """Byte count of an encoded bundle."""
    return (4 + 2 + 4 + header_len + 3 * 8 + 4 * param_count + (4 + 4 * R ** 3)
            + (8 + 24 * n_vertices + 12 * n_triangles) + 4)


def save_prior(b: PriorBundle, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_prior(b))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise BundleError("integrity error: file is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_header(buf: bytes) -> tuple[dict, _Reader]:
    """Check magic and version and return the text header plus a reader past it."""
    if buf[:4] != MAGIC:
        raise BundleError("not a prior bundle")
    r = _Reader(buf)
    r.take(4)
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise BundleError(f"unsupported prior bundle version {version} (expected {FORMAT_VERSION})")
    (hlen,) = r.unpack("<I")
    try:
        header = parse_kv(r.take(hlen).decode())
    except (UnicodeDecodeError, ValueError) as exc:
        raise BundleError(f"integrity error: bad header ({exc})") from None
    return header, r


def _arch_from_header(h: dict) -> nf.FieldArch:
    try:
        return nf.FieldArch.from_dict({k[5:]: v for k, v in h.items() if k.startswith("arch.")})
    except (TypeError, ValueError) as exc:
        raise BundleError(f"integrity error: bad architecture ({exc})") from None


def decode_prior(buf: bytes) -> PriorBundle:
    header, r = read_header(buf)
    if len(buf) < 4 or struct.unpack("<I", buf[-4:])[0] != zlib.crc32(buf[:-4]):
        raise BundleError("integrity error: checksum mismatch or truncated file")
    sections = []
    for _ in range(3):
        (n,) = r.unpack("<Q")
        sections.append(r.take(n))
    if r.pos != len(buf) - 4:
        raise BundleError("integrity error: trailing bytes")
    arch = _arch_from_header(header)
    theta = np.frombuffer(sections[0], "<f4").astype(np.float32)
    if len(theta) != arch.param_count or int(header.get("theta_count", -1)) != len(theta):
        raise BundleError(f"integrity error: theta has {len(theta)} values, "
                          f"architecture needs {arch.param_count}")
    try:
        grid = DensityGrid.from_bytes(sections[1])
    except ValueError as exc:
        raise BundleError(f"integrity error: {exc}") from None
    if int(header.get("grid_resolution", -1)) != grid.resolution:
        raise BundleError("integrity error: grid resolution disagrees with header")
    ms = sections[2]
    if len(ms) < 8:
        raise BundleError("integrity error: mesh section too short")
    nv, nt = struct.unpack("<II", ms[:8])
    if len(ms) != 8 + 24 * nv + 12 * nt:
        raise BundleError("integrity error: mesh section size")
    verts = np.frombuffer(ms[8:8 + 24 * nv], "<f8").reshape(nv, 3).astype(np.float64)
    tris = np.frombuffer(ms[8 + 24 * nv:], "<u4").reshape(nt, 3).astype(np.int64)
    prov = {k[len("provenance."):]: v for k, v in header.items() if k.startswith("provenance.")}
    return PriorBundle(header["category"], arch, theta, grid, Mesh(verts, tris), prov)


def load_prior(path) -> PriorBundle:
    return decode_prior(Path(path).read_bytes())


def inspect_prior(path) -> dict:
    """Header facts and grid statistics without building a field from theta."""
    buf = Path(path).read_bytes()
    header, r = read_header(buf)
    (n_theta,) = r.unpack("<Q")
    r.take(n_theta)
    (n_grid,) = r.unpack("<Q")
    grid = DensityGrid.from_bytes(r.take(n_grid)).values
    info = dict(header)
    info["file_bytes"] = len(buf)
    info["param_count"] = _arch_from_header(header).param_count
    info["grid_min"] = float(grid.min())
    info["grid_max"] = float(grid.max())
    info["grid_mean"] = float(grid.mean())
    info["grid_occupied_fraction"] = float((grid > 0).mean())
    return info


# --------------------------------------------------------------------------
# standalone parameter vectors


def encode_params(arch: nf.FieldArch, params: np.ndarray) -> bytes:
    nf.check_params(arch, params)
    head = _kv_text(arch.to_dict()) + "\n"
    return head.encode() + np.asarray(params, "<f4").tobytes()


def decode_params(buf: bytes) -> tuple[nf.FieldArch, np.ndarray]:
    cut = buf.find(b"\n\n")
    if cut < 0:
        raise BundleError("integrity error: parameter file has no architecture block")
    arch = nf.FieldArch.from_dict(parse_kv(buf[:cut].decode()))
    params = np.frombuffer(buf[cut + 2:], "<f4").astype(np.float32)
    if len(params) != arch.param_count:
        raise BundleError(f"integrity error: {len(params)} parameters, "
                          f"architecture needs {arch.param_count}")
    return arch, params
