"""Binary and text file formats.

All binary formats are little-endian and start with a 4-byte magic.

==========  ======================================================================
ScoreMap    ``SMAP`` u32 c, u32 n, u32 m, then c*n*m float32 (class-major)
LabelImage  ``LIMG`` u32 classes, u32 n, u32 m, then n*m uint32
Superpixels ``SPXM`` u32 count, u32 n, u32 m, then n*m uint32
LidarScan   ``LSCN`` u32 N, per packet: f64 t, u32 M, M x {f32 x, y, z, u8 ring, f32 azimuth}
Labeled     ``LPTS`` u32 P, u32 c, per point: u32 packet, u32 point, f32 x, y, z,
            c x f32 prob, f32 u, v, f32 cov_uu, cov_uv, cov_vv
MapSnapshot ``SOCT`` f64 resolution, u32 c, u32 V, per voxel: 3 x i32 key, f32 log_odds, c x f32 prob
==========  ======================================================================
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .ego_motion import VelocityStream
from .motion_correction import LidarPacket, LidarScan
from .occlusion import LabeledPoints
from .octree import OctreeParams, SemanticOctree
from .semantics import LabelImage, ScoreMap, SuperpixelMap

POINT_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("ring", "u1"), ("azimuth", "<f4")])


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _check_magic(buf: bytes, magic: bytes, path) -> None:
    if buf[:4] != magic:
        raise DataError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")


# ----------------------------------------------------------- image grids

def _write_grid(path, magic, first, arr, dtype):
    arr = np.asarray(arr)
    n, m = arr.shape[-2:]
    with open(path, "wb") as fh:
        fh.write(magic + struct.pack("<3I", first, n, m))
        fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_grid(path, magic, dtype, planes_from_first):
    buf = _read(path)
    _check_magic(buf, magic, path)
    first, n, m = struct.unpack_from("<3I", buf, 4)
    planes = first if planes_from_first else 1
    expected = 16 + planes * n * m * np.dtype(dtype).itemsize
    if len(buf) != expected:
        raise DataError(f"{path}: size {len(buf)} does not match header ({expected})")
    data = np.frombuffer(buf, dtype=dtype, offset=16)
    return first, (data.reshape(planes, n, m) if planes_from_first else data.reshape(n, m))


def write_score_map(s: ScoreMap, path) -> None:
    _write_grid(path, b"SMAP", s.classes, s.scores, "<f4")


def read_score_map(path) -> ScoreMap:
    _, data = _read_grid(path, b"SMAP", "<f4", True)
    try:
        return ScoreMap(data.astype(np.float32))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_label_image(l: LabelImage, path) -> None:
    _write_grid(path, b"LIMG", l.classes, l.labels, "<u4")


def read_label_image(path) -> LabelImage:
    c, data = _read_grid(path, b"LIMG", "<u4", False)
    return LabelImage(data.astype(np.int64), c)


def write_superpixels(sp: SuperpixelMap, path) -> None:
    _write_grid(path, b"SPXM", sp.count, sp.ids, "<u4")


def read_superpixels(path) -> SuperpixelMap:
    c, data = _read_grid(path, b"SPXM", "<u4", False)
    return SuperpixelMap(data.astype(np.int64), c)


# ------------------------------------------------------------ PPM / PGM

def write_ppm(rgb, path) -> None:
    """8-bit binary PPM (P6)."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb).tobytes())


def write_pgm(gray, path, maxval: int = 255) -> None:
    g = np.asarray(gray)
    h, w = g.shape[:2]
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(g, dtype=dtype).tobytes())


def read_pnm(path) -> np.ndarray:
    """Read binary P5/P6 files (8 or 16 bit)."""
    buf = _read(path)
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    pos += 1
    kind, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if kind not in (b"P5", b"P6"):
        raise DataError(f"{path}: unsupported PNM type {kind!r}")
    ch = 3 if kind == b"P6" else 1
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(buf, dtype=dtype, count=w * h * ch, offset=pos)
    return data.reshape(h, w, ch) if ch == 3 else data.reshape(h, w)


def ids_to_pnm(ids, path) -> None:
    """Lossless id image export: 16-bit PGM, or 24-bit packed PPM above 65535."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and ids.max() >= 1 << 24:
        raise DataError("ids above 2**24 cannot be stored in a PPM")
    if ids.size == 0 or ids.max() < 65536:
        write_pgm(ids.astype(np.uint16), path, maxval=65535)
    else:
        rgb = np.stack([(ids >> 16) & 255, (ids >> 8) & 255, ids & 255], axis=-1)
        write_ppm(rgb, path)


def pnm_to_ids(path) -> np.ndarray:
    img = read_pnm(path).astype(np.int64)
    if img.ndim == 3:
        return (img[..., 0] << 16) | (img[..., 1] << 8) | img[..., 2]
    return img


# ---------------------------------------------------------------- lidar

def write_scan(scan: LidarScan, path) -> None:
    with open(path, "wb") as fh:
        fh.write(b"LSCN" + struct.pack("<I", len(scan.packets)))
        for p in scan.packets:
            rec = np.zeros(len(p.points), dtype=POINT_DTYPE)
            rec["x"], rec["y"], rec["z"] = p.points[:, 0], p.points[:, 1], p.points[:, 2]
            rec["ring"], rec["azimuth"] = p.ring, p.azimuth
            fh.write(struct.pack("<dI", p.t, len(rec)))
            fh.write(rec.tobytes())


def read_scan(path) -> LidarScan:
    buf = _read(path)
    _check_magic(buf, b"LSCN", path)
    (n,) = struct.unpack_from("<I", buf, 4)
    pos, packets = 8, []
    try:
        for _ in range(n):
            t, m = struct.unpack_from("<dI", buf, pos)
            pos += 12
            rec = np.frombuffer(buf, dtype=POINT_DTYPE, count=m, offset=pos)
            pos += m * POINT_DTYPE.itemsize
            pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(float)
            packets.append(LidarPacket(t, pts, rec["ring"].copy(), rec["azimuth"].copy()))
        if pos != len(buf):
            raise DataError(f"{path}: {len(buf) - pos} trailing bytes")
        return LidarScan(tuple(packets))
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or invalid scan ({exc})") from exc


def scan_from_csv(path) -> LidarScan:
    """CSV with header packet,t,x,y,z,ring,azimuth (one row per point)."""
    try:
        data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    data = np.atleast_1d(data)
    need = {"packet", "t", "x", "y", "z"}
    if not need.issubset(data.dtype.names or ()):
        raise DataError(f"{path}: CSV needs columns {sorted(need)}")
    packets = []
    for pk in np.unique(data["packet"]):
        rows = data[data["packet"] == pk]
        ring = rows["ring"] if "ring" in data.dtype.names else None
        az = rows["azimuth"] if "azimuth" in data.dtype.names else None
        packets.append(LidarPacket(float(rows["t"][0]), np.stack([rows["x"], rows["y"], rows["z"]], axis=1), ring, az))
    return LidarScan(tuple(packets))


def scan_to_csv(scan: LidarScan, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["packet", "t", "x", "y", "z", "ring", "azimuth"])
        for i, p in enumerate(scan.packets):
            for j in range(len(p.points)):
                x, y, z = p.points[j]
                w.writerow([i, repr(p.t), f"{x:.6f}", f"{y:.6f}", f"{z:.6f}", int(p.ring[j]), f"{p.azimuth[j]:.6f}"])


# ------------------------------------------------------------- velocity

def read_velocity_csv(path) -> VelocityStream:
    try:
        data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    data = np.atleast_1d(data)
    cols = ("t", "vx", "vy", "vz", "wx", "wy", "wz")
    if not set(cols).issubset(data.dtype.names or ()):
        raise DataError(f"{path}: velocity CSV needs columns {list(cols)}")
    return VelocityStream(data["t"], np.stack([data[c] for c in cols[1:4]], axis=1),
                          np.stack([data[c] for c in cols[4:]], axis=1))


def write_velocity_csv(stream: VelocityStream, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "vx", "vy", "vz", "wx", "wy", "wz"])
        for i in range(len(stream)):
            w.writerow([repr(float(stream.t[i]))] + [repr(float(x)) for x in stream.v[i]]
                       + [repr(float(x)) for x in stream.w[i]])


# ------------------------------------------------------- labeled points

def _labeled_dtype(c: int) -> np.dtype:
    return np.dtype([("packet", "<u4"), ("point", "<u4"), ("xyz", "<f4", 3), ("prob", "<f4", (c,)),
                     ("uv", "<f4", 2), ("cov", "<f4", 3)])


def write_labeled(lp: LabeledPoints, path) -> None:
    c = lp.class_probs.shape[1]
    rec = np.zeros(len(lp), dtype=_labeled_dtype(c))
    rec["packet"], rec["point"] = lp.packet, lp.point
    rec["xyz"], rec["prob"], rec["uv"] = lp.mean_xyz, lp.class_probs, lp.mean_uv
    rec["cov"] = np.stack([lp.cov_uv[:, 0, 0], lp.cov_uv[:, 0, 1], lp.cov_uv[:, 1, 1]], axis=1) if len(lp) else 0
    with open(path, "wb") as fh:
        fh.write(b"LPTS" + struct.pack("<2I", len(rec), c))
        fh.write(rec.tobytes())


def read_labeled(path) -> LabeledPoints:
    buf = _read(path)
    _check_magic(buf, b"LPTS", path)
    n, c = struct.unpack_from("<2I", buf, 4)
    dt = _labeled_dtype(c)
    if len(buf) != 12 + n * dt.itemsize:
        raise DataError(f"{path}: size does not match header")
    rec = np.frombuffer(buf, dtype=dt, count=n, offset=12)
    cov = np.zeros((n, 2, 2))
    cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 0], cov[:, 1, 1] = (rec["cov"][:, 0], rec["cov"][:, 1],
                                                              rec["cov"][:, 1], rec["cov"][:, 2])
    probs = rec["prob"].astype(float).reshape(n, c)
    if n:
        probs /= probs.sum(axis=1, keepdims=True)
    return LabeledPoints(rec["packet"].astype(np.int64), rec["point"].astype(np.int64),
                         rec["xyz"].astype(float).reshape(n, 3), np.zeros((n, 3, 3)), probs,
                         rec["uv"].astype(float).reshape(n, 2), cov, np.ones(n, dtype=bool))


def labeled_to_csv(lp: LabeledPoints, path, class_names=None) -> None:
    c = lp.class_probs.shape[1]
    names = list(class_names) if class_names else [f"p{i}" for i in range(c)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["packet", "point", "x", "y", "z"] + [f"p_{n}" for n in names] + ["u", "v", "cov_uu", "cov_uv", "cov_vv"])
        for i in range(len(lp)):
            row = [int(lp.packet[i]), int(lp.point[i])] + [f"{x:.5f}" for x in lp.mean_xyz[i]]
            row += [f"{p:.6f}" for p in lp.class_probs[i]] + [f"{x:.3f}" for x in lp.mean_uv[i]]
            row += [f"{lp.cov_uv[i, 0, 0]:.5g}", f"{lp.cov_uv[i, 0, 1]:.5g}", f"{lp.cov_uv[i, 1, 1]:.5g}"]
            w.writerow(row)


# ------------------------------------------------------------- map files

def _map_dtype(c: int) -> np.dtype:
    return np.dtype([("key", "<i4", 3), ("log_odds", "<f4"), ("prob", "<f4", (c,))])


def write_map(octree, path) -> None:
    keys, lo, probs, _ = octree.arrays()
    rec = np.zeros(len(keys), dtype=_map_dtype(octree.classes))
    rec["key"], rec["log_odds"], rec["prob"] = keys, lo, probs
    with open(path, "wb") as fh:
        fh.write(b"SOCT" + struct.pack("<d2I", octree.resolution, octree.classes, len(rec)))
        fh.write(rec.tobytes())


def read_map(path, params=None):
    buf = _read(path)
    _check_magic(buf, b"SOCT", path)
    res, c, n = struct.unpack_from("<d2I", buf, 4)
    dt = _map_dtype(c)
    if len(buf) != 20 + n * dt.itemsize:
        raise DataError(f"{path}: size does not match header")
    rec = np.frombuffer(buf, dtype=dt, count=n, offset=20)
    params = replace(params or OctreeParams(), resolution=res)
    tree = SemanticOctree(c, params)
    probs = rec["prob"].astype(float).reshape(n, c)
    if n:
        probs /= probs.sum(axis=1, keepdims=True)
    tree.set_voxels(rec["key"].astype(np.int64).reshape(n, 3), rec["log_odds"].astype(float), probs)
    return tree


def map_to_csv(octree, path, class_names=None) -> None:
    keys, lo, probs, counts = octree.arrays()
    names = list(class_names) if class_names else [f"p{i}" for i in range(octree.classes)]
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["ix", "iy", "iz", "log_odds", "observations"] + [f"p_{n}" for n in names])
    for i in range(len(keys)):
        w.writerow([int(k) for k in keys[i]] + [f"{lo[i]:.5f}", int(counts[i])] + [f"{p:.6f}" for p in probs[i]])
    Path(path).write_text(buf.getvalue())
