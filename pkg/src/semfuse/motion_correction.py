"""Per-packet lidar motion correction and projection with uncertainty.

Each packet's pose Gaussian is decomposed into 13 sigma poses; every lidar
point is carried through the sandwich ``inv(T_veh_ld) @ T_k @ T_veh_ld`` for
each sigma pose.  The resulting sigma positions (and the pose weights) are
reused for the camera projection so no second decomposition is needed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (FisheyeIntrinsics, RigidTransform, poses_to_matrices, project_fisheye_array,
                       transform_invert)
from .unscented import GaussianState, UTParams, recover, utd


@dataclass(frozen=True, eq=False)
class LidarPacket:
    t: float
    points: np.ndarray  # (M, 3) lidar frame
    ring: np.ndarray = None
    azimuth: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(pts) < 1 or not np.all(np.isfinite(pts)):
            raise ValueError("a packet needs at least one finite point")
        object.__setattr__(self, "points", pts)
        m = len(pts)
        ring = np.zeros(m, np.uint8) if self.ring is None else np.asarray(self.ring, dtype=np.uint8)
        az = np.zeros(m, np.float32) if self.azimuth is None else np.asarray(self.azimuth, dtype=np.float32)
        object.__setattr__(self, "ring", ring)
        object.__setattr__(self, "azimuth", az)


@dataclass(frozen=True, eq=False)
class LidarScan:
    packets: tuple

    def __post_init__(self):
        pk = tuple(self.packets)
        times = np.array([p.t for p in pk])
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("packet timestamps must be strictly ascending")
        object.__setattr__(self, "packets", pk)

    @property
    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.packets])

    @property
    def num_points(self) -> int:
        return sum(len(p.points) for p in self.packets)

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All points (P, 3) with their packet and in-packet indices."""
        if not self.packets:
            return np.empty((0, 3)), np.empty(0, np.int64), np.empty(0, np.int64)
        pts = np.concatenate([p.points for p in self.packets])
        pk = np.concatenate([np.full(len(p.points), i) for i, p in enumerate(self.packets)])
        j = np.concatenate([np.arange(len(p.points)) for p in self.packets])
        return pts, pk, j


@dataclass(frozen=True, eq=False)
class CorrectedPacket:
    packet: int
    wm: np.ndarray
    wc: np.ndarray
    sigma: np.ndarray  # (M, 2d+1, 3)
    rows: np.ndarray | None = None  # packet row of each corrected point, None for all rows


@dataclass(frozen=True, eq=False)
class CorrectedSigmaCloud:
    fragments: list = field(default_factory=list)

    @property
    def num_points(self) -> int:
        return sum(f.sigma.shape[0] for f in self.fragments)


@dataclass(frozen=True, eq=False)
class ProjectedPointGaussian:
    packet: int
    point: int
    mean_uv: np.ndarray
    cov_uv: np.ndarray
    mean_xyz: np.ndarray
    cov_xyz: np.ndarray
    range: float


@dataclass(eq=False)
class ProjectedPoints:
    """Column-wise collection of projected point Gaussians."""

    packet: np.ndarray
    point: np.ndarray
    mean_uv: np.ndarray
    cov_uv: np.ndarray
    mean_xyz: np.ndarray
    cov_xyz: np.ndarray
    range: np.ndarray
    not_visible: int = 0

    def __len__(self):
        return len(self.packet)

    def __getitem__(self, i) -> ProjectedPointGaussian:
        return ProjectedPointGaussian(int(self.packet[i]), int(self.point[i]), self.mean_uv[i], self.cov_uv[i],
                                      self.mean_xyz[i], self.cov_xyz[i], float(self.range[i]))

    def subset(self, idx) -> "ProjectedPoints":
        return ProjectedPoints(self.packet[idx], self.point[idx], self.mean_uv[idx], self.cov_uv[idx],
                               self.mean_xyz[idx], self.cov_xyz[idx], self.range[idx], self.not_visible)


def packet_sigma_transforms(pose: GaussianState, T_veh_ld: RigidTransform, params: UTParams):
    """Per-sigma-pose lidar-frame correction matrices (2d+1, 4, 4) and weights."""
    sig = utd(pose, params)
    t_k = poses_to_matrices(sig.points[:, :6])
    return transform_invert(T_veh_ld).matrix @ t_k @ T_veh_ld.matrix, sig.wm, sig.wc


def correct_packet(pk: LidarPacket, pose: GaussianState, T_veh_ld: RigidTransform,
                   params: UTParams = UTParams(), index: int = 0, rows=None) -> CorrectedPacket:
    """Sigma positions of the packet points (or of ``rows`` only) in the reference lidar frame."""
    mats, wm, wc = packet_sigma_transforms(pose, T_veh_ld, params)
    pts = pk.points if rows is None else pk.points[np.asarray(rows)]
    sigma = np.einsum("kij,mj->mki", mats[:, :3, :3], pts) + mats[None, :, :3, 3]
    return CorrectedPacket(index, wm, wc, sigma, None if rows is None else np.asarray(rows))


def correct_scan(scan: LidarScan, poses, T_veh_ld: RigidTransform, params: UTParams = UTParams()) -> CorrectedSigmaCloud:
    """Correct every packet with its pose; ``poses`` is an EgoPoseSequence or list of GaussianState."""
    states = [g if isinstance(g, GaussianState) else g[1] for g in poses]
    if len(states) != len(scan.packets):
        raise ValueError("one pose per packet is required")
    return CorrectedSigmaCloud([correct_packet(p, g, T_veh_ld, params, i)
                                for i, (p, g) in enumerate(zip(scan.packets, states))])


def recover_corrected_points(c: CorrectedSigmaCloud) -> tuple[np.ndarray, np.ndarray]:
    """Per-point corrected mean (P, 3) and covariance (P, 3, 3), packet order."""
    means, covs = [], []
    for f in c.fragments:
        m, s = recover(f.sigma, f.wm, f.wc)
        means.append(m)
        covs.append(s)
    if not means:
        return np.empty((0, 3)), np.empty((0, 3, 3))
    return np.concatenate(means), np.concatenate(covs)


def project_corrected(c: CorrectedSigmaCloud, T_cam_ld: RigidTransform, k: FisheyeIntrinsics) -> ProjectedPoints:
    """Project every sigma position and recover pixel Gaussians.

    Points with any sigma position at z_cam <= 0 are excluded and counted in
    ``not_visible``.
    """
    rot, trans = T_cam_ld.rotation, T_cam_ld.translation
    cols = {name: [] for name in ("packet", "point", "uv", "cuv", "xyz", "cxyz", "rng")}
    dropped = 0
    for f in c.fragments:
        cam = f.sigma @ rot.T + trans  # (M, K, 3)
        ok = np.all(cam[..., 2] > 0.0, axis=1)
        dropped += int(np.count_nonzero(~ok))
        if not np.any(ok):
            continue
        idx = np.nonzero(ok)[0]
        uv_sig = project_fisheye_array(k, cam[ok])
        uv, cuv = recover(uv_sig, f.wm, f.wc)
        xyz, cxyz = recover(f.sigma[ok], f.wm, f.wc)
        cols["packet"].append(np.full(len(idx), f.packet))
        cols["point"].append(idx if f.rows is None else np.asarray(f.rows)[idx])
        cols["uv"].append(uv)
        cols["cuv"].append(cuv)
        cols["xyz"].append(xyz)
        cols["cxyz"].append(cxyz)
        cols["rng"].append(np.linalg.norm(xyz @ rot.T + trans, axis=1))
    return _assemble(cols, dropped)


def project_points(points, packet, point, T_cam_ld: RigidTransform, k: FisheyeIntrinsics) -> ProjectedPoints:
    """Deterministic projection of raw points (zero covariance), no correction."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    cam = T_cam_ld.apply(pts)
    ok = cam[:, 2] > 0.0
    n = int(np.count_nonzero(ok))
    cols = {
        "packet": [np.asarray(packet)[ok]], "point": [np.asarray(point)[ok]],
        "uv": [project_fisheye_array(k, cam[ok])], "cuv": [np.zeros((n, 2, 2))],
        "xyz": [pts[ok]], "cxyz": [np.zeros((n, 3, 3))], "rng": [np.linalg.norm(cam[ok], axis=1)],
    }
    return _assemble(cols, int(np.count_nonzero(~ok)))


def _assemble(cols, dropped) -> ProjectedPoints:
    def cat(key, shape):
        return np.concatenate(cols[key]) if cols[key] else np.empty((0,) + shape)
    return ProjectedPoints(cat("packet", ()).astype(np.int64), cat("point", ()).astype(np.int64),
                           cat("uv", (2,)), cat("cuv", (2, 2)), cat("xyz", (3,)), cat("cxyz", (3, 3)),
                           cat("rng", ()), dropped)
