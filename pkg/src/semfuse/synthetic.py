"""Synthetic scenes with ground truth: lidar scans, odometry and score maps.

The generator ray-casts a spinning 16-beam lidar from the moving platform
pose at each column's firing time, so the scans carry real motion
distortion.  Camera images and score maps are rendered at the image
timestamp of each scan.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .classes import ClassTable
from .ego_motion import VelocityStream
from .errors import ConfigError
from .geometry import (Calibration, CameraCalibration, FisheyeIntrinsics, Pose6, RigidTransform, pose_to_transform,
                       se3_exp, transform_invert)
from .motion_correction import LidarPacket, LidarScan
from .semantics import ScoreMap

_EPS = 1e-6
# rotation from the camera optical frame (z fwd, x right, y down) to a body frame (x fwd, y left, z up)
OPTICAL_TO_BODY = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


# ------------------------------------------------------------ primitives

@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    label: str

    def bounds(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    def intersect(self, o, d):
        lo, hi = self.bounds()
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (lo - o) * inv
            t2 = (hi - o) * inv
        t1 = np.nan_to_num(t1, nan=-np.inf)
        t2 = np.nan_to_num(t2, nan=np.inf)
        tn = np.max(np.minimum(t1, t2), axis=1)
        tf = np.min(np.maximum(t1, t2), axis=1)
        hit = (tn <= tf) & (tn > _EPS)
        return np.where(hit, tn, np.inf)


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder with flat caps."""

    center: tuple
    radius: float
    z_min: float
    z_max: float
    label: str

    def bounds(self):
        cx, cy = self.center
        r = self.radius
        return np.array([cx - r, cy - r, self.z_min]), np.array([cx + r, cy + r, self.z_max])

    def intersect(self, o, d):
        cx, cy = self.center
        ox, oy = o[:, 0] - cx, o[:, 1] - cy
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2.0 * (ox * d[:, 0] + oy * d[:, 1])
        c = ox**2 + oy**2 - self.radius**2
        disc = b * b - 4 * a * c
        with np.errstate(divide="ignore", invalid="ignore"):
            t_side = (-b - np.sqrt(np.maximum(disc, 0.0))) / (2 * a)
        z = o[:, 2] + t_side * d[:, 2]
        side_ok = (disc >= 0) & (a > 1e-12) & (t_side > _EPS) & (z >= self.z_min) & (z <= self.z_max)
        best = np.where(side_ok, t_side, np.inf)
        for zc in (self.z_min, self.z_max):
            with np.errstate(divide="ignore", invalid="ignore"):
                tc = (zc - o[:, 2]) / d[:, 2]
                px, py = ox + tc * d[:, 0], oy + tc * d[:, 1]
            ok = np.isfinite(tc) & (tc > _EPS) & (px**2 + py**2 <= self.radius**2)
            best = np.where(ok & (tc < best), tc, best)
        return best


@dataclass(frozen=True)
class Plane:
    """Horizontal patch z = height clipped to an xy rectangle."""

    height: float
    lo: tuple
    hi: tuple
    label: str

    def bounds(self):
        return (np.array([self.lo[0], self.lo[1], self.height]), np.array([self.hi[0], self.hi[1], self.height]))

    def intersect(self, o, d):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.height - o[:, 2]) / d[:, 2]
            x = o[:, 0] + t * d[:, 0]
            y = o[:, 1] + t * d[:, 1]
        ok = (np.isfinite(t) & (t > _EPS) & (x >= self.lo[0]) & (x <= self.hi[0])
              & (y >= self.lo[1]) & (y <= self.hi[1]))
        return np.where(ok, t, np.inf)


def primitive_from_dict(doc: dict):
    kind = doc.get("type")
    if kind == "box":
        return Box(tuple(doc["lo"]), tuple(doc["hi"]), doc["label"])
    if kind == "cylinder":
        return Cylinder(tuple(doc["center"]), float(doc["radius"]), float(doc["z_min"]), float(doc["z_max"]), doc["label"])
    if kind == "plane":
        return Plane(float(doc.get("height", 0.0)), tuple(doc["lo"]), tuple(doc["hi"]), doc["label"])
    raise ConfigError(f"unknown primitive type {kind!r}")


def primitive_to_dict(p) -> dict:
    if isinstance(p, Box):
        return {"type": "box", "lo": list(p.lo), "hi": list(p.hi), "label": p.label}
    if isinstance(p, Cylinder):
        return {"type": "cylinder", "center": list(p.center), "radius": p.radius, "z_min": p.z_min,
                "z_max": p.z_max, "label": p.label}
    return {"type": "plane", "height": p.height, "lo": list(p.lo), "hi": list(p.hi), "label": p.label}


def cast_rays(primitives, labels, origins, dirs, max_range=np.inf):
    """Nearest hit distance and class id per ray (inf / -1 on miss).

    Primitives whose bounding box lies farther than ``max_range`` from every
    ray origin are skipped.
    """
    o = np.broadcast_to(np.asarray(origins, float), np.shape(dirs)).reshape(-1, 3)
    d = np.asarray(dirs, float).reshape(-1, 3)
    best = np.full(len(d), np.inf)
    cls = np.full(len(d), -1, dtype=np.int64)
    o_lo, o_hi = o.min(axis=0), o.max(axis=0)
    for p, lab in zip(primitives, labels):
        lo, hi = p.bounds()
        gap = np.maximum(np.maximum(lo - o_hi, o_lo - hi), 0.0)
        if np.linalg.norm(gap) > max_range:
            continue
        # bounding-sphere prefilter, then the exact test on the survivors
        c = 0.5 * (lo + hi)
        r = 0.5 * np.linalg.norm(hi - lo) + 1e-6
        oc = c - o
        proj = np.einsum("ij,ij->i", oc, d)
        perp2 = np.einsum("ij,ij->i", oc, oc) - proj * proj
        cand = np.flatnonzero((perp2 <= r * r) & (proj > -r) & (proj - r < best))
        if len(cand) == 0:
            continue
        t = p.intersect(o[cand], d[cand])
        closer = t < best[cand]
        best[cand[closer]] = t[closer]
        cls[cand[closer]] = lab
    return best, cls


# ------------------------------------------------------------ trajectory

@dataclass(frozen=True)
class TwistSegment:
    duration: float
    v: tuple = (0.0, 0.0, 0.0)
    w: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-constant body twist starting at the identity pose at t = 0."""

    segments: tuple = (TwistSegment(1e9),)

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def _tables(self):
        starts = np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])[:-1]
        v = np.array([s.v for s in self.segments], float)
        w = np.array([s.w for s in self.segments], float)
        steps = se3_exp(w * np.array([s.duration for s in self.segments])[:, None],
                        v * np.array([s.duration for s in self.segments])[:, None])
        base = np.empty((len(self.segments), 4, 4))
        base[0] = np.eye(4)
        for k in range(1, len(self.segments)):
            base[k] = base[k - 1] @ steps[k - 1]
        return starts, v, w, base

    def twist_at(self, t):
        starts, v, w, _ = self._tables()
        k = np.clip(np.searchsorted(starts, np.asarray(t, float), side="right") - 1, 0, len(starts) - 1)
        return v[k], w[k]

    def pose_at(self, t) -> np.ndarray:
        """World-from-vehicle matrices (T, 4, 4)."""
        t = np.atleast_1d(np.asarray(t, float))
        starts, v, w, base = self._tables()
        k = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(starts) - 1)
        dt = (t - starts[k])[:, None]
        return base[k] @ se3_exp(w[k] * dt, v[k] * dt)


# ------------------------------------------------------------ sensors

@dataclass(frozen=True)
class LidarModel:
    rings: int = 16
    ring_spacing_deg: float = 2.0
    lowest_ring_deg: float = -15.0
    azimuth_step_deg: float = 0.1
    rate_hz: float = 10.0
    columns_per_packet: int = 48
    start_azimuth_deg: float = 180.0
    min_range: float = 0.5
    max_range: float = 100.0
    range_noise: float = 0.0
    mount: tuple = (0.0, 0.0, 1.8, 0.0, 0.0, 0.0)

    @property
    def columns(self) -> int:
        return int(round(360.0 / self.azimuth_step_deg))

    @property
    def elevations(self) -> np.ndarray:
        return np.radians(self.lowest_ring_deg + self.ring_spacing_deg * np.arange(self.rings))

    @property
    def T_veh_ld(self) -> RigidTransform:
        return pose_to_transform(Pose6(*self.mount))


@dataclass(frozen=True)
class CameraSpec:
    name: str
    intrinsics: FisheyeIntrinsics
    mount: tuple = (1.5, 0.0, 1.3, 0.0, 0.0, 0.0)  # body pose of the camera in the vehicle frame

    @property
    def T_veh_cam(self) -> RigidTransform:
        m = pose_to_transform(Pose6(*self.mount)).matrix.copy()
        m[:3, :3] = m[:3, :3] @ OPTICAL_TO_BODY
        return RigidTransform(m)


def default_intrinsics() -> FisheyeIntrinsics:
    # fx * tan(0.1 deg) = 2.27 px: the 2 px horizontal gap stays below the column
    # spacing, so returns on one surface do not mask their own neighbours
    return FisheyeIntrinsics(fx=1300.0, fy=700.0, cx=519.5, cy=249.5, skew=0.0, k1=0.02, k2=-0.005,
                             k3=0.0, k4=0.0, width=1040, height=500)


@dataclass(frozen=True)
class SyntheticSceneSpec:
    primitives: tuple
    trajectory: Trajectory = Trajectory()
    lidar: LidarModel = LidarModel()
    cameras: tuple = (CameraSpec("front", default_intrinsics()),)
    scans: int = 1
    scan_start: float = 0.2
    image_offset: float = 0.1  # image timestamp relative to scan start
    label_noise: float = 0.0
    score_gain: float = 6.0
    boundary_blur_px: float = 1.5
    velocity_rate_hz: float = 100.0
    velocity_noise_std: tuple = (0.0, 0.0)  # (m/s, rad/s) white noise added to the odometry stream
    classes: ClassTable = ClassTable()

    def __post_init__(self):
        if not self.primitives:
            raise ConfigError("synthetic scene has no geometry")
        for p in self.primitives:
            if p.label not in self.classes.names:
                raise ConfigError(f"primitive label {p.label!r} is not a known class")
            lo, hi = p.bounds()
            extent = hi - lo
            if isinstance(p, Plane):
                if np.any(extent[:2] <= 0):
                    raise ConfigError("degenerate plane patch")
            elif np.any(extent <= 0):
                raise ConfigError("degenerate primitive")
        end = self.scan_start + self.scans / self.lidar.rate_hz + max(self.image_offset, 0.0)
        if self.trajectory.duration < end:
            raise ConfigError("trajectory does not cover the scan duration")


@dataclass(eq=False)
class SyntheticDataset:
    spec: SyntheticSceneSpec
    calibration: Calibration
    velocity: VelocityStream
    scans: list
    frame_times: np.ndarray
    images: dict = field(default_factory=dict)  # (camera, scan) -> RGB uint8
    score_maps: dict = field(default_factory=dict)  # (camera, scan) -> ScoreMap
    class_images: dict = field(default_factory=dict)  # (camera, scan) -> true class ids
    truth_labels: list = field(default_factory=list)  # per scan, class id per point (packet order)
    truth_world: list = field(default_factory=list)  # per scan, world xyz per point
    origins_world: np.ndarray = None  # per scan, lidar position at the image time
    poses_ref: np.ndarray = None  # per scan, true world-from-vehicle at the image time


# ------------------------------------------------------------ generation

def camera_rays(k: FisheyeIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Unit ray direction (camera frame) for each pixel centre, and a validity mask."""
    v, u = np.mgrid[0:k.height, 0:k.width].astype(float)
    yd = (v - k.cy) / k.fy
    xd = (u - k.cx) / k.fx - k.skew * yd
    theta_d = np.hypot(xd, yd)
    theta = theta_d.copy()
    for _ in range(20):
        t2 = theta * theta
        f = theta * (1 + t2 * (k.k1 + t2 * (k.k2 + t2 * (k.k3 + t2 * k.k4)))) - theta_d
        df = 1 + t2 * (3 * k.k1 + t2 * (5 * k.k2 + t2 * (7 * k.k3 + t2 * 9 * k.k4)))
        theta = theta - f / df
    valid = (theta >= 0) & (theta < math.radians(89.0))
    scale = np.where(theta_d > 1e-12, np.tan(np.clip(theta, 0, math.radians(89.0))) / np.maximum(theta_d, 1e-12), 1.0)
    d = np.stack([xd * scale, yd * scale, np.ones_like(xd)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d, valid


def _score_map(class_img, classes, spec: SyntheticSceneSpec, rng) -> ScoreMap:
    onehot = (class_img[None] == np.arange(classes)[:, None, None]).astype(float)
    blurred = ndimage.gaussian_filter(onehot, sigma=(0, spec.boundary_blur_px, spec.boundary_blur_px))
    # the sharp half keeps the argmax on the true class; the blurred half softens boundaries
    scores = spec.score_gain * (0.5 * onehot + 0.5 * blurred)
    scores += rng.normal(0.0, 0.05 * spec.score_gain, size=scores.shape)
    if spec.label_noise > 0:
        field_ = ndimage.gaussian_filter(rng.standard_normal(class_img.shape), 3.0)
        blobs = field_ > np.quantile(field_, 1.0 - spec.label_noise)
        comp, n = ndimage.label(blobs)
        if n:
            wrong = rng.integers(1, classes, size=n + 1)
            new_cls = (class_img + wrong[comp]) % classes
            flip = comp > 0
            rows, cols = np.nonzero(flip)
            scores[new_cls[rows, cols], rows, cols] = scores[:, rows, cols].max(axis=0) + 0.5 * spec.score_gain
    return ScoreMap(scores.astype(np.float32))


def _render(class_img, depth, palette, rng) -> np.ndarray:
    pal = np.asarray(palette, float)
    rgb = pal[np.clip(class_img, 0, len(pal) - 1)]
    shade = np.where(np.isfinite(depth), 1.0 / (1.0 + np.nan_to_num(depth, posinf=0.0) / 80.0), 1.0)
    rgb = rgb * shade[..., None] + rng.normal(0.0, 2.0, size=rgb.shape)
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


@dataclass(eq=False)
class SyntheticFrame:
    """Everything generated for one scan."""

    index: int
    scan: LidarScan
    t_ref: float
    truth_labels: np.ndarray
    truth_world: np.ndarray
    origin: np.ndarray
    pose: np.ndarray
    class_images: dict = field(default_factory=dict)  # camera -> true class ids
    images: dict = field(default_factory=dict)  # camera -> RGB uint8
    score_maps: dict = field(default_factory=dict)  # camera -> ScoreMap


def stream_synthetic(spec: SyntheticSceneSpec, seed: int = 0):
    """Dataset header (no scans yet) and a generator of SyntheticFrame, one per scan.

    Frames must be consumed in order; the header and frames share one RNG.
    """
    rng = np.random.default_rng(seed)
    table = spec.classes
    labels = [table.index(p.label) for p in spec.primitives]
    sky = table.index("sky") if "sky" in table.names else 0
    lid = spec.lidar
    T_veh_ld = lid.T_veh_ld
    cams = []
    for c in spec.cameras:
        T_cam_ld = transform_invert(c.T_veh_cam) @ T_veh_ld
        cams.append(CameraCalibration(c.name, c.intrinsics, T_cam_ld))
    calib = Calibration(T_veh_ld, tuple(cams))

    # odometry stream, starts at t = 0 where the vehicle frame is the world frame
    t_end = spec.scan_start + spec.scans / lid.rate_hz + max(spec.image_offset, 0.0) + 0.2
    vt = np.arange(0.0, t_end, 1.0 / spec.velocity_rate_hz)
    vv, vw = spec.trajectory.twist_at(vt)
    sv, sw = spec.velocity_noise_std
    vv = vv + rng.normal(0.0, sv, size=vv.shape) if sv > 0 else vv.copy()
    vw = vw + rng.normal(0.0, sw, size=vw.shape) if sw > 0 else vw.copy()
    header = SyntheticDataset(spec, calib, VelocityStream(vt, vv, vw), [], np.zeros(spec.scans))

    def frames():
        ncol = lid.columns
        period = 1.0 / lid.rate_hz
        az = math.radians(lid.start_azimuth_deg) - np.radians(lid.azimuth_step_deg) * np.arange(ncol)
        el = lid.elevations
        dirs_ld = np.stack([np.cos(el)[None] * np.cos(az)[:, None], np.cos(el)[None] * np.sin(az)[:, None],
                            np.broadcast_to(np.sin(el)[None], (ncol, len(el)))], axis=-1)  # (ncol, rings, 3)
        ring_ids = np.broadcast_to(np.arange(len(el))[None], (ncol, len(el)))
        az_wrapped = np.mod(az + math.pi, 2 * math.pi) - math.pi
        cam_rays = [camera_rays(c.intrinsics) for c in spec.cameras]
        for s in range(spec.scans):
            t0 = spec.scan_start + s * period
            t_col = t0 + np.arange(ncol) * period / ncol
            L = spec.trajectory.pose_at(t_col) @ T_veh_ld.matrix  # world-from-lidar per column
            d_world = np.einsum("cij,crj->cri", L[:, :3, :3], dirs_ld)
            o_world = np.broadcast_to(L[:, None, :3, 3], d_world.shape)
            dist, cls = cast_rays(spec.primitives, labels, o_world.reshape(-1, 3), d_world.reshape(-1, 3),
                                  lid.max_range)
            dist = dist.reshape(ncol, -1)
            cls = cls.reshape(ncol, -1)
            if lid.range_noise > 0:
                dist = dist + rng.normal(0.0, lid.range_noise, size=dist.shape)
            hit = np.isfinite(dist) & (dist >= lid.min_range) & (dist <= lid.max_range)
            packets, lab_all, world_all = [], [], []
            for p0 in range(0, ncol, lid.columns_per_packet):
                sl = slice(p0, min(p0 + lid.columns_per_packet, ncol))
                h = hit[sl]
                if not h.any():
                    continue
                pts = dirs_ld[sl][h] * dist[sl][h][:, None]
                packets.append(LidarPacket(float(t_col[p0]), pts.astype(np.float32).astype(float),
                                           ring_ids[sl][h].astype(np.uint8),
                                           np.broadcast_to(az_wrapped[sl][:, None], h.shape)[h].astype(np.float32)))
                lab_all.append(cls[sl][h])
                world_all.append(o_world[sl][h] + d_world[sl][h] * dist[sl][h][:, None])

            t_ref = t0 + spec.image_offset
            W = spec.trajectory.pose_at([t_ref])[0]
            fr = SyntheticFrame(s, LidarScan(tuple(packets)), float(t_ref),
                                np.concatenate(lab_all) if lab_all else np.empty(0, np.int64),
                                np.concatenate(world_all) if world_all else np.empty((0, 3)),
                                (W @ T_veh_ld.matrix)[:3, 3], W)
            for c, (rays, valid) in zip(spec.cameras, cam_rays):
                C = W @ c.T_veh_cam.matrix
                d_w = rays.reshape(-1, 3) @ C[:3, :3].T
                depth, ccls = cast_rays(spec.primitives, labels, C[:3, 3], d_w, 200.0)
                ccls = np.where(valid.ravel() & (ccls >= 0), ccls, sky).reshape(rays.shape[:2])
                depth = np.where(valid.ravel(), depth, np.inf).reshape(rays.shape[:2])
                fr.class_images[c.name] = ccls
                fr.images[c.name] = _render(ccls, depth, table.palette, rng)
                fr.score_maps[c.name] = _score_map(ccls, table.classes, spec, rng)
            yield fr

    return header, frames()


def generate_synthetic(spec: SyntheticSceneSpec, seed: int = 0) -> SyntheticDataset:
    """Whole dataset in memory. Use ``stream_synthetic`` for long sequences."""
    ds, frames = stream_synthetic(spec, seed)
    origins, poses = [], []
    for fr in frames:
        ds.scans.append(fr.scan)
        ds.truth_labels.append(fr.truth_labels)
        ds.truth_world.append(fr.truth_world)
        ds.frame_times[fr.index] = fr.t_ref
        origins.append(fr.origin)
        poses.append(fr.pose)
        for name in fr.images:
            ds.class_images[(name, fr.index)] = fr.class_images[name]
            ds.images[(name, fr.index)] = fr.images[name]
            ds.score_maps[(name, fr.index)] = fr.score_maps[name]
    ds.origins_world = np.array(origins).reshape(-1, 3)
    ds.poses_ref = np.array(poses).reshape(-1, 4, 4)
    return ds


# ------------------------------------------------------------ fixtures

def _street(length_lo, length_hi, road_half=4.0, walk=8.0):
    return [
        Plane(0.0, (length_lo, -road_half), (length_hi, road_half), "road"),
        Plane(0.0, (length_lo, road_half), (length_hi, road_half + walk), "undrivable_road"),
        Plane(0.0, (length_lo, -road_half - walk), (length_hi, -road_half), "undrivable_road"),
    ]


def single_wall_scene(speed: float = 0.0, scans: int = 1, wall_x: float = 10.0, **kw) -> SyntheticSceneSpec:
    """One 40 m wide wall facing the platform at ``wall_x`` (negative: behind it) over a road plane."""
    far = wall_x + math.copysign(0.5, wall_x)
    prims = (Box((min(wall_x, far), -20.0, 0.0), (max(wall_x, far), 20.0, 6.0), "building"),
             Plane(0.0, (-30.0, -30.0), (30.0, 30.0), "road"))
    traj = Trajectory((TwistSegment(1e3, (speed, 0.0, 0.0)),))
    return SyntheticSceneSpec(prims, traj, scans=scans, **kw)


def two_wall_scene(scans: int = 1, **kw) -> SyntheticSceneSpec:
    """Low front wall at 5 m in front of a tall back wall at 10 m, static platform.

    The lidar (1.8 m) sees over the 1.9 m front wall onto a band of the back
    wall that the camera, 0.5 m lower, cannot see.
    """
    prims = (
        Box((5.0, -2.0, 0.0), (5.3, 2.0, 1.9), "vehicle"),
        Box((10.0, -15.0, 0.0), (10.5, 15.0, 8.0), "building"),
        Plane(0.0, (-30.0, -30.0), (30.0, 30.0), "road"),
    )
    cams = kw.pop("cameras", (CameraSpec("front", default_intrinsics(), (0.0, 0.0, 1.3, 0.0, 0.0, 0.0)),))
    return SyntheticSceneSpec(prims, Trajectory((TwistSegment(1e3),)), cameras=cams, scans=scans, **kw)


def urban_scene(scans: int = 100, speed: float = 8.0, label_noise: float = 0.01, seed: int = 7,
                **kw) -> SyntheticSceneSpec:
    """Street with buildings, low walls, poles, pedestrians, trees and parked cars."""
    rng = np.random.default_rng(seed)
    length = speed * (scans / 10.0 + 1.0) + 40.0
    x0, x1 = -25.0, length
    prims = _street(x0, x1)
    # building blocks with gaps
    x = x0
    while x < x1:
        w = rng.uniform(12.0, 25.0)
        for side in (1, -1):
            y_in = side * rng.uniform(12.0, 13.0)
            depth = rng.uniform(6.0, 10.0)
            ylo, yhi = sorted((y_in, y_in + side * depth))
            prims.append(Box((x, ylo, 0.0), (x + w, yhi, rng.uniform(6.0, 14.0)), "building"))
        x += w + rng.uniform(3.0, 6.0)
    # low garden walls / fences in front of the buildings
    x = x0 + 5.0
    while x < x1:
        w = rng.uniform(4.0, 9.0)
        side = rng.choice([1, -1])
        y = side * rng.uniform(9.5, 10.5)
        prims.append(Box((x, min(y, y + 0.3 * side), 0.0), (x + w, max(y, y + 0.3 * side), rng.uniform(1.0, 1.6)),
                         "fence" if rng.random() < 0.5 else "building"))
        x += w + rng.uniform(4.0, 10.0)
    # poles and signs along both kerbs
    x = x0 + 3.0
    while x < x1:
        for side in (1, -1):
            y = side * rng.uniform(4.6, 5.4)
            xx = x + rng.uniform(-1.0, 1.0)
            prims.append(Cylinder((xx, y), rng.uniform(0.08, 0.14), 0.0, rng.uniform(4.0, 6.0), "pole"))
            if rng.random() < 0.3:
                prims.append(Box((xx - 0.03, y - 0.35, 2.2), (xx + 0.03, y + 0.35, 2.9), "sign"))
        x += rng.uniform(6.0, 10.0)
    # pedestrians on the sidewalks
    x = x0 + 6.0
    while x < x1:
        side = rng.choice([1, -1])
        y = side * rng.uniform(5.5, 9.0)
        xx = x + rng.uniform(-2.0, 2.0)
        h = rng.uniform(1.55, 1.85)
        prims.append(Box((xx - 0.25, y - 0.25, 0.0), (xx + 0.25, y + 0.25, h),
                         "pedestrian" if rng.random() < 0.8 else "rider"))
        x += rng.uniform(3.0, 7.0)
    # trees: trunk + canopy
    x = x0 + 10.0
    while x < x1:
        side = rng.choice([1, -1])
        y = side * rng.uniform(7.5, 10.5)
        xx = x + rng.uniform(-2.0, 2.0)
        prims.append(Cylinder((xx, y), 0.2, 0.0, 2.5, "vegetation"))
        prims.append(Cylinder((xx, y), rng.uniform(1.2, 2.0), 2.5, rng.uniform(5.0, 7.0), "vegetation"))
        x += rng.uniform(10.0, 20.0)
    # parked cars at the road edge
    x = x0 + 12.0
    while x < x1:
        side = rng.choice([1, -1])
        ylo = 2.2 if side > 0 else -4.0
        prims.append(Box((x, ylo, 0.0), (x + 4.4, ylo + 1.8, 1.5), "vehicle"))
        x += rng.uniform(12.0, 25.0)

    duration = scans / 10.0 + 1.0
    traj = Trajectory((
        TwistSegment(0.35 * duration, (speed, 0.0, 0.0), (0.0, 0.0, 0.0)),
        TwistSegment(0.15 * duration, (speed, 0.0, 0.0), (0.0, 0.0, 0.03)),
        TwistSegment(0.15 * duration, (speed, 0.0, 0.0), (0.0, 0.0, -0.03)),
        TwistSegment(0.35 * duration + 1e3, (speed, 0.0, 0.0), (0.0, 0.0, 0.0)),
    ))
    kw.setdefault("velocity_noise_std", (0.02, 0.002))
    return SyntheticSceneSpec(tuple(prims), traj, scans=scans, label_noise=label_noise, **kw)


FIXTURES = {"urban": urban_scene, "two_wall": two_wall_scene, "single_wall": single_wall_scene}


def scene_from_dict(doc: dict) -> SyntheticSceneSpec:
    """Scene description from a config mapping (``fixture`` shortcut or explicit primitives)."""
    doc = dict(doc or {})
    if "fixture" in doc:
        name = doc.pop("fixture")
        if name not in FIXTURES:
            raise ConfigError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}")
        return FIXTURES[name](**doc)
    if "primitives" not in doc or not doc["primitives"]:
        raise ConfigError("scene needs 'primitives' or 'fixture'")
    prims = tuple(primitive_from_dict(p) for p in doc["primitives"])
    traj = Trajectory(tuple(TwistSegment(float(s["duration"]), tuple(s.get("v", (0, 0, 0))), tuple(s.get("w", (0, 0, 0))))
                            for s in doc.get("trajectory", [{"duration": 1e3}])))
    lidar = LidarModel(**doc.get("lidar", {}))
    cams = tuple(CameraSpec(c["name"], FisheyeIntrinsics(**c["intrinsics"]), tuple(c.get("mount", (1.5, 0, 1.3, 0, 0, 0))))
                 for c in doc.get("cameras", [])) or (CameraSpec("front", default_intrinsics()),)
    extra = {k: doc[k] for k in ("scans", "scan_start", "image_offset", "label_noise", "score_gain",
                                 "boundary_blur_px", "velocity_rate_hz") if k in doc}
    if "velocity_noise_std" in doc:
        extra["velocity_noise_std"] = tuple(doc["velocity_noise_std"])
    return SyntheticSceneSpec(prims, traj, lidar, cams, **extra)
