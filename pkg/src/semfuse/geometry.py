"""Rigid transforms, 6-DoF poses and the equidistant fisheye projection.

Frame conventions
-----------------
* ``T_a_b`` maps homogeneous points expressed in frame ``b`` into frame ``a``.
  ``T_cam_ld`` therefore takes lidar points into the camera frame and
  ``T_veh_ld`` takes lidar points into the vehicle base frame.
* Euler angles follow R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
* Camera frame: z forward (optical axis), x right, y down.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import BehindCamera, ConfigError

ORTHO_TOL = 1e-9
# below this radius the theta_d / r ratio is evaluated by its series expansion
_SMALL_R = 1e-8


def wrap_angle(a):
    """Map angles to (-pi, pi]. Works on scalars and arrays."""
    w = math.pi - np.mod(math.pi - np.asarray(a, dtype=float), 2.0 * math.pi)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class Pose6:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("roll", "pitch", "yaw"):
            object.__setattr__(self, name, float(wrap_angle(getattr(self, name))))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw])

    @classmethod
    def from_array(cls, a) -> "Pose6":
        a = np.asarray(a, dtype=float)
        return cls(*(float(v) for v in a[:6]))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """4x4 homogeneous rigid transform. Validated on construction."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("transform contains non-finite entries")
        if np.max(np.abs(m[3] - [0.0, 0.0, 0.0, 1.0])) > ORTHO_TOL:
            raise ValueError("last row of a rigid transform must be [0, 0, 0, 1]")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation block is not orthonormal with det +1")
        m[3] = [0.0, 0.0, 0.0, 1.0]
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    @classmethod
    def from_translation(cls, x, y, z) -> "RigidTransform":
        m = np.eye(4)
        m[:3, 3] = (x, y, z)
        return cls(m)

    def apply(self, points) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return transform_compose(self, other)

    def __eq__(self, other):
        return isinstance(other, RigidTransform) and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash(self.matrix.tobytes())


@dataclass(frozen=True)
class FisheyeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    k4: float = 0.0
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")

    @property
    def distortion(self) -> tuple[float, float, float, float]:
        return (self.k1, self.k2, self.k3, self.k4)


@dataclass(frozen=True)
class HomogeneousPoint:
    x: float
    y: float
    z: float
    w: float = 1.0

    def __post_init__(self):
        if self.w != 1.0:
            raise ValueError("homogeneous lidar points carry w == 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w])


# ---------------------------------------------------------------- rotations

def euler_to_matrix(rpy) -> np.ndarray:
    """Rotation matrices for an (..., 3) array of (roll, pitch, yaw)."""
    rpy = np.asarray(rpy, dtype=float)
    cr, sr = np.cos(rpy[..., 0]), np.sin(rpy[..., 0])
    cp, sp = np.cos(rpy[..., 1]), np.sin(rpy[..., 1])
    cy, sy = np.cos(rpy[..., 2]), np.sin(rpy[..., 2])
    r = np.empty(rpy.shape[:-1] + (3, 3))
    r[..., 0, 0] = cy * cp
    r[..., 0, 1] = cy * sp * sr - sy * cr
    r[..., 0, 2] = cy * sp * cr + sy * sr
    r[..., 1, 0] = sy * cp
    r[..., 1, 1] = sy * sp * sr + cy * cr
    r[..., 1, 2] = sy * sp * cr - cy * sr
    r[..., 2, 0] = -sp
    r[..., 2, 1] = cp * sr
    r[..., 2, 2] = cp * cr
    return r


def matrix_to_euler(r) -> np.ndarray:
    """Inverse of :func:`euler_to_matrix` for (..., 3, 3) rotations."""
    r = np.asarray(r, dtype=float)
    roll = np.arctan2(r[..., 2, 1], r[..., 2, 2])
    pitch = np.arctan2(-r[..., 2, 0], np.hypot(r[..., 0, 0], r[..., 1, 0]))
    yaw = np.arctan2(r[..., 1, 0], r[..., 0, 0])
    return np.stack([roll, pitch, yaw], axis=-1)


def poses_to_matrices(poses) -> np.ndarray:
    """(..., 6) pose vectors [x, y, z, roll, pitch, yaw] -> (..., 4, 4) matrices."""
    poses = np.asarray(poses, dtype=float)
    m = np.zeros(poses.shape[:-1] + (4, 4))
    m[..., :3, :3] = euler_to_matrix(poses[..., 3:6])
    m[..., :3, 3] = poses[..., :3]
    m[..., 3, 3] = 1.0
    return m


def matrices_to_poses(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.concatenate([m[..., :3, 3], matrix_to_euler(m[..., :3, :3])], axis=-1)


def _hat(w):
    w = np.asarray(w, dtype=float)
    k = np.zeros(w.shape[:-1] + (3, 3))
    k[..., 0, 1], k[..., 0, 2] = -w[..., 2], w[..., 1]
    k[..., 1, 0], k[..., 1, 2] = w[..., 2], -w[..., 0]
    k[..., 2, 0], k[..., 2, 1] = -w[..., 1], w[..., 0]
    return k


def se3_exp(omega, v) -> np.ndarray:
    """Exponential of body twists; omega, v are (..., 3). Returns (..., 4, 4).

    Rodrigues coefficients switch to Taylor series for |omega| < 1e-4 so the
    result stays accurate (and exactly invertible by negation) near zero.
    """
    omega = np.asarray(omega, dtype=float)
    v = np.asarray(v, dtype=float)
    th2 = np.sum(omega * omega, axis=-1)
    th = np.sqrt(th2)
    small = th < 1e-4
    safe = np.where(small, 1.0, th)
    a = np.where(small, 1.0 - th2 / 6.0 + th2 * th2 / 120.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - th2 / 24.0 + th2 * th2 / 720.0, (1.0 - np.cos(safe)) / safe**2)
    c = np.where(small, 1.0 / 6.0 - th2 / 120.0 + th2 * th2 / 5040.0, (safe - np.sin(safe)) / safe**3)
    k = _hat(omega)
    k2 = k @ k
    eye = np.eye(3)
    rot = eye + a[..., None, None] * k + b[..., None, None] * k2
    jac = eye + b[..., None, None] * k + c[..., None, None] * k2
    out = np.zeros(omega.shape[:-1] + (4, 4))
    out[..., :3, :3] = rot
    out[..., :3, 3] = np.einsum("...ij,...j->...i", jac, v)
    out[..., 3, 3] = 1.0
    return out


# ------------------------------------------------------------ operations

def pose_to_transform(p: Pose6) -> RigidTransform:
    return RigidTransform(poses_to_matrices(p.as_array()))


def transform_to_pose(t: RigidTransform) -> Pose6:
    return Pose6.from_array(matrices_to_poses(t.matrix))


def transform_compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return RigidTransform(a.matrix @ b.matrix)


def transform_invert(t: RigidTransform) -> RigidTransform:
    m = np.eye(4)
    rt = t.rotation.T
    m[:3, :3] = rt
    m[:3, 3] = -rt @ t.translation
    return RigidTransform(m)


def invert_matrices(m) -> np.ndarray:
    """Closed-form rigid inverse of a stack of (..., 4, 4) matrices."""
    m = np.asarray(m, dtype=float)
    out = np.zeros_like(m)
    rt = np.swapaxes(m[..., :3, :3], -1, -2)
    out[..., :3, :3] = rt
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", rt, m[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


def project_fisheye_array(k: FisheyeIntrinsics, p_cam) -> np.ndarray:
    """Vectorised fisheye projection of (..., 3) camera-frame points.

    No z check here: callers mask points with z <= 0 themselves.
    """
    p = np.asarray(p_cam, dtype=float)
    z = p[..., 2]
    a = p[..., 0] / z
    b = p[..., 1] / z
    r2 = a * a + b * b
    r = np.sqrt(r2)
    theta = np.arctan(r)
    t2 = theta * theta
    k1, k2, k3, k4 = k.distortion
    poly = 1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4)))
    small = r < _SMALL_R
    safe_r = np.where(small, 1.0, r)
    # atan(r)/r = 1 - r^2/3 + O(r^4); theta^2 ~ r^2 in the polynomial
    ratio = np.where(small, (1.0 - r2 / 3.0) * (1.0 + k1 * r2), theta * poly / safe_r)
    xd = ratio * a
    yd = ratio * b
    u = k.fx * (xd + k.skew * yd) + k.cx
    v = k.fy * yd + k.cy
    return np.stack([u, v], axis=-1)


def project_fisheye(k: FisheyeIntrinsics, p_cam) -> tuple[float, float]:
    """Pixel coordinates of a single camera-frame point.

    Raises :class:`BehindCamera` when z <= 0.
    """
    if isinstance(p_cam, HomogeneousPoint):
        xyz = p_cam.as_array()[:3]
    else:
        xyz = np.asarray(p_cam, dtype=float)[:3]
    if not xyz[2] > 0:
        raise BehindCamera(f"point {xyz.tolist()} is not in front of the camera")
    u, v = project_fisheye_array(k, xyz)
    return float(u), float(v)


# ------------------------------------------------------- calibration file

_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "skew", "k1", "k2", "k3", "k4", "width", "height")


@dataclass(frozen=True)
class CameraCalibration:
    name: str
    intrinsics: FisheyeIntrinsics
    T_cam_ld: RigidTransform


@dataclass(frozen=True)
class Calibration:
    T_veh_ld: RigidTransform
    cameras: tuple[CameraCalibration, ...]

    def camera(self, name: str) -> CameraCalibration:
        for c in self.cameras:
            if c.name == name:
                return c
        raise ConfigError(f"unknown camera {name!r}")


def _matrix_from_yaml(value, where) -> RigidTransform:
    try:
        arr = np.asarray(value, dtype=float).reshape(4, 4)
        return RigidTransform(arr)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: expected a row-major 4x4 rigid transform ({exc})") from exc


def calibration_from_dict(doc: dict) -> Calibration:
    if not isinstance(doc, dict):
        raise ConfigError("calibration document must be a mapping")
    for key in ("T_veh_ld", "cameras"):
        if key not in doc:
            raise ConfigError(f"calibration is missing key {key!r}")
    cams = []
    if not isinstance(doc["cameras"], dict) or not doc["cameras"]:
        raise ConfigError("calibration 'cameras' must be a non-empty mapping")
    for name, entry in doc["cameras"].items():
        missing = [k for k in _INTRINSIC_KEYS + ("T_cam_ld",) if k not in entry]
        if missing:
            raise ConfigError(f"camera {name!r} is missing keys {missing}")
        try:
            intr = FisheyeIntrinsics(
                **{k: float(entry[k]) for k in _INTRINSIC_KEYS[:-2]},
                width=int(entry["width"]),
                height=int(entry["height"]),
            )
        except ValueError as exc:
            raise ConfigError(f"camera {name!r}: {exc}") from exc
        cams.append(CameraCalibration(str(name), intr, _matrix_from_yaml(entry["T_cam_ld"], f"{name}.T_cam_ld")))
    return Calibration(_matrix_from_yaml(doc["T_veh_ld"], "T_veh_ld"), tuple(cams))


def calibration_to_dict(cal: Calibration) -> dict:
    cams = {}
    for c in cal.cameras:
        k = c.intrinsics
        entry = {name: float(getattr(k, name)) for name in _INTRINSIC_KEYS[:-2]}
        entry["width"] = int(k.width)
        entry["height"] = int(k.height)
        entry["T_cam_ld"] = [float(x) for x in c.T_cam_ld.matrix.ravel()]
        cams[c.name] = entry
    return {"T_veh_ld": [float(x) for x in cal.T_veh_ld.matrix.ravel()], "cameras": cams}


def load_calibration(path) -> Calibration:
    try:
        text = Path(path).read_text(encoding="utf-8")
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return calibration_from_dict(doc)


def save_calibration(cal: Calibration, path) -> None:
    Path(path).write_text(yaml.safe_dump(calibration_to_dict(cal), sort_keys=False), encoding="utf-8")
