"""Gaussian ego-motion prediction at lidar packet timestamps.

Poses are predicted relative to the vehicle frame at the reference (image)
time ``t_ref``.  Packets earlier than ``t_ref`` are reached by chaining
backwards in time, later ones by chaining forwards; each step augments the
running pose with the velocity reading and both timestamps, pushes the
sigma points through the kinematic model and recovers a Gaussian.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .errors import EmptyStream
from .geometry import Pose6, matrices_to_poses, poses_to_matrices, se3_exp, euler_to_matrix
from .unscented import GaussianState, UTParams, recover, utd

POSE_DIM = 6
AUG_DIM = 14
INIT_COV = 1e-12
DEFAULT_SIGMA_T = 1e-4


@dataclass(frozen=True, eq=False)
class VelocitySample:
    t: float
    v: np.ndarray
    w: np.ndarray


class VelocityStream:
    """Time-sorted velocity readings stored column-wise."""

    def __init__(self, t, v, w):
        self.t = np.asarray(t, dtype=float).reshape(-1)
        self.v = np.asarray(v, dtype=float).reshape(-1, 3)
        self.w = np.asarray(w, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.v) == len(self.w)):
            raise ValueError("velocity columns have different lengths")
        if np.any(np.diff(self.t) < 0):
            raise ValueError("velocity stream must be sorted by time")
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.w))):
            raise ValueError("velocity stream contains non-finite values")

    @classmethod
    def from_samples(cls, samples) -> "VelocityStream":
        samples = list(samples)
        if not samples:
            return cls(np.empty(0), np.empty((0, 3)), np.empty((0, 3)))
        return cls([s.t for s in samples], [s.v for s in samples], [s.w for s in samples])

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> VelocitySample:
        return VelocitySample(float(self.t[i]), self.v[i].copy(), self.w[i].copy())


@dataclass(frozen=True, eq=False)
class VelocityNoise:
    sigma_v: np.ndarray = field(default_factory=lambda: np.diag([0.05, 0.05, 0.05]) ** 2)
    sigma_w: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 0.01]) ** 2)
    sigma_t: float = DEFAULT_SIGMA_T

    def __post_init__(self):
        for name in ("sigma_v", "sigma_w"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (3, 3) or np.min(np.linalg.eigvalsh(0.5 * (m + m.T))) < -1e-12:
                raise ValueError(f"{name} must be a 3x3 PSD covariance")
            object.__setattr__(self, name, m)
        if self.sigma_t < 0:
            raise ValueError("sigma_t must be >= 0")


@dataclass(frozen=True, eq=False)
class EgoPoseSequence:
    entries: list  # [(t_pk, GaussianState over [x, y, z, roll, pitch, yaw])]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def means(self) -> np.ndarray:
        return np.array([g.mean for _, g in self.entries]).reshape(-1, POSE_DIM)

    @property
    def covs(self) -> np.ndarray:
        return np.array([g.cov for _, g in self.entries]).reshape(-1, POSE_DIM, POSE_DIM)


def _as_stream(stream) -> VelocityStream:
    return stream if isinstance(stream, VelocityStream) else VelocityStream.from_samples(stream)


def nearest_index(stream: VelocityStream, t) -> np.ndarray:
    """Index of the closest sample for each query; ties pick the earlier one."""
    if len(stream) == 0:
        raise EmptyStream("velocity stream is empty")
    t = np.asarray(t, dtype=float)
    hi = np.clip(np.searchsorted(stream.t, t, side="left"), 0, len(stream) - 1)
    lo = np.clip(hi - 1, 0, len(stream) - 1)
    pick_lo = np.abs(t - stream.t[lo]) <= np.abs(stream.t[hi] - t)
    return np.where(pick_lo, lo, hi)


def nearest_velocity(stream, t: float) -> VelocitySample:
    s = _as_stream(stream)
    return s[int(nearest_index(s, t))]


def kinematic_step_batch(poses, v, w, dt, angular_rates: str = "body") -> np.ndarray:
    """Constant-twist motion of (K, 6) poses over (K,) durations.

    ``angular_rates="body"`` integrates (w, v) as a body-frame twist on SE(3).
    ``"euler"`` instead treats w as roll/pitch/yaw rates and moves the
    position along the start-of-step heading.
    """
    poses = np.asarray(poses, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    dt = np.asarray(dt, dtype=float)[..., None]
    if angular_rates == "body":
        delta = se3_exp(w * dt, v * dt)
        return matrices_to_poses(poses_to_matrices(poses) @ delta)
    if angular_rates == "euler":
        out = poses.copy()
        out[..., :3] += np.einsum("...ij,...j->...i", euler_to_matrix(poses[..., 3:6]), v * dt)
        out[..., 3:6] += w * dt
        return out
    raise ValueError(f"unknown angular rate convention {angular_rates!r}")


def kinematic_step(pose: Pose6, v, w, t_from: float, t_to: float, angular_rates: str = "body") -> Pose6:
    out = kinematic_step_batch(pose.as_array()[None], np.asarray(v, dtype=float)[None],
                               np.asarray(w, dtype=float)[None], np.array([t_to - t_from]), angular_rates)
    return Pose6.from_array(out[0])


def _branch(order, forward, t_rel, stream, idx, noise, params, init, angular_rates, out):
    mean = np.zeros(POSE_DIM)
    cov = init.copy()
    t_star = 0.0
    noise_block = [noise.sigma_v, noise.sigma_w, np.diag([noise.sigma_t**2, noise.sigma_t**2])]
    for i in order:
        vs, ws = stream.v[idx[i]], stream.w[idx[i]]
        # timestamp pair kept in (earlier, later) order as in the augmented state
        times = [t_star, t_rel[i]] if forward else [t_rel[i], t_star]
        aug = GaussianState(np.concatenate([mean, vs, ws, times]), block_diag(cov, *noise_block))
        sig = utd(aug, params)
        x = sig.points
        dt = (x[:, 13] - x[:, 12]) if forward else (x[:, 12] - x[:, 13])
        y = kinematic_step_batch(x[:, :6], x[:, 6:9], x[:, 9:12], dt, angular_rates)
        mean, cov = recover(y, sig.wm, sig.wc)
        out[i] = GaussianState(mean, cov)
        t_star = t_rel[i]


def predict_ego_motion(t_ref: float, packet_times, stream, noise: VelocityNoise = VelocityNoise(),
                       params: UTParams = UTParams(), init_cov: float = INIT_COV,
                       angular_rates: str = "body") -> EgoPoseSequence:
    """Predict the Gaussian vehicle pose at each packet time relative to t_ref."""
    stream = _as_stream(stream)
    if len(stream) == 0:
        raise EmptyStream("velocity stream is empty")
    times = np.asarray(packet_times, dtype=float)
    if times.size and np.any(np.diff(times) <= 0):
        raise ValueError("packet timestamps must be strictly ascending")
    idx = nearest_index(stream, times)
    # relative times keep sigma-point timestamps well conditioned
    t_rel = times - t_ref
    init = INIT_COV * np.eye(POSE_DIM) if init_cov is None else init_cov * np.eye(POSE_DIM)
    out = [None] * len(times)
    back = [i for i in range(len(times) - 1, -1, -1) if t_rel[i] < 0]
    fwd = [i for i in range(len(times)) if t_rel[i] >= 0]
    _branch(back, False, t_rel, stream, idx, noise, params, init, angular_rates, out)
    _branch(fwd, True, t_rel, stream, idx, noise, params, init, angular_rates, out)
    return EgoPoseSequence([(float(times[i]), out[i]) for i in range(len(times))])


def integrate_odometry(stream, times, angular_rates: str = "body") -> np.ndarray:
    """Mean vehicle poses (4x4) at ``times`` by zero-order-hold integration.

    The odometry frame is the vehicle frame at the first stream sample.
    """
    stream = _as_stream(stream)
    if len(stream) == 0:
        raise EmptyStream("velocity stream is empty")
    dts = np.diff(stream.t)
    steps = se3_exp(stream.w[:-1] * dts[:, None], stream.v[:-1] * dts[:, None])
    cum = np.empty((len(stream), 4, 4))
    cum[0] = np.eye(4)
    for k in range(len(dts)):
        cum[k + 1] = cum[k] @ steps[k]
    times = np.asarray(times, dtype=float)
    k = np.clip(np.searchsorted(stream.t, times, side="right") - 1, 0, len(stream) - 1)
    dt = times - stream.t[k]
    if angular_rates != "body":
        raise ValueError("odometry integration supports body rates only")
    return cum[k] @ se3_exp(stream.w[k] * dt[:, None], stream.v[k] * dt[:, None])
