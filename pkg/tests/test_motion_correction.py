import numpy as np
import pytest

from semfuse.ego_motion import VelocityNoise, predict_ego_motion
from semfuse.geometry import (FisheyeIntrinsics, Pose6, RigidTransform, pose_to_transform, poses_to_matrices,
                              project_fisheye_array, transform_invert)
from semfuse.motion_correction import (CorrectedSigmaCloud, LidarPacket, LidarScan, correct_packet, correct_scan,
                                       project_corrected, project_points, recover_corrected_points)
from semfuse.synthetic import generate_synthetic, single_wall_scene
from semfuse.unscented import GaussianState, UTParams, utd

from conftest import random_psd, random_rigid

K = FisheyeIntrinsics(500.0, 480.0, 320.0, 240.0, width=640, height=480)


def _packet(rng, m=20, t=0.0):
    return LidarPacket(t, rng.uniform(-10, 10, (m, 3)))


def _pose(mean=None, cov=None):
    return GaussianState(np.zeros(6) if mean is None else np.asarray(mean, float),
                         np.zeros((6, 6)) if cov is None else np.asarray(cov, float))


def test_packet_and_scan_validation():
    with pytest.raises(ValueError):
        LidarPacket(0.0, np.empty((0, 3)))
    with pytest.raises(ValueError):
        LidarPacket(0.0, [[np.nan, 0, 0]])
    with pytest.raises(ValueError):
        LidarScan((LidarPacket(0.1, [[1, 0, 0]]), LidarPacket(0.1, [[2, 0, 0]])))


def test_scan_stacked_indices():
    scan = LidarScan((LidarPacket(0.0, [[1, 0, 0], [2, 0, 0]]), LidarPacket(0.1, [[3, 0, 0]])))
    pts, pk, j = scan.stacked()
    assert pts[:, 0].tolist() == [1, 2, 3]
    assert pk.tolist() == [0, 0, 1] and j.tolist() == [0, 1, 0]
    assert scan.num_points == 3


def test_zero_pose_keeps_raw_points(rng):
    pk = _packet(rng)
    c = correct_packet(pk, _pose(), random_rigid(rng), UTParams())
    assert c.sigma.shape == (20, 13, 3)
    assert np.allclose(c.sigma, pk.points[:, None, :], atol=1e-12, rtol=0)


def test_pure_translation_shift(rng):
    pk = _packet(rng)
    c = correct_packet(pk, _pose([0.1, 0, 0, 0, 0, 0]), RigidTransform.identity())
    assert np.allclose(c.sigma, pk.points[:, None, :] + [0.1, 0, 0], atol=1e-12)


def test_quarter_yaw_sandwich():
    pts = np.array([[1.0, 0.0, 0.0], [2.0, -1.0, 0.5], [0.0, 3.0, -1.0]])
    t_veh_ld = RigidTransform.from_translation(1.5, 0.2, 1.8)
    c = correct_packet(LidarPacket(0.0, pts), _pose([0, 0, 0, 0, 0, np.pi / 2]), t_veh_ld)
    yaw = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1.0]])
    for j, p in enumerate(pts):
        ref = np.linalg.inv(t_veh_ld.matrix) @ yaw @ t_veh_ld.matrix @ np.append(p, 1.0)
        assert np.allclose(c.sigma[j], ref[:3], atol=1e-12)


def test_weights_reused_from_pose_decomposition(rng):
    g = _pose(rng.normal(0, 0.1, 6), random_psd(rng, 6, 0.01))
    prm = UTParams(0.8, 0.5, 2.0)
    c = correct_packet(_packet(rng), g, random_rigid(rng), prm)
    sig = utd(g, prm)
    assert np.array_equal(c.wm, sig.wm) and np.array_equal(c.wc, sig.wc)


def test_translation_uncertainty_passes_through(rng):
    cov = np.zeros((6, 6))
    cov[:3, :3] = random_psd(rng, 3, 0.05) + 1e-4 * np.eye(3)
    pk = _packet(rng)
    m, s = recover_corrected_points(correct_scan(LidarScan((pk,)), [_pose(cov=cov)], RigidTransform.identity()))
    assert np.allclose(m, pk.points, atol=1e-12)
    assert np.allclose(s, cov[:3, :3][None], atol=1e-12)


def test_recovered_covariances_symmetric_psd(rng):
    g = _pose(rng.normal(0, 0.2, 6), random_psd(rng, 6, 0.05))
    _, s = recover_corrected_points(correct_scan(LidarScan((_packet(rng),)), [g], random_rigid(rng)))
    assert np.array_equal(s, np.swapaxes(s, 1, 2))
    assert np.linalg.eigvalsh(s).min() >= -1e-12


def test_zero_motion_identity_whole_scan(rng):
    packets = tuple(_packet(rng, 30, t) for t in np.arange(5) * 0.01)
    scan = LidarScan(packets)
    m, s = recover_corrected_points(correct_scan(scan, [_pose()] * 5, random_rigid(rng)))
    assert np.allclose(m, scan.stacked()[0], atol=1e-12, rtol=0)
    assert np.abs(s).max() < 1e-12


def test_correct_scan_needs_one_pose_per_packet(rng):
    with pytest.raises(ValueError):
        correct_scan(LidarScan((_packet(rng),)), [_pose(), _pose()], RigidTransform.identity())


def test_optical_axis_point():
    c = correct_scan(LidarScan((LidarPacket(0.0, [[0.0, 0.0, 7.0]]),)), [_pose()], RigidTransform.identity())
    pp = project_corrected(c, RigidTransform.identity(), K)
    assert np.allclose(pp.mean_uv[0], [K.cx, K.cy], atol=1e-12)
    assert np.allclose(pp.cov_uv[0], 0.0, atol=1e-12)
    assert pp.range[0] == pytest.approx(7.0)


def test_projection_consistent_with_mean(rng):
    pts = np.column_stack([rng.uniform(-3, 3, 50), rng.uniform(-3, 3, 50), rng.uniform(2, 20, 50)])
    g = _pose(rng.normal(0, 0.2, 6))
    t_cam_ld = pose_to_transform(Pose6(0.1, -0.2, 0.05, 0.01, 0.02, -0.03))
    pp = project_corrected(correct_scan(LidarScan((LidarPacket(0.0, pts),)), [g], RigidTransform.identity()),
                           t_cam_ld, K)
    assert np.allclose(pp.mean_uv, project_fisheye_array(K, t_cam_ld.apply(pp.mean_xyz)), atol=1e-9)


def test_sideways_uncertainty_elongates_u():
    cov = np.zeros((6, 6))
    cov[0, 0] = 0.04
    g = _pose(cov=cov)
    c = correct_scan(LidarScan((LidarPacket(0.0, [[0.5, 0.3, 6.0]]),)), [g], RigidTransform.identity())
    pp = project_corrected(c, RigidTransform.identity(), K)
    # Monte-Carlo oracle on the same pose distribution
    rng = np.random.default_rng(0)
    dx = rng.normal(0, 0.2, 100_000)
    cam = np.column_stack([0.5 + dx, np.full_like(dx, 0.3), np.full_like(dx, 6.0)])
    mc = np.cov(project_fisheye_array(K, cam).T)
    assert pp.cov_uv[0, 0, 0] > 100 * abs(pp.cov_uv[0, 1, 1])
    assert pp.cov_uv[0, 0, 0] == pytest.approx(mc[0, 0], rel=0.1)
    assert abs(pp.cov_uv[0, 1, 1]) <= 0.1 * mc[0, 0]


def test_sigma_behind_camera_excludes_point():
    cov = np.zeros((6, 6))
    cov[2, 2] = 1.0
    pts = [[0.0, 0.0, 0.5], [0.0, 0.0, 10.0], [0.0, 0.0, -3.0]]
    c = correct_scan(LidarScan((LidarPacket(0.0, pts),)), [_pose(cov=cov)], RigidTransform.identity())
    pp = project_corrected(c, RigidTransform.identity(), K)
    assert pp.point.tolist() == [1]
    assert pp.not_visible == 2


def test_row_subset_keeps_packet_indices(rng):
    pk = _packet(rng, 10)
    pk = LidarPacket(0.0, np.abs(pk.points) + [0, 0, 1])
    rows = np.array([2, 5, 7])
    c = correct_packet(pk, _pose(), RigidTransform.identity(), index=3, rows=rows)
    pp = project_corrected(CorrectedSigmaCloud([c]), RigidTransform.identity(), K)
    assert pp.point.tolist() == rows.tolist() and set(pp.packet.tolist()) == {3}
    assert np.allclose(pp.mean_xyz, pk.points[rows])


def test_project_points_matches_zero_covariance_path(rng):
    pts = np.column_stack([rng.uniform(-3, 3, 40), rng.uniform(-3, 3, 40), rng.uniform(-2, 20, 40)])
    t = RigidTransform.identity()
    direct = project_points(pts, np.zeros(40, int), np.arange(40), t, K)
    via = project_corrected(correct_scan(LidarScan((LidarPacket(0.0, pts),)), [_pose()], t), t, K)
    assert np.array_equal(direct.point, via.point)
    assert np.allclose(direct.mean_uv, via.mean_uv, atol=1e-9)
    assert direct.not_visible == via.not_visible == np.count_nonzero(pts[:, 2] <= 0)


def test_correction_reduces_projection_error():
    """Moving platform: corrected points land closer to where the camera saw them."""
    ds = generate_synthetic(single_wall_scene(speed=12.0), seed=0)
    scan, t_ref = ds.scans[0], ds.frame_times[0]
    cam = ds.calibration.cameras[0]
    noise = VelocityNoise(np.diag([0.02] * 3) ** 2, np.diag([0.002] * 3) ** 2, 1e-4)
    poses = predict_ego_motion(t_ref, scan.times, ds.velocity, noise)
    corrected = project_corrected(correct_scan(scan, poses, ds.calibration.T_veh_ld), cam.T_cam_ld, cam.intrinsics)
    pts, pk, j = scan.stacked()
    raw = project_points(pts, pk, j, cam.T_cam_ld, cam.intrinsics)

    # truth: world points seen from the camera pose at the image time
    spec_cam = ds.spec.cameras[0]
    T_world_cam = ds.poses_ref[0] @ spec_cam.T_veh_cam.matrix
    offsets = np.concatenate([[0], np.cumsum([len(p.points) for p in scan.packets])])
    world = ds.truth_world[0]

    def rms(pp):
        g = offsets[pp.packet] + pp.point
        cam_pts = (np.linalg.inv(T_world_cam) @ np.column_stack([world[g], np.ones(len(g))]).T).T[:, :3]
        front = cam_pts[:, 2] > 1.0
        uv = project_fisheye_array(cam.intrinsics, cam_pts[front])
        inside = (uv[:, 0] >= 0) & (uv[:, 0] < cam.intrinsics.width) & (uv[:, 1] >= 0) & (uv[:, 1] < cam.intrinsics.height)
        err = pp.mean_uv[front][inside] - uv[inside]
        return float(np.sqrt(np.mean(np.sum(err**2, axis=1)))), int(inside.sum())

    before, n_before = rms(raw)
    after, n_after = rms(corrected)
    assert n_before > 500 and n_after > 500
    assert after < before
    assert after < 0.2 * before


def test_sigma_pose_matrices_match_geometry(rng):
    g = _pose(rng.normal(0, 0.3, 6), random_psd(rng, 6, 0.02))
    t_veh_ld = random_rigid(rng)
    pk = _packet(rng, 5)
    c = correct_packet(pk, g, t_veh_ld)
    mats = poses_to_matrices(utd(g).points)
    inv = transform_invert(t_veh_ld).matrix
    for k in range(13):
        ref = (inv @ mats[k] @ t_veh_ld.matrix @ np.column_stack([pk.points, np.ones(5)]).T).T[:, :3]
        assert np.allclose(c.sigma[:, k], ref, atol=1e-10)
