import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from gsslam import geom
from gsslam.geom import (
    BehindCameraError,
    Intrinsics,
    InvalidDepthError,
    LogBranchError,
    SE3Pose,
    Sim3Pose,
    backproject,
    exp_map,
    hat,
    log_map,
    point_twist_jacobian,
    proj_jacobian,
    project,
)
from gsslam.rng import Rng

K = Intrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)

small_twists = st.lists(st.floats(-0.5, 0.5), min_size=6, max_size=6).map(np.array)


def random_se3(rng: Rng) -> SE3Pose:
    xi = rng.normal(6, 0.4)
    return exp_map(xi)


def random_sim3(rng: Rng) -> Sim3Pose:
    xi = rng.normal(7, 0.3)
    return exp_map(xi)


# --- exp / log ---------------------------------------------------------------

def test_exp_zero_twist_is_identity():
    p = exp_map(np.zeros(6))
    assert np.allclose(p.quat, [0, 0, 0, 1])
    assert np.allclose(p.trans, 0)


def test_exp_pure_rotation_about_z():
    p = exp_map(np.array([0, 0, 0, 0, 0, math.pi / 2]))
    R = p.rotation_matrix()
    expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    assert np.allclose(R, expected, atol=1e-12)
    assert np.allclose(p.trans, 0)


def test_exp_matches_matrix_exponential_oracle():
    # Independent oracle: matrix exponential of the 4x4 twist matrix.
    xi = np.array([0.1, -0.2, 0.3, 0.05, 0.02, -0.04])
    ximat = np.zeros((4, 4))
    ximat[:3, :3] = hat(xi[3:6])
    ximat[:3, 3] = xi[:3]
    expected = expm(ximat)
    assert np.allclose(exp_map(xi).matrix(), expected, atol=1e-12)


def test_log_identity_is_zero():
    assert np.allclose(log_map(SE3Pose.identity()), 0)
    assert np.allclose(log_map(Sim3Pose.identity()), 0)


def test_log_pure_scale():
    p = Sim3Pose(geom.quat_identity(), np.zeros(3), 2.0)
    assert np.allclose(log_map(p), [0, 0, 0, 0, 0, 0, math.log(2)])


@given(small_twists)
@settings(max_examples=50, deadline=None)
def test_se3_log_exp_roundtrip(xi):
    assert np.allclose(log_map(exp_map(xi)), xi, atol=1e-9)


def test_sim3_log_exp_roundtrip_random():
    rng = Rng(3)
    for _ in range(50):
        xi = rng.normal(7, 0.6)
        assert np.allclose(log_map(exp_map(xi)), xi, atol=1e-9)


def test_exp_log_roundtrip_poses():
    rng = Rng(4)
    for _ in range(25):
        p = random_se3(rng)
        q = exp_map(log_map(p))
        assert np.allclose(q.quat, p.quat, atol=1e-9)
        assert np.allclose(q.trans, p.trans, atol=1e-9)


def test_log_branch_guard_near_pi():
    p = exp_map(np.array([0, 0, 0, math.pi - 1e-9, 0, 0]))
    with pytest.raises(LogBranchError):
        log_map(p)


# --- group axioms -------------------------------------------------------------

def test_group_axioms_se3():
    rng = Rng(5)
    for _ in range(20):
        a, b, c = (random_se3(rng) for _ in range(3))
        lhs = a.compose(b).compose(c).matrix()
        rhs = a.compose(b.compose(c)).matrix()
        assert np.allclose(lhs, rhs, atol=1e-9)
        ident = a.compose(a.inverse())
        assert np.linalg.norm(ident.trans) < 1e-9
        assert 2 * math.acos(min(1.0, abs(ident.quat[3]))) < 1e-9


def test_group_axioms_sim3():
    rng = Rng(6)
    for _ in range(20):
        a, b = random_sim3(rng), random_sim3(rng)
        ab = a.compose(b)
        pts = rng.normal(9).reshape(3, 3)
        assert np.allclose(ab.apply(pts), a.apply(b.apply(pts)), atol=1e-9)
        ident = a.compose(a.inverse())
        assert abs(ident.s - 1) < 1e-12
        assert np.linalg.norm(ident.trans) < 1e-9


def test_unit_scale_sim3_embeds_se3():
    rng = Rng(7)
    for _ in range(10):
        se = random_se3(rng)
        si = se.to_sim3()
        pts = rng.normal(12).reshape(4, 3)
        assert np.allclose(si.apply(pts), se.apply(pts), atol=1e-12)
        assert np.allclose(si.inverse().apply(pts), se.inverse().apply(pts), atol=1e-12)
        other = random_se3(rng)
        assert np.allclose(si.compose(other.to_sim3()).matrix(),
                           se.compose(other).matrix(), atol=1e-12)


def test_quaternion_stays_normalized():
    rng = Rng(8)
    p = SE3Pose.identity()
    for _ in range(200):
        p = p.compose(random_se3(rng))
        assert abs(np.linalg.norm(p.quat) - 1) < 1e-9


# --- camera model -------------------------------------------------------------

def test_project_optical_axis():
    assert np.allclose(project(SE3Pose.identity(), [0, 0, 1], K), [50, 50])


def test_project_analytic():
    assert np.allclose(project(SE3Pose.identity(), [1, 0, 2], K), [100, 50])


def test_backproject_analytic():
    assert np.allclose(backproject([50, 50], 1.0, K), [0, 0, 1])
    assert np.allclose(backproject([150, 50], 0.5, K), [2, 0, 2])


def test_project_backproject_roundtrip():
    rng = Rng(9)
    for _ in range(30):
        px = np.array([rng.uniform(1)[0] * 99, rng.uniform(1)[0] * 99])
        d = 0.1 + rng.uniform(1)[0] * 2
        point = backproject(px, d, K)
        assert np.allclose(project(SE3Pose.identity(), point, K), px, atol=1e-9)
        assert abs(1.0 / point[2] - d) < 1e-12


def test_behind_camera_error_carries_depth():
    with pytest.raises(BehindCameraError) as info:
        project(SE3Pose.identity(), [0, 0, -2.0], K)
    assert info.value.z == -2.0


def test_invalid_depth_error():
    with pytest.raises(InvalidDepthError):
        backproject([10, 10], -0.5, K)


def test_intrinsics_validation():
    with pytest.raises(geom.GeomError):
        Intrinsics(fx=-1, fy=1, cx=0, cy=0, width=10, height=10)
    with pytest.raises(geom.GeomError):
        Intrinsics(fx=1, fy=1, cx=20, cy=0, width=10, height=10)


# --- jacobians ----------------------------------------------------------------

def _fd_pixel_jacobians(pose, ray, d, K, h=1e-6):
    """Central differences of pixel w.r.t. left twist of pose and inverse depth."""
    dof = 7 if isinstance(pose, Sim3Pose) else 6
    point_src = ray / d

    J_twist = np.zeros((2, dof))
    for k in range(dof):
        delta = np.zeros(dof)
        delta[k] = h
        hi = project(geom.retract(pose, delta), point_src, K)
        lo = project(geom.retract(pose, -delta), point_src, K)
        J_twist[:, k] = (hi - lo) / (2 * h)
    hi = project(pose, ray / (d + h), K)
    lo = project(pose, ray / (d - h), K)
    J_d = (hi - lo) / (2 * h)
    return J_twist, J_d


@pytest.mark.parametrize("dof", [6, 7])
def test_projection_jacobians_match_finite_differences(dof):
    rng = Rng(10 + dof)
    for _ in range(20):
        pose = random_se3(rng) if dof == 6 else random_sim3(rng)
        d = 0.3 + rng.uniform(1)[0]
        ray = np.array([rng.normal(1, 0.2)[0], rng.normal(1, 0.2)[0], 1.0])
        X_src = ray / d
        X_cam = pose.apply(X_src)
        if X_cam[2] <= 0.1:
            continue
        J_analytic = proj_jacobian(X_cam, K) @ point_twist_jacobian(X_cam, dof)
        J_fd, Jd_fd = _fd_pixel_jacobians(pose, ray, d, K)
        scale = np.maximum(np.abs(J_fd), 1.0)
        assert np.all(np.abs(J_analytic - J_fd) / scale < 1e-4)
        # inverse-depth jacobian: dX_cam/dd = -linear_part(pose) @ X_src / d
        lin = pose.scale * pose.rotation_matrix()
        Jd_analytic = proj_jacobian(X_cam, K) @ (-(lin @ X_src) / d)
        assert np.all(np.abs(Jd_analytic - Jd_fd) / np.maximum(np.abs(Jd_fd), 1.0) < 1e-4)


# --- trajectory I/O -----------------------------------------------------------

def test_tum_roundtrip(tmp_path):
    rng = Rng(13)
    poses = [random_se3(rng) for _ in range(5)]
    stamps = [float(i) for i in range(5)]
    path = tmp_path / "traj.txt"
    geom.save_trajectory_tum(path, stamps, poses)
    text = path.read_text(encoding="utf-8")
    assert "\r" not in text
    for line in text.strip().split("\n"):
        assert len(line.split(" ")) == 8
    stamps2, poses2 = geom.load_trajectory_tum(path)
    assert stamps2 == stamps
    for a, b in zip(poses, poses2):
        assert np.allclose(a.matrix(), b.matrix(), atol=1e-12)


def test_tum_rows_are_camera_to_world():
    pose = exp_map(np.array([1.0, 2.0, 3.0, 0, 0, 0]))  # w2c translation (1,2,3)
    import io, tempfile, os
    with tempfile.TemporaryDirectory() as td:
        p = os.path.join(td, "t.txt")
        geom.save_trajectory_tum(p, [0.0], [pose])
        vals = [float(x) for x in open(p).read().split()]
    assert np.allclose(vals[1:4], -pose.trans)  # camera center = -R^T t
