"""SE(3)/Sim(3) pose primitives and the pinhole camera model.

Conventions used throughout the package:

* Poses map world points into the camera frame: ``X_cam = s * R @ X_world + t``
  (``s = 1`` for SE(3)). The relative transform from keyframe i to keyframe j
  is therefore ``T_ij = T_j @ T_i.inverse()``.
* Quaternions are stored w-last as ``[x, y, z, w]``. The corresponding paper
  never states a convention; w-last is chosen and documented here.
* Twists are ``[v, w]`` (translation first, rotation last) for SE(3) and
  ``[v, w, sigma]`` for Sim(3), with ``sigma`` the log scale.
* Depth is carried as inverse depth (1/m) everywhere inside the optimization;
  plain metric depth appears only at I/O boundaries.
* Trajectory files use the TUM text format, one line per pose:
  ``timestamp tx ty tz qx qy qz qw`` where the stored pose is camera-to-world.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS_Z = 1e-6          # behind-camera threshold, meters
_LOG_BRANCH_GUARD = math.pi - 1e-6
_SMALL = 1e-6         # series-expansion switch for exp/log coefficients


class GeomError(Exception):
    pass


class BehindCameraError(GeomError):
    """Point does not project: z is at or behind the camera plane."""

    def __init__(self, z: float):
        self.z = float(z)
        super().__init__(f"point behind camera: z={self.z:.6g} <= {EPS_Z:g}")


class InvalidDepthError(GeomError):
    def __init__(self, inverse_depth: float):
        self.inverse_depth = float(inverse_depth)
        super().__init__(f"inverse depth must be > 0, got {self.inverse_depth:.6g}")


class LogBranchError(GeomError):
    """Rotation angle at pi: the principal log branch is ambiguous."""


# ---------------------------------------------------------------------------
# quaternion helpers (w-last)
# ---------------------------------------------------------------------------

def quat_identity() -> np.ndarray:
    return np.array([0.0, 0.0, 0.0, 1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise GeomError("zero quaternion")
    q = q / n
    if q[3] < 0.0:  # canonical hemisphere keeps log continuous
        q = -q
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Shepperd's method: stable for all rotation matrices."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    return quat_normalize(np.array([x, y, z, w]))


def quat_exp(w: np.ndarray) -> np.ndarray:
    """Unit quaternion for rotation vector w (axis * angle)."""
    theta = np.linalg.norm(w)
    if theta < _SMALL:
        k = 0.5 - theta * theta / 48.0
    else:
        k = math.sin(0.5 * theta) / theta
    return quat_normalize(np.array([k * w[0], k * w[1], k * w[2], math.cos(0.5 * theta)]))


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion (principal branch, angle < pi)."""
    q = quat_normalize(q)
    n = np.linalg.norm(q[:3])
    wv = abs(q[3])
    angle = 2.0 * math.atan2(n, wv)
    if angle > _LOG_BRANCH_GUARD:
        raise LogBranchError(f"rotation angle {angle:.9f} too close to pi")
    if n < 1e-9:
        k = 2.0 / wv - 2.0 * n * n / (3.0 * wv ** 3)
    else:
        k = angle / n
    return k * q[:3]


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector; batched over leading dims."""
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


# ---------------------------------------------------------------------------
# exp/log coefficient tables
# ---------------------------------------------------------------------------

def _se3_v_coeffs(theta: float) -> tuple[float, float]:
    """(B, C) with V = I + B*hat(w) + C*hat(w)^2."""
    if theta < _SMALL:
        t2 = theta * theta
        return 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    t2 = theta * theta
    return (1.0 - math.cos(theta)) / t2, (theta - math.sin(theta)) / (t2 * theta)


def _sim3_w_coeffs(sigma: float, theta: float) -> tuple[float, float, float]:
    """(A, B, C) with W = C*I + A*hat(w) + B*hat(w)^2 = integral of e^{us} R(u) du."""
    s = math.exp(sigma)
    if abs(sigma) < _SMALL:
        c = 1.0 + sigma / 2.0 + sigma * sigma / 6.0
        if theta < _SMALL:
            a = 0.5 + sigma / 3.0
            b = 1.0 / 6.0 + sigma / 8.0
        else:
            t2 = theta * theta
            a = (1.0 - math.cos(theta)) / t2 \
                + sigma * (math.sin(theta) - theta * math.cos(theta)) / (t2 * theta)
            b = (theta - math.sin(theta)) / (t2 * theta) \
                + sigma * (t2 / 2.0 + 1.0 - math.cos(theta) - theta * math.sin(theta)) / (t2 * t2)
    else:
        c = (s - 1.0) / sigma
        if theta < _SMALL:
            s2 = sigma * sigma
            a = (s * (sigma - 1.0) + 1.0) / s2
            b = (s * (s2 - 2.0 * sigma + 2.0) - 2.0) / (2.0 * s2 * sigma)
        else:
            sa = s * math.sin(theta)
            sb = s * math.cos(theta)
            cc = theta * theta + sigma * sigma
            a = (sa * sigma + (1.0 - sb) * theta) / (theta * cc)
            b = (c - ((sb - 1.0) * sigma + sa * theta) / cc) / (theta * theta)
    return a, b, c


def _w_matrix(sigma: float, w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    a, b, c = _sim3_w_coeffs(sigma, theta)
    wx = hat(w)
    return c * np.eye(3) + a * wx + b * (wx @ wx)


def _v_matrix(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    b, c = _se3_v_coeffs(theta)
    wx = hat(w)
    return np.eye(3) + b * wx + c * (wx @ wx)


# ---------------------------------------------------------------------------
# pose types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SE3Pose:
    """Rigid transform, world -> camera. Immutable value."""

    quat: np.ndarray  # (4,), w-last, unit
    trans: np.ndarray  # (3,), meters

    def __post_init__(self):
        q = quat_normalize(self.quat)
        t = np.array(self.trans, dtype=np.float64).reshape(3)
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "trans", t)

    @staticmethod
    def identity() -> "SE3Pose":
        return SE3Pose(quat_identity(), np.zeros(3))

    @property
    def scale(self) -> float:
        return 1.0

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.trans
        return m

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        q = quat_mul(self.quat, other.quat)
        t = self.rotation_matrix() @ other.trans + self.trans
        return SE3Pose(q, t)

    def inverse(self) -> "SE3Pose":
        qi = quat_conj(self.quat)
        ri = quat_to_matrix(qi)
        return SE3Pose(qi, -ri @ self.trans)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (..., 3) world points into the camera frame."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation_matrix().T + self.trans

    def to_sim3(self) -> "Sim3Pose":
        return Sim3Pose(self.quat, self.trans, 1.0)


@dataclass(frozen=True)
class Sim3Pose:
    """Similarity transform, world -> camera: X_cam = s*R*X + t. Immutable."""

    quat: np.ndarray
    trans: np.ndarray
    s: float

    def __post_init__(self):
        if not (np.isfinite(self.s) and self.s > 0):
            raise GeomError(f"Sim3 scale must be positive, got {self.s}")
        q = quat_normalize(self.quat)
        t = np.array(self.trans, dtype=np.float64).reshape(3)
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "trans", t)
        object.__setattr__(self, "s", float(self.s))

    @staticmethod
    def identity() -> "Sim3Pose":
        return Sim3Pose(quat_identity(), np.zeros(3), 1.0)

    @property
    def scale(self) -> float:
        return self.s

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.s * self.rotation_matrix()
        m[:3, 3] = self.trans
        return m

    def compose(self, other: "Sim3Pose") -> "Sim3Pose":
        q = quat_mul(self.quat, other.quat)
        t = self.s * (self.rotation_matrix() @ other.trans) + self.trans
        return Sim3Pose(q, t, self.s * other.s)

    def inverse(self) -> "Sim3Pose":
        qi = quat_conj(self.quat)
        ri = quat_to_matrix(qi)
        return Sim3Pose(qi, -(ri @ self.trans) / self.s, 1.0 / self.s)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.s * (pts @ self.rotation_matrix().T) + self.trans

    def to_se3_dropping_scale(self) -> SE3Pose:
        """SE(3) pose reproducing this camera when depths are divided by s.

        A Sim(3) camera (s, R, t) sees world point X at ``s*R*X + t``; the
        SE(3) camera (R, t/s) sees it at that point divided by s, so the two
        agree after rescaling camera-frame geometry (depths) by 1/s.
        """
        return SE3Pose(self.quat, self.trans / self.s)


Pose = SE3Pose | Sim3Pose


def exp_map(twist: np.ndarray) -> Pose:
    """Exponential map: 6-vector [v, w] -> SE3, 7-vector [v, w, sigma] -> Sim3."""
    xi = np.asarray(twist, dtype=np.float64).reshape(-1)
    if xi.shape[0] == 6:
        v, w = xi[:3], xi[3:6]
        return SE3Pose(quat_exp(w), _v_matrix(w) @ v)
    if xi.shape[0] == 7:
        v, w, sigma = xi[:3], xi[3:6], float(xi[6])
        return Sim3Pose(quat_exp(w), _w_matrix(sigma, w) @ v, math.exp(sigma))
    raise GeomError(f"twist must have 6 or 7 components, got {xi.shape[0]}")


def log_map(pose: Pose) -> np.ndarray:
    """Logarithm map, principal branch. Raises LogBranchError near angle pi."""
    w = quat_log(pose.quat)
    if isinstance(pose, Sim3Pose):
        sigma = math.log(pose.s)
        v = np.linalg.solve(_w_matrix(sigma, w), pose.trans)
        return np.concatenate([v, w, [sigma]])
    v = np.linalg.solve(_v_matrix(w), pose.trans)
    return np.concatenate([v, w])


def retract(pose: Pose, delta: np.ndarray) -> Pose:
    """Left-multiplicative update: exp(delta) o pose, preserving the pose type."""
    inc = exp_map(delta)
    if isinstance(pose, SE3Pose):
        if not isinstance(inc, SE3Pose):
            raise GeomError("SE3 pose requires a 6-vector increment")
        return inc.compose(pose)
    if isinstance(inc, SE3Pose):
        inc = inc.to_sim3()
    return inc.compose(pose)


# ---------------------------------------------------------------------------
# pinhole camera
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeomError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeomError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def scaled(self, factor: float) -> "Intrinsics":
        return Intrinsics(self.fx * factor, self.fy * factor,
                          self.cx * factor, self.cy * factor,
                          int(round(self.width * factor)), int(round(self.height * factor)))


def project(pose: Pose, point: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Pixel of a world point seen through `pose`. Raises BehindCameraError."""
    xc = pose.apply(np.asarray(point, dtype=np.float64).reshape(3))
    if xc[2] <= EPS_Z:
        raise BehindCameraError(xc[2])
    return np.array([K.fx * xc[0] / xc[2] + K.cx, K.fy * xc[1] / xc[2] + K.cy])


def backproject(pixel: np.ndarray, inverse_depth: float, K: Intrinsics) -> np.ndarray:
    """Camera-frame point of a pixel at the given inverse depth (1/m)."""
    if inverse_depth <= 0:
        raise InvalidDepthError(inverse_depth)
    u, v = pixel
    return np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0]) / inverse_depth


def project_points(points_cam: np.ndarray, K: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized pinhole projection of (..., 3) camera-frame points.

    Returns (pixels, in_front mask); pixels are garbage where the mask is
    False (z clamped) which callers must mask out.
    """
    pts = np.asarray(points_cam, dtype=np.float64)
    z = pts[..., 2]
    ok = z > EPS_Z
    zs = np.where(ok, z, 1.0)
    u = K.fx * pts[..., 0] / zs + K.cx
    v = K.fy * pts[..., 1] / zs + K.cy
    return np.stack([u, v], axis=-1), ok


def backproject_grid(pixels: np.ndarray, inverse_depth: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Vectorized back-projection: (..., 2) pixels, (...,) inverse depths."""
    px = np.asarray(pixels, dtype=np.float64)
    d = np.asarray(inverse_depth, dtype=np.float64)
    rays = np.stack([(px[..., 0] - K.cx) / K.fx,
                     (px[..., 1] - K.cy) / K.fy,
                     np.ones_like(px[..., 0])], axis=-1)
    return rays / d[..., None]


def proj_jacobian(points_cam: np.ndarray, K: Intrinsics) -> np.ndarray:
    """d(pixel)/d(camera point): (..., 2, 3) for (..., 3) points."""
    pts = np.asarray(points_cam, dtype=np.float64)
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    iz = 1.0 / z
    out = np.zeros(pts.shape[:-1] + (2, 3))
    out[..., 0, 0] = K.fx * iz
    out[..., 0, 2] = -K.fx * x * iz * iz
    out[..., 1, 1] = K.fy * iz
    out[..., 1, 2] = -K.fy * y * iz * iz
    return out


def point_twist_jacobian(points_cam: np.ndarray, dof: int) -> np.ndarray:
    """d(exp(xi) X)/d(xi) at xi=0 for camera points X: (..., 3, dof).

    Columns follow the twist order [v, w(, sigma)]: identity block, then
    -hat(X), then X itself for the Sim(3) scale column.
    """
    pts = np.asarray(points_cam, dtype=np.float64)
    out = np.zeros(pts.shape[:-1] + (3, dof))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    out[..., 2, 2] = 1.0
    out[..., :, 3:6] = -hat(pts)
    if dof == 7:
        out[..., :, 6] = pts
    return out


# ---------------------------------------------------------------------------
# trajectory I/O (TUM text format)
# ---------------------------------------------------------------------------

def save_trajectory_tum(path, stamps, poses) -> None:
    """Write camera-to-world rows `timestamp tx ty tz qx qy qz qw` (LF, UTF-8)."""
    lines = []
    for stamp, pose in zip(stamps, poses):
        inv = pose.inverse()
        if isinstance(inv, Sim3Pose):
            inv = SE3Pose(inv.quat, inv.trans)
        t, q = inv.trans, inv.quat
        vals = [float(stamp), *map(float, t), *map(float, q)]
        lines.append(" ".join(repr(v) for v in vals))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_trajectory_tum(path) -> tuple[list[float], list[SE3Pose]]:
    """Read a TUM trajectory back into world-to-camera SE3 poses."""
    stamps, poses = [], []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(x) for x in line.split()]
            if len(vals) != 8:
                raise GeomError(f"malformed TUM line: {line!r}")
            stamps.append(vals[0])
            c2w = SE3Pose(np.array(vals[4:8]), np.array(vals[1:4]))
            poses.append(c2w.inverse())
    return stamps, poses
