"""Deterministic synthetic world standing in for the learned front-end.

Provides analytic scenes (bounded planes and spheres), smooth trajectories
with optional multiplicative scale drift and yaw drift, noisy dense
correspondences with confidences, and scale-distorted depth priors. Every
output is a pure function of (spec, seed) through the package Rng, so a
dataset is reproducible bit-for-bit from its configuration.

Drift model: the drifted odometry for keyframe k is the ground-truth pose
seen through a cumulative world similarity (scale ``gamma_k``, yaw
``psi_k`` about +y), with the scale folded into camera-frame depths so the
odometry stays SE(3). Correspondence targets for temporally close pairs are
generated from this drifted twin state (a front-end that drifted produced
measurements consistent with its drift), while temporally distant pairs
(loop closures) are generated from the true geometry, which is what exposes
the accumulated drift to the backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geom
from .geom import Intrinsics, SE3Pose, Sim3Pose
from .rng import Rng

INVALID_DEPTH = np.inf

# fixed Rng stream ids so generation order never affects the draws
_STREAM_FLOW = 1 << 20
_STREAM_PRIOR = 1 << 21
_STREAM_MAPINIT = 1 << 22
_MAX_KEYFRAMES = 4096


# ---------------------------------------------------------------------------
# scene specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plane:
    normal: tuple[float, float, float]
    offset: float                       # plane: normal . X = offset
    color: tuple[float, float, float]
    extent: float = math.inf            # half-size of the patch around the anchor


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    color: tuple[float, float, float]


@dataclass(frozen=True)
class SceneSpec:
    planes: tuple[Plane, ...]
    spheres: tuple[Sphere, ...]
    seed: int = 0


@dataclass(frozen=True)
class NoiseSpec:
    flow_sigma: float = 0.0             # px, std of target noise
    prior_corners: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    prior_smooth_field: bool = True     # bilinear corner field vs constant mean scale
    prior_noise_sigma: float = 0.0      # relative depth noise on the prior
    scale_drift_rate: float = 1.0       # per-keyframe multiplicative scale drift
    yaw_drift_rate: float = 0.0         # rad per keyframe about +y


def standard_scene(seed: int = 0) -> SceneSpec:
    """Closed room (five bounded walls) with three spheres; full depth validity."""
    planes = (
        Plane((0, 0, -1), -6.0, (0.85, 0.55, 0.35)),   # back wall z = 6
        Plane((1, 0, 0), -3.0, (0.35, 0.65, 0.85)),    # left wall x = -3
        Plane((-1, 0, 0), -3.0, (0.55, 0.8, 0.45)),    # right wall x = 3
        Plane((0, -1, 0), -2.0, (0.7, 0.7, 0.6)),      # floor y = 2
        Plane((0, 1, 0), -2.0, (0.6, 0.6, 0.75)),      # ceiling y = -2
        Plane((0, 0, 1), -2.0, (0.75, 0.5, 0.6)),      # front wall z = -2
    )
    spheres = (
        Sphere((-1.1, 0.5, 4.0), 0.7, (0.9, 0.3, 0.25)),
        Sphere((1.3, -0.6, 3.2), 0.5, (0.25, 0.4, 0.9)),
        Sphere((0.2, 0.9, 2.4), 0.35, (0.95, 0.85, 0.3)),
    )
    return SceneSpec(planes=planes, spheres=spheres, seed=seed)


def default_intrinsics() -> Intrinsics:
    return Intrinsics(fx=260.0, fy=260.0, cx=159.5, cy=119.5, width=320, height=240)


def _plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([1.0, 0, 0]) if abs(normal[0]) < 0.9 else np.array([0, 1.0, 0])
    u = np.cross(normal, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


def _albedo_plane(plane: Plane, points: np.ndarray) -> np.ndarray:
    n = np.asarray(plane.normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    bu, bv = _plane_basis(n)
    u = points @ bu
    v = points @ bv
    mod = 0.8 + 0.2 * np.sin(1.7 * u) * np.sin(1.3 * v)
    return np.asarray(plane.color)[None, :] * mod[:, None]


def _albedo_sphere(sphere: Sphere, points: np.ndarray) -> np.ndarray:
    light = np.array([0.3, -0.5, 0.8])
    light = light / np.linalg.norm(light)
    normals = (points - np.asarray(sphere.center)) / sphere.radius
    lam = np.clip(normals @ light, 0.0, None)
    mod = 0.7 + 0.3 * lam
    return np.asarray(sphere.color)[None, :] * mod[:, None]


# ---------------------------------------------------------------------------
# ray tracing
# ---------------------------------------------------------------------------

def _trace(scene: SceneSpec, origins: np.ndarray, dirs: np.ndarray):
    """Nearest hit along rays. Returns (t, color, normal); t=inf where no hit.

    `t` is the parameter along `dirs` (not necessarily unit length).
    """
    n_rays = dirs.shape[0]
    best_t = np.full(n_rays, INVALID_DEPTH)
    color = np.zeros((n_rays, 3))
    normal = np.zeros((n_rays, 3))

    for plane in scene.planes:
        n = np.asarray(plane.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        denom = dirs @ n
        num = plane.offset - origins @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
        hit = (t > 1e-9) & (t < best_t)
        if np.isfinite(plane.extent):
            pts = origins + t[:, None] * dirs
            anchor = plane.offset * n
            bu, bv = _plane_basis(n)
            local = pts - anchor
            hit &= (np.abs(local @ bu) <= plane.extent) & (np.abs(local @ bv) <= plane.extent)
        if hit.any():
            pts = origins[hit] + t[hit, None] * dirs[hit]
            best_t[hit] = t[hit]
            color[hit] = _albedo_plane(plane, pts)
            normal[hit] = n

    for sphere in scene.spheres:
        c = np.asarray(sphere.center, dtype=np.float64)
        oc = origins - c
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = 2.0 * np.einsum("ij,ij->i", oc, dirs)
        cc = np.einsum("ij,ij->i", oc, oc) - sphere.radius ** 2
        disc = b * b - 4 * a * cc
        ok = disc > 0
        t = np.full(n_rays, np.inf)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
        tt = np.where(t0 > 1e-9, t0, t1)
        t[ok & (tt > 1e-9)] = tt[ok & (tt > 1e-9)]
        hit = t < best_t
        if hit.any():
            pts = origins[hit] + t[hit, None] * dirs[hit]
            best_t[hit] = t[hit]
            color[hit] = _albedo_sphere(sphere, pts)
            normal[hit] = (pts - c) / sphere.radius

    return best_t, color, normal


def render_gt(scene: SceneSpec, pose: SE3Pose, K: Intrinsics):
    """Per-pixel analytic depth and color; background gets INVALID_DEPTH."""
    depth, color, _ = render_gt_full(scene, pose, K)
    return depth, color


def render_gt_full(scene: SceneSpec, pose: SE3Pose, K: Intrinsics):
    """(depth, color, world normals) at full image resolution."""
    H, W = K.height, K.width
    us, vs = np.meshgrid(np.arange(W), np.arange(H))
    rays_cam = np.stack([(us - K.cx) / K.fx, (vs - K.cy) / K.fy, np.ones_like(us, dtype=np.float64)], axis=-1)
    c2w = pose.inverse()
    R = c2w.rotation_matrix()
    dirs = rays_cam.reshape(-1, 3) @ R.T          # unit z in camera frame
    origins = np.broadcast_to(c2w.trans, dirs.shape)
    t, color, normal = _trace(scene, origins, dirs)
    # t parametrizes rays with unit camera z, so t equals the camera depth z
    return t.reshape(H, W), color.reshape(H, W, 3), normal.reshape(H, W, 3)


def depth_at_pixels(scene: SceneSpec, pose: SE3Pose, K: Intrinsics, pixels: np.ndarray) -> np.ndarray:
    """Analytic depth at arbitrary (possibly fractional) pixel locations."""
    px = np.asarray(pixels, dtype=np.float64)
    rays_cam = np.stack([(px[:, 0] - K.cx) / K.fx, (px[:, 1] - K.cy) / K.fy,
                         np.ones(px.shape[0])], axis=-1)
    c2w = pose.inverse()
    dirs = rays_cam @ c2w.rotation_matrix().T
    origins = np.broadcast_to(c2w.trans, dirs.shape)
    t, _, _ = _trace(scene, origins, dirs)
    return t


# ---------------------------------------------------------------------------
# correspondences
# ---------------------------------------------------------------------------

def lattice_pixels(K: Intrinsics, stride: int) -> np.ndarray:
    """(P, 2) ordered pixel lattice covering the image at the given stride."""
    us = np.arange(0, K.width - stride + 1, stride) + (stride - 1) / 2.0
    vs = np.arange(0, K.height - stride + 1, stride) + (stride - 1) / 2.0
    uu, vv = np.meshgrid(us, vs)
    return np.stack([uu.reshape(-1), vv.reshape(-1)], axis=-1)


def lattice_shape(K: Intrinsics, stride: int) -> tuple[int, int]:
    return (K.height - stride + 1 - 1) // stride + 1, (K.width - stride + 1 - 1) // stride + 1


@dataclass
class EdgePayload:
    pixels: np.ndarray        # (P, 2) source pixels
    targets: np.ndarray       # (P, 2) predicted target pixels
    confidences: np.ndarray   # (P,) weights, 0 for occluded / out of view
    covisibility: float       # valid fraction before the 5% gate

    @property
    def empty(self) -> bool:
        return self.covisibility < 0.05


def warp_correspondences(depth_i, pose_i, pose_j, K, pixels, occ_depth_j=None,
                         noise_sigma=0.0, rng: Rng | None = None) -> EdgePayload:
    """Targets by warping `pixels` of view i (depths `depth_i`) into view j.

    `occ_depth_j` is a full-resolution depth map of view j used for the
    occlusion test; pixels whose warped depth lies behind it get weight 0.
    """
    d = np.asarray(depth_i, dtype=np.float64).reshape(-1)
    valid = np.isfinite(d) & (d > 0)
    pts_i = geom.backproject_grid(pixels, 1.0 / np.where(valid, d, 1.0), K)
    T_ij = pose_j.compose(pose_i.inverse())
    pts_j = T_ij.apply(pts_i)
    targets, in_front = geom.project_points(pts_j, K)
    inside = ((targets[:, 0] >= 0) & (targets[:, 0] <= K.width - 1)
              & (targets[:, 1] >= 0) & (targets[:, 1] <= K.height - 1))
    ok = valid & in_front & inside

    if occ_depth_j is not None:
        uu = np.clip(np.round(targets[:, 0]).astype(int), 0, K.width - 1)
        vv = np.clip(np.round(targets[:, 1]).astype(int), 0, K.height - 1)
        surf = occ_depth_j[vv, uu]
        occluded = np.isfinite(surf) & (pts_j[:, 2] > surf * 1.02 + 0.01)
        ok &= ~occluded

    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        targets = targets + rng.normal(2 * len(d), noise_sigma).reshape(-1, 2)

    conf = np.where(ok, 1.0 / (1.0 + noise_sigma ** 2), 0.0)
    targets = np.where(ok[:, None], targets, 0.0)
    return EdgePayload(pixels=np.array(pixels, dtype=np.float64), targets=targets,
                       confidences=conf, covisibility=float(ok.mean()))


def gen_correspondences(scene: SceneSpec, pose_i: SE3Pose, pose_j: SE3Pose,
                        K: Intrinsics, noise: NoiseSpec, rng: Rng,
                        stride: int = 4) -> EdgePayload:
    """Ground-truth-geometry correspondences between two views of the scene."""
    pixels = lattice_pixels(K, stride)
    depth_i = depth_at_pixels(scene, pose_i, K, pixels)
    occ_j, _ = render_gt(scene, pose_j, K)
    return warp_correspondences(depth_i, pose_i, pose_j, K, pixels,
                                occ_depth_j=occ_j, noise_sigma=noise.flow_sigma, rng=rng)


# ---------------------------------------------------------------------------
# depth priors
# ---------------------------------------------------------------------------

def bilinear_corner_field(corners, pixels, width: int, height: int) -> np.ndarray:
    """Bilinear blend of 4 corner values anchored at the image corners.

    Same anchoring convention as the tracker's 2x2 scale grid: normalized
    coordinates u/(width-1), v/(height-1); corners ordered row-major
    (top-left, top-right, bottom-left, bottom-right).
    """
    c = np.asarray(corners, dtype=np.float64).reshape(2, 2)
    px = np.asarray(pixels, dtype=np.float64)
    fu = np.clip(px[..., 0] / (width - 1), 0.0, 1.0)
    fv = np.clip(px[..., 1] / (height - 1), 0.0, 1.0)
    top = c[0, 0] * (1 - fu) + c[0, 1] * fu
    bot = c[1, 0] * (1 - fu) + c[1, 1] * fu
    return top * (1 - fv) + bot * fv


def gen_depth_prior(gt_depth: np.ndarray, pixels: np.ndarray, noise: NoiseSpec,
                    K: Intrinsics, rng: Rng) -> np.ndarray:
    """Distorted metric depth prior: gt * corner_field * (1 + relative noise)."""
    d = np.asarray(gt_depth, dtype=np.float64)
    if noise.prior_smooth_field:
        fieldv = bilinear_corner_field(noise.prior_corners, pixels, K.width, K.height)
    else:
        fieldv = float(np.mean(noise.prior_corners))
    prior = d * fieldv
    if noise.prior_noise_sigma > 0.0:
        prior = prior * (1.0 + rng.normal(d.size, noise.prior_noise_sigma).reshape(d.shape))
    return prior


# ---------------------------------------------------------------------------
# trajectories and drift
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    gt: list[SE3Pose]            # world-to-camera
    drifted: list[SE3Pose]       # odometry with injected drift
    depth_scales: np.ndarray     # per-keyframe gamma: drifted depth = gamma * gt depth
    kind: str


def _look_at_pose(center: np.ndarray, target: np.ndarray, up=(0.0, -1.0, 0.0)) -> SE3Pose:
    """World-to-camera pose for a camera at `center` looking at `target`.

    Camera axes: x right, y down, z forward; world up defaults to -y (the
    standard scenes put the floor at +y).
    """
    fwd = np.asarray(target, dtype=np.float64) - center
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R_c2w = np.stack([right, down, fwd], axis=1)
    q = geom.quat_from_matrix(R_c2w.T)
    return SE3Pose(q, -R_c2w.T @ center)


def _gt_poses(kind: str, n: int) -> list[SE3Pose]:
    poses = []
    if kind == "straight":
        for k in range(n):
            s = k / max(n - 1, 1)
            center = np.array([-0.9 + 1.8 * s, 0.25 * math.sin(2.0 * math.pi * s), 0.6 * s])
            target = np.array([0.6 * math.sin(1.5 * s), 0.1, 5.0])
            poses.append(_look_at_pose(center, target))
    elif kind == "loop":
        # full circle, last keyframe revisits the first exactly
        r = 0.8
        for k in range(n):
            th = 2.0 * math.pi * k / (n - 1)
            center = np.array([r * math.sin(th), 0.15 * math.sin(2 * th), -r * math.cos(th) + 1.5])
            outward = np.array([math.sin(th), 0.0, -math.cos(th)])
            target = center + 2.5 * outward + np.array([0, 0.05, 0])
            poses.append(_look_at_pose(center, target))
    elif kind == "forward-then-rotate":
        n_fwd = max(2, (2 * n) // 3)
        for k in range(n_fwd):
            s = k / max(n_fwd - 1, 1)
            center = np.array([0.0, 0.0, 2.2 * s])
            poses.append(_look_at_pose(center, center + np.array([0.0, 0.0, 3.0])))
        for k in range(n - n_fwd):
            ang = 2.4 * (k + 1) / (n - n_fwd)
            center = np.array([0.0, 0.0, 2.2])
            fwd = np.array([math.sin(ang), 0.0, math.cos(ang)])
            poses.append(_look_at_pose(center, center + 3.0 * fwd))
    else:
        raise ValueError(f"unknown trajectory kind: {kind!r}")
    return poses


def gen_trajectory(kind: str, n_keyframes: int, drift: NoiseSpec) -> Trajectory:
    """Smooth analytic trajectory plus a drift-injected odometry variant.

    Drift accumulates from keyframe 2 on (the first two keyframes anchor the
    gauge): keyframe k sees the world through a similarity with scale
    ``rate**max(0, k-1)`` and yaw ``yaw_rate * max(0, k-1)`` about +y.
    """
    if n_keyframes < 2:
        raise ValueError("need at least two keyframes")
    gt = _gt_poses(kind, n_keyframes)
    drifted = []
    gammas = np.ones(n_keyframes)
    for k, pose in enumerate(gt):
        steps = max(0, k - 1)
        gamma = drift.scale_drift_rate ** steps
        yaw = drift.yaw_drift_rate * steps
        gammas[k] = gamma
        if gamma == 1.0 and yaw == 0.0:
            drifted.append(pose)
            continue
        g = Sim3Pose(geom.quat_exp(np.array([0.0, yaw, 0.0])), np.zeros(3), gamma)
        est_sim = pose.to_sim3().compose(g.inverse())
        drifted.append(est_sim.to_se3_dropping_scale())
    return Trajectory(gt=gt, drifted=drifted, depth_scales=gammas, kind=kind)


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

@dataclass
class KeyframeData:
    index: int
    gt_pose: SE3Pose
    odom_pose: SE3Pose
    depth_scale: float                 # gamma of the drifted twin state
    gt_depth_lattice: np.ndarray       # (P,) meters at the lattice
    prior_lattice: np.ndarray          # (P,) meters, distorted
    color: np.ndarray                  # (H, W, 3) in [0, 1]
    gt_depth_full: np.ndarray          # (H, W) meters


class SyntheticDataset:
    """Keyframe-level synthetic sequence with on-demand correspondences."""

    def __init__(self, scene: SceneSpec, K: Intrinsics, noise: NoiseSpec,
                 kind: str, n_keyframes: int, seed: int, stride: int = 4,
                 drift_span: int = 12):
        self.scene = scene
        self.K = K
        self.noise = noise
        self.seed = int(seed)
        self.stride = int(stride)
        self.drift_span = int(drift_span)
        self.pixels = lattice_pixels(K, stride)
        self.traj = gen_trajectory(kind, n_keyframes, noise)
        self.keyframes: list[KeyframeData] = []
        for k in range(n_keyframes):
            depth_full, color, _ = render_gt_full(scene, self.traj.gt[k], K)
            d_lat = depth_at_pixels(scene, self.traj.gt[k], K, self.pixels)
            prior = gen_depth_prior(d_lat, self.pixels, noise, K,
                                    Rng(self.seed, _STREAM_PRIOR + k))
            self.keyframes.append(KeyframeData(
                index=k, gt_pose=self.traj.gt[k], odom_pose=self.traj.drifted[k],
                depth_scale=float(self.traj.depth_scales[k]),
                gt_depth_lattice=d_lat, prior_lattice=prior,
                color=color, gt_depth_full=depth_full))

    def __len__(self) -> int:
        return len(self.keyframes)

    def _edge_rng(self, i: int, j: int) -> Rng:
        return Rng(self.seed, _STREAM_FLOW + i * _MAX_KEYFRAMES + j)

    def correspondences(self, i: int, j: int, drift_consistent: bool | None = None) -> EdgePayload:
        """Edge payload for (i, j); drift-consistent for temporally close pairs."""
        if drift_consistent is None:
            drift_consistent = abs(i - j) <= self.drift_span
        kf_i, kf_j = self.keyframes[i], self.keyframes[j]
        if drift_consistent:
            depth_i = kf_i.gt_depth_lattice * kf_i.depth_scale
            pose_i, pose_j = kf_i.odom_pose, kf_j.odom_pose
            occ_j = kf_j.gt_depth_full * kf_j.depth_scale
        else:
            depth_i = kf_i.gt_depth_lattice
            pose_i, pose_j = kf_i.gt_pose, kf_j.gt_pose
            occ_j = kf_j.gt_depth_full
        return warp_correspondences(depth_i, pose_i, pose_j, self.K, self.pixels,
                                    occ_depth_j=occ_j,
                                    noise_sigma=self.noise.flow_sigma,
                                    rng=self._edge_rng(i, j))

    def mean_flow(self, i: int, j: int) -> float:
        """Mean optical-flow magnitude proxy from true geometry (noise-free)."""
        kf_i, kf_j = self.keyframes[i], self.keyframes[j]
        payload = warp_correspondences(kf_i.gt_depth_lattice, kf_i.gt_pose,
                                       kf_j.gt_pose, self.K, self.pixels,
                                       occ_depth_j=kf_j.gt_depth_full)
        ok = payload.confidences > 0
        if not ok.any():
            return float("inf")
        return float(np.linalg.norm(payload.targets[ok] - payload.pixels[ok], axis=1).mean())

    def map_init_rng(self, k: int) -> Rng:
        return Rng(self.seed, _STREAM_MAPINIT + k)


# ---------------------------------------------------------------------------
# scene.cfg serialization (plain text key=value)
# ---------------------------------------------------------------------------

def save_scene_cfg(path, scene: SceneSpec) -> None:
    lines = [f"seed={scene.seed}"]
    for p in scene.planes:
        ext = "inf" if math.isinf(p.extent) else repr(float(p.extent))
        vals = [*p.normal, p.offset, *p.color]
        lines.append("plane=" + ",".join(repr(float(v)) for v in vals) + f",{ext}")
    for s in scene.spheres:
        vals = [*s.center, s.radius, *s.color]
        lines.append("sphere=" + ",".join(repr(float(v)) for v in vals))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_scene_cfg(path) -> SceneSpec:
    seed = 0
    planes: list[Plane] = []
    spheres: list[Sphere] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            if key == "seed":
                seed = int(val)
            elif key == "plane":
                v = [float(x) for x in val.split(",")]
                planes.append(Plane((v[0], v[1], v[2]), v[3], (v[4], v[5], v[6]), v[7]))
            elif key == "sphere":
                v = [float(x) for x in val.split(",")]
                spheres.append(Sphere((v[0], v[1], v[2]), v[3], (v[4], v[5], v[6])))
    return SceneSpec(planes=tuple(planes), spheres=tuple(spheres), seed=seed)
