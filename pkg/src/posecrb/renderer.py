"""Differentiable measurement models for camera pose.

Two measurement functions are provided, both mapping a camera pose to a
vector of observations and both exposing analytic derivatives with respect
to a left-multiplicative pose twist:

* a dense photometric renderer built from additive 2D-projected Gaussian
  splats (a smooth stand-in for neural scene renderers; no occlusion, so
  the pose Jacobian is exact and closed-form), and
* a pinhole projector of known 3D feature points, the classical
  bundle-adjustment measurement model.

Poses map world coordinates to camera coordinates (p_cam = R p + t) with
the camera looking down +z, x right, y down.  A world point projects to
pixel (u, v) = (fx x/z + cx, fy y/z + cy); image arrays are indexed
[row, col, channel] with u along columns and v along rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import se3
from .se3 import Pose

# Splats at or behind this camera-space depth contribute nothing.
NEAR_PLANE = 0.01
# Depth gate ramps smoothly from 0 to 1 over [NEAR_PLANE, GATE_FULL] so the
# Jacobian stays continuous as splats approach the camera.
GATE_FULL = 0.02


class PointBehindCamera(ValueError):
    """A feature point fell at or behind the camera near plane."""

    def __init__(self, index: int, depth: float):
        self.index = index
        self.depth = depth
        super().__init__(f"point {index} has camera depth {depth:.6g} <= {NEAR_PLANE}")


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole intrinsics: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be at least 1x1")


@dataclass(frozen=True, eq=False)
class SplatScene:
    """Additive Gaussian-splat scene: centers (N,3), radii (N,), colors (N,C).

    Each splat renders as an isotropic 2D Gaussian with screen-space sigma
    fx * radius / depth, scaled by its color and added onto `background`.
    Colors and background live in [0, 1]; channels is 1 or 3.
    """

    centers: np.ndarray
    radii: np.ndarray
    colors: np.ndarray
    background: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        colors = np.atleast_2d(np.asarray(self.colors, dtype=np.float64))
        background = np.asarray(self.background, dtype=np.float64).reshape(-1)
        n = centers.shape[0]
        if radii.shape[0] != n or colors.shape[0] != (n if n else colors.shape[0]):
            raise ValueError("centers, radii and colors must agree in length")
        if n == 0:
            colors = colors.reshape(0, background.shape[0])
        if background.shape[0] not in (1, 3):
            raise ValueError("channel count must be 1 or 3")
        if colors.shape[1] != background.shape[0]:
            raise ValueError("splat colors and background must share channel count")
        if n and np.any(radii <= 0):
            raise ValueError("splat radii must be positive")
        if (n and (np.any(colors < 0) or np.any(colors > 1))) or np.any(
            (background < 0) | (background > 1)
        ):
            raise ValueError("colors must lie in [0, 1]")
        if n and not np.all(np.isfinite(centers)):
            raise ValueError("splat centers must be finite")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "background", background)

    @property
    def n_splats(self) -> int:
        return self.centers.shape[0]

    @property
    def channels(self) -> int:
        return self.background.shape[0]


@dataclass(frozen=True, eq=False)
class FeatureScene:
    """Known 3D landmarks for the pinhole feature measurement model."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("feature points must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


class PixelSubset:
    """Selection of entries of the flattened measurement vector.

    Supports all entries, every n-th entry ("stride"), or an explicit index
    list.  Indices address the row-major flattening of (H, W, C) images, or
    the stacked (u0, v0, u1, v1, ...) vector of the feature model.
    """

    def __init__(self, kind: str, step: int = 1, indices=None):
        if kind not in ("all", "stride", "explicit"):
            raise ValueError(f"unknown pixel subset kind {kind!r}")
        if kind == "stride" and step < 1:
            raise ValueError("stride step must be >= 1")
        self.kind = kind
        self.step = int(step)
        self.explicit = (
            None if indices is None else np.asarray(indices, dtype=np.intp).reshape(-1)
        )

    @classmethod
    def all_pixels(cls) -> "PixelSubset":
        return cls("all")

    @classmethod
    def stride(cls, step: int) -> "PixelSubset":
        return cls("stride", step=step)

    @classmethod
    def from_indices(cls, indices) -> "PixelSubset":
        return cls("explicit", indices=indices)

    @classmethod
    def parse(cls, spec: str) -> "PixelSubset":
        """Parse a CLI spec: "all" or "stride:<n>"."""
        if spec == "all":
            return cls.all_pixels()
        if spec.startswith("stride:"):
            return cls.stride(int(spec.split(":", 1)[1]))
        raise ValueError(f"cannot parse pixel subset spec {spec!r}")

    def indices(self, total: int) -> np.ndarray:
        if self.kind == "all":
            return np.arange(total, dtype=np.intp)
        if self.kind == "stride":
            return np.arange(0, total, self.step, dtype=np.intp)
        idx = self.explicit
        if idx.size and (idx.min() < 0 or idx.max() >= total):
            raise ValueError("explicit pixel indices out of range")
        return idx

    def count(self, total: int) -> int:
        return self.indices(total).size


ALL_PIXELS = PixelSubset.all_pixels()


@dataclass(frozen=True)
class TileGrid:
    """Disjoint rows x cols partition of the image into rectangular tiles."""

    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("tile grid must have at least one row and column")

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    def tile_pixel_indices(
        self, height: int, width: int, channels: int, tile_id: int
    ) -> np.ndarray:
        """Flat indices (row-major H,W,C) covered by one tile, all channels."""
        if not 0 <= tile_id < self.n_tiles:
            raise ValueError(f"tile_id {tile_id} outside grid {self.rows}x{self.cols}")
        r, c = divmod(tile_id, self.cols)
        rb = (np.arange(self.rows + 1) * height) // self.rows
        cb = (np.arange(self.cols + 1) * width) // self.cols
        ii = np.arange(rb[r], rb[r + 1])
        jj = np.arange(cb[c], cb[c + 1])
        base = (ii[:, None] * width + jj[None, :]).ravel()
        return (base[:, None] * channels + np.arange(channels)[None, :]).ravel()


# ---------------------------------------------------------------------------
# splat rendering
# ---------------------------------------------------------------------------


def _smoothstep(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Depth gate and its derivative wrt depth over [NEAR_PLANE, GATE_FULL]."""
    span = GATE_FULL - NEAR_PLANE
    s = np.clip((z - NEAR_PLANE) / span, 0.0, 1.0)
    gate = s * s * (3.0 - 2.0 * s)
    dgate = np.where((s > 0.0) & (s < 1.0), 6.0 * s * (1.0 - s) / span, 0.0)
    return gate, dgate


def _screen_params(scene: SplatScene, cam: Camera, pose: Pose):
    """Per-splat camera points and screen footprint, restricted to z > near.

    Returns (p_cam, u, v, sigma, gate, dgate, colors, keep) where `keep`
    marks the visible splats within the original scene ordering.
    """
    p = scene.centers @ pose.rotation.T + pose.translation
    keep = p[:, 2] > NEAR_PLANE
    p = p[keep]
    colors = scene.colors[keep]
    radii = scene.radii[keep]
    z = p[:, 2]
    u = cam.fx * p[:, 0] / z + cam.cx
    v = cam.fy * p[:, 1] / z + cam.cy
    sigma = cam.fx * radii / z
    gate, dgate = _smoothstep(z)
    return p, u, v, sigma, gate, dgate, colors, keep


def render(scene: SplatScene, cam: Camera, pose: Pose) -> np.ndarray:
    """Render the splat scene to an (H, W, C) float image.

    Each pixel is background plus the sum over splats of
    color * gate(depth) * exp(-((u,v) - projected center)^2 / (2 sigma^2))
    with sigma = fx * radius / depth.  Additive, so values may exceed 1.
    """
    H, W, C = cam.height, cam.width, scene.channels
    img = np.broadcast_to(scene.background, (H, W, C)).copy()
    if scene.n_splats == 0:
        return img
    p, u, v, sigma, gate, _, colors, _ = _screen_params(scene, cam, pose)
    if p.shape[0] == 0:
        return img
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    # Separable Gaussian: one 1D profile per axis per splat.
    gx = np.exp(-((np.arange(W) - u[:, None]) ** 2) * inv2s2[:, None])
    gy = np.exp(-((np.arange(H) - v[:, None]) ** 2) * inv2s2[:, None])
    img += np.einsum("nc,nh,nw->hwc", colors * gate[:, None], gy, gx, optimize=True)
    return img


def _direction_coeffs(p, u, v, sigma, gate, dgate, cam, deltas):
    """Screen-space derivative coefficients for camera-point velocities.

    `deltas` has shape (n, k, 3): per splat, k tangent directions, the
    camera-frame velocity of the splat center.  Returns (T1..T4), each
    (n, k), the coefficients of the four pixel-profile terms of the image
    derivative (gate change, horizontal shift, vertical shift, width change).
    """
    z = p[:, 2]
    dz = deltas[..., 2]
    du = cam.fx * deltas[..., 0] / z[:, None] - (cam.fx * p[:, 0] / z**2)[:, None] * dz
    dv = cam.fy * deltas[..., 1] / z[:, None] - (cam.fy * p[:, 1] / z**2)[:, None] * dz
    dsigma = -(sigma / z)[:, None] * dz
    s2 = sigma * sigma
    t1 = dgate[:, None] * dz
    t2 = gate[:, None] * du / s2[:, None]
    t3 = gate[:, None] * dv / s2[:, None]
    t4 = gate[:, None] * dsigma / (s2 * sigma)[:, None]
    return t1, t2, t3, t4


def _basis_deltas(p: np.ndarray) -> np.ndarray:
    """Camera-point velocity for each of the 6 twist basis directions.

    For a left perturbation exp(eps d) applied to the pose, a camera-frame
    point moves at dp = v + w x p; columns 0..2 are unit translations and
    3..5 unit rotations.
    """
    n = p.shape[0]
    deltas = np.zeros((n, 6, 3))
    deltas[:, 0, 0] = 1.0
    deltas[:, 1, 1] = 1.0
    deltas[:, 2, 2] = 1.0
    for j, axis in enumerate(np.eye(3)):
        deltas[:, 3 + j, :] = np.cross(axis, p)
    return deltas


def _jacobian_full(scene: SplatScene, cam: Camera, pose: Pose) -> np.ndarray:
    """Analytic (H, W, C, 6) image Jacobian via separable Gaussian profiles."""
    H, W, C = cam.height, cam.width, scene.channels
    if scene.n_splats == 0:
        return np.zeros((H, W, C, 6))
    p, u, v, sigma, gate, dgate, colors, _ = _screen_params(scene, cam, pose)
    if p.shape[0] == 0:
        return np.zeros((H, W, C, 6))
    t1, t2, t3, t4 = _direction_coeffs(
        p, u, v, sigma, gate, dgate, cam, _basis_deltas(p)
    )
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    ru = np.arange(W) - u[:, None]
    rv = np.arange(H) - v[:, None]
    gx = np.exp(-(ru**2) * inv2s2[:, None])
    gy = np.exp(-(rv**2) * inv2s2[:, None])
    # Fold the three column-profile terms and two row-profile terms so the
    # expensive contractions over splats run only twice.
    xprof = (
        t1[:, :, None] * gx[:, None, :]
        + t2[:, :, None] * (gx * ru)[:, None, :]
        + t4[:, :, None] * (gx * ru * ru)[:, None, :]
    )
    yprof = t3[:, :, None] * (gy * rv)[:, None, :] + t4[:, :, None] * (
        gy * rv * rv
    )[:, None, :]
    jac = np.einsum("nc,nh,njw->hwcj", colors, gy, xprof, optimize=True)
    jac += np.einsum("nc,njh,nw->hwcj", colors, yprof, gx, optimize=True)
    return jac


def _subset_coords(cam: Camera, channels: int, flat_idx: np.ndarray):
    """Map flat (H*W*C) indices to per-entry column u, row v and channel."""
    pix, chan = np.divmod(flat_idx, channels)
    row, col = np.divmod(pix, cam.width)
    return col.astype(np.float64), row.astype(np.float64), chan


def _jacobian_subset(
    scene: SplatScene, cam: Camera, pose: Pose, flat_idx: np.ndarray, deltas
) -> np.ndarray:
    """Image derivative at a flat-index subset for k tangent directions.

    Returns (len(flat_idx), k).  Cost is O(n_splats * len(flat_idx)), linear
    in the sampled pixel count.
    """
    k = deltas.shape[1]
    out = np.zeros((flat_idx.size, k))
    if scene.n_splats == 0 or flat_idx.size == 0:
        return out
    if deltas.shape[0] != scene.n_splats:
        raise ValueError("deltas must be provided per splat")
    p, u, v, sigma, gate, dgate, colors, keep = _screen_params(scene, cam, pose)
    if p.shape[0] == 0:
        return out
    deltas = deltas[keep]
    t1, t2, t3, t4 = _direction_coeffs(p, u, v, sigma, gate, dgate, cam, deltas)
    up, vp, chan = _subset_coords(cam, scene.channels, flat_idx)
    ru = up[None, :] - u[:, None]
    rv = vp[None, :] - v[:, None]
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    g = np.exp(-(ru * ru + rv * rv) * inv2s2[:, None])
    # weight by each entry's channel color; gate is already folded into t1..t4
    wg = colors[:, chan] * g
    out = wg.T @ t1
    out += (wg * ru).T @ t2
    out += (wg * rv).T @ t3
    out += (wg * (ru * ru + rv * rv)).T @ t4
    return out


def render_jvp(
    scene: SplatScene,
    cam: Camera,
    pose: Pose,
    direction: np.ndarray,
    pixels: PixelSubset = ALL_PIXELS,
) -> np.ndarray:
    """Directional image derivative along one pose twist.

    Returns d/deps render(scene, cam, exp(eps * direction) * pose) at eps=0,
    restricted to the pixel subset; equivalently the image Jacobian times
    `direction`.  Analytic (chain rule through projection, footprint and
    depth gate), no finite differencing.
    """
    direction = np.asarray(direction, dtype=np.float64).reshape(6)
    total = cam.height * cam.width * scene.channels
    flat_idx = pixels.indices(total)
    if scene.n_splats == 0:
        return np.zeros(flat_idx.size)
    p_all = scene.centers @ pose.rotation.T + pose.translation
    deltas = (direction[:3] + np.cross(direction[3:], p_all))[:, None, :]
    return _jacobian_subset(scene, cam, pose, flat_idx, deltas)[:, 0]


# ---------------------------------------------------------------------------
# pinhole feature model
# ---------------------------------------------------------------------------


def _feature_camera_points(scene: FeatureScene, pose: Pose) -> np.ndarray:
    p = scene.points @ pose.rotation.T + pose.translation
    bad = np.nonzero(p[:, 2] <= NEAR_PLANE)[0]
    if bad.size:
        k = int(bad[0])
        raise PointBehindCamera(k, float(p[k, 2]))
    return p


def project_features(scene: FeatureScene, cam: Camera, pose: Pose) -> np.ndarray:
    """Pinhole projection of each landmark; returns (K, 2) pixel coordinates."""
    if scene.n_points == 0:
        return np.zeros((0, 2))
    p = _feature_camera_points(scene, pose)
    z = p[:, 2]
    return np.stack([cam.fx * p[:, 0] / z + cam.cx, cam.fy * p[:, 1] / z + cam.cy], 1)


def feature_jacobian(scene: FeatureScene, cam: Camera, pose: Pose) -> np.ndarray:
    """Stacked (2K, 6) reprojection Jacobian wrt the pose twist.

    Rows 2k, 2k+1 are d(u_k, v_k)/d xi for the left-multiplicative
    perturbation; the row-block for a point at camera coordinates (x, y, z):

        du = [ fx/z, 0, -fx x/z^2, -fx x y/z^2,  fx(1 + x^2/z^2), -fx y/z ]
        dv = [ 0, fy/z, -fy y/z^2, -fy(1 + y^2/z^2),  fy x y/z^2,  fy x/z ]
    """
    if scene.n_points == 0:
        return np.zeros((0, 6))
    p = _feature_camera_points(scene, pose)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    fx, fy = cam.fx, cam.fy
    k = scene.n_points
    J = np.zeros((k, 2, 6))
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * x / z**2
    J[:, 0, 3] = -fx * x * y / z**2
    J[:, 0, 4] = fx * (1.0 + x**2 / z**2)
    J[:, 0, 5] = -fx * y / z
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * y / z**2
    J[:, 1, 3] = -fy * (1.0 + y**2 / z**2)
    J[:, 1, 4] = fy * x * y / z**2
    J[:, 1, 5] = fy * x / z
    return J.reshape(2 * k, 6)


# ---------------------------------------------------------------------------
# measurement-model wrappers
# ---------------------------------------------------------------------------


class PhotometricModel:
    """Splat renderer as a flat measurement function of pose."""

    def __init__(self, scene: SplatScene, camera: Camera):
        self.scene = scene
        self.camera = camera

    @property
    def output_size(self) -> int:
        return self.camera.height * self.camera.width * self.scene.channels

    def render(self, pose: Pose) -> np.ndarray:
        return render(self.scene, self.camera, pose)

    def measure(self, pose: Pose, pixels: PixelSubset = ALL_PIXELS) -> np.ndarray:
        idx = pixels.indices(self.output_size)
        return render(self.scene, self.camera, pose).ravel()[idx]

    def jvp(
        self, pose: Pose, direction: np.ndarray, pixels: PixelSubset = ALL_PIXELS
    ) -> np.ndarray:
        return render_jvp(self.scene, self.camera, pose, direction, pixels)

    def jvp_columns(self, pose: Pose, pixels: PixelSubset = ALL_PIXELS) -> np.ndarray:
        """All six twist-basis derivative columns, shape (|P|, 6)."""
        idx = pixels.indices(self.output_size)
        if idx.size == self.output_size:
            return _jacobian_full(self.scene, self.camera, pose).reshape(-1, 6)
        if self.scene.n_splats == 0:
            return np.zeros((idx.size, 6))
        p_all = self.scene.centers @ pose.rotation.T + pose.translation
        return _jacobian_subset(
            self.scene, self.camera, pose, idx, _basis_deltas(p_all)
        )


class FeatureModel:
    """Pinhole landmark projector as a flat measurement function of pose.

    The measurement vector stacks (u0, v0, u1, v1, ...), in pixels.
    """

    def __init__(self, scene: FeatureScene, camera: Camera):
        self.scene = scene
        self.camera = camera

    @property
    def output_size(self) -> int:
        return 2 * self.scene.n_points

    def measure(self, pose: Pose, pixels: PixelSubset = ALL_PIXELS) -> np.ndarray:
        idx = pixels.indices(self.output_size)
        return project_features(self.scene, self.camera, pose).ravel()[idx]

    def jvp(
        self, pose: Pose, direction: np.ndarray, pixels: PixelSubset = ALL_PIXELS
    ) -> np.ndarray:
        direction = np.asarray(direction, dtype=np.float64).reshape(6)
        return self.jvp_columns(pose, pixels) @ direction

    def jvp_columns(self, pose: Pose, pixels: PixelSubset = ALL_PIXELS) -> np.ndarray:
        idx = pixels.indices(self.output_size)
        return feature_jacobian(self.scene, self.camera, pose)[idx]
