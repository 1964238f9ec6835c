"""Built-in scenes used by the experiment suite and the CLI sweep.

These stand in for captured datasets: a colorful 3D scene with depth spread
(texture-rich, well-conditioned pose), a flat single-color scene (texture
poor, weakly conditioned), a radially symmetric wall (degenerate: rotation
about the optical axis leaves the image unchanged), and a compact grayscale
scene for fast Monte Carlo runs.
"""

from __future__ import annotations

import colorsys

import numpy as np

from .renderer import Camera, SplatScene


def default_camera(size: int = 64) -> Camera:
    """Square wide-angle camera (90 degree FOV), principal point centered."""
    return Camera(
        fx=size / 2.0,
        fy=size / 2.0,
        cx=(size - 1) / 2.0,
        cy=(size - 1) / 2.0,
        width=size,
        height=size,
    )


def high_texture_scene(seed: int = 7, n_splats: int = 200) -> SplatScene:
    """Saturated random colors, depths spread over 2-6 units."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(2.0, 6.0, n_splats)
    x = rng.uniform(-0.75, 0.75, n_splats) * z
    y = rng.uniform(-0.75, 0.75, n_splats) * z
    radii = rng.uniform(0.1, 0.3, n_splats)
    colors = np.array(
        [colorsys.hsv_to_rgb(h, 1.0, 1.0) for h in rng.uniform(0.0, 1.0, n_splats)]
    )
    return SplatScene(np.stack([x, y, z], 1), radii, colors, np.zeros(3))


def low_texture_scene(seed: int = 11, n_splats: int = 50) -> SplatScene:
    """Same-color splats on a fronto-parallel plane, low contrast."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-3.0, 3.0, n_splats)
    y = rng.uniform(-3.0, 3.0, n_splats)
    centers = np.stack([x, y, np.full(n_splats, 4.0)], 1)
    radii = np.full(n_splats, 0.25)
    colors = np.tile([0.5, 0.5, 0.5], (n_splats, 1))
    return SplatScene(centers, radii, colors, np.full(3, 0.3))


def wall_scene(depth: float = 4.0, disk_radius: float = 2.0) -> SplatScene:
    """Radially symmetric single-color wall facing the camera.

    Splats sit on concentric rings spaced tightly enough (0.7 sigma along
    arcs) that the rendered disk is rotationally uniform to float precision,
    making rotation about the optical axis unidentifiable.
    """
    radius = 0.3
    spacing = 0.7 * radius
    centers = [(0.0, 0.0, depth)]
    n_rings = int(np.ceil(disk_radius / spacing))
    for k in range(1, n_rings + 1):
        r = k * spacing
        count = max(8, int(np.ceil(2.0 * np.pi * r / spacing)))
        angles = 2.0 * np.pi * np.arange(count) / count
        for a in angles:
            centers.append((r * np.cos(a), r * np.sin(a), depth))
    centers = np.array(centers)
    n = centers.shape[0]
    return SplatScene(
        centers, np.full(n, radius), np.full((n, 1), 0.8), np.array([0.1])
    )


def rank6_scene(seed: int = 3, n_splats: int = 30) -> SplatScene:
    """Compact grayscale scene with full 6-axis identifiability.

    Small enough that thousands of alignment trials run in seconds, with
    enough color and depth variation that the information matrix is well
    conditioned.
    """
    rng = np.random.default_rng(seed)
    z = rng.uniform(2.0, 6.0, n_splats)
    x = rng.uniform(-0.7, 0.7, n_splats) * z
    y = rng.uniform(-0.7, 0.7, n_splats) * z
    radii = rng.uniform(0.15, 0.35, n_splats)
    colors = rng.uniform(0.3, 1.0, (n_splats, 1))
    return SplatScene(np.stack([x, y, z], 1), radii, colors, np.array([0.05]))
