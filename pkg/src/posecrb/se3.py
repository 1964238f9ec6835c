"""Rigid-transform (SE(3)) and twist (se(3)) primitives.

Twists are 6-vectors ordered translation-first, xi = (v; w), so the adjoint
of a pose (R, t) has the block form [[R, [t]x R], [0, R]].  Perturbations are
applied left-multiplicatively, exp(xi) * pose, and every 6x6 matrix in this
package (Jacobians, information matrices, adjoints) uses this ordering and
convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Switch exp/log to Taylor series below this rotation angle to avoid 0/0.
SMALL_ANGLE = 1e-6


class AngleNearPi(ValueError):
    """Rotation angle too close to pi for an unambiguous logarithm."""


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform with rotation matrix `rotation` and 3-vector `translation`.

    Applied to points as p -> rotation @ p + translation.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ValueError("pose entries must be finite")
        err = np.linalg.norm(R.T @ R - np.eye(3))
        if err > 1e-9:
            raise ValueError(f"rotation not orthonormal (Frobenius error {err:.3e})")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        return Pose(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix [[R, t], [0, 1]]."""
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix [v]x such that [v]x @ u = v x u."""
    v = np.asarray(v, dtype=np.float64)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def hat(xi: np.ndarray) -> np.ndarray:
    """4x4 matrix form of a twist: [[ [w]x, v ], [0, 0]]."""
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    H = np.zeros((4, 4))
    H[:3, :3] = skew(xi[3:])
    H[:3, 3] = xi[:3]
    return H


def vee(H: np.ndarray) -> np.ndarray:
    """Inverse of `hat`: extract the 6-vector twist from a 4x4 matrix."""
    H = np.asarray(H, dtype=np.float64)
    return np.array([H[0, 3], H[1, 3], H[2, 3], H[2, 1], H[0, 2], H[1, 0]])


def _rotation_coeffs(theta: float) -> tuple[float, float, float]:
    """Rodrigues coefficients (sin t / t, (1 - cos t)/t^2, (t - sin t)/t^3)."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s, c = np.sin(theta), np.cos(theta)
    return s / theta, (1.0 - c) / (theta * theta), (theta - s) / (theta**3)


def exp(xi: np.ndarray) -> Pose:
    """Exponential map se(3) -> SE(3) for a twist xi = (v; w).

    R via the Rodrigues formula; t = V(w) v with V the left Jacobian of SO(3),
    so exp(0) is the identity and pure translations pass through unchanged.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    if not np.all(np.isfinite(xi)):
        raise ValueError("twist entries must be finite")
    v, w = xi[:3], xi[3:]
    theta = np.linalg.norm(w)
    a, b, c = _rotation_coeffs(theta)
    W = skew(w)
    W2 = W @ W
    R = np.eye(3) + a * W + b * W2
    V = np.eye(3) + b * W + c * W2
    return Pose(R, V @ v)


def log(g: Pose) -> np.ndarray:
    """Logarithm map SE(3) -> se(3); inverse of `exp` away from angle pi.

    Raises AngleNearPi when the rotation angle is within 1e-6 of pi, where
    the axis (and hence the logarithm) is ambiguous.
    """
    R, t = g.rotation, g.translation
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta >= np.pi - 1e-6:
        raise AngleNearPi(f"rotation angle {theta:.9f} too close to pi")

    axis_vec = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if theta < SMALL_ANGLE:
        w = axis_vec * (1.0 + theta * theta / 6.0)
        c = 1.0 / 12.0 + theta * theta / 720.0
    else:
        w = axis_vec * (theta / np.sin(theta))
        # V^-1 = I - [w]x / 2 + c [w]x^2,  c = (1 - (t/2) cot(t/2)) / t^2
        c = (1.0 - theta * np.cos(theta / 2.0) / (2.0 * np.sin(theta / 2.0))) / (
            theta * theta
        )
    W = skew(w)
    Vinv = np.eye(3) - 0.5 * W + c * (W @ W)
    return np.concatenate([Vinv @ t, w])


def adjoint(g: Pose) -> np.ndarray:
    """6x6 adjoint [[R, [t]x R], [0, R]] mapping twists between frames."""
    A = np.zeros((6, 6))
    R = g.rotation
    A[:3, :3] = R
    A[:3, 3:] = skew(g.translation) @ R
    A[3:, 3:] = R
    return A


def compose(a: Pose, b: Pose) -> Pose:
    """Group product a * b (apply b first, then a)."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(g: Pose) -> Pose:
    """Group inverse: (R, t) -> (R^T, -R^T t)."""
    Rt = g.rotation.T
    return Pose(Rt, -Rt @ g.translation)
