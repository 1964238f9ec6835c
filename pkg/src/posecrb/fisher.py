"""Fisher information and Cramer-Rao bounds for the pose twist.

The information matrix of a Gaussian measurement model with Jacobian J and
noise covariance S is J^T S^-1 J; its inverse (or pseudoinverse when the
pose is not fully identifiable) lower-bounds the covariance of any unbiased
pose estimator.  Assembly follows the column-wise recipe: six directional
derivatives of the measurement, weighted by the inverse noise, accumulated
into a 6x6 matrix without ever materializing a full dense Jacobian beyond
those six columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .renderer import ALL_PIXELS, PixelSubset, TileGrid
from .se3 import Pose

RAD_TO_DEG = 180.0 / np.pi

# Eigenvalues below rank_tol * lambda_max count as zero when inverting.
DEFAULT_RANK_TOL = 1e-10
VARIANCE_FLOOR = 1e-8


class DimensionMismatch(ValueError):
    """Noise model dimensions incompatible with the pixel subset."""


class SingularJacobian(ValueError):
    """Reparameterization Jacobian is numerically singular."""


class MeasurementModel(Protocol):
    """Anything that measures a pose and exposes twist-derivative columns."""

    @property
    def output_size(self) -> int: ...

    def measure(self, pose: Pose, pixels: PixelSubset = ...) -> np.ndarray: ...

    def jvp(
        self, pose: Pose, direction: np.ndarray, pixels: PixelSubset = ...
    ) -> np.ndarray: ...

    def jvp_columns(self, pose: Pose, pixels: PixelSubset = ...) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# noise models
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IsotropicVariance:
    """I.i.d. pixel noise with a single variance (intensity^2 units)."""

    variance: float

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("variance must be positive")

    def weight(self, q: np.ndarray, subset_idx: np.ndarray, total: int) -> np.ndarray:
        return q / self.variance


@dataclass(frozen=True, eq=False)
class DiagonalVariance:
    """Per-pixel variances; length must match the full measurement or |P|."""

    variances: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.variances, dtype=np.float64).reshape(-1)
        if np.any(v <= 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "variances", v)

    def weight(self, q: np.ndarray, subset_idx: np.ndarray, total: int) -> np.ndarray:
        if self.variances.size == total:
            v = self.variances[subset_idx]
        elif self.variances.size == subset_idx.size:
            v = self.variances
        else:
            raise DimensionMismatch(
                f"diagonal noise of length {self.variances.size} fits neither the "
                f"full measurement ({total}) nor the subset ({subset_idx.size})"
            )
        return q / v[:, None] if q.ndim == 2 else q / v


@dataclass(frozen=True, eq=False)
class BlockDiagonalVariance:
    """Small SPD covariance blocks applied to consecutive runs of the subset."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=np.float64) for b in self.blocks)
        for b in blocks:
            if b.ndim != 2 or b.shape[0] != b.shape[1]:
                raise ValueError("noise blocks must be square")
            sym_err = np.abs(b - b.T).max() if b.size else 0.0
            if sym_err > 1e-12:
                raise ValueError("noise blocks must be symmetric")
            if np.linalg.eigvalsh(b).min() < 1e-12:
                raise ValueError("noise blocks must be SPD (min eigenvalue >= 1e-12)")
        object.__setattr__(self, "blocks", blocks)

    @property
    def size(self) -> int:
        return sum(b.shape[0] for b in self.blocks)

    def weight(self, q: np.ndarray, subset_idx: np.ndarray, total: int) -> np.ndarray:
        if self.size != subset_idx.size:
            raise DimensionMismatch(
                f"block noise covers {self.size} entries, subset has {subset_idx.size}"
            )
        out = np.empty_like(q)
        start = 0
        for b in self.blocks:
            stop = start + b.shape[0]
            out[start:stop] = np.linalg.solve(b, q[start:stop])
            start = stop
        return out


NoiseModel = IsotropicVariance | DiagonalVariance | BlockDiagonalVariance


# ---------------------------------------------------------------------------
# information matrix and bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FisherInfo:
    """6x6 pose information matrix plus provenance of its pixel budget."""

    matrix: np.ndarray
    pixel_count: int
    subsample_rate: float
    frame: str = "local"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64).reshape(6, 6)
        if np.abs(m - m.T).max() > 1e-10:
            raise ValueError("information matrix must be symmetric")
        if np.linalg.eigvalsh(m).min() < -1e-9:
            raise ValueError("information matrix must be PSD within 1e-9")
        object.__setattr__(self, "matrix", m)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


@dataclass(frozen=True, eq=False)
class CrbReport:
    """Covariance lower bound with eigenstructure diagnostics.

    sigma_rotation_deg / sigma_translation_units are the square roots of the
    covariance diagonal, rotation entries converted to degrees; eigenvalues
    are those of the information matrix, ascending.  nullspace_basis spans
    the directions of unbounded variance (6 x k, k = 6 - rank).
    """

    covariance: np.ndarray
    sigma_rotation_deg: np.ndarray
    sigma_translation_units: np.ndarray
    eigenvalues: np.ndarray
    rank: int
    nullspace_basis: np.ndarray
    ridge_used: float


def assemble_fim(
    model: MeasurementModel,
    pose: Pose,
    noise: NoiseModel,
    pixels: PixelSubset = ALL_PIXELS,
    frame: str = "local",
) -> FisherInfo:
    """Information matrix I_ij = <q_i, S^-1 q_j> over the pixel subset.

    q_j is the j-th twist-basis derivative column of the measurement.  The
    result is symmetrized after accumulation and carries the subset size and
    subsample rate for reporting.
    """
    total = model.output_size
    idx = pixels.indices(total)
    q = model.jvp_columns(pose, pixels)
    u = noise.weight(q, idx, total)
    info = q.T @ u
    info = 0.5 * (info + info.T)
    rate = idx.size / total if total else 1.0
    return FisherInfo(info, pixel_count=idx.size, subsample_rate=rate, frame=frame)


def _eig_split(matrix: np.ndarray, rel_tol: float):
    """Ascending eigendecomposition split at rel_tol * lambda_max."""
    vals, vecs = np.linalg.eigh(0.5 * (matrix + matrix.T))
    lam_max = max(vals[-1], 0.0)
    significant = vals > rel_tol * lam_max if lam_max > 0 else np.zeros(6, bool)
    return vals, vecs, significant


def crb(
    info: FisherInfo, ridge: float = 0.0, rank_tol: float = DEFAULT_RANK_TOL
) -> CrbReport:
    """Covariance bound from an information matrix.

    Full-rank matrices are inverted directly.  Degenerate ones use the
    ridge-regularized inverse when ridge > 0, otherwise the Moore-Penrose
    pseudoinverse, with the near-null eigendirections reported as the
    nullspace (variance unbounded along them).
    """
    if ridge < 0 or rank_tol < 0:
        raise ValueError("ridge and rank_tol must be nonnegative")
    m = info.matrix
    vals, vecs, significant = _eig_split(m, rank_tol)
    rank = int(significant.sum())
    ridge_used = 0.0
    if rank == 6:
        cov = np.linalg.inv(m)
        null_basis = np.zeros((6, 0))
    elif ridge > 0.0:
        cov = np.linalg.inv(m + ridge * np.eye(6))
        null_basis = vecs[:, ~significant]
        ridge_used = ridge
    else:
        safe = np.where(significant, vals, 1.0)
        cov = (vecs * np.where(significant, 1.0 / safe, 0.0)) @ vecs.T
        null_basis = vecs[:, ~significant]
    cov = 0.5 * (cov + cov.T)
    sig = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return CrbReport(
        covariance=cov,
        sigma_rotation_deg=sig[3:] * RAD_TO_DEG,
        sigma_translation_units=sig[:3],
        eigenvalues=vals,
        rank=rank,
        nullspace_basis=null_basis,
        ridge_used=ridge_used,
    )


def reparameterize(info: FisherInfo, dphi: np.ndarray) -> FisherInfo:
    """Information under a change of pose coordinates zeta = phi(xi).

    dphi is the 6x6 Jacobian d zeta / d xi; the information transforms by
    congruence with its inverse, I_zeta = dphi^-T I dphi^-1.  Rank is
    preserved, and the variance bound of any scalar functional is unchanged:
    a^T I^+ a = (dphi^-T a)^T I_zeta^+ (dphi^-T a), since a covector a in
    xi-coordinates becomes dphi^-T a in zeta-coordinates.
    """
    dphi = np.asarray(dphi, dtype=np.float64).reshape(6, 6)
    if np.linalg.cond(dphi) >= 1e12:
        raise SingularJacobian("coordinate-change Jacobian condition >= 1e12")
    dinv = np.linalg.inv(dphi)
    m = dinv.T @ info.matrix @ dinv
    m = 0.5 * (m + m.T)
    return FisherInfo(
        m,
        pixel_count=info.pixel_count,
        subsample_rate=info.subsample_rate,
        frame=info.frame,
    )


def identifiability(info: FisherInfo, rel_tol: float = DEFAULT_RANK_TOL) -> dict:
    """Rank, nullspace basis and condition number of the information matrix.

    Full rank means every pose direction is locally recoverable from the
    measurement; near-zero eigendirections span the ambiguous motions.
    """
    vals, vecs, significant = _eig_split(info.matrix, rel_tol)
    rank = int(significant.sum())
    cond = float(vals[-1] / vals[0]) if rank == 6 else np.inf
    return {
        "rank": rank,
        "nullspace_basis": vecs[:, ~significant],
        "condition_number": cond,
    }


def estimate_noise(residual_image: np.ndarray, tiles: TileGrid) -> DiagonalVariance:
    """Per-tile residual variance expanded to a per-pixel diagonal noise model.

    Each tile's sample variance (floored at 1e-8) is assigned to every pixel
    and channel in the tile.  Larger residual variance can only weaken the
    resulting bound: scaling any entry of the diagonal up scales that pixel's
    information contribution down.
    """
    res = np.asarray(residual_image, dtype=np.float64)
    if not np.all(np.isfinite(res)):
        raise ValueError("residuals must be finite")
    if res.ndim == 2:
        res = res[:, :, None]
    h, w, c = res.shape
    flat = res.ravel()
    out = np.empty(h * w * c)
    for tile_id in range(tiles.n_tiles):
        idx = tiles.tile_pixel_indices(h, w, c, tile_id)
        out[idx] = max(float(np.var(flat[idx])), VARIANCE_FLOOR)
    return DiagonalVariance(out)
