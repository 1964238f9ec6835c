"""File formats: JSON for structured inputs/results, CSV for trial data.

All floats are written with round-trip-safe precision (17 significant
digits), so re-parsing an emitted file reproduces the in-memory values
exactly and repeated runs with the same seed produce byte-identical output.
Rotations appear as normalized wxyz quaternions only in files; in memory
they are matrices.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from dataclasses import dataclass

from .fisher import (
    BlockDiagonalVariance,
    CrbReport,
    DiagonalVariance,
    FisherInfo,
    IsotropicVariance,
)
from .multiagent import Budget, LambdaMin, LogDet, Trace
from .renderer import Camera, FeatureScene, SplatScene, TileGrid
from .se3 import Pose
from .validation import CalibrationCurve, TrialResult


class MalformedInput(ValueError):
    """An input file failed to parse or violated its schema."""


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _jsonify(value):
    if isinstance(value, np.ndarray):
        return _jsonify(value.tolist())
    if isinstance(value, (np.floating, float)):
        return float(f"{float(value):.17g}")
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    return value


def write_json(path, payload: dict):
    Path(path).write_text(json.dumps(_jsonify(payload), indent=2) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedInput(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# quaternions (file representation of rotations)
# ---------------------------------------------------------------------------


def quat_wxyz_to_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(4)
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > 1e-6:
        raise MalformedInput(f"quaternion norm {norm:.8f} not within 1e-6 of 1")
    w, x, y, z = q / norm
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat_wxyz(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
             (R[1, 0] - R[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2.0
        q = [0.0, 0.0, 0.0, 0.0]
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    q = np.asarray(q)
    return q if q[0] >= 0 else -q


# ---------------------------------------------------------------------------
# scene / camera / pose files
# ---------------------------------------------------------------------------


def _require(payload: dict, keys, where: str):
    for key in keys:
        if key not in payload:
            raise MalformedInput(f"{where}: missing field {key!r}")


def load_camera(payload: dict) -> Camera:
    _require(payload, ("fx", "fy", "cx", "cy", "width", "height"), "camera")
    try:
        return Camera(
            fx=float(payload["fx"]),
            fy=float(payload["fy"]),
            cx=float(payload["cx"]),
            cy=float(payload["cy"]),
            width=int(payload["width"]),
            height=int(payload["height"]),
        )
    except (TypeError, ValueError) as exc:
        raise MalformedInput(f"camera: {exc}") from exc


def dump_camera(cam: Camera) -> dict:
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
    }


def load_splat_scene(payload: dict) -> SplatScene:
    _require(payload, ("background", "splats"), "scene")
    try:
        splats = payload["splats"]
        centers = [s["center"] for s in splats]
        radii = [s["radius"] for s in splats]
        colors = [s["color"] for s in splats]
        background = payload["background"]
        if not splats:
            return SplatScene(
                np.zeros((0, 3)), np.zeros(0),
                np.zeros((0, len(background))), background,
            )
        return SplatScene(centers, radii, colors, background)
    except (TypeError, KeyError, ValueError) as exc:
        raise MalformedInput(f"scene: {exc}") from exc


def dump_splat_scene(scene: SplatScene) -> dict:
    return {
        "background": scene.background,
        "splats": [
            {"center": scene.centers[i], "radius": scene.radii[i],
             "color": scene.colors[i]}
            for i in range(scene.n_splats)
        ],
    }


def load_feature_scene(payload: dict) -> FeatureScene:
    _require(payload, ("points",), "feature scene")
    try:
        pts = np.asarray(payload["points"], dtype=np.float64)
        return FeatureScene(pts.reshape(-1, 3))
    except (TypeError, ValueError) as exc:
        raise MalformedInput(f"feature scene: {exc}") from exc


def dump_feature_scene(scene: FeatureScene) -> dict:
    return {"points": scene.points}


def load_pose(payload: dict) -> Pose:
    _require(payload, ("rotation_wxyz", "translation"), "pose")
    try:
        R = quat_wxyz_to_matrix(payload["rotation_wxyz"])
        t = np.asarray(payload["translation"], dtype=np.float64).reshape(3)
    except (TypeError, ValueError) as exc:
        raise MalformedInput(f"pose: {exc}") from exc
    return Pose(R, t)


def dump_pose(pose: Pose) -> dict:
    return {
        "rotation_wxyz": matrix_to_quat_wxyz(pose.rotation),
        "translation": pose.translation,
    }


def load_noise(payload: dict):
    kind = payload.get("type", "isotropic")
    try:
        if kind == "isotropic":
            sigma = float(payload["sigma"])
            return IsotropicVariance(sigma * sigma)
        if kind == "diagonal":
            return DiagonalVariance(np.asarray(payload["variances"], dtype=np.float64))
        if kind == "block_diagonal":
            return BlockDiagonalVariance(tuple(payload["blocks"]))
    except (TypeError, KeyError, ValueError) as exc:
        raise MalformedInput(f"noise: {exc}") from exc
    raise MalformedInput(f"noise: unknown type {kind!r}")


# ---------------------------------------------------------------------------
# multi-agent scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AgentSpec:
    """One agent's camera, local pose, frame transform, noise and tiling."""

    agent_id: str
    camera: Camera
    pose: Pose
    relative_pose: Pose
    noise: object
    tile_grid: TileGrid


@dataclass(frozen=True, eq=False)
class Scenario:
    scene: SplatScene
    agents: list
    budget: Budget
    objective: object


def load_objective(payload: dict):
    kind = payload.get("type", "logdet")
    prior = payload.get("prior_info")
    prior = None if prior is None else np.asarray(prior, dtype=np.float64)
    try:
        if kind == "logdet":
            return LogDet(prior_info=prior, ridge=float(payload.get("epsilon", 1e-6)))
        if kind == "trace":
            return Trace(prior_info=prior)
        if kind == "lambda_min":
            return LambdaMin(
                prior_info=prior, ridge=float(payload.get("epsilon", 0.0))
            )
    except (TypeError, ValueError) as exc:
        raise MalformedInput(f"objective: {exc}") from exc
    raise MalformedInput(f"objective: unknown type {kind!r}")


def load_scenario(payload: dict) -> Scenario:
    _require(payload, ("scene", "agents"), "scenario")
    scene = load_splat_scene(payload["scene"])
    agents = []
    for spec in payload["agents"]:
        _require(spec, ("agent_id", "camera", "pose"), "agent")
        grid = spec.get("tile_grid", [1, 1])
        try:
            tile_grid = TileGrid(int(grid[0]), int(grid[1]))
        except (TypeError, ValueError, IndexError) as exc:
            raise MalformedInput(f"agent tile_grid: {exc}") from exc
        rel = spec.get("relative_pose")
        agents.append(
            AgentSpec(
                agent_id=str(spec["agent_id"]),
                camera=load_camera(spec["camera"]),
                pose=load_pose(spec["pose"]),
                relative_pose=load_pose(rel) if rel else Pose.identity(),
                noise=load_noise(spec.get("noise", {"type": "isotropic", "sigma": 0.01})),
                tile_grid=tile_grid,
            )
        )
    budgets = payload.get("budgets", {})
    try:
        budget = Budget(
            per_agent={str(k): int(v) for k, v in budgets.get("per_agent", {}).items()},
            global_total=int(budgets.get("global", len(agents))),
        )
    except (TypeError, ValueError) as exc:
        raise MalformedInput(f"budgets: {exc}") from exc
    objective = load_objective(payload.get("objective", {"type": "logdet"}))
    return Scenario(scene, agents, budget, objective)


# ---------------------------------------------------------------------------
# information / bound reports
# ---------------------------------------------------------------------------


def dump_fisher_info(info: FisherInfo) -> dict:
    return {
        "matrix": info.matrix,
        "pixel_count": info.pixel_count,
        "subsample_rate": info.subsample_rate,
        "frame": info.frame,
        "eigenvalues": info.eigenvalues(),
    }


def load_fisher_info(payload: dict) -> FisherInfo:
    _require(payload, ("matrix", "pixel_count", "subsample_rate", "frame"), "fim")
    try:
        return FisherInfo(
            np.asarray(payload["matrix"], dtype=np.float64),
            pixel_count=int(payload["pixel_count"]),
            subsample_rate=float(payload["subsample_rate"]),
            frame=str(payload["frame"]),
        )
    except (TypeError, ValueError) as exc:
        raise MalformedInput(f"fim: {exc}") from exc


def dump_crb_report(report: CrbReport) -> dict:
    return {
        "covariance": report.covariance,
        "sigma_rotation_deg": report.sigma_rotation_deg,
        "sigma_translation_units": report.sigma_translation_units,
        "eigenvalues": report.eigenvalues,
        "rank": report.rank,
        "nullspace_basis": report.nullspace_basis,
        "ridge_used": report.ridge_used,
    }


def load_crb_report(payload: dict) -> CrbReport:
    _require(payload, ("covariance", "eigenvalues", "rank"), "crb report")
    try:
        null_basis = np.asarray(payload.get("nullspace_basis", []), dtype=np.float64)
        return CrbReport(
            covariance=np.asarray(payload["covariance"], dtype=np.float64),
            sigma_rotation_deg=np.asarray(
                payload["sigma_rotation_deg"], dtype=np.float64
            ),
            sigma_translation_units=np.asarray(
                payload["sigma_translation_units"], dtype=np.float64
            ),
            eigenvalues=np.asarray(payload["eigenvalues"], dtype=np.float64),
            rank=int(payload["rank"]),
            nullspace_basis=null_basis.reshape(6, -1) if null_basis.size else
            np.zeros((6, 0)),
            ridge_used=float(payload.get("ridge_used", 0.0)),
        )
    except (TypeError, ValueError) as exc:
        raise MalformedInput(f"crb report: {exc}") from exc


# ---------------------------------------------------------------------------
# CSV emitters
# ---------------------------------------------------------------------------

TRIAL_FIELDS = (
    "trial_index", "converged", "iters",
    "err_vx", "err_vy", "err_vz", "err_wx", "err_wy", "err_wz",
)


def write_trials_csv(path, results: list[TrialResult]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIAL_FIELDS)
        for i, r in enumerate(results):
            writer.writerow(
                [i, int(r.converged), r.iterations, *(_fmt(e) for e in r.error)]
            )


def read_trials_csv(path) -> list[TrialResult]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            results = []
            for row in reader:
                err = np.array([float(row[f]) for f in TRIAL_FIELDS[3:]])
                results.append(
                    TrialResult(err, bool(int(row["converged"])), int(row["iters"]))
                )
        return results
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise MalformedInput(f"{path}: {exc}") from exc


def write_calibration_csv(path, curve: CalibrationCurve):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "coverage"])
        for level, cov in zip(curve.levels, curve.coverage):
            writer.writerow([_fmt(level), _fmt(cov)])


def write_selection_csv(path, history: list):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "agent_id", "tile_id", "objective_value"])
        for entry in history:
            writer.writerow(
                [entry["step"], entry["agent_id"], entry["tile_id"],
                 _fmt(entry["objective_value"])]
            )


def write_sweep_csv(path, rows: list):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene_tag", "bound_type", "rot_deg", "trans_units"])
        for row in rows:
            writer.writerow(
                [row.scene_tag, row.bound_type, _fmt(row.rot_deg),
                 _fmt(row.trans_units)]
            )


# ---------------------------------------------------------------------------
# diagnostic images
# ---------------------------------------------------------------------------


def write_image_csv(path, image: np.ndarray):
    """Flat CSV of the float image buffer (the authoritative representation)."""
    flat = np.asarray(image, dtype=np.float64).ravel()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "value"])
        for i, v in enumerate(flat):
            writer.writerow([i, _fmt(v)])


def write_image_png(path, image: np.ndarray):
    """8-bit PNG preview, for eyeballing only; clips to [0, 1]."""
    from PIL import Image as PILImage

    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = (arr * 255.0).round().astype(np.uint8)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    mode = "L" if data.ndim == 2 else "RGB"
    PILImage.fromarray(data, mode=mode).save(path)
