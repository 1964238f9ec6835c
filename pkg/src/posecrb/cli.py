"""Command-line interface.

One binary with subcommands covering the practitioner workflow: assemble
the pose information matrix for a scene and camera (fim), invert it into a
covariance bound (crb), fuse several agents (fuse), pick tiles under a
bandwidth budget (select), run Monte Carlo alignment trials (validate),
check coverage calibration (calibrate), and compare bounds across the
shipped scene pair (sweep).  Structured results are JSON, trial and curve
data CSV.  Exit codes: 0 success, 2 malformed input, 3 dimension mismatch.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import fileio, scenes
from .fisher import (
    DimensionMismatch,
    IsotropicVariance,
    assemble_fim,
    crb,
    identifiability,
)
from .multiagent import (
    AgentObservation,
    fuse,
    select_exhaustive,
    select_greedy,
    tile_infos,
    transport,
)
from .renderer import FeatureModel, PhotometricModel, PixelSubset
from .se3 import Pose
from .validation import TrialConfig, calibrate, perturb_and_align, texture_sweep

EXIT_OK = 0
EXIT_MALFORMED = 2
EXIT_DIMENSION = 3


def _load_model(args):
    cam = fileio.load_camera(fileio.read_json(args.camera))
    if getattr(args, "features", None):
        scene = fileio.load_feature_scene(fileio.read_json(args.features))
        return FeatureModel(scene, cam)
    scene = fileio.load_splat_scene(fileio.read_json(args.scene))
    return PhotometricModel(scene, cam)


def _load_noise(args):
    if getattr(args, "noise", None):
        return fileio.load_noise(fileio.read_json(args.noise))
    return IsotropicVariance(args.noise_sigma**2)


def _print_matrix(name, m):
    print(name)
    for row in np.asarray(m):
        print("  " + " ".join(f"{v: .6e}" for v in row))


def _compute_fim(args):
    model = _load_model(args)
    pose = fileio.load_pose(fileio.read_json(args.pose))
    pixels = PixelSubset.parse(args.pixels)
    return assemble_fim(model, pose, _load_noise(args), pixels)


def cmd_fim(args) -> int:
    info = _compute_fim(args)
    diag = identifiability(info, rel_tol=args.rank_tol)
    _print_matrix("information matrix:", info.matrix)
    print("eigenvalues: " + " ".join(f"{v:.6e}" for v in info.eigenvalues()))
    print(f"rank: {diag['rank']}  pixel_count: {info.pixel_count}  "
          f"subsample_rate: {info.subsample_rate:.6f}")
    if args.output:
        fileio.write_json(args.output, fileio.dump_fisher_info(info))
    return EXIT_OK


def _print_crb(report):
    axes = ["vx", "vy", "vz"]
    for name, sigma in zip(axes, report.sigma_translation_units):
        print(f"  sigma[{name}] = {sigma:.6e} units")
    for name, sigma in zip(["wx", "wy", "wz"], report.sigma_rotation_deg):
        print(f"  sigma[{name}] = {sigma:.6e} deg")
    print(f"  rank: {report.rank}  ridge_used: {report.ridge_used}")
    if report.nullspace_basis.shape[1]:
        print("  unbounded directions (columns):")
        for row in report.nullspace_basis:
            print("    " + " ".join(f"{v: .4f}" for v in row))


def cmd_crb(args) -> int:
    if args.fim:
        info = fileio.load_fisher_info(fileio.read_json(args.fim))
    else:
        if not args.camera or not args.pose or not (args.scene or args.features):
            raise fileio.MalformedInput(
                "crb needs either --fim or --camera/--pose with --scene/--features"
            )
        info = _compute_fim(args)
    report = crb(info, ridge=args.ridge, rank_tol=args.rank_tol)
    print("covariance bound:")
    _print_crb(report)
    if args.output:
        fileio.write_json(args.output, fileio.dump_crb_report(report))
    return EXIT_OK


def _agent_observations(scenario):
    observations = []
    for agent in scenario.agents:
        model = PhotometricModel(scenario.scene, agent.camera)
        info = assemble_fim(model, agent.pose, agent.noise)
        observations.append(
            AgentObservation(agent.agent_id, info, agent.relative_pose)
        )
    return observations


def cmd_fuse(args) -> int:
    scenario = fileio.load_scenario(fileio.read_json(args.scenario))
    observations = _agent_observations(scenario)
    per_agent = {}
    for obs in observations:
        report = crb(transport(obs), ridge=args.ridge, rank_tol=args.rank_tol)
        per_agent[obs.agent_id] = report
        print(f"agent {obs.agent_id}:")
        _print_crb(report)
    fused = fuse(observations)
    fused_report = crb(fused, ridge=args.ridge, rank_tol=args.rank_tol)
    print("fused:")
    _print_crb(fused_report)
    if args.output:
        fileio.write_json(
            args.output,
            {
                "fused": fileio.dump_crb_report(fused_report),
                "per_agent": {
                    k: fileio.dump_crb_report(v) for k, v in per_agent.items()
                },
            },
        )
    return EXIT_OK


def cmd_select(args) -> int:
    scenario = fileio.load_scenario(fileio.read_json(args.scenario))
    blocks = []
    for agent in scenario.agents:
        model = PhotometricModel(scenario.scene, agent.camera)
        blocks.extend(
            tile_infos(
                model, agent.pose, agent.noise, agent.tile_grid,
                agent.relative_pose, agent_id=agent.agent_id,
            )
        )
    chooser = select_exhaustive if args.oracle else select_greedy
    result = chooser(blocks, scenario.budget, scenario.objective)
    print(f"selected {len(result.selected)} of {len(blocks)} blocks; "
          f"objective {result.objective_value:.6e} (base {result.base_value:.6e})")
    for key in result.selected:
        print(f"  agent {key[0]} tile {key[1]}")
    if args.output:
        fileio.write_selection_csv(args.output, result.history)
    return EXIT_OK


def _trial_config(args) -> TrialConfig:
    return TrialConfig(
        n_trials=args.trials,
        perturbation_scale=(args.rot_scale, args.trans_scale),
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )


def cmd_validate(args) -> int:
    model = _load_model(args)
    pose = fileio.load_pose(fileio.read_json(args.pose))
    cfg = _trial_config(args)
    results = perturb_and_align(model, pose, cfg, threads=args.threads)
    info = assemble_fim(model, pose, IsotropicVariance(cfg.noise_sigma**2))
    report = crb(info)
    errs = np.array([r.error for r in results if r.converged])
    n_conv = errs.shape[0]
    print(f"trials: {len(results)}  converged: {n_conv}")
    if n_conv > 1:
        emp = errs.std(axis=0, ddof=1)
        pred = np.sqrt(np.maximum(np.diag(report.covariance), 0.0))
        for name, e, p in zip(["vx", "vy", "vz", "wx", "wy", "wz"], emp, pred):
            ratio = e / p if p > 0 else float("inf")
            print(f"  {name}: empirical std {e:.6e}  bound {p:.6e}  "
                  f"ratio {ratio:.3f}")
    if args.output:
        fileio.write_trials_csv(args.output, results)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    results = fileio.read_trials_csv(args.trials_csv)
    report = fileio.load_crb_report(fileio.read_json(args.crb))
    levels = [float(x) for x in args.levels.split(",")]
    curve = calibrate(results, report.covariance, levels)
    for level, cov in zip(curve.levels, curve.coverage):
        print(f"  level {level:.3f}: coverage {cov:.4f}")
    if args.output:
        fileio.write_calibration_csv(args.output, curve)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cam = scenes.default_camera(args.size)
    pose = Pose.identity()
    pair = [("high", scenes.high_texture_scene()), ("low", scenes.low_texture_scene())]
    cfg = _trial_config(args)
    result = texture_sweep(pair, cam, pose, cfg)
    for row in result.rows:
        print(f"  {row.scene_tag:5s} {row.bound_type:10s} rot {row.rot_deg:.4f} deg  "
              f"trans {row.trans_units:.4f} units")
    print(f"CRB trace low/high ratio: {result.trace_ratio:.2f}")
    if args.output:
        fileio.write_sweep_csv(args.output, result.rows)
    if result.trace_ratio is not None and result.trace_ratio <= 3.0:
        print("texture ordering violated: expected low > 3x high")
        return 1
    return EXIT_OK


def _add_model_inputs(p, features_ok=True):
    p.add_argument("--scene", help="splat scene JSON")
    if features_ok:
        p.add_argument("--features", help="feature-point scene JSON (pinhole mode)")
    p.add_argument("--camera", required=True, help="camera intrinsics JSON")
    p.add_argument("--pose", required=True, help="pose JSON (quaternion wxyz)")


def _add_model_inputs_optional(p):
    p.add_argument("--scene")
    p.add_argument("--features")
    p.add_argument("--camera")
    p.add_argument("--pose")


def _add_noise_args(p):
    p.add_argument("--noise-sigma", type=float, default=0.01,
                   help="isotropic pixel noise std")
    p.add_argument("--noise", help="noise model JSON (overrides --noise-sigma)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posecrb",
        description="Pose covariance bounds from differentiable rendering",
    )
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for trial loops")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fim", help="assemble the pose information matrix")
    _add_model_inputs(p)
    _add_noise_args(p)
    p.add_argument("--pixels", default="all", help='"all" or "stride:<n>"')
    p.add_argument("--rank-tol", type=float, default=1e-10)
    p.add_argument("--output", help="write FIM JSON here")
    p.set_defaults(func=cmd_fim)

    p = sub.add_parser("crb", help="covariance bound from a FIM or scene")
    p.add_argument("--fim", help="previously computed FIM JSON")
    _add_model_inputs_optional(p)
    _add_noise_args(p)
    p.add_argument("--pixels", default="all")
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--rank-tol", type=float, default=1e-10)
    p.add_argument("--output")
    p.set_defaults(func=cmd_crb)

    p = sub.add_parser("fuse", help="fuse agents from a scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--rank-tol", type=float, default=1e-10)
    p.add_argument("--output")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("select", help="budgeted tile selection")
    p.add_argument("--scenario", required=True)
    p.add_argument("--oracle", action="store_true",
                   help="exhaustive optimum instead of greedy")
    p.add_argument("--output", help="selection CSV")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("validate", help="perturb-and-align Monte Carlo trials")
    _add_model_inputs(p)
    _add_noise_args(p)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--rot-scale", type=float, default=0.05)
    p.add_argument("--trans-scale", type=float, default=0.05)
    p.add_argument("--output", help="trials CSV")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("calibrate", help="coverage curve from trials + CRB")
    p.add_argument("--trials-csv", required=True)
    p.add_argument("--crb", required=True, help="CRB report JSON")
    p.add_argument("--levels", default="0.5,0.8,0.9,0.95")
    p.add_argument("--output", help="calibration CSV")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="bound comparison on the shipped scenes")
    _add_noise_args(p)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--rot-scale", type=float, default=0.02)
    p.add_argument("--trans-scale", type=float, default=0.02)
    p.add_argument("--size", type=int, default=64, help="image side length")
    p.add_argument("--output", help="sweep CSV")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except fileio.MalformedInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except DimensionMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION


if __name__ == "__main__":
    sys.exit(main())
