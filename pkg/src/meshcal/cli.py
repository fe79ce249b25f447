"""Command-line front end: calibrate, evaluate, synth, and fk subcommands."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import liegroup as lg
from .datasets import (load_dataset, load_manifest, load_robot, observed_from_dataset,
                       write_synthetic_dataset)
from .errors import CalibrationError
from .evaluation import (DEFAULT_SUCCESS_THRESHOLD_MM, evaluate_pose,
                         generate_synthetic_scene, monte_carlo_cv)
from .kinematics import forward_kinematics, parse_robot
from .registration import RegistrationConfig, register

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshcal",
        description="Marker-free hand-eye calibration from depth maps and robot meshes")
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="register the robot model to the observations")
    cal.add_argument("--manifest", required=True)
    cal.add_argument("--config", help="registration config JSON")
    cal.add_argument("--out", required=True, help="output directory")

    ev = sub.add_parser("evaluate", help="tag-based metrics for a pose or Monte Carlo CV")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--config", help="registration config JSON")
    ev.add_argument("--pose", help="pose JSON (4x4 camera_T_base); omit for Monte Carlo CV")
    ev.add_argument("--sizes", default="3,6,9,12")
    ev.add_argument("--repeats", type=int, default=5)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--threshold-mm", type=float, default=DEFAULT_SUCCESS_THRESHOLD_MM)
    ev.add_argument("--out", required=True)

    sy = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    sy.add_argument("--robot", required=True, help="robot description (URDF)")
    sy.add_argument("--mesh-root", default=None)
    sy.add_argument("--out", required=True)
    sy.add_argument("--n-configs", type=int, default=15)
    sy.add_argument("--noise-mm", type=float, default=0.0)
    sy.add_argument("--outlier-frac", type=float, default=0.0)
    sy.add_argument("--points-per-config", type=int, default=250)
    sy.add_argument("--seed", type=int, default=0)

    fk = sub.add_parser("fk", help="print per-link poses for a joint vector")
    fk.add_argument("--robot", required=True)
    fk.add_argument("--mesh-root", default=None)
    fk.add_argument("--joints", required=True, help="JSON array of joint values")
    return parser


def _load_config(args) -> RegistrationConfig:
    if getattr(args, "config", None):
        return RegistrationConfig.from_json(args.config)
    return RegistrationConfig()


def cmd_calibrate(args) -> int:
    config = _load_config(args)
    manifest = load_manifest(args.manifest)
    dataset = load_dataset(manifest, config)
    report = register(dataset.model, dataset.qs, observed_from_dataset(dataset), config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "pose.json").write_text(
        json.dumps(report.pose.matrix().tolist(), indent=2) + "\n")
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(f"converged={report.converged} "
          f"median_residual={report.final_median_residual:.6f} m "
          f"wall_time={report.wall_time:.3f} s")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            f"{v:.6f}" if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    manifest = load_manifest(args.manifest)
    dataset = load_dataset(manifest, config)
    if not dataset.tag_obs:
        print("error: manifest has no tag observation files", file=sys.stderr)
        return EXIT_ERROR
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.pose:
        pose = lg.Pose.from_matrix(np.asarray(json.loads(Path(args.pose).read_text())))
        result = evaluate_pose(pose, dataset, range(dataset.n_configs), args.threshold_mm)
        (out / "eval.json").write_text(json.dumps(result.__dict__, indent=2) + "\n")
        _write_csv(out / "eval.csv",
                   ["task_err_mm_mean", "task_err_mm_std",
                    "mpd_px_mean", "mpd_px_std", "success"],
                   [(result.task_err_mm_mean, result.task_err_mm_std,
                     result.mpd_px_mean, result.mpd_px_std, int(result.success))])
        print(f"task_err={result.task_err_mm_mean:.3f}±{result.task_err_mm_std:.3f} mm "
              f"mpd={result.mpd_px_mean:.3f}±{result.mpd_px_std:.3f} px "
              f"success={result.success}")
        return EXIT_OK

    sizes = tuple(int(s) for s in args.sizes.split(","))
    summaries = monte_carlo_cv(dataset, sizes=sizes, repeats=args.repeats,
                               seed=args.seed, threshold_mm=args.threshold_mm)
    rows = [(n, s.task_err_mm_mean, s.task_err_mm_std, s.mpd_px_mean,
             s.mpd_px_std, s.success_rate) for n, s in sorted(summaries.items())]
    _write_csv(out / "cross_validation.csv",
               ["n", "task_err_mm_mean", "task_err_mm_std",
                "mpd_px_mean", "mpd_px_std", "success_rate"], rows)
    (out / "cross_validation.json").write_text(json.dumps({
        str(n): {
            "task_err_mm_mean": s.task_err_mm_mean,
            "task_err_mm_std": s.task_err_mm_std,
            "mpd_px_mean": s.mpd_px_mean,
            "mpd_px_std": s.mpd_px_std,
            "success_rate": s.success_rate,
        } for n, s in sorted(summaries.items())}, indent=2) + "\n")
    for row in rows:
        print(f"N={row[0]}: task_err={row[1]:.3f}±{row[2]:.3f} mm "
              f"mpd={row[3]:.3f}±{row[4]:.3f} px success_rate={row[5]:.2f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    robot_path = Path(args.robot)
    mesh_root = Path(args.mesh_root) if args.mesh_root else robot_path.parent
    model = parse_robot(robot_path.read_text(), mesh_root)
    scene = generate_synthetic_scene(
        model, n_configs=args.n_configs, noise_mm=args.noise_mm,
        outlier_frac=args.outlier_frac, seed=args.seed,
        points_per_config=args.points_per_config)
    manifest_path = write_synthetic_dataset(scene, robot_path, mesh_root, args.out)
    print(f"wrote {manifest_path}")
    return EXIT_OK


def cmd_fk(args) -> int:
    robot_path = Path(args.robot)
    mesh_root = Path(args.mesh_root) if args.mesh_root else robot_path.parent
    model = parse_robot(robot_path.read_text(), mesh_root)
    joints_arg = Path(args.joints)
    text = joints_arg.read_text() if joints_arg.is_file() else args.joints
    q = np.asarray(json.loads(text), dtype=float)
    poses = forward_kinematics(model, q)
    print(json.dumps({name: pose.matrix().tolist() for name, pose in poses.items()},
                     indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"calibrate": cmd_calibrate, "evaluate": cmd_evaluate,
                "synth": cmd_synth, "fk": cmd_fk}
    try:
        return handlers[args.command](args)
    except (CalibrationError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
