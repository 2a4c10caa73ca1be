"""Command-line interface.

Subcommands: simulate, solve, ransac, benchmark, enumerate.
Exit codes: 0 success, 1 usage or input error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import enumeration, files, robust, synthetic
from .exceptions import GravityMissing, ScanposeError
from .solvers import MIN_CAMERAS, MIN_LINES, SOLVERS


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scanpose",
        description="Single-scanline relative pose estimation for "
                    "rolling-shutter cameras.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic observation file")
    p.add_argument("--setting", required=True, choices=list("BDEbde"))
    p.add_argument("--m", type=int, required=True, help="camera count")
    p.add_argument("--n", type=int, required=True, help="line count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--focal", type=float, default=1000.0)
    p.add_argument("--out", required=True, help="observation file path")

    p = sub.add_parser("solve", help="run one minimal solver on a file")
    p.add_argument("--solver", required=True, choices=sorted(SOLVERS))
    p.add_argument("--input", required=True)
    p.add_argument("--gt", help="ground-truth sidecar for error reporting")
    p.add_argument("--seed", type=int, default=20250,
                   help="seed of the d37 multi-start search")

    p = sub.add_parser("ransac", help="robust estimation over many lines")
    p.add_argument("--solver", required=True, choices=sorted(SOLVERS))
    p.add_argument("--input", required=True)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--threshold", type=float, default=1.0,
                   help="inlier threshold in pixels")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("benchmark", help="noise-sweep benchmark CSV/figures")
    p.add_argument("--solver", required=True, choices=sorted(SOLVERS))
    p.add_argument("--sigma-p", default="0,0.5,1,1.5,2",
                   help="comma-separated pixel-noise levels")
    p.add_argument("--sigma-v", default="0",
                   help="comma-separated gravity-noise levels (radians)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--focal", type=float, default=1000.0)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--figures", help="directory for rendered figures")

    p = sub.add_parser("enumerate", help="balanced/minimal problem table")
    p.add_argument("--setting", choices=list("ABCDEabcde"),
                   help="restrict to one setting")
    p.add_argument("--m-max", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _pose_json(pose) -> dict:
    return {"rotation": pose.rotation.tolist(),
            "center": pose.center.tolist(),
            "scanline_y": pose.scanline_y}


def _cmd_simulate(args) -> int:
    cfg = synthetic.SceneConfig(setting=args.setting.upper(), cameras_m=args.m,
                                lines_n=args.n, seed=args.seed)
    inst = synthetic.sample_scene(cfg)
    files.save_observations(args.out, files.instance_to_file(inst, args.focal))
    sidecar = args.out + ".gt.json" if not args.out.endswith(".json") \
        else args.out[:-5] + ".gt.json"
    files.save_gt_sidecar(sidecar, inst)
    print(f"wrote {args.out} and {sidecar}")
    return 0


def _load_for_solver(args):
    observations, pseudo_gt = files.load_observations(args.input)
    m = len(observations)
    n = len(observations[0])
    need_m, need_n = MIN_CAMERAS[args.solver], MIN_LINES[args.solver]
    if m != need_m:
        print(f"error: solver {args.solver} needs {need_m} cameras, "
              f"file has {m}", file=sys.stderr)
        return None, None
    if n < need_n:
        print(f"error: solver {args.solver} needs at least {need_n} lines, "
              f"file has {n}", file=sys.stderr)
        return None, None
    if args.solver in ("e35", "e44", "d37"):
        for i, row in enumerate(observations):
            if row[0].gravity is None:
                print(f"error: camera {i} is missing the 'gravity' field "
                      f"required by solver {args.solver}", file=sys.stderr)
                return None, None
    return observations, pseudo_gt


def _cmd_solve(args) -> int:
    observations, _pseudo_gt = _load_for_solver(args)
    if observations is None:
        return 1
    try:
        if args.solver == "d37":
            output = SOLVERS["d37"](observations, seed=args.seed)
        else:
            output = SOLVERS[args.solver](observations)
    except ScanposeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    doc = {
        "solver": output.solver_id,
        "tensor": output.tensor.t.ravel().tolist(),
        "num_candidates": (len(output.poses) if output.poses
                           else len(output.canonical)),
    }
    if output.canonical:
        doc["canonical_triplets"] = [t.alpha.tolist()
                                     for t in output.canonical]
    if output.poses:
        doc["candidates"] = [[_pose_json(p) for p in tup]
                             for tup in output.poses]
    gt_inst = _gt_instance(args, observations)
    if gt_inst is not None:
        rot, trans, terr = synthetic.best_candidate_errors(output, gt_inst)
        doc["best_rot_err"] = None if np.isnan(rot) else rot
        doc["best_trans_err"] = None if np.isnan(trans) else trans
        doc["tensor_err"] = None if np.isnan(terr) else terr
    json.dump(doc, sys.stdout, indent=1)
    print()
    return 0


def _gt_instance(args, observations):
    if not getattr(args, "gt", None):
        return None
    poses, lines, tensor, setting = files.load_gt_sidecar(args.gt)
    return synthetic.SyntheticInstance(
        gt_poses=poses, gt_lines=lines, observations=observations,
        gt_tensor=tensor, setting=setting)


def _cmd_ransac(args) -> int:
    observations, _ = _load_for_solver(args)
    if observations is None:
        return 1
    intr = None
    with open(args.input) as fh:
        intr = json.load(fh)["cameras"][0]
    config = robust.RansacConfig(
        iterations=args.iterations, inlier_threshold=args.threshold,
        focal=float(intr["focal"]), seed=args.seed, solver_id=args.solver)
    try:
        model = robust.ransac(observations, config)
    except ScanposeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    doc = {
        "solver": args.solver,
        "score": model.score,
        "inliers": int(model.inlier_mask.sum()),
        "inlier_mask": model.inlier_mask.tolist(),
        "iteration": model.iteration,
        "cameras": [c.tolist() for c in model.cameras],
    }
    if model.poses:
        doc["poses"] = [_pose_json(p) for p in model.poses]
    json.dump(doc, sys.stdout, indent=1)
    print()
    return 0


def _cmd_benchmark(args) -> int:
    try:
        sigma_ps = [float(v) for v in args.sigma_p.split(",") if v != ""]
        sigma_vs = [float(v) for v in args.sigma_v.split(",") if v != ""]
    except ValueError:
        print("error: --sigma-p/--sigma-v must be comma-separated numbers",
              file=sys.stderr)
        return 1
    cells = synthetic.run_benchmark(
        args.solver, sigma_ps, sigma_vs, args.trials, seed=args.seed,
        focal=args.focal)
    synthetic.write_benchmark_csv(cells, args.out)
    print(f"wrote {args.out}")
    if args.figures:
        from .plots import render_benchmark_figures

        for path in render_benchmark_figures(cells, args.figures):
            print(f"wrote {path}")
    return 0


def _cmd_enumerate(args) -> int:
    settings = [args.setting.upper()] if args.setting else list("ABCDE")
    print(f"{'setting':>7} {'m':>3} {'n':>3} {'minimal':>8} "
          f"{'cond':>10} {'degree':>8}")
    for setting in settings:
        for spec in enumeration.enumerate_balanced(setting, args.m_max):
            verdict = enumeration.minimality_check(spec, seed=args.seed)
            print(f"{spec.setting:>7} {spec.cameras_m:>3} {spec.lines_n:>3} "
                  f"{str(verdict.minimal):>8} "
                  f"{verdict.jacobian_condition:>10.2e} "
                  f"{verdict.table_degree or '?':>8}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "solve": _cmd_solve,
    "ransac": _cmd_ransac,
    "benchmark": _cmd_benchmark,
    "enumerate": _cmd_enumerate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except (ScanposeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
