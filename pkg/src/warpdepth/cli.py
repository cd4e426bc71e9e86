"""Command-line entry point binding the library into reproducible runs.

Commands: synth, optimize, train, eval-depth, eval-odom, match-compare.
Every run writes its fully resolved configuration next to its outputs and
is byte-deterministic given (flags, seed, inputs): outputs carry no
timestamps, and all numeric files use fixed formats. Flag values may also
come from a key=value file via --config; explicit flags win.

Exit codes: 0 success, 2 argument errors, 3 I/O or parse failures,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from . import dataio, evaluation, features as features_mod, losses, nets, se3, solver, synthetic
from .errors import DivergenceError, ParseError
from .se3 import Twist

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="key=value file of flag defaults")


def _add_loss_flags(p: argparse.ArgumentParser):
    p.add_argument("--lambda-ir", type=float, default=1.0)
    p.add_argument("--lambda-fr", type=float, default=0.1)
    p.add_argument("--lambda-ds", type=float, default=10.0)
    p.add_argument("--features", default="gradient_descriptor", choices=features_mod.KINDS)
    p.add_argument("--feature-seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--adam-beta1", type=float, default=0.9)
    p.add_argument("--adam-beta2", type=float, default=0.999)
    p.add_argument("--adam-eps", type=float, default=1e-8)


def _apply_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser,
                       argv: List[str]):
    """Fill flags from --config for every option not given explicitly."""
    if not args.config:
        return
    values = dataio.read_key_values(args.config)
    explicit = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    for key, raw in values.items():
        flag = "--" + key.replace("_", "-")
        if flag in explicit or not hasattr(args, key.replace("-", "_")):
            continue
        attr = key.replace("-", "_")
        current = getattr(args, attr)
        if isinstance(current, bool):
            setattr(args, attr, raw.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(args, attr, int(raw))
        elif isinstance(current, float):
            setattr(args, attr, float(raw))
        else:
            setattr(args, attr, raw)


def _write_resolved_config(args: argparse.Namespace, command: str):
    # `out` stays out of the file so two runs into different directories
    # produce byte-identical outputs
    os.makedirs(args.out, exist_ok=True)
    skip = {"config", "func", "command", "out"}
    with open(os.path.join(args.out, "config_resolved.txt"), "w") as fh:
        fh.write("command=%s\n" % command)
        for key in sorted(vars(args)):
            if key in skip:
                continue
            val = getattr(args, key)
            if callable(val):
                continue
            fh.write("%s=%s\n" % (key, _fmt_value(val)))


def _fmt_value(val) -> str:
    if isinstance(val, float):
        return "%.17g" % val
    return str(val)


def _weights(args) -> losses.LossWeights:
    return losses.LossWeights(args.lambda_ir, args.lambda_fr, args.lambda_ds)


def _extractor(args):
    return features_mod.make_extractor(args.features, seed=args.feature_seed)


# ------------------------------------------------------------------ synth

def cmd_synth(args) -> int:
    scene = synthetic.preset_scene(args.preset, frames=args.frames, seed=args.seed,
                                   width=args.width, height=args.height)
    seq = synthetic.render_scene(scene)
    traj = evaluation.Trajectory(list(range(len(seq))), seq.cam_poses)
    meta: Dict[str, object] = {
        "preset": args.preset,
        "frames": args.frames,
        "seed": args.seed,
        "plane_depth": "%.17g" % scene.plane_depth,
    }
    if scene.kind == "plane" and scene.plane_tilt == (0.0, 0.0):
        meta["uniform_disparity"] = "%.17g" % (
            scene.intrinsics.fx * scene.baseline / scene.plane_depth
        )
    if scene.band is not None:
        cy = scene.intrinsics.cy
        meta["band_row_lo"] = "%.17g" % (scene.band.beta_lo + cy)
        meta["band_row_hi"] = "%.17g" % (scene.band.beta_hi + cy)
        meta["band_edge_width"] = "%.17g" % scene.band.edge_width
    dataio.write_sequence(args.out, seq.lefts, seq.rights, scene.intrinsics,
                          scene.baseline, poses=traj, depths=seq.depths, meta=meta)
    _write_resolved_config(args, "synth")
    print("wrote %d-frame '%s' sequence to %s" % (len(seq), args.preset, args.out))
    return EXIT_OK


# --------------------------------------------------------------- optimize

def cmd_optimize(args) -> int:
    manifest = dataio.scan_sequence(args.sequence)
    instances = dataio.load_instances(manifest)
    weights = _weights(args)
    extractor = _extractor(args)
    monocular = args.mode == "monocular"
    free = tuple(args.free.split(","))
    os.makedirs(os.path.join(args.out, "depth_pred"), exist_ok=True)
    progress = open(os.path.join(args.out, "progress.csv"), "w")
    progress.write("instance,iteration,l_ir,l_fr,l_ds,total\n")
    relative_poses = []
    twist_lines = []
    for idx, inst in enumerate(instances):
        init_d_inv = np.full(inst.ref_image.shape[:2],
                             max(1.0 / args.init_depth - losses.INV_DEPTH_EPS, 0.0))
        init_twist = Twist.zero()

        def log(it, b, idx=idx):
            progress.write("%d,%d,%.12g,%.12g,%.12g,%.12g\n"
                           % (idx, it, b.l_ir, b.l_fr, b.l_ds, b.total))

        report = solver.optimize_direct(
            inst, init_d_inv, init_twist, weights, extractor,
            iterations=args.iterations, lr=args.lr, monocular=monocular, log_fn=log,
        )
        depth = losses.inverse_depth_to_depth(report.final_d_inv)
        dataio.save_pfm(os.path.join(args.out, "depth_pred", "%06d.pfm" % inst.ref_index),
                        depth)
        relative_poses.append(se3.twist_to_transform(report.final_twist))
        twist_lines.append(" ".join("%.17g" % v for v in report.final_twist.as_vector()))
        print("instance %d: total %.6g -> %.6g (%d iterations)"
              % (idx, report.history[0].total, report.history[-1].total,
                 report.iterations))
        if monocular and idx == 0:
            _write_scale_diagnostic(args, inst, report, weights, extractor)
    progress.close()
    with open(os.path.join(args.out, "twists_pred.txt"), "w") as fh:
        fh.write("\n".join(twist_lines) + "\n")
    traj = evaluation.integrate_trajectory(relative_poses)
    dataio.save_poses(os.path.join(args.out, "poses_pred.txt"), traj)
    _write_resolved_config(args, "optimize")
    return EXIT_OK


def _write_scale_diagnostic(args, inst, report, weights, extractor):
    """Monocular-mode evidence that co-scaling depth and translation leaves
    the temporal reconstruction loss unchanged."""
    depth = losses.inverse_depth_to_depth(report.final_d_inv)
    tw = report.final_twist
    lines = ["scale,relative_change"]
    base, _, _ = losses.total_loss(
        inst, report.final_d_inv, tw, extractor, weights,
        with_gradients=False, monocular=True)
    base_recon = weights.lambda_ir * base.l_ir + weights.lambda_fr * base.l_fr
    for s in (0.5, 2.0):
        d_inv_s = np.maximum(1.0 / (depth * s) - losses.INV_DEPTH_EPS, 0.0)
        tw_s = Twist(tw.u, tw.v * s)
        b, _, _ = losses.total_loss(inst, d_inv_s, tw_s, extractor, weights,
                                    with_gradients=False, monocular=True)
        recon = weights.lambda_ir * b.l_ir + weights.lambda_fr * b.l_fr
        lines.append("%.17g,%.12g" % (s, abs(recon - base_recon) / max(base_recon, 1e-300)))
    with open(os.path.join(args.out, "scale_diagnostic.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ------------------------------------------------------------------ train

def cmd_train(args) -> int:
    manifest = dataio.scan_sequence(args.sequence)
    instances = dataio.load_instances(manifest)
    if args.holdout > 0:
        if args.holdout >= len(instances):
            raise ValueError("holdout %d leaves no training instances" % args.holdout)
        train_set, held = instances[: -args.holdout], instances[-args.holdout :]
    else:
        train_set, held = instances, []
    weights = _weights(args)
    extractor = _extractor(args)
    if args.no_feature_loss:
        weights = losses.LossWeights(weights.lambda_ir, 0.0, weights.lambda_ds)
    depth_net = nets.DepthNet(seed=args.seed)
    pose_net = nets.PoseNet(seed=args.seed + 1)
    depth_state = nets.AdamState(depth_net.parameters(), lr=args.lr,
                                 beta1=args.adam_beta1, beta2=args.adam_beta2,
                                 eps=args.adam_eps)
    pose_state = nets.AdamState(pose_net.parameters(), lr=args.lr,
                                beta1=args.adam_beta1, beta2=args.adam_beta2,
                                eps=args.adam_eps)
    start_epoch = 0
    if args.resume:
        arrays, meta = nets.load_checkpoint(args.resume)
        depth_net.load_state_dict(_sub(arrays, "depth."))
        pose_net.load_state_dict(_sub(arrays, "pose."))
        depth_state.load_state_arrays(_sub(arrays, "adam_depth."), int(meta["depth_steps"]))
        pose_state.load_state_arrays(_sub(arrays, "adam_pose."), int(meta["pose_steps"]))
        start_epoch = int(meta["epoch"])
    os.makedirs(args.out, exist_ok=True)
    curve = open(os.path.join(args.out, "train_curve.csv"), "w")
    curve.write("epoch,instance,l_ir,l_fr,l_ds,total\n")

    def log(rec):
        curve.write("%d,%d,%.12g,%.12g,%.12g,%.12g\n"
                    % (rec.epoch, rec.instance, rec.l_ir, rec.l_fr, rec.l_ds, rec.total))

    held_rows = []
    if held:
        held_rows.append((start_epoch, solver.evaluate_instances(
            held, depth_net, pose_net, weights, extractor)))
    for epoch in range(start_epoch, start_epoch + args.epochs):
        solver.train_predictors(train_set, depth_net, pose_net, weights, extractor,
                                epochs=1, lr=args.lr, depth_state=depth_state,
                                pose_state=pose_state, start_epoch=epoch, log_fn=log)
        if held:
            held_rows.append((epoch + 1, solver.evaluate_instances(
                held, depth_net, pose_net, weights, extractor)))
        if args.checkpoint_every and (epoch + 1) % args.checkpoint_every == 0:
            _save_train_checkpoint(
                os.path.join(args.out, "ckpt_epoch_%04d.bin" % (epoch + 1)),
                depth_net, pose_net, depth_state, pose_state, epoch + 1)
    curve.close()
    _save_train_checkpoint(os.path.join(args.out, "ckpt_final.bin"),
                           depth_net, pose_net, depth_state, pose_state,
                           start_epoch + args.epochs)
    if held:
        with open(os.path.join(args.out, "heldout_curve.csv"), "w") as fh:
            fh.write("epoch,total\n")
            for epoch, val in held_rows:
                fh.write("%d,%.12g\n" % (epoch, val))
        print("held-out loss: %.6g -> %.6g" % (held_rows[0][1], held_rows[-1][1]))
    _write_resolved_config(args, "train")
    return EXIT_OK


def _sub(arrays: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def _save_train_checkpoint(path, depth_net, pose_net, depth_state, pose_state, epoch):
    arrays = {}
    for key, val in depth_net.state_dict().items():
        arrays["depth." + key] = val
    for key, val in pose_net.state_dict().items():
        arrays["pose." + key] = val
    for key, val in depth_state.state_arrays().items():
        arrays["adam_depth." + key] = val
    for key, val in pose_state.state_arrays().items():
        arrays["adam_pose." + key] = val
    nets.save_checkpoint(path, arrays, meta={
        "epoch": epoch,
        "depth_steps": depth_state.step_count,
        "pose_steps": pose_state.step_count,
    })


# ------------------------------------------------------------- evaluation

def cmd_eval_depth(args) -> int:
    names = sorted(f for f in os.listdir(args.pred) if f.endswith(".pfm"))
    if not names:
        raise FileNotFoundError("no .pfm predictions in %s" % args.pred)
    mask = None
    if args.mask:
        mask = dataio.load_image(args.mask) > 0.5
    rows = []
    for name in names:
        gt_path = os.path.join(args.gt, name)
        if not os.path.isfile(gt_path):
            continue
        pred = dataio.load_pfm(os.path.join(args.pred, name))
        gt = dataio.load_pfm(gt_path)
        rows.append(evaluation.depth_metrics(pred, gt, cap=args.cap, mask=mask))
    if not rows:
        raise FileNotFoundError("no prediction/ground-truth filename overlap")
    os.makedirs(args.out, exist_ok=True)
    fields = ["abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"]
    means = {f: float(np.mean([getattr(r, f) for r in rows])) for f in fields}
    with open(os.path.join(args.out, "depth_metrics.txt"), "w") as fh:
        fh.write("cap=%.17g\nframes=%d\n" % (args.cap, len(rows)))
        for f in fields:
            fh.write("%s=%.12g\n" % (f, means[f]))
    header = " ".join("%9s" % f for f in fields)
    values = " ".join("%9.4f" % means[f] for f in fields)
    print(header)
    print(values)
    _write_resolved_config(args, "eval-depth")
    return EXIT_OK


def cmd_eval_odom(args) -> int:
    pred = dataio.load_kitti_poses(args.pred)
    gt = dataio.load_kitti_poses(args.gt)
    if args.skip_first > 0:
        pred = evaluation.Trajectory(pred.frame_indices[args.skip_first:],
                                     pred.poses[args.skip_first:])
        gt = evaluation.Trajectory(gt.frame_indices[args.skip_first:],
                                   gt.poses[args.skip_first:])
    if args.align:
        _, pred = evaluation.align_scale(pred, gt)
    metrics = evaluation.odometry_drift(pred, gt, step=args.step)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "odom_metrics.txt"), "w") as fh:
        fh.write("t_err_percent=%.12g\n" % metrics.t_err_percent)
        fh.write("r_err_deg_per_100m=%.12g\n" % metrics.r_err_deg_per_100m)
        fh.write("num_subsequences=%d\n" % metrics.num_subsequences)
    with open(os.path.join(args.out, "drift_vs_length.csv"), "w") as fh:
        fh.write("length_m,t_err_percent,r_err_deg_per_100m,count\n")
        for b in metrics.per_length:
            fh.write("%.17g,%.12g,%.12g,%d\n"
                     % (b.length, b.t_err_percent, b.r_err_deg_per_100m, b.count))
    if metrics.empty:
        print("trajectory too short for any drift sub-sequence")
    else:
        print("t_err %.3f%%  r_err %.4f deg/100m  (%d sub-sequences)"
              % (metrics.t_err_percent, metrics.r_err_deg_per_100m,
                 metrics.num_subsequences))
    _write_resolved_config(args, "eval-odom")
    return EXIT_OK


# ----------------------------------------------------------- match-compare

def _parse_span(text: str):
    lo, hi = text.split(":")
    return int(lo), int(hi)


def cmd_match_compare(args) -> int:
    manifest = dataio.scan_sequence(args.sequence)
    left = dataio.load_image(manifest.left_paths[args.frame])
    right = dataio.load_image(manifest.right_paths[args.frame])
    meta_path = os.path.join(args.sequence, "scene_meta.txt")
    meta = dataio.read_key_values(meta_path) if os.path.isfile(meta_path) else {}
    if args.rows:
        row_lo, row_hi = _parse_span(args.rows)
    elif "band_row_lo" in meta:
        edge = float(meta.get("band_edge_width", 1.0))
        row_lo = int(np.ceil(float(meta["band_row_lo"]) + edge))
        row_hi = int(np.floor(float(meta["band_row_hi"]) - edge)) + 1
    else:
        raise ValueError("--rows required when the sequence carries no band metadata")
    true_disp = args.true_disparity
    if true_disp is None and "uniform_disparity" in meta:
        true_disp = float(meta["uniform_disparity"])
    x_lo, x_hi = _parse_span(args.x_range) if args.x_range else (
        args.max_disparity + 4, left.shape[1] - 5)
    ident = features_mod.make_extractor("identity")
    desc = features_mod.make_extractor(args.features, seed=args.feature_seed)
    pre_i = (features_mod.extract(ident, left), features_mod.extract(ident, right))
    pre_d = (features_mod.extract(desc, left), features_mod.extract(desc, right))
    disparities = range(0, args.max_disparity + 1)
    os.makedirs(args.out, exist_ok=True)
    flatness = []
    hits = 0
    total = 0
    with open(os.path.join(args.out, "cost_curves.csv"), "w") as fh:
        fh.write("row,x,kind,disparity,cost\n")
        for row in range(row_lo, row_hi):
            for x in range(x_lo, x_hi):
                prof_i = features_mod.matching_cost_profile(
                    left, right, ident, row, x, disparities, precomputed=pre_i)
                prof_d = features_mod.matching_cost_profile(
                    left, right, desc, row, x, disparities, precomputed=pre_d)
                for d, c in zip(prof_i.disparities, prof_i.costs):
                    fh.write("%d,%d,photometric,%d,%.12g\n" % (row, x, d, c))
                for d, c in zip(prof_d.disparities, prof_d.costs):
                    fh.write("%d,%d,%s,%d,%.12g\n" % (row, x, args.features, d, c))
                flatness.append(float(prof_i.costs.max() - prof_i.costs.min()))
                total += 1
                if true_disp is not None:
                    unique = np.count_nonzero(prof_d.costs == prof_d.costs.min()) == 1
                    if unique and prof_d.argmin_disparity() == int(round(true_disp)):
                        hits += 1
    with open(os.path.join(args.out, "match_summary.txt"), "w") as fh:
        fh.write("probes=%d\n" % total)
        fh.write("photometric_flatness_max=%.12g\n" % max(flatness))
        if true_disp is not None:
            fh.write("true_disparity=%.17g\n" % true_disp)
            fh.write("descriptor_argmin_rate=%.12g\n" % (hits / total))
    print("probed %d band pixels: photometric flatness max %.4g%s"
          % (total, max(flatness),
             (", descriptor argmin rate %.3f" % (hits / total)) if true_disp is not None
             else ""))
    _write_resolved_config(args, "match-compare")
    return EXIT_OK


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warpdepth",
        description="Depth and odometry from differentiable view synthesis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic stereo sequence")
    _add_common(p)
    p.add_argument("--preset", default="plane", choices=synthetic.PRESETS)
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("optimize", help="direct per-instance depth+pose optimization")
    _add_common(p)
    _add_loss_flags(p)
    p.add_argument("--sequence", required=True)
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--init-depth", type=float, default=10.0,
                   help="constant initial depth guess, meters")
    p.add_argument("--mode", default="full", choices=("full", "monocular"))
    p.add_argument("--free", default="depth,pose",
                   help="comma list of variables to optimize (depth, pose)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("train", help="train the tiny depth and pose predictors")
    _add_common(p)
    _add_loss_flags(p)
    p.add_argument("--sequence", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--holdout", type=int, default=0,
                   help="hold out the last N instances for evaluation")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", default=None)
    p.add_argument("--no-feature-loss", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-depth", help="depth accuracy under a cap")
    _add_common(p)
    p.add_argument("--pred", required=True, help="directory of predicted .pfm files")
    p.add_argument("--gt", required=True, help="directory of ground-truth .pfm files")
    p.add_argument("--cap", type=float, default=80.0)
    p.add_argument("--mask", default=None, help="PGM mask, nonzero = evaluate")
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("eval-odom", help="odometry drift over sub-sequences")
    _add_common(p)
    p.add_argument("--pred", required=True, help="predicted pose file")
    p.add_argument("--gt", required=True, help="ground-truth pose file")
    p.add_argument("--step", type=int, default=10)
    p.add_argument("--skip-first", type=int, default=0)
    p.add_argument("--align", action="store_true",
                   help="least-squares scale alignment before evaluation")
    p.set_defaults(func=cmd_eval_odom)

    p = sub.add_parser("match-compare",
                       help="photometric vs descriptor disparity cost curves")
    _add_common(p)
    p.add_argument("--sequence", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--rows", default=None, help="row span lo:hi (default: band rows)")
    p.add_argument("--x-range", default=None, help="column span lo:hi")
    p.add_argument("--max-disparity", type=int, default=16)
    p.add_argument("--true-disparity", type=float, default=None)
    p.add_argument("--features", default="gradient_descriptor",
                   choices=[k for k in features_mod.KINDS if k != "identity"])
    p.add_argument("--feature-seed", type=int, default=0)
    p.set_defaults(func=cmd_match_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, parser, argv)
        return args.func(args)
    except DivergenceError as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, FileNotFoundError, OSError) as exc:
        print("i/o failure: %s" % exc, file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print("invalid arguments: %s" % exc, file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
