"""Command-line entry point: track, eval, train-fusion, fuse, synth.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, fusion, img, pipeline, synth
from .config import Config, ConfigError, load_config, print_config

__version__ = "0.1.0"

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


class DataError(RuntimeError):
    pass


def _cmd_track(args) -> int:
    cfg = load_config(args.config)
    pcfg = cfg.pipeline_config()
    if args.ablation:
        pcfg = pipeline.ablation_config(pcfg, args.ablation)
    seq = bench.load_sequence(args.manifest)
    mfnet = None
    if args.checkpoint:
        probe = pipeline.Tracker(img.load_image(seq.rgb_paths[0]),
                                 img.load_image(seq.t_paths[0]),
                                 seq.gt_t[0], pcfg)
        mfnet = fusion.load_mfnet(args.checkpoint, probe.cf_rgb.map_size,
                                  seed=pcfg.seed)
    traj = bench.run_ope(seq, pcfg, mfnet=mfnet)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    bench.save_trajectory(out, traj.boxes)
    diag = out.with_suffix(".diag.csv")
    with open(diag, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "source", "q", "w_g"])
        for i, (s, q, wg) in enumerate(zip(traj.sources, traj.q, traj.w_g)):
            w.writerow([i, s.value, f"{q:.6g}", f"{wg:.6g}"])
    return 0


def _find_manifests(manifests_dir: Path):
    found = {}
    for m in sorted(manifests_dir.rglob("manifest.json")):
        seq = bench.load_sequence(m)
        found[seq.name] = seq
    return found


def _cmd_eval(args) -> int:
    results_dir = Path(args.results)
    manifests = _find_manifests(Path(args.manifests))
    result_files = sorted(results_dir.glob("*.txt"))
    if not result_files:
        raise DataError(f"no result files in {results_dir}")
    trajs = {}
    for rf in result_files:
        name = rf.stem
        if name not in manifests:
            raise DataError(f"result {rf.name} has no matching manifest")
        trajs[name] = bench.load_trajectory(rf)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"sequences": {}, "pr_threshold": args.pr_threshold}
    for name, boxes in trajs.items():
        seq = manifests[name]
        s_curve, auc = bench.msr(boxes, seq)
        p_curve, prec = bench.mpr(boxes, seq, args.pr_threshold)
        summary["sequences"][name] = {"msr": auc, "mpr": prec}
        with open(out / f"{name}.curves.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iou_threshold", "success"])
            for t, v in zip(bench.SUCCESS_THRESHOLDS, s_curve):
                w.writerow([f"{t:.2f}", f"{v:.6f}"])
            w.writerow([])
            w.writerow(["px_threshold", "precision"])
            for t, v in zip(bench.PRECISION_THRESHOLDS, p_curve):
                w.writerow([f"{t:.0f}", f"{v:.6f}"])
    report = bench.attribute_report(trajs, {n: manifests[n] for n in trajs},
                                    args.pr_threshold)
    summary["attributes"] = report
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return 0


def _cmd_train_fusion(args) -> int:
    cfg = load_config(args.config)
    sched = cfg.train_schedule()
    pairs = fusion.load_pair_dir(args.pairs)
    n, m = pairs[0].y.shape
    net = fusion.build_mfnet((m, n), seed=cfg.data["pipeline"]["seed"])
    trace = fusion.mfnet_train(net, pairs, sched)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fusion.save_mfnet(out, net)
    with open(out.with_suffix(".loss.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["stage", "epoch", "mean_loss"])
        for stage, losses in trace.items():
            for e, val in enumerate(losses):
                w.writerow([stage, e, f"{val:.8g}"])
    return 0


def _cmd_fuse(args) -> int:
    i_rgb = img.to_gray(img.load_image(args.rgb))
    i_t = img.to_gray(img.load_image(args.t))
    if i_rgb.shape != i_t.shape:
        raise DataError(f"image sizes differ: {i_rgb.shape} vs {i_t.shape}")
    net = fusion.load_mfnet(args.checkpoint, (25, 25)) if args.checkpoint \
        else fusion.build_mfnet((25, 25))
    wf = fusion.image_fusion_weights(net, i_rgb, i_t)
    fused = fusion.fuse_images(i_rgb, i_t, wf)
    img.save_image(args.out, fused)
    if args.metrics:
        out = {
            "entropy": fusion.entropy(fused),
            "mi_rgb": fusion.mutual_information(fused, i_rgb),
            "mi_t": fusion.mutual_information(fused, i_t),
            "ssim_rgb": fusion.ssim(fused, i_rgb),
            "ssim_t": fusion.ssim(fused, i_t),
        }
        print(json.dumps(out, indent=2))
    return 0


def _cmd_synth(args) -> int:
    sc = synth.load_scenario(args.scenario)
    out = Path(args.out)
    name = args.name or out.name
    synth.write_sequence(sc, args.seed, out, name=name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fusetrack",
                                description="RGB-T tracking toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--print-config", action="store_true",
                   help="print the effective configuration and exit")
    p.add_argument("--config", help="TOML configuration file")
    sub = p.add_subparsers(dest="command")

    t = sub.add_parser("track", help="run one-pass evaluation on a sequence")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--checkpoint", help="fusion-network checkpoint")
    t.add_argument("--ablation", choices=["MF", "MF+CME", "MF+CME+TMP", "FULL"])
    t.set_defaults(func=_cmd_track)

    e = sub.add_parser("eval", help="score trajectory files against manifests")
    e.add_argument("--results", required=True)
    e.add_argument("--manifests", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--pr-threshold", type=float, default=bench.DEFAULT_PR_PX)
    e.set_defaults(func=_cmd_eval)

    tr = sub.add_parser("train-fusion", help="staged fusion-network training")
    tr.add_argument("--pairs", required=True)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=_cmd_train_fusion)

    fu = sub.add_parser("fuse", help="fuse a visible/thermal image pair")
    fu.add_argument("--rgb", required=True)
    fu.add_argument("--t", required=True)
    fu.add_argument("--checkpoint")
    fu.add_argument("--out", required=True)
    fu.add_argument("--metrics", action="store_true")
    fu.set_defaults(func=_cmd_fuse)

    sy = sub.add_parser("synth", help="render a synthetic RGB-T sequence")
    sy.add_argument("--scenario", required=True)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--out", required=True)
    sy.add_argument("--name")
    sy.set_defaults(func=_cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.print_config:
            print(print_config(load_config(args.config)))
            return 0
        if not getattr(args, "func", None):
            parser.print_help()
            return 0
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, bench.BenchError, synth.ScenarioError, fusion.FusionError,
            FileNotFoundError, img.ImageError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # invariant violation
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
