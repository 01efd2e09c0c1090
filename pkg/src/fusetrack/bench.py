"""Sequence loading, one-pass evaluation and the RGB-T success/precision
metrics with attribute breakdowns.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import img, pipeline
from .geom import Box, GeometryError, center_error, iou

SUCCESS_THRESHOLDS = np.arange(0.0, 1.0001, 0.05)   # 21 points
PRECISION_THRESHOLDS = np.arange(0.0, 50.0001, 1.0)  # 51 points
DEFAULT_PR_PX = 20.0


class BenchError(RuntimeError):
    pass


@dataclass
class Sequence:
    name: str
    rgb_paths: list
    t_paths: list
    gt_rgb: list    # per-frame Box
    gt_t: list
    attributes: set

    def __len__(self):
        return len(self.rgb_paths)


@dataclass
class Trajectory:
    boxes: list
    sources: list
    q: list
    w_g: list

    def __len__(self):
        return len(self.boxes)


def _read_gt(path: Path):
    boxes = []
    for i, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        parts = line.replace("\t", ",").split(",")
        try:
            x, y, w, h = (float(p) for p in parts)
            boxes.append(Box(x, y, w, h))
        except (ValueError, GeometryError) as e:
            raise BenchError(f"{path}: malformed box on line {i + 1}: {line!r}") from e
    return boxes


def load_sequence(manifest_path) -> Sequence:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(manifest_path)
    with open(manifest_path) as f:
        m = json.load(f)
    root = manifest_path.parent
    rgb_paths = sorted((root / m["rgb_dir"]).glob("*"))
    t_paths = sorted((root / m["t_dir"]).glob("*"))
    gt_rgb = _read_gt(root / m["gt_rgb"])
    gt_t = _read_gt(root / m["gt_t"])
    lengths = {len(rgb_paths), len(t_paths), len(gt_rgb), len(gt_t)}
    if len(lengths) != 1:
        raise BenchError(
            f"{m['name']}: stream length mismatch rgb={len(rgb_paths)} "
            f"t={len(t_paths)} gt_rgb={len(gt_rgb)} gt_t={len(gt_t)}")
    if not rgb_paths:
        raise BenchError(f"{m['name']}: empty sequence")
    return Sequence(name=m["name"], rgb_paths=rgb_paths, t_paths=t_paths,
                    gt_rgb=gt_rgb, gt_t=gt_t,
                    attributes=set(m.get("attributes", [])))


def run_ope(seq: Sequence, config: pipeline.PipelineConfig = None,
            mfnet=None, detector=None) -> Trajectory:
    """Initialize on frame 1 with the thermal ground truth, then track."""
    config = config or pipeline.PipelineConfig()
    frame_rgb = img.load_image(seq.rgb_paths[0])
    frame_t = img.load_image(seq.t_paths[0])
    init = seq.gt_t[0]
    tracker = pipeline.Tracker(frame_rgb, frame_t, init, config,
                               mfnet=mfnet, detector=detector)
    boxes = [init]
    sources = [pipeline.Source.APPEARANCE]
    qs, wgs = [float("nan")], [float("nan")]
    for i in range(1, len(seq)):
        try:
            res = tracker.step(img.load_image(seq.rgb_paths[i]),
                               img.load_image(seq.t_paths[i]))
        except Exception as e:
            raise BenchError(f"{seq.name}: frame {i}: {e}") from e
        boxes.append(res.box)
        sources.append(res.source)
        qs.append(res.q)
        wgs.append(res.w_g)
    return Trajectory(boxes=boxes, sources=sources, q=qs, w_g=wgs)


def _check_lengths(traj_boxes, seq: Sequence):
    if len(traj_boxes) != len(seq):
        raise BenchError(f"trajectory length {len(traj_boxes)} != sequence {len(seq)}")


def frame_overlaps(traj_boxes, seq: Sequence) -> np.ndarray:
    """Per-frame max IoU against the two modality ground truths."""
    _check_lengths(traj_boxes, seq)
    return np.array([max(iou(b, gr), iou(b, gt))
                     for b, gr, gt in zip(traj_boxes, seq.gt_rgb, seq.gt_t)])


def frame_errors(traj_boxes, seq: Sequence) -> np.ndarray:
    """Per-frame min center error against the two modality ground truths."""
    _check_lengths(traj_boxes, seq)
    return np.array([min(center_error(b, gr), center_error(b, gt))
                     for b, gr, gt in zip(traj_boxes, seq.gt_rgb, seq.gt_t)])


def success_curve(overlaps: np.ndarray) -> np.ndarray:
    return np.array([np.mean(overlaps > t) for t in SUCCESS_THRESHOLDS])


def precision_curve(errors: np.ndarray) -> np.ndarray:
    return np.array([np.mean(errors <= t) for t in PRECISION_THRESHOLDS])


def msr(traj, seq: Sequence):
    """Success curve over IoU thresholds 0:0.05:1 and its AUC (the MSR)."""
    boxes = traj.boxes if isinstance(traj, Trajectory) else traj
    curve = success_curve(frame_overlaps(boxes, seq))
    return curve, float(curve.mean())


def mpr(traj, seq: Sequence, px_thresh: float = DEFAULT_PR_PX):
    """Precision curve over 0:1:50 px and the precision at `px_thresh`."""
    boxes = traj.boxes if isinstance(traj, Trajectory) else traj
    errors = frame_errors(boxes, seq)
    curve = precision_curve(errors)
    return curve, float(np.mean(errors <= px_thresh))


def attribute_report(results: dict, sequences: dict, px_thresh: float = DEFAULT_PR_PX):
    """Aggregate MSR/MPR over the union of frames per attribute tag (plus ALL).

    `results` maps sequence name -> Trajectory, `sequences` name -> Sequence."""
    tags = {}
    for name, seq in sequences.items():
        for a in seq.attributes | {"ALL"}:
            tags.setdefault(a, []).append(name)
    rows = {}
    for tag, names in sorted(tags.items()):
        ov = np.concatenate([
            frame_overlaps(results[n].boxes if isinstance(results[n], Trajectory)
                           else results[n], sequences[n]) for n in names])
        er = np.concatenate([
            frame_errors(results[n].boxes if isinstance(results[n], Trajectory)
                         else results[n], sequences[n]) for n in names])
        rows[tag] = {
            "msr": float(success_curve(ov).mean()),
            "mpr": float(np.mean(er <= px_thresh)),
            "frames": int(len(ov)),
        }
    return rows


def save_trajectory(path, boxes) -> None:
    lines = "".join(f"{b.x:.3f},{b.y:.3f},{b.w:.3f},{b.h:.3f}\n" for b in boxes)
    Path(path).write_text(lines)


def load_trajectory(path):
    return _read_gt(Path(path))
