"""Deterministic synthetic RGB-T sequences with scripted challenge events
(occlusion, thermal crossover, illumination drop, camera motion) and exact
ground truth, for desk-scale end-to-end testing.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import img
from .geom import Box, MotionModel, Transform2D


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    kind: str                      # occlusion | crossover | illum_drop | camera_motion
    start: int
    end: int                       # exclusive
    # occlusion
    occluder: tuple | None = None  # (x, y, w, h) at event start
    occluder_velocity: tuple = (0.0, 0.0)
    # illum_drop
    gain: float = 0.1
    # camera_motion: per-frame translation step (general transforms via matrix)
    translation: tuple = (0.0, 0.0)


@dataclass(frozen=True)
class Scenario:
    n_frames: int
    frame_size: tuple              # (w, h)
    target_box: tuple              # (x, y, w, h) at frame 0
    velocity: tuple = (0.0, 0.0)   # px/frame
    events: tuple = ()
    noise_sigma: float = 0.0
    attributes: tuple = ()

    def validate(self):
        if self.n_frames < 1:
            raise ScenarioError("need at least one frame")
        occ = np.zeros(self.n_frames, bool)
        cross = np.zeros(self.n_frames, bool)
        for e in self.events:
            if not (0 <= e.start <= e.end <= self.n_frames):
                raise ScenarioError(f"event range [{e.start},{e.end}) outside sequence")
            if e.kind not in ("occlusion", "crossover", "illum_drop", "camera_motion"):
                raise ScenarioError(f"unknown event kind {e.kind!r}")
            if e.kind == "occlusion":
                if e.occluder is None:
                    raise ScenarioError("occlusion event needs an occluder box")
                occ[e.start:e.end] = True
            if e.kind == "crossover":
                cross[e.start:e.end] = True
        if np.any(occ & cross):
            raise ScenarioError("occlusion and crossover may not overlap")


def scenario_from_dict(d: dict) -> Scenario:
    events = tuple(
        Event(kind=e["kind"], start=int(e["start"]), end=int(e["end"]),
              occluder=tuple(e["occluder"]) if "occluder" in e else None,
              occluder_velocity=tuple(e.get("occluder_velocity", (0.0, 0.0))),
              gain=float(e.get("gain", 0.1)),
              translation=tuple(e.get("translation", (0.0, 0.0))))
        for e in d.get("events", []))
    sc = Scenario(n_frames=int(d["n_frames"]),
                  frame_size=tuple(d["frame_size"]),
                  target_box=tuple(d["target_box"]),
                  velocity=tuple(d.get("velocity", (0.0, 0.0))),
                  events=events,
                  noise_sigma=float(d.get("noise_sigma", 0.0)),
                  attributes=tuple(d.get("attributes", ())))
    sc.validate()
    return sc


def load_scenario(path) -> Scenario:
    with open(path) as f:
        return scenario_from_dict(json.load(f))


def _value_noise(rng, w, h, grid=8, lo=0.0, hi=1.0):
    """Smooth textured field: coarse random grid, bilinear upsample, 3x3 box blur."""
    gw, gh = max(2, w // grid), max(2, h // grid)
    coarse = rng.uniform(lo, hi, size=(gh, gw))
    fine = img.resize_bilinear(coarse, (w, h))
    pad = np.pad(fine, 1, mode="edge")
    out = np.zeros_like(fine)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out += pad[dy : dy + h, dx : dx + w]
    return out / 9.0


def _draw(frame, texture, box: Box):
    x0, y0 = int(round(box.x)), int(round(box.y))
    h, w = texture.shape
    H, W = frame.shape
    sx0, sy0 = max(0, -x0), max(0, -y0)
    dx0, dy0 = max(0, x0), max(0, y0)
    dx1, dy1 = min(W, x0 + w), min(H, y0 + h)
    if dx1 > dx0 and dy1 > dy0:
        frame[dy0:dy1, dx0:dx1] = texture[sy0 : sy0 + dy1 - dy0, sx0 : sx0 + dx1 - dx0]


def _warp(frame, t: Transform2D):
    """Resample the frame under the camera transform (inverse bilinear map)."""
    H, W = frame.shape
    inv = np.linalg.inv(t.m)
    xs, ys = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    x0 = np.clip(np.floor(sx).astype(int), 0, W - 1)
    y0 = np.clip(np.floor(sy).astype(int), 0, H - 1)
    x1 = np.clip(x0 + 1, 0, W - 1)
    y1 = np.clip(y0 + 1, 0, H - 1)
    fx = np.clip(sx - x0, 0.0, 1.0)
    fy = np.clip(sy - y0, 0.0, 1.0)
    top = frame[y0, x0] * (1 - fx) + frame[y0, x1] * fx
    bot = frame[y1, x0] * (1 - fx) + frame[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def generate(sc: Scenario, seed: int = 0):
    """Render the scenario. Returns (frames_rgb, frames_t, gt_boxes, camera
    transforms per frame, per-frame active-event kinds)."""
    sc.validate()
    rng = np.random.default_rng(seed)
    w, h = sc.frame_size
    tx, ty, tw, th = sc.target_box

    bg_rgb = _value_noise(rng, w, h, grid=3, lo=0.1, hi=0.9)
    bg_t = _value_noise(rng, w, h, grid=3, lo=0.2, hi=0.5)
    tex_rgb = _value_noise(rng, int(tw), int(th), grid=4, lo=0.0, hi=1.0)
    t_mean = float(bg_t.mean())
    tex_t_hi = _value_noise(rng, int(tw), int(th), grid=4, lo=0.85, hi=1.0)
    tex_t_cross = np.full((int(th), int(tw)), t_mean)
    occ_tex = {}

    frames_rgb, frames_t, gts, cams, active = [], [], [], [], []
    cam = Transform2D.identity(MotionModel.TRANSLATION)
    for f in range(sc.n_frames):
        cx = tx + sc.velocity[0] * f
        cy = ty + sc.velocity[1] * f
        target = Box(cx, cy, tw, th)

        kinds = [e for e in sc.events if e.start <= f < e.end]
        names = sorted({e.kind for e in kinds})

        rgb = bg_rgb.copy()
        thermal = bg_t.copy()
        _draw(rgb, tex_rgb, target)
        crossover = any(e.kind == "crossover" for e in kinds)
        _draw(thermal, tex_t_cross if crossover else tex_t_hi, target)

        for e in kinds:
            if e.kind == "occlusion":
                dx = e.occluder_velocity[0] * (f - e.start)
                dy = e.occluder_velocity[1] * (f - e.start)
                ob = Box(e.occluder[0] + dx, e.occluder[1] + dy,
                         e.occluder[2], e.occluder[3])
                key = (int(ob.w), int(ob.h))
                if key not in occ_tex:
                    occ_tex[key] = _value_noise(rng, key[0], key[1], grid=3,
                                                lo=0.4, hi=0.6)
                _draw(rgb, occ_tex[key], ob)
                _draw(thermal, occ_tex[key], ob)

        for e in kinds:
            if e.kind == "illum_drop":
                rgb = rgb * e.gain

        step = next((e for e in sc.events
                     if e.kind == "camera_motion" and e.start <= f < e.end), None)
        if step is not None and f > 0:
            m = np.eye(3)
            m[0, 2], m[1, 2] = step.translation
            cam = Transform2D(MotionModel.TRANSLATION, m).compose(cam)
        if not np.allclose(cam.m, np.eye(3)):
            rgb = _warp(rgb, cam)
            thermal = _warp(thermal, cam)
            gx, gy = cam.m[:2, :2] @ np.array(target.center) + cam.m[:2, 2]
            target = Box(gx - tw / 2, gy - th / 2, tw, th)

        if sc.noise_sigma > 0:
            rgb = np.clip(rgb + rng.normal(0, sc.noise_sigma, rgb.shape), 0, 1)
            thermal = np.clip(thermal + rng.normal(0, sc.noise_sigma, thermal.shape), 0, 1)

        frames_rgb.append(np.clip(rgb, 0.0, 1.0))
        frames_t.append(np.clip(thermal, 0.0, 1.0))
        gts.append(target)
        cams.append(cam)
        active.append(names)
    return frames_rgb, frames_t, gts, cams, active


def write_sequence(sc: Scenario, seed: int, out_dir, name: str = "synth"):
    """Materialize a generated sequence in the benchmark manifest layout.
    Returns the manifest path."""
    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "t").mkdir(parents=True, exist_ok=True)
    frames_rgb, frames_t, gts, cams, active = generate(sc, seed)
    for i, (r, t) in enumerate(zip(frames_rgb, frames_t)):
        img.save_image(out / "rgb" / f"{i:05d}.png", r)
        img.save_image(out / "t" / f"{i:05d}.png", t)
    gt_lines = "".join(f"{b.x:.3f},{b.y:.3f},{b.w:.3f},{b.h:.3f}\n" for b in gts)
    (out / "gt_rgb.txt").write_text(gt_lines)
    (out / "gt_t.txt").write_text(gt_lines)
    manifest = {
        "name": name,
        "rgb_dir": "rgb",
        "t_dir": "t",
        "gt_rgb": "gt_rgb.txt",
        "gt_t": "gt_t.txt",
        "attributes": list(sc.attributes),
    }
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2) + "\n")
    sidecar = {
        "camera_transforms": [c.m.tolist() for c in cams],
        "active_events": active,
    }
    (out / "events.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return mpath
