"""Per-frame tracking orchestration: camera-motion compensation, the two
appearance trackers, response fusion, the appearance/motion switcher and the
model-update scheme, plus the pluggable box-refinement hook.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import cftrack, cme, fusion, img, match, motion
from .cftrack import CfConfig
from .cme import CmeConfig
from .geom import Box, MotionModel, Transform2D, iou


class Source(str, Enum):
    APPEARANCE = "appearance"
    MOTION = "motion"


@dataclass(frozen=True)
class SwitcherThresholds:
    q_hi: float = 210.0
    s_hi: float = 15.0
    q_low: float = 135.0
    s_low: float = 17.0
    t_diff: float = 3.0
    t_disable: float = 5.0   # not published; configuration knob
    q_skip: float = 250.0

    def __post_init__(self):
        if not (self.q_hi > self.q_low >= 0):
            raise ValueError("require q_hi > q_low >= 0")


def decide(q: float, s_a: float, s_m: float,
           th: SwitcherThresholds = SwitcherThresholds()) -> Source:
    """Appearance/motion selection rule of the tracker switcher."""
    if (q > th.q_hi and s_a > th.s_hi) \
            or (q > th.q_low and s_a > th.s_low and (s_a - s_m) > th.t_diff) \
            or max(s_a, s_m) < th.t_disable:
        return Source.APPEARANCE
    return Source.MOTION


# Published switcher constants assume the base tracker's response scale.
# The reference correlation filter needs a wider search region and rescaled
# score bands to put q and the template scores in their discriminative range.
REFERENCE_THRESHOLDS_KW = dict(q_hi=90.0, s_hi=4.0, q_low=55.0, s_low=4.5,
                               t_diff=1.0, t_disable=1.5, q_skip=160.0)


@dataclass(frozen=True)
class PipelineConfig:
    cf: CfConfig = field(default_factory=CfConfig)
    cme: CmeConfig = field(default_factory=CmeConfig)
    thresholds: SwitcherThresholds = field(default_factory=SwitcherThresholds)
    enable_cme: bool = True
    enable_tmp: bool = True
    enable_refinement: bool = False
    modality: str = "fused"          # fused | rgb | t
    camera_model: MotionModel = MotionModel.AFFINE
    seed: int = 0


@dataclass
class FrameResult:
    box: Box
    source: Source
    q: float = float("nan")
    s_a: float = float("nan")
    s_m: float = float("nan")
    w_g: float = float("nan")
    camera: Transform2D | None = None
    cme_gated: bool = False
    suspended: bool = False          # drastic-motion frame
    scale: float = 1.0


class Tracker:
    """Single-owner tracking session over one RGB-T sequence."""

    def __init__(self, frame_rgb, frame_t, box: Box,
                 config: PipelineConfig = PipelineConfig(),
                 mfnet: fusion.MfNet | None = None,
                 detector=None):
        self.cfg = config
        self.box = box
        self.cf_rgb = cftrack.cf_init(frame_rgb, box, config.cf)
        self.cf_t = cftrack.cf_init(frame_t, box, config.cf)
        self.kf = motion.kf_init(box.center)
        self.template = match.build_template(frame_rgb, box)
        self.prev_t = img.to_gray(frame_t)
        map_size = self.cf_rgb.map_size
        self.mfnet = mfnet if mfnet is not None else fusion.build_mfnet(
            map_size, seed=config.seed)
        if self.mfnet.map_size != map_size:
            raise fusion.FusionError(
                f"fusion net map size {self.mfnet.map_size} != tracker {map_size}")
        self.detector = detector
        self.frame_index = 0

    # -- helpers ----------------------------------------------------------

    def _search_patches(self, frame_rgb, frame_t, center):
        size = self.cf_rgb.patch_px
        p_rgb = img.resize_bilinear(
            img.crop_patch(img.to_gray(frame_rgb), center, size),
            (fusion.PATCH_SIZE, fusion.PATCH_SIZE))
        p_t = img.resize_bilinear(
            img.crop_patch(img.to_gray(frame_t), center, size),
            (fusion.PATCH_SIZE, fusion.PATCH_SIZE))
        return p_rgb, p_t

    def _box_at(self, center, scale) -> Box:
        w = self.box.w * scale
        h = self.box.h * scale
        return Box(center[0] - w / 2, center[1] - h / 2, w, h)

    # -- the per-frame step ----------------------------------------------

    def step(self, frame_rgb, frame_t) -> FrameResult:
        self.frame_index += 1
        cfg = self.cfg
        gray_t = img.to_gray(frame_t)
        cam = None
        gated = False
        box = self.box

        if cfg.enable_cme and cme.motion_gate(self.prev_t, gray_t,
                                              cfg.cme.pixel_thresh,
                                              cfg.cme.ratio_gate):
            gated = True
            cam = cme.estimate_camera_motion(self.prev_t, gray_t,
                                             cfg.camera_model, cfg.cme)
            box = cme.compensate(box, cam)

        if cam is not None and cme.drastic_motion(cam, (gray_t.shape[1], gray_t.shape[0]),
                                                  cfg.cme.drastic_frac):
            result = self._suspended_step(frame_t, box, cam)
        else:
            result = self._fused_step(frame_rgb, frame_t, box)
        result.camera = cam
        result.cme_gated = gated

        self._update_models(frame_rgb, frame_t, result)
        self.prev_t = gray_t
        self.box = result.box
        return result

    def _suspended_step(self, frame_t, box: Box, cam) -> FrameResult:
        """Drastic camera motion: thermal appearance tracker alone; fusion,
        motion prediction and refinement are all skipped."""
        maps, best = cftrack.cf_respond(self.cf_t, frame_t, box.center)
        scale = float(self.cf_t.cfg.scales()[best])
        dx, dy = cftrack.displacement_px(self.cf_t, maps[best], scale)
        center = (box.center[0] + dx, box.center[1] + dy)
        out = self._box_at(center, scale)
        return FrameResult(box=out, source=Source.APPEARANCE,
                           q=cftrack.quality(maps[best]), suspended=True,
                           scale=scale)

    def _fused_step(self, frame_rgb, frame_t, box: Box) -> FrameResult:
        cfg = self.cfg
        maps_rgb, _ = cftrack.cf_respond(self.cf_rgb, frame_rgb, box.center)
        maps_t, _ = cftrack.cf_respond(self.cf_t, frame_t, box.center)

        w_g = float("nan")
        if cfg.modality == "rgb":
            fused = maps_rgb
        elif cfg.modality == "t":
            fused = maps_t
        else:
            p_rgb, p_t = self._search_patches(frame_rgb, frame_t, box.center)
            weights = fusion.mfnet_forward(self.mfnet, p_rgb, p_t)
            w_g = weights.w_g
            fused = np.stack([fusion.fuse_responses(r, t, weights.w_f)
                              for r, t in zip(maps_rgb, maps_t)])

        best = int(np.argmax(fused.reshape(len(fused), -1).max(axis=1)))
        scale = float(cfg.cf.scales()[best])
        r_f = fused[best]
        dx, dy = cftrack.displacement_px(self.cf_rgb, r_f, scale)
        app_center = (box.center[0] + dx, box.center[1] + dy)
        app_box = self._box_at(app_center, scale)
        q = cftrack.quality(r_f)

        pred_center = motion.kf_predict(self.kf)
        motion_box = Box(pred_center[0] - self.box.w / 2,
                         pred_center[1] - self.box.h / 2,
                         self.box.w, self.box.h)

        s_a = s_m = float("nan")
        if not cfg.enable_tmp or q > cfg.thresholds.q_skip:
            source = Source.APPEARANCE
        else:
            s_a = match.score_box(self.template, frame_rgb, app_box)
            s_m = match.score_box(self.template, frame_rgb, motion_box)
            source = decide(q, s_a, s_m, cfg.thresholds)
        if not cfg.enable_tmp:
            source = Source.APPEARANCE

        out = app_box if source is Source.APPEARANCE else motion_box
        if source is Source.APPEARANCE and cfg.enable_refinement and self.detector:
            out = refine_box(out, self.detector(frame_rgb, out))
        return FrameResult(box=out, source=source, q=q, s_a=s_a, s_m=s_m,
                           w_g=w_g, scale=scale)

    def _update_models(self, frame_rgb, frame_t, result: FrameResult) -> None:
        """Appearance frames update the filters and feed the motion tracker;
        motion frames leave everything on predict-only evolution."""
        if result.source is Source.APPEARANCE:
            cftrack.cf_update(self.cf_rgb, frame_rgb, result.box)
            cftrack.cf_update(self.cf_t, frame_t, result.box)
            if not self.kf.predicted:
                motion.kf_predict(self.kf)  # suspended frames skipped TMP
            motion.kf_update(self.kf, result.box.center)
        # motion-sourced frames: no cf_update, no kf_update


def refine_box(box: Box, detections) -> Box:
    """Replace the box by the best-overlapping detection when IoU > 0.5."""
    best, best_iou = box, 0.5
    for det in detections or []:
        v = iou(box, det)
        if v > best_iou:
            best, best_iou = det, v
    return best


def reference_config(**overrides) -> PipelineConfig:
    """Pipeline preset calibrated for the reference correlation filter."""
    kw = dict(cf=CfConfig(padding=3.0),
              thresholds=SwitcherThresholds(**REFERENCE_THRESHOLDS_KW))
    kw.update(overrides)
    return PipelineConfig(**kw)


def ablation_config(base: PipelineConfig, level: str) -> PipelineConfig:
    """Component ladder: MF < MF+CME < MF+CME+TMP < FULL (adds refinement)."""
    levels = {
        "MF": dict(enable_cme=False, enable_tmp=False, enable_refinement=False),
        "MF+CME": dict(enable_cme=True, enable_tmp=False, enable_refinement=False),
        "MF+CME+TMP": dict(enable_cme=True, enable_tmp=True, enable_refinement=False),
        "FULL": dict(enable_cme=True, enable_tmp=True, enable_refinement=True),
    }
    if level not in levels:
        raise ValueError(f"unknown ablation level {level!r}")
    return replace(base, **levels[level])
