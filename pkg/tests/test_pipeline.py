import numpy as np
import pytest

from fusetrack import pipeline, synth
from fusetrack.geom import Box, iou
from fusetrack.pipeline import (
    PipelineConfig,
    Source,
    SwitcherThresholds,
    Tracker,
    ablation_config,
    decide,
    reference_config,
    refine_box,
)


class TestThresholds:
    def test_published_defaults(self):
        th = SwitcherThresholds()
        assert (th.q_hi, th.s_hi, th.q_low, th.s_low, th.t_diff, th.q_skip) \
            == (210.0, 15.0, 135.0, 17.0, 3.0, 250.0)

    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            SwitcherThresholds(q_hi=100.0, q_low=150.0)


class TestDecide:
    def test_confident_appearance(self):
        assert decide(300, 20, 5) is Source.APPEARANCE

    def test_moderate_quality_margin(self):
        assert decide(150, 18, 14) is Source.APPEARANCE

    def test_motion_wins(self):
        assert decide(100, 10, 20) is Source.MOTION

    def test_both_similarities_unreliable(self):
        assert decide(100, 2, 3) is Source.APPEARANCE

    def test_pure_function(self):
        th = SwitcherThresholds()
        for _ in range(3):
            assert decide(140, 16, 10, th) == decide(140, 16, 10, th)


class TestRefine:
    def test_empty_detections(self):
        b = Box(0, 0, 10, 10)
        assert refine_box(b, []) == b

    def test_single_overlapping_detection(self):
        b = Box(0, 0, 10, 10)
        d = Box(1, 0, 10, 10)
        assert refine_box(b, [d]) == d

    def test_highest_iou_wins(self):
        b = Box(0, 0, 10, 10)
        d1 = Box(2, 0, 10, 10)
        d2 = Box(1, 0, 10, 10)
        assert iou(b, d2) > iou(b, d1) > 0.5
        assert refine_box(b, [d1, d2]) == d2

    def test_low_iou_ignored(self):
        b = Box(0, 0, 10, 10)
        far = Box(8, 8, 10, 10)
        assert iou(b, far) <= 0.5
        assert refine_box(b, [far]) == b


def _scenario(events=(), n_frames=12, velocity=(2.0, 0.5)):
    return synth.Scenario(
        n_frames=n_frames, frame_size=(160, 120),
        target_box=(40, 40, 24, 24), velocity=velocity,
        events=list(events), noise_sigma=0.02, attributes=[])


class TestTracker:
    def test_static_scene_stays_on_target(self):
        sc = _scenario(n_frames=4, velocity=(0.0, 0.0))
        rgb, t, gts, _, _ = synth.generate(sc, seed=0)
        cfg = reference_config()
        tr = Tracker(rgb[0], t[0], gts[0], cfg)
        res = tr.step(rgb[1], t[1])
        assert res.source is Source.APPEARANCE
        cx, cy = res.box.center
        gx, gy = gts[1].center
        assert abs(cx - gx) <= cfg.cf.cell and abs(cy - gy) <= cfg.cf.cell

    def test_moving_target_followed(self):
        sc = _scenario(n_frames=10)
        rgb, t, gts, _, _ = synth.generate(sc, seed=1)
        tr = Tracker(rgb[0], t[0], gts[0], reference_config())
        for i in range(1, 10):
            res = tr.step(rgb[i], t[i])
            assert iou(res.box, gts[i]) > 0.5

    def test_diagnostics_populated(self):
        sc = _scenario(n_frames=3)
        rgb, t, gts, _, _ = synth.generate(sc, seed=2)
        tr = Tracker(rgb[0], t[0], gts[0], reference_config())
        res = tr.step(rgb[1], t[1])
        assert np.isfinite(res.q)
        assert np.isfinite(res.w_g)
        assert np.isfinite(res.s_a) and np.isfinite(res.s_m)
        # the camera transform is only estimated when the motion gate fires
        assert res.cme_gated == (res.camera is not None)
        assert not res.suspended

    def test_occlusion_switches_to_motion_and_back(self):
        ev = synth.Event(kind="occlusion", start=5, end=11,
                         occluder=(60, 30, 34, 50),
                         occluder_velocity=(0.0, 0.0))
        sc = _scenario(events=[ev], n_frames=16)
        rgb, t, gts, _, _ = synth.generate(sc, seed=3)
        tr = Tracker(rgb[0], t[0], gts[0], reference_config())
        sources = [Source.APPEARANCE]
        for i in range(1, 16):
            sources.append(tr.step(rgb[i], t[i]).source)
        assert Source.MOTION in sources[5:8]
        assert Source.APPEARANCE in sources[11:14]

    def test_motion_frames_do_not_touch_cf(self):
        sc = _scenario(n_frames=6)
        rgb, t, gts, _, _ = synth.generate(sc, seed=4)
        # thresholds that force motion on every frame
        th = SwitcherThresholds(q_hi=1e9, s_hi=1e9, q_low=1e8, s_low=1e9,
                                t_diff=1e9, t_disable=-1.0, q_skip=1e9)
        cfg = reference_config(thresholds=th)
        tr = Tracker(rgb[0], t[0], gts[0], cfg)
        num = tr.cf_rgb.numerator.copy()
        res = tr.step(rgb[1], t[1])
        assert res.source is Source.MOTION
        np.testing.assert_array_equal(tr.cf_rgb.numerator, num)
        assert (res.box.w, res.box.h) == (gts[0].w, gts[0].h)

    def test_drastic_pan_suspends_fusion(self):
        sc = _scenario(n_frames=4, velocity=(0.0, 0.0))
        rgb, t, gts, _, _ = synth.generate(sc, seed=5)
        # inject a pan far beyond the drastic threshold
        shifted_rgb = np.roll(rgb[1], 45, axis=1)
        shifted_t = np.roll(t[1], 45, axis=1)
        tr = Tracker(rgb[0], t[0], gts[0], reference_config())
        res = tr.step(shifted_rgb, shifted_t)
        assert res.suspended
        assert np.isnan(res.s_a) and np.isnan(res.s_m)

    def test_deterministic(self):
        sc = _scenario(n_frames=8)
        rgb, t, gts, _, _ = synth.generate(sc, seed=6)

        def run():
            tr = Tracker(rgb[0], t[0], gts[0], reference_config())
            return [tr.step(rgb[i], t[i]).box for i in range(1, 8)]

        b1, b2 = run(), run()
        for a, b in zip(b1, b2):
            assert a == b


class TestAblation:
    def test_levels(self):
        base = reference_config()
        mf = ablation_config(base, "MF")
        assert not mf.enable_cme and not mf.enable_tmp
        mc = ablation_config(base, "MF+CME")
        assert mc.enable_cme and not mc.enable_tmp
        mt = ablation_config(base, "MF+CME+TMP")
        assert mt.enable_cme and mt.enable_tmp and not mt.enable_refinement
        full = ablation_config(base, "FULL")
        assert full.enable_cme and full.enable_tmp

    def test_unknown_level(self):
        with pytest.raises(ValueError):
            ablation_config(reference_config(), "nope")
