import json

import numpy as np
import pytest

from fusetrack import synth
from fusetrack.geom import Box
from fusetrack.synth import Event, Scenario, ScenarioError, generate, load_scenario


def _base(**kw):
    d = dict(n_frames=8, frame_size=(120, 100), target_box=(30, 30, 20, 20),
             velocity=(1.0, 0.0), noise_sigma=0.0, attributes=("TEST",))
    d.update(kw)
    return Scenario(**d)


class TestScenario:
    def test_validate_rejects_empty(self):
        with pytest.raises(ScenarioError):
            _base(n_frames=0).validate()

    def test_validate_rejects_bad_event_range(self):
        ev = Event(kind="illum_drop", start=5, end=20)
        with pytest.raises(ScenarioError):
            _base(events=(ev,)).validate()

    def test_validate_rejects_unknown_kind(self):
        ev = Event(kind="earthquake", start=0, end=2)
        with pytest.raises(ScenarioError):
            _base(events=(ev,)).validate()

    def test_occlusion_needs_occluder(self):
        ev = Event(kind="occlusion", start=0, end=2)
        with pytest.raises(ScenarioError):
            _base(events=(ev,)).validate()

    def test_occlusion_crossover_overlap_rejected(self):
        evs = (Event(kind="occlusion", start=2, end=6, occluder=(0, 0, 10, 10)),
               Event(kind="crossover", start=4, end=8))
        with pytest.raises(ScenarioError):
            _base(events=evs).validate()

    def test_from_json(self, tmp_path):
        d = {"n_frames": 5, "frame_size": [80, 60], "target_box": [10, 10, 16, 16],
             "velocity": [0.5, 0.5], "noise_sigma": 0.01,
             "events": [{"kind": "illum_drop", "start": 1, "end": 3, "gain": 0.2}],
             "attributes": ["IV"]}
        p = tmp_path / "sc.json"
        p.write_text(json.dumps(d))
        sc = load_scenario(p)
        assert sc.n_frames == 5
        assert sc.events[0].kind == "illum_drop"
        assert sc.events[0].gain == 0.2


class TestGenerate:
    def test_shapes_and_ranges(self):
        rgb, t, gts, cams, active = generate(_base(), seed=0)
        assert len(rgb) == len(t) == len(gts) == len(cams) == 8
        for f in rgb + t:
            assert f.shape == (100, 120)
            assert f.min() >= 0.0 and f.max() <= 1.0

    def test_ground_truth_follows_velocity(self):
        _, _, gts, _, _ = generate(_base(velocity=(2.0, -1.0)), seed=0)
        assert gts[0].x == pytest.approx(30)
        assert gts[3].x == pytest.approx(36)
        assert gts[3].y == pytest.approx(27)

    def test_deterministic_per_seed(self):
        a = generate(_base(noise_sigma=0.05), seed=7)
        b = generate(_base(noise_sigma=0.05), seed=7)
        for fa, fb in zip(a[0], b[0]):
            np.testing.assert_array_equal(fa, fb)
        c = generate(_base(noise_sigma=0.05), seed=8)
        assert any(np.abs(fa - fc).max() > 0 for fa, fc in zip(a[0], c[0]))

    def test_target_is_visible_in_thermal(self):
        rgb, t, gts, _, _ = generate(_base(), seed=1)
        g = gts[0]
        inside = t[0][int(g.y):int(g.y + g.h), int(g.x):int(g.x + g.w)]
        assert inside.mean() > t[0].mean() + 0.2

    def test_crossover_hides_thermal_target(self):
        ev = Event(kind="crossover", start=2, end=5)
        rgb, t, gts, _, active = generate(_base(events=(ev,)), seed=2)
        g = gts[3]
        inside = t[3][int(g.y):int(g.y + g.h), int(g.x):int(g.x + g.w)]
        assert abs(inside.mean() - t[3].mean()) < 0.1
        assert active[3] == ["crossover"]

    def test_illum_drop_dims_rgb_only(self):
        ev = Event(kind="illum_drop", start=3, end=6, gain=0.1)
        rgb, t, _, _, _ = generate(_base(events=(ev,)), seed=3)
        assert rgb[4].mean() < 0.2 * rgb[0].mean()
        assert t[4].mean() == pytest.approx(t[0].mean(), rel=0.05)

    def test_camera_motion_accumulates(self):
        ev = Event(kind="camera_motion", start=1, end=5, translation=(3.0, 0.0))
        _, _, gts, cams, _ = generate(_base(velocity=(0.0, 0.0), events=(ev,)),
                                      seed=4)
        assert cams[0].m[0, 2] == 0.0
        assert cams[4].m[0, 2] == pytest.approx(12.0)
        # ground truth shifts with the camera
        assert gts[4].center[0] - gts[0].center[0] == pytest.approx(12.0)


class TestWriteSequence:
    def test_layout(self, tmp_path):
        mpath = synth.write_sequence(_base(n_frames=3), 0, tmp_path / "s", name="s")
        assert mpath.name == "manifest.json"
        m = json.loads(mpath.read_text())
        assert m["name"] == "s"
        assert (tmp_path / "s" / "rgb" / "00000.png").exists()
        assert (tmp_path / "s" / "t" / "00002.png").exists()
        gt = (tmp_path / "s" / "gt_t.txt").read_text().strip().splitlines()
        assert len(gt) == 3
        assert len(gt[0].split(",")) == 4

    def test_sidecar_events(self, tmp_path):
        ev = Event(kind="illum_drop", start=1, end=2)
        synth.write_sequence(_base(n_frames=3, events=(ev,)), 0, tmp_path / "s2")
        side = json.loads((tmp_path / "s2" / "events.json").read_text())
        assert side["active_events"][1] == ["illum_drop"]
        assert len(side["camera_transforms"]) == 3
