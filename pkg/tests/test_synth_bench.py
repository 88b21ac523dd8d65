"""
Tracker - Synthetic Benchmark Tests
Scenario rendering, ground truth, evaluation metrics and throughput
"""
import json
import pytest
import sys
import os

import numpy as np
from pydantic import ValidationError

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.core.config import TrackerSettings
from app.core.errors import EmptyGroundTruthError, ScenarioError
from app.schemas.bench import OccluderSpec, ScenarioSpec, TargetSpec
from app.schemas.frame import BoundingBox
from app.schemas.tracking import TrackMode, TrackRecord
from app.services.synth_bench import evaluate, generate, iou, load_scenario, report_table, throughput


def _record(frame, x, y, w=10, h=10, track_id=1):
    return TrackRecord(frame=frame, id=track_id, x=x, y=y, w=w, h=h, confidence=1.0, mode=TrackMode.NORMAL)


class TestIoU:
    """Test box overlap"""

    def test_examples(self):
        a = BoundingBox(x=0, y=0, w=10, h=10)
        assert iou(a, a) == 1.0
        assert iou(a, BoundingBox(x=5, y=0, w=10, h=10)) == pytest.approx(50 / 150)
        assert iou(a, BoundingBox(x=10, y=0, w=10, h=10)) == 0.0
        assert iou(a, BoundingBox(x=2, y=2, w=4, h=4)) == pytest.approx(16 / 100)

    def test_symmetric(self):
        a = BoundingBox(x=1.5, y=2, w=7, h=3)
        b = BoundingBox(x=3, y=0, w=4, h=9)
        assert iou(a, b) == pytest.approx(iou(b, a))


class TestGenerate:
    """Test scenario rendering"""

    def test_solid_target_and_truth(self):
        spec = ScenarioSpec(
            width=32, height=24, n_frames=3,
            targets=[TargetSpec(id=4, bbox=BoundingBox(x=2, y=3, w=5, h=4), velocity=(2, 1))],
        )
        frames, truth = generate(spec)

        assert len(frames) == 3
        assert frames[0].pixels[3, 2].tolist() == [255, 0, 0]
        assert frames[0].pixels[0, 0].tolist() == [128, 128, 128]
        assert truth[2] == [(4, BoundingBox(x=6, y=5, w=5, h=4))]
        assert frames[2].pixels[5:9, 6:11].reshape(-1, 3).tolist() == [[255, 0, 0]] * 20

    def test_appear_frame_and_occluder(self):
        spec = ScenarioSpec(
            width=32, height=24, n_frames=4,
            targets=[TargetSpec(id=1, bbox=BoundingBox(x=4, y=4, w=6, h=6), appear_frame=2)],
            occluders=[OccluderSpec(bbox=BoundingBox(x=0, y=0, w=8, h=24), start_frame=3, end_frame=3)],
        )
        frames, truth = generate(spec)

        assert sorted(truth) == [2, 3]
        assert frames[1].pixels[5, 5].tolist() == [128, 128, 128]
        assert frames[2].pixels[5, 5].tolist() == [255, 0, 0]
        assert frames[3].pixels[5, 5].tolist() == [0, 0, 255]
        assert frames[3].pixels[5, 9].tolist() == [255, 0, 0]

    def test_checker_texture(self):
        spec = ScenarioSpec(
            width=16, height=16, n_frames=1,
            targets=[TargetSpec(id=1, bbox=BoundingBox(x=0, y=0, w=8, h=8), colors=["red", "blue"],
                                texture="checker", checker_cell=4)],
        )
        frames, _ = generate(spec)
        assert frames[0].pixels[0, 0].tolist() == [255, 0, 0]
        assert frames[0].pixels[0, 4].tolist() == [0, 0, 255]
        assert frames[0].pixels[4, 4].tolist() == [255, 0, 0]

    def test_seeded_noise(self):
        spec = ScenarioSpec.model_validate({
            "width": 16, "height": 16, "n_frames": 2, "rng_seed": 5,
            "background": {"kind": "noise", "mean": 100, "sigma": 10},
        })
        first, _ = generate(spec)
        second, _ = generate(spec)

        assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(first, second))
        assert not np.array_equal(first[0].pixels, first[1].pixels)

    def test_scale_rate(self):
        target = TargetSpec(id=1, bbox=BoundingBox(x=10, y=10, w=10, h=10), scale_rate=0.1)
        box = target.box_at(2)
        assert box.w == pytest.approx(12.1)
        assert box.center == pytest.approx((15.0, 15.0))


class TestScenarioValidation:
    """Test scenario errors"""

    def test_target_leaves_frame(self):
        with pytest.raises(ValidationError):
            ScenarioSpec(width=20, height=20, n_frames=10,
                         targets=[TargetSpec(id=1, bbox=BoundingBox(x=0, y=0, w=5, h=5), velocity=(3, 0))])

    def test_clipping_allowed(self):
        spec = ScenarioSpec(width=20, height=20, n_frames=10,
                            targets=[TargetSpec(id=1, bbox=BoundingBox(x=0, y=0, w=5, h=5), velocity=(3, 0),
                                                allow_clipping=True)])
        _, truth = generate(spec)
        assert truth[5][0][1].x + truth[5][0][1].w <= 20

    def test_unknown_color(self):
        with pytest.raises(ValidationError):
            TargetSpec(id=1, bbox=BoundingBox(x=0, y=0, w=5, h=5), colors=["mauve"])

    def test_duplicate_ids(self):
        target = TargetSpec(id=1, bbox=BoundingBox(x=0, y=0, w=5, h=5))
        with pytest.raises(ValidationError):
            ScenarioSpec(width=20, height=20, n_frames=1, targets=[target, target])

    def test_load_scenario_errors(self, tmp_path):
        with pytest.raises(ScenarioError):
            load_scenario(str(tmp_path / "missing.json"))

        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"width": 4, "height": 20, "n_frames": 1}))
        with pytest.raises(ScenarioError):
            load_scenario(str(bad))


class TestEvaluate:
    """Test tracking metrics"""

    def _truth(self, frames=3):
        return {t: [(1, BoundingBox(x=10, y=10, w=10, h=10))] for t in range(frames)}

    def test_perfect(self):
        report = evaluate([_record(t, 10, 10) for t in range(3)], self._truth())

        assert report.mean_iou == pytest.approx(1.0)
        assert report.mean_center_error == pytest.approx(0.0)
        assert report.success_rate == 1.0
        assert report.by_truth_id()[1].tracker_ids == [1]

    def test_one_pixel_shift(self):
        report = evaluate([_record(t, 11, 10) for t in range(3)], self._truth())

        assert report.mean_iou == pytest.approx(90 / 110)
        assert report.mean_center_error == pytest.approx(1.0)

    def test_order_invariance(self):
        records = [_record(t, 10 + t, 10, track_id=t + 1) for t in range(3)]
        forward = evaluate(records, self._truth())
        backward = evaluate(list(reversed(records)), self._truth())
        assert forward == backward

    def test_missed_frames(self):
        """Five truth frames: one perfect, two disjoint outputs, two without output"""
        truth = self._truth(5)
        records = [_record(0, 10, 10), _record(1, 20, 10), _record(2, 10, 20)]
        report = evaluate(records, truth)

        assert report.mean_iou == pytest.approx(1 / 5)
        assert report.mean_center_error == pytest.approx(0.0)
        assert report.tracks[0].frames_tracked == 1
        assert report.success_rate == pytest.approx(0.2)

    def test_partial_overlap_counts_as_tracked(self):
        truth = self._truth(5)
        records = [_record(0, 10, 10), _record(1, 15, 10), _record(2, 10, 15)]
        report = evaluate(records, truth)

        assert report.mean_iou == pytest.approx((1 + 2 * (50 / 150)) / 5)
        assert report.mean_center_error == pytest.approx(10 / 3)
        assert report.tracks[0].frames_tracked == 3
        assert report.success_rate == pytest.approx(0.2)

    def test_one_to_one_assignment(self):
        truth = {0: [(1, BoundingBox(x=0, y=0, w=10, h=10)), (2, BoundingBox(x=8, y=0, w=10, h=10))]}
        records = [_record(0, 1, 0, track_id=7)]
        report = evaluate(records, truth)

        matched = [f for f in report.frames if f.track_id is not None]
        assert len(matched) == 1
        assert matched[0].truth_id == 1

    def test_empty_truth(self):
        with pytest.raises(EmptyGroundTruthError):
            evaluate([], {})

    def test_table(self):
        report = evaluate([_record(t, 10, 10) for t in range(3)], self._truth(), fps=25.0)
        table = report_table(report)
        assert "1.000" in table
        assert "25.0 fps" in table


class TestThroughput:
    """Test timing runs"""

    def test_repeat(self):
        spec = ScenarioSpec(width=48, height=48, n_frames=14)
        frames, _ = generate(spec)

        report = throughput(frames, TrackerSettings(), repeat=3)
        assert len(report.samples) == 3
        assert all(s > 0 for s in report.samples)
        assert report.median_fps == pytest.approx(sorted(report.samples)[1])
        assert (report.frames, report.width, report.height) == (14, 48, 48)

    def test_repeat_validated(self):
        frames, _ = generate(ScenarioSpec(width=16, height=16, n_frames=12))
        with pytest.raises(ValueError):
            throughput(frames, TrackerSettings(), repeat=0)
