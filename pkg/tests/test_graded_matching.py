"""
Tracker - Graded Matching Tests
Confidence, displacement constraints, feasible-direction search and
per-component re-matching under occlusion
"""
import pytest
import sys
import os

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.core.config import TrackerSettings
from app.core.errors import ZeroWeightError
from app.schemas.frame import BoundingBox, Frame
from app.schemas.tracking import SearchConstraint, TrackMode
from app.services.background_model import ForegroundMask
from app.services.color_names import BASE_COLOR_NAMES, ColorPalette, LabelMap, label_histogram, labels_for_frame
from app.services.graded_matching import (
    TargetTemplate,
    build_template,
    component_confidence,
    confidence,
    displacement_bounds,
    feasible_direction_search,
    graded_match,
)

RED = (255, 0, 0)
BLUE = (0, 0, 255)
GRAY = (128, 128, 128)


def _checker_frame(x, y, size=16, cell=4, width=64, height=64, occluder=None):
    pixels = np.zeros((height, width, 3), dtype=np.uint8)
    for r in range(size):
        for c in range(size):
            pixels[y + r, x + c] = RED if ((r // cell) + (c // cell)) % 2 == 0 else BLUE
    if occluder is not None:
        x0, y0, x1, y1 = occluder
        pixels[y0:y1, x0:x1] = GRAY
    return Frame(pixels=pixels)


def _checker_template(settings=None):
    settings = settings or TrackerSettings(block_size=8)
    frame = _checker_frame(20, 20)
    mask = ForegroundMask(flags=np.zeros((64, 64), dtype=bool))
    mask.flags[20:36, 20:36] = True
    return build_template(frame, mask, BoundingBox(x=20, y=20, w=16, h=16), settings)


def _frame_labels(frame, template):
    return labels_for_frame(frame.pixels, template.palette, (0, 0, frame.width, frame.height))


def _direct_template(labels, weights, x0=10, y0=10):
    return TargetTemplate(
        x0=x0,
        y0=y0,
        labels=labels,
        weights=weights,
        palette=ColorPalette.full(),
        label_weights=np.ones(11),
        meanshift_weights=np.ones(11),
        histogram=label_histogram(LabelMap(labels=labels), 11),
    )


class TestConfidence:
    """Test weighted template agreement"""

    def test_full_and_no_agreement(self):
        labels = np.array([[1, 2], [3, 4]], dtype=np.int16)
        template = _direct_template(labels, np.ones((2, 2)))
        frame_labels = LabelMap(labels=labels, x0=13, y0=8)

        assert confidence(template, frame_labels, (3, -2)) == 1.0
        assert confidence(template, frame_labels, (2.6, -1.8)) == 1.0
        assert confidence(template, frame_labels, (0, 0)) == 0.0

    def test_half_agreement(self):
        labels = np.array([[1, 2], [3, 4]], dtype=np.int16)
        template = _direct_template(labels, np.ones((2, 2)))
        frame_labels = LabelMap(labels=np.array([[1, 2], [0, 0]], dtype=np.int16), x0=10, y0=10)

        assert confidence(template, frame_labels, (0, 0)) == pytest.approx(0.5)

    def test_weight_scale_invariance(self):
        rng = np.random.default_rng(8)
        labels = rng.integers(0, 4, (6, 6)).astype(np.int16)
        weights = rng.uniform(0.1, 2.0, (6, 6))
        frame_labels = LabelMap(labels=rng.integers(0, 4, (20, 20)).astype(np.int16))

        base = confidence(_direct_template(labels, weights), frame_labels, (1, 2))
        for c in (0.01, 100.0):
            assert confidence(_direct_template(labels, weights * c), frame_labels, (1, 2)) == pytest.approx(base)

    def test_zero_weight(self):
        template = _direct_template(np.zeros((2, 2), dtype=np.int16), np.zeros((2, 2)))
        with pytest.raises(ZeroWeightError):
            confidence(template, LabelMap(labels=np.zeros((4, 4), dtype=np.int16)), (0, 0))


class TestDisplacementBounds:
    """Test the velocity-scaled search box"""

    def test_positive_velocity(self):
        c = displacement_bounds((10, 0))
        assert c.dx_range == (5.0, 20.0)
        assert c.dy_range == (-3.0, 3.0)

    def test_negative_velocity(self):
        assert displacement_bounds((-10, 1)).dx_range == (-20.0, -5.0)

    def test_invalid_lambdas(self):
        with pytest.raises(ValueError):
            displacement_bounds((4, 4), lambda_min=2.0, lambda_max=2.0)

    def test_every_axis_holds_an_integer(self):
        with pytest.raises(ValueError):
            displacement_bounds((0.3, 0), min_radius=0)

        for d in (1.0, -1.0, 1.3, 2.7, -4.2):
            c = displacement_bounds((d, 0.2), min_radius=1)
            x_lo, x_hi, y_lo, y_hi = c.integer_bounds()
            assert x_lo <= x_hi and y_lo <= y_hi
            assert c.contains(c.project((d, 0.2)))


class TestFeasibleDirectionSearch:
    """Test the projected hill climb"""

    def test_fixed_point(self):
        constraint = SearchConstraint(dx_range=(-5, 5), dy_range=(-5, 5))
        offset, value = feasible_direction_search(lambda o: -(o[0] - 1) ** 2 - (o[1] + 2) ** 2, constraint, (1, -2))
        assert offset == (1, -2)
        assert value == 0

    def test_matches_exhaustive_search(self):
        """Separable concave scores reach the constrained optimum without leaving the box"""
        rng = np.random.default_rng(17)
        for _ in range(100):
            x_lo, y_lo = (int(v) for v in rng.integers(-15, 5, 2))
            w, h = (int(v) for v in rng.integers(1, 22, 2))
            constraint = SearchConstraint(dx_range=(x_lo, x_lo + w - 1), dy_range=(y_lo, y_lo + h - 1))
            px, py = rng.uniform(-25, 25, 2)
            a, b = rng.uniform(0.1, 3.0, 2)
            visited = []

            def score(o):
                visited.append(o)
                return -a * (o[0] - px) ** 2 - b * (o[1] - py) ** 2

            start = (rng.uniform(x_lo, x_lo + w - 1), rng.uniform(y_lo, y_lo + h - 1))
            _, value = feasible_direction_search(score, constraint, start, step0=2, max_evals=1000)

            exhaustive = max(
                -a * (x - px) ** 2 - b * (y - py) ** 2
                for x in range(x_lo, x_lo + w) for y in range(y_lo, y_lo + h)
            )
            assert value == pytest.approx(exhaustive)
            assert all(constraint.contains(o) for o in visited)
            assert len(visited) == len(set(visited))

    def test_matches_exhaustive_search_on_rotated_ridges(self):
        """Rotated anisotropic concave scores whose ridge no neighbor step follows"""
        rng = np.random.default_rng(29)
        constraint = SearchConstraint(dx_range=(-10, 10), dy_range=(-10, 10))
        for _ in range(100):
            angle = rng.uniform(0.0, np.pi)
            rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
            curvature = rotation @ np.diag([0.05 * rng.uniform(3.0, 50.0), 0.05]) @ rotation.T
            peak = rng.uniform(-8.0, 8.0, 2)

            def score(o):
                d = np.array(o, dtype=float) - peak
                return -float(d @ curvature @ d)

            start = tuple(int(v) for v in rng.integers(-10, 11, 2))
            offset, value = feasible_direction_search(score, constraint, start, max_evals=1000)

            exhaustive = max(score((x, y)) for x in range(-10, 11) for y in range(-10, 11))
            assert value == pytest.approx(exhaustive)
            assert constraint.contains(offset)

    def test_optimum_outside_box(self):
        constraint = SearchConstraint(dx_range=(-5, 5), dy_range=(-5, 5))

        def score(o):
            return -(o[0] - 50) ** 2 - (o[1] - 50) ** 2

        offset, value = feasible_direction_search(score, constraint, (0, 0))
        assert offset == (5, 5)
        assert value >= score((0, 0))

    def test_evaluation_budget(self):
        calls = []
        constraint = SearchConstraint(dx_range=(-20, 20), dy_range=(-20, 20))
        feasible_direction_search(lambda o: calls.append(o) or float(o[0] + o[1]), constraint, (0, 0), max_evals=5)
        assert len(calls) <= 5


class TestBuildTemplate:
    """Test template construction from a spawn frame"""

    def test_layout(self):
        template = _checker_template()

        assert (template.x0, template.y0) == (20, 20)
        assert template.labels.shape == (16, 16)
        assert len(template.components) == 4
        assert template.center == (28.0, 28.0)

    def test_palette_and_weights(self):
        template = _checker_template()
        names = template.palette.names
        red, blue, black = names.index("red"), names.index("blue"), names.index("black")

        assert template.label_weights[red] == pytest.approx(template.label_weights[blue])
        assert template.label_weights[black] > 0
        assert template.meanshift_weights[black] == 0.0
        assert template.meanshift_weights[red] > 0

    def test_palette_reused(self):
        template = _checker_template()
        mask = ForegroundMask(flags=np.ones((64, 64), dtype=bool))
        refreshed = build_template(_checker_frame(24, 20), mask, BoundingBox(x=24, y=20, w=16, h=16),
                                   TrackerSettings(block_size=8), palette=template.palette)
        assert refreshed.palette is template.palette

    def test_box_outside_frame(self):
        frame = _checker_frame(20, 20)
        with pytest.raises(ZeroWeightError):
            build_template(frame, ForegroundMask(flags=np.ones((64, 64), dtype=bool)),
                           BoundingBox(x=70, y=70, w=8, h=8), TrackerSettings())


class TestGradedMatch:
    """Test component re-matching"""

    def test_agrees_with_true_shift(self):
        template = _checker_template()
        frame_labels = _frame_labels(_checker_frame(25, 20), template)

        assert confidence(template, frame_labels, (5, 0)) == 1.0
        result = graded_match(template, frame_labels, displacement_bounds((5, 0)), (4, 1))

        assert result.offset == pytest.approx((5.0, 0.0))
        assert result.mode == TrackMode.GRADED
        assert not result.coasting
        assert all(m.offset == (5, 0) for m in result.component_offsets)

    def test_left_half_occluded(self):
        template = _checker_template()
        frame_labels = _frame_labels(_checker_frame(25, 20, occluder=(25, 0, 33, 64)), template)

        result = graded_match(template, frame_labels, displacement_bounds((5, 0)), (4, 1), component_floor=0.5)
        assert np.hypot(result.offset[0] - 5, result.offset[1]) <= 1.0
        assert not result.coasting

        by_index = {c.index: c for c in template.components}
        occluded = {by_index[m.index].x0 for m in result.component_offsets if m.occluded}
        assert occluded == {0}
        right = template.components[1]
        assert component_confidence(template, right, frame_labels, (5, 0)) == 1.0

    def test_fully_occluded_coasts(self):
        template = _checker_template()
        frame_labels = _frame_labels(_checker_frame(25, 20, occluder=(0, 0, 64, 64)), template)

        result = graded_match(template, frame_labels, displacement_bounds((5, 0)), (5, 0))
        assert result.coasting
        assert result.offset == (5.0, 0.0)
        assert all(m.occluded for m in result.component_offsets)

    def test_needs_components(self):
        template = _direct_template(np.zeros((2, 2), dtype=np.int16), np.ones((2, 2)))
        with pytest.raises(ValueError):
            graded_match(template, LabelMap(labels=np.zeros((4, 4), dtype=np.int16)),
                         displacement_bounds((0, 0)), (0, 0))


def test_color_names_in_palette():
    """Spawn palette keeps the target's two colors and the background"""
    names = _checker_template().palette.names
    assert {"red", "blue", "black"} <= set(names)
    assert set(names) <= set(BASE_COLOR_NAMES)
