"""
Tracker Service
Per-frame pipeline: foreground detection, block grouping, association,
MeanShift localization, confidence check with graded fallback, template
and background updates. Targets are initialized automatically from
block groups.
"""
import logging
import math
import time
from dataclasses import dataclass
from itertools import islice
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import TrackerSettings, get_settings
from app.core.errors import EmptyKernelSupportError, ModelInitError, TrackerError, ZeroWeightError
from app.schemas.frame import BoundingBox, Frame
from app.schemas.tracking import TrackMode, TrackRecord, TrackState, TrackingRun
from app.services.background_model import ForegroundMask, GaussianBackground, GaussianBackgroundModel
from app.services.block_analysis import (
    BlockGroup,
    classify_moving_blocks,
    estimate_block_motion,
    group_blocks,
    moving_region,
    partition_blocks,
)
from app.services.color_names import LabelMap, labels_for_frame
from app.services.graded_matching import (
    TargetTemplate,
    build_template,
    confidence,
    displacement_bounds,
    graded_match,
)
from app.services.meanshift import MeanShiftLocalizer
from app.services.sequence_io import to_gray_normalized


@dataclass
class _Track:
    state: TrackState
    template: TargetTemplate
    # consecutive associated frames while tentative
    streak: int = 1


class Tracker:
    """
    Multi-target tracker.
    Owns the background model, the live tracks and the id counter.
    """

    def __init__(self, settings: Optional[TrackerSettings] = None):
        self.logger = logging.getLogger(__name__)
        self.settings = settings or get_settings()
        self.background = GaussianBackgroundModel(self.settings)
        self.localizer = MeanShiftLocalizer(self.settings)
        self.tracks: List[_Track] = []
        self.frame_index = 0
        self._next_id = 1
        self._prev_grid = None
        self._prev_mask: Optional[ForegroundMask] = None
        self._prev_gray = None

    @property
    def ready(self) -> bool:
        return self.background.ready

    def bootstrap(self, frames: Sequence[Frame]) -> Tuple[GaussianBackground, List[TrackState]]:
        if len(frames) < self.settings.init_frames:
            raise ModelInitError(
                f"bootstrap needs at least {self.settings.init_frames} frames, got {len(frames)}"
            )
        grays = [to_gray_normalized(f) for f in frames]
        model = self.background.bootstrap(grays)
        self.tracks = []
        self.frame_index = len(frames)
        self._prev_grid, self._prev_mask, self._prev_gray = None, None, grays[-1]
        return model, []

    def step(self, frame: Frame) -> List[TrackState]:
        """Process one frame; returns the confirmed tracks."""
        if not self.ready:
            raise ModelInitError("tracker must be bootstrapped before step")
        s = self.settings

        gray = to_gray_normalized(frame)
        mask = self.background.detect(gray)
        grid = classify_moving_blocks(partition_blocks(mask, s.block_size), s.theta)
        grid = estimate_block_motion(
            self._prev_grid, grid, self._prev_mask, mask, s.search_radius, self._prev_gray, gray
        )
        groups = group_blocks(grid, s.motion_tol, s.min_group_blocks, mask)
        assigned, unmatched = self._associate(groups)

        for track in list(self.tracks):
            group = assigned.get(track.state.id)
            try:
                self._localize(track, frame, mask, group)
            except TrackerError as e:
                self.logger.warning(f"Track {track.state.id}: localization failed ({e}), counted as a miss")
                track.state.misses += 1
                track.state.age += 1
                track.state.mode = TrackMode.COASTING
            self._advance_lifecycle(track, group is not None, frame)

        # a group covered by a live track, or by one spawned just now, never spawns a duplicate
        for group in unmatched:
            if not self._covered(group):
                self._spawn(frame, mask, group)

        self.background.update(gray, moving_region(grid))
        self._prev_grid, self._prev_mask, self._prev_gray = grid, mask, gray
        self.frame_index += 1
        return [t.state.model_copy(deep=True) for t in self.tracks if t.state.confirmed]

    # Association

    def _associate(self, groups: List[BlockGroup]) -> Tuple[Dict[int, BlockGroup], List[BlockGroup]]:
        """Greedy one-to-one IoU matching of predicted track boxes to groups, highest IoU first."""
        pairs = []
        for track in self.tracks:
            predicted = track.state.bbox.shifted(*track.state.velocity)
            for gi, group in enumerate(groups):
                overlap = predicted.iou(group.bbox)
                if overlap > 0 and overlap >= self.settings.iou_assoc_threshold:
                    pairs.append((-overlap, track.state.id, gi))

        assigned: Dict[int, BlockGroup] = {}
        taken = set()
        for _, track_id, gi in sorted(pairs):
            if track_id in assigned or gi in taken:
                continue
            assigned[track_id] = groups[gi]
            taken.add(gi)

        unmatched = [g for gi, g in enumerate(groups) if gi not in taken]
        return assigned, unmatched

    def _covered(self, group: BlockGroup) -> bool:
        """True when the group overlaps the current box of any live track."""
        return any(t.state.bbox.intersection(group.bbox) > 0 for t in self.tracks)

    # Localization

    def _search_labels(self, track: _Track, frame: Frame, start: Tuple[float, float]) -> LabelMap:
        """Label map of the region any search for this track may touch."""
        s = self.settings
        state = track.state
        reach = self.localizer.kernel_for(state.bbox).bandwidth
        if s.kernel == "gaussian":
            reach *= 3.0
        motion = max(s.lambda_max * max(abs(state.velocity[0]), abs(state.velocity[1])), s.min_search_radius)
        grow = int(math.ceil(motion)) + 2

        bx0, by0 = state.bbox.x - grow, state.bbox.y - grow
        bx1, by1 = state.bbox.x + state.bbox.w + grow, state.bbox.y + state.bbox.h + grow
        half = reach + max(state.bbox.w, state.bbox.h) / 2.0
        window = (
            int(math.floor(min(bx0, start[0] - half))),
            int(math.floor(min(by0, start[1] - half))),
            int(math.ceil(max(bx1, start[0] + half))),
            int(math.ceil(max(by1, start[1] + half))),
        )
        return labels_for_frame(frame.pixels, track.template.palette, window)

    def _start_point(self, state: TrackState, group: Optional[BlockGroup]) -> Tuple[float, float]:
        if self.settings.ms_start == "previous":
            return state.center
        if group is not None:
            return group.centroid
        return (state.center[0] + state.velocity[0], state.center[1] + state.velocity[1])

    def _localize(self, track: _Track, frame: Frame, mask: ForegroundMask, group: Optional[BlockGroup]):
        s = self.settings
        state = track.state
        template = track.template
        predicted = (state.center[0] + state.velocity[0], state.center[1] + state.velocity[1])
        start = self._start_point(state, group)
        labels = self._search_labels(track, frame, start)

        try:
            center, _, _ = self.localizer.localize(
                start, state.bbox, labels, template.meanshift_weights, (frame.width, frame.height)
            )
        except EmptyKernelSupportError:
            center = predicted

        tc = template.center
        delta = (center[0] - tc[0], center[1] - tc[1])
        score = confidence(template, labels, delta)
        mode = TrackMode.NORMAL

        if score < s.conf_threshold:
            self.logger.warning(
                f"Track {state.id}: confidence {score:.3f} below {s.conf_threshold}, graded matching"
            )
            base = (state.center[0] - tc[0], state.center[1] - tc[1])
            constraint = displacement_bounds(
                state.velocity, s.lambda_min, s.lambda_max, s.min_search_radius
            ).shifted(round(base[0]), round(base[1]))
            prior = (base[0] + state.velocity[0], base[1] + state.velocity[1])
            result = graded_match(
                template, labels, constraint, prior, s.component_floor, s.step0, s.max_evals
            )
            delta, score = result.offset, result.score
            mode = TrackMode.COASTING if result.coasting else TrackMode.GRADED

        new_center = (tc[0] + delta[0], tc[1] + delta[1])
        smoothing = s.velocity_smoothing
        velocity = (
            smoothing * state.velocity[0] + (1.0 - smoothing) * (new_center[0] - state.center[0]),
            smoothing * state.velocity[1] + (1.0 - smoothing) * (new_center[1] - state.center[1]),
        )

        w, h = state.bbox.w, state.bbox.h
        refresh = mode == TrackMode.NORMAL and score >= s.template_update_conf
        if refresh and group is not None:
            w, h = group.bbox.w, group.bbox.h
        bbox = BoundingBox.from_center(new_center[0], new_center[1], w, h)

        if refresh and bbox.intersects_frame(frame.width, frame.height):
            try:
                track.template = build_template(frame, mask, bbox, s, palette=template.palette)
            except ZeroWeightError as e:
                self.logger.debug(f"Track {state.id}: template kept ({e})")

        if mode != state.mode:
            self.logger.info(f"Track {state.id}: {state.mode.value} -> {mode.value} (D={score:.3f})")

        state.bbox = bbox
        state.center = new_center
        state.velocity = velocity
        state.confidence = float(np.clip(score, 0.0, 1.0))
        state.mode = mode
        state.misses = 0 if mode == TrackMode.NORMAL else state.misses + 1
        state.age += 1

    # Lifecycle

    def _advance_lifecycle(self, track: _Track, associated: bool, frame: Frame):
        state = track.state
        if not state.bbox.intersects_frame(frame.width, frame.height):
            self.logger.info(f"Track {state.id} dropped: left the frame")
            self.tracks.remove(track)
            return

        if not state.confirmed:
            if not associated:
                self.logger.debug(f"Tentative track {state.id} discarded after {track.streak} frames")
                self.tracks.remove(track)
                return
            track.streak += 1
            if track.streak >= self.settings.warmup_frames:
                state.confirmed = True
                self.logger.info(f"Track {state.id} confirmed at frame {frame.index}")
            return

        if state.misses > self.settings.max_misses:
            self.logger.info(f"Track {state.id} dropped after {state.misses} low-confidence frames")
            self.tracks.remove(track)

    def _spawn(self, frame: Frame, mask: ForegroundMask, group: BlockGroup):
        try:
            template = build_template(frame, mask, group.bbox, self.settings)
        except ZeroWeightError as e:
            self.logger.debug(f"Group at {group.centroid} not spawned: {e}")
            return

        state = TrackState(
            id=self._next_id,
            bbox=template.bbox,
            center=template.center,
            velocity=group.velocity if group.velocity_known else (0.0, 0.0),
            confidence=1.0,
            mode=TrackMode.NORMAL,
            confirmed=self.settings.warmup_frames <= 1,
        )
        self._next_id += 1
        self.tracks.append(_Track(state=state, template=template))
        self.logger.info(
            f"Track {state.id} spawned at frame {frame.index}: "
            f"({state.bbox.x:.0f}, {state.bbox.y:.0f}, {state.bbox.w:.0f}x{state.bbox.h:.0f})"
        )


def run_sequence(frames: Iterable[Frame], settings: Optional[TrackerSettings] = None) -> TrackingRun:
    """Bootstrap on the first init_frames frames, then track the rest."""
    settings = settings or get_settings()
    tracker = Tracker(settings)
    iterator = iter(frames)
    head = list(islice(iterator, settings.init_frames))
    if len(head) < settings.init_frames:
        raise ModelInitError(f"sequence has {len(head)} frames, bootstrap needs {settings.init_frames}")

    tracker.bootstrap(head)
    start = time.perf_counter()
    records: List[TrackRecord] = []
    count = 0
    for frame in iterator:
        for state in tracker.step(frame):
            records.append(TrackRecord.from_state(frame.index, state))
        count += 1
    seconds = time.perf_counter() - start

    return TrackingRun(records=records, frames=count, seconds=seconds)
