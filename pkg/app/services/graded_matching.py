"""
Graded Matching
Template-candidate confidence over color-name labels, displacement
constraints predicted from the track's velocity, and the per-component
re-matching used when the whole-template confidence drops.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

from app.core.config import TrackerSettings
from app.core.errors import ZeroWeightError
from app.schemas.frame import BoundingBox, Frame
from app.schemas.tracking import ComponentMatch, MatchResult, SearchConstraint, TrackMode
from app.services.background_model import ForegroundMask
from app.services.block_analysis import density_from_counts
from app.services.color_names import (
    ColorPalette,
    LabelMap,
    LabelHistogram,
    entropy_weights,
    label_histogram,
    labels_for_frame,
    resolve_prototypes,
    select_labels,
)

logger = logging.getLogger(__name__)

Offset = Tuple[int, int]

# Fixed visiting order so ties resolve the same way on every run
NEIGHBOR_DIRECTIONS = ((-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1))


@dataclass
class TemplateComponent:
    """A block tile of the template; x0/y0 are relative to the template origin."""
    index: int
    x0: int
    y0: int
    labels: np.ndarray
    weights: np.ndarray
    priority: float

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


@dataclass
class TargetTemplate:
    x0: int
    y0: int
    labels: np.ndarray
    weights: np.ndarray
    palette: ColorPalette
    label_weights: np.ndarray
    meanshift_weights: np.ndarray
    histogram: LabelHistogram
    components: List[TemplateComponent] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def bbox(self) -> BoundingBox:
        return BoundingBox(x=self.x0, y=self.y0, w=self.width, h=self.height)

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x0 + self.width / 2.0, self.y0 + self.height / 2.0)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


def _context_window(x0: int, y0: int, x1: int, y1: int, scale: float) -> Tuple[int, int, int, int]:
    gx = int(round((x1 - x0) * scale))
    gy = int(round((y1 - y0) * scale))
    return x0 - gx, y0 - gy, x1 + gx, y1 + gy


def build_template(
    frame: Frame,
    mask: ForegroundMask,
    bbox: BoundingBox,
    settings: TrackerSettings,
    palette: Optional[ColorPalette] = None
) -> TargetTemplate:
    """Label the target box and attach entropy weights and block components."""
    x0, y0, x1, y1 = bbox.pixel_slice(frame.width, frame.height)
    if x1 <= x0 or y1 <= y0:
        raise ZeroWeightError("template box lies outside the frame")

    context = _context_window(x0, y0, x1, y1, settings.context_scale)
    if palette is None:
        cx0, cy0 = max(0, context[0]), max(0, context[1])
        cx1, cy1 = min(frame.width, context[2]), min(frame.height, context[3])
        palette = select_labels(
            frame.pixels[cy0:cy1, cx0:cx1],
            settings.k_labels,
            resolve_prototypes(settings.palette_file),
            settings.fisher_reg,
        )

    context_map = labels_for_frame(frame.pixels, palette, context)
    context_hist = label_histogram(context_map, palette.size)
    label_weights = entropy_weights(context_hist, settings.entropy_c)
    if not np.any(label_weights > 0):
        label_weights = context_hist.present().astype(np.float64)

    labels = context_map.window(x0, y0, x1 - x0, y1 - y0)
    lookup = np.append(label_weights, 0.0)
    weights = lookup[labels]
    if weights.sum() <= 0:
        raise ZeroWeightError("template has zero total weight")

    fg = mask.flags[y0:y1, x0:x1]
    if not fg.any():
        fg = np.ones_like(fg)
    histogram = label_histogram(LabelMap(labels=np.where(fg, labels, -1)), palette.size)
    meanshift_weights = np.where(histogram.present(), label_weights, 0.0)
    if not np.any(meanshift_weights > 0):
        meanshift_weights = histogram.present().astype(np.float64)

    template = TargetTemplate(
        x0=x0,
        y0=y0,
        labels=labels,
        weights=weights,
        palette=palette,
        label_weights=label_weights,
        meanshift_weights=meanshift_weights,
        histogram=histogram,
    )
    template.components = _split_components(template, fg, settings.block_size)
    return template


def _split_components(template: TargetTemplate, fg: np.ndarray, block_size: int) -> List[TemplateComponent]:
    """Tile the template by block_size; priority is the tile's gray density."""
    tiles = []
    for ty in range(0, template.height, block_size):
        for tx in range(0, template.width, block_size):
            tile_fg = fg[ty:ty + block_size, tx:tx + block_size]
            tiles.append((tx, ty, tile_fg))

    ys, xs = np.nonzero(fg)
    centroid = (xs.mean() + 0.5, ys.mean() + 0.5)
    spread = []
    for tx, ty, tile_fg in tiles:
        h, w = tile_fg.shape
        spread.append(float(np.hypot(tx + w / 2.0 - centroid[0], ty + h / 2.0 - centroid[1])))
    radius = max((s for s, (_, _, t) in zip(spread, tiles) if t.any()), default=0.0)

    components = []
    for (tx, ty, tile_fg), h_eps in zip(tiles, spread):
        if not tile_fg.any():
            continue
        h, w = tile_fg.shape
        components.append(TemplateComponent(
            index=len(components),
            x0=tx,
            y0=ty,
            labels=template.labels[ty:ty + h, tx:tx + w],
            weights=template.weights[ty:ty + h, tx:tx + w],
            priority=density_from_counts(float(tile_fg.sum()), float(tile_fg.size), radius, h_eps),
        ))
    return components


def _match_score(labels: np.ndarray, weights: np.ndarray, x0: int, y0: int, frame_labels: LabelMap) -> float:
    total = weights.sum()
    if total <= 0:
        raise ZeroWeightError("matching region has zero total weight")
    h, w = labels.shape
    candidate = frame_labels.window(x0, y0, w, h)
    return float((weights * (candidate == labels)).sum() / total)


def _rounded(delta: Tuple[float, float]) -> Offset:
    return int(round(delta[0])), int(round(delta[1]))


def confidence(template: TargetTemplate, frame_labels: LabelMap, delta: Tuple[float, float]) -> float:
    """Weighted fraction of template pixels whose label agrees after shifting by delta."""
    dx, dy = _rounded(delta)
    return _match_score(template.labels, template.weights, template.x0 + dx, template.y0 + dy, frame_labels)


def component_confidence(
    template: TargetTemplate,
    component: TemplateComponent,
    frame_labels: LabelMap,
    delta: Tuple[float, float]
) -> float:
    dx, dy = _rounded(delta)
    return _match_score(
        component.labels,
        component.weights,
        template.x0 + component.x0 + dx,
        template.y0 + component.y0 + dy,
        frame_labels,
    )


def displacement_bounds(
    delta_hat: Tuple[float, float],
    lambda_min: float = 0.5,
    lambda_max: float = 2.0,
    min_radius: float = 3
) -> SearchConstraint:
    if lambda_min >= lambda_max:
        raise ValueError("lambda_min must be smaller than lambda_max")
    # below 1 an axis range may hold no integer offset
    if min_radius < 1:
        raise ValueError("min_radius must be at least 1")

    def axis(d: float) -> Tuple[float, float]:
        if abs(d) < min_radius:
            return (-float(min_radius), float(min_radius))
        lo, hi = sorted((lambda_min * d, lambda_max * d))
        return (lo, hi)

    return SearchConstraint(dx_range=axis(delta_hat[0]), dy_range=axis(delta_hat[1]))


def _rings(center: Offset, bounds: Tuple[int, int, int, int]) -> Iterator[List[Offset]]:
    """In-box offsets at Chebyshev distance 2, 3, ... from center, one ring at a time."""
    x_lo, x_hi, y_lo, y_hi = bounds
    cx, cy = center
    reach = max(cx - x_lo, x_hi - cx, cy - y_lo, y_hi - cy)
    for r in range(2, reach + 1):
        yield [
            (x, y)
            for y in range(max(cy - r, y_lo), min(cy + r, y_hi) + 1)
            for x in range(max(cx - r, x_lo), min(cx + r, x_hi) + 1)
            if max(abs(x - cx), abs(y - cy)) == r
        ]


def feasible_direction_search(
    score: Callable[[Offset], float],
    constraint: SearchConstraint,
    start: Tuple[float, float],
    step0: int = 2,
    max_evals: int = 200
) -> Tuple[Offset, float]:
    """
    Projected 8-neighborhood hill climb on integer offsets.

    Candidates leaving the constraint box are projected back onto it. The
    climb moves to the best strictly improving neighbor, halves the step when
    none improves and stalls once the step drops below 1. A stalled climb
    scans widening rings around its point and resumes from the best improving
    offset of the first ring holding one, so thin diagonal ridges that no
    neighbor step follows are still climbed. The search ends when the whole
    box holds no improvement or the evaluation budget is spent. Every offset
    is scored at most once.
    """
    cache: Dict[Offset, float] = {}

    def evaluate(offset: Offset) -> Optional[float]:
        if offset not in cache:
            if len(cache) >= max_evals:
                return None
            cache[offset] = score(offset)
        return cache[offset]

    bounds = constraint.integer_bounds()
    current = constraint.project(start)
    best = evaluate(current)
    exhausted = False

    while True:
        step = max(1, int(step0))
        while step >= 1 and not exhausted:
            move, move_score = None, best
            for ux, uy in NEIGHBOR_DIRECTIONS:
                candidate = constraint.project((current[0] + ux * step, current[1] + uy * step))
                if candidate == current:
                    continue
                value = evaluate(candidate)
                if value is None:
                    exhausted = True
                    break
                if value > move_score:
                    move, move_score = candidate, value
            if move is not None:
                current, best = move, move_score
            else:
                step //= 2
        if exhausted:
            break

        escape, escape_score = None, best
        for ring in _rings(current, bounds):
            for candidate in ring:
                value = evaluate(candidate)
                if value is None:
                    exhausted = True
                    break
                if value > escape_score:
                    escape, escape_score = candidate, value
            if exhausted or escape is not None:
                break
        if escape is not None:
            current, best = escape, escape_score
        if exhausted or escape is None:
            break

    return current, best


def graded_match(
    template: TargetTemplate,
    frame_labels: LabelMap,
    constraint: SearchConstraint,
    prior_delta: Tuple[float, float],
    component_floor: float = 0.3,
    step0: int = 2,
    max_evals: int = 200
) -> MatchResult:
    """
    Re-match each block component inside the constraint, highest priority
    first, and fuse the surviving offsets weighted by priority times score.
    """
    if not template.components:
        raise ValueError("graded matching needs a template with at least one component")

    ordered = sorted(template.components, key=lambda c: (-c.priority, c.index))
    matches: List[ComponentMatch] = []
    for component in ordered:
        if component.total_weight <= 0:
            matches.append(ComponentMatch(index=component.index, offset=_rounded(prior_delta),
                                          score=0.0, priority=component.priority, occluded=True))
            continue
        offset, value = feasible_direction_search(
            lambda o, c=component: component_confidence(template, c, frame_labels, o),
            constraint,
            prior_delta,
            step0,
            max_evals,
        )
        matches.append(ComponentMatch(
            index=component.index,
            offset=offset,
            score=value,
            priority=component.priority,
            occluded=value < component_floor,
        ))

    surviving = [m for m in matches if not m.occluded]
    if not surviving:
        logger.debug(f"All {len(matches)} components occluded, coasting on {prior_delta}")
        return MatchResult(
            offset=(float(prior_delta[0]), float(prior_delta[1])),
            score=confidence(template, frame_labels, prior_delta),
            mode=TrackMode.GRADED,
            component_offsets=matches,
            coasting=True,
        )

    fusion = np.array([m.priority * m.score for m in surviving])
    if fusion.sum() <= 0:
        fusion = np.array([m.score for m in surviving])
    offsets = np.array([m.offset for m in surviving], dtype=np.float64)
    fused = (fusion[:, None] * offsets).sum(axis=0) / fusion.sum()
    offset = (float(fused[0]), float(fused[1]))

    return MatchResult(
        offset=offset,
        score=confidence(template, frame_labels, offset),
        mode=TrackMode.GRADED,
        component_offsets=matches,
    )
