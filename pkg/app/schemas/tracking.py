from enum import Enum
import math
from typing import List, Optional, Tuple

from pydantic import BaseModel, model_validator

from app.schemas.frame import BoundingBox


class TrackMode(str, Enum):
    NORMAL = "NORMAL"
    GRADED = "GRADED"
    COASTING = "COASTING"


class SearchConstraint(BaseModel):
    """Closed displacement box [lo, hi] per axis, pixels."""
    dx_range: Tuple[float, float]
    dy_range: Tuple[float, float]

    @model_validator(mode="after")
    def _ordered(self):
        if self.dx_range[0] > self.dx_range[1] or self.dy_range[0] > self.dy_range[1]:
            raise ValueError("constraint intervals must satisfy lo <= hi")
        return self

    def integer_bounds(self) -> Tuple[int, int, int, int]:
        """Integer offsets inside the box as (x_lo, x_hi, y_lo, y_hi)."""
        return (*_int_interval(self.dx_range), *_int_interval(self.dy_range))

    def contains(self, offset: Tuple[float, float]) -> bool:
        return (self.dx_range[0] <= offset[0] <= self.dx_range[1]
                and self.dy_range[0] <= offset[1] <= self.dy_range[1])

    def project(self, offset: Tuple[float, float]) -> Tuple[int, int]:
        """Nearest integer offset inside the box."""
        x_lo, x_hi, y_lo, y_hi = self.integer_bounds()
        return (min(max(int(round(offset[0])), x_lo), x_hi),
                min(max(int(round(offset[1])), y_lo), y_hi))

    def shifted(self, dx: float, dy: float) -> "SearchConstraint":
        return SearchConstraint(
            dx_range=(self.dx_range[0] + dx, self.dx_range[1] + dx),
            dy_range=(self.dy_range[0] + dy, self.dy_range[1] + dy),
        )


def _int_interval(interval: Tuple[float, float]) -> Tuple[int, int]:
    lo, hi = math.ceil(interval[0] - 1e-9), math.floor(interval[1] + 1e-9)
    if lo > hi:
        lo = hi = int(round((interval[0] + interval[1]) / 2.0))
    return lo, hi


class ComponentMatch(BaseModel):
    index: int
    offset: Tuple[int, int]
    score: float
    priority: float
    occluded: bool = False


class MatchResult(BaseModel):
    offset: Tuple[float, float]
    score: float
    mode: TrackMode
    component_offsets: List[ComponentMatch] = []
    coasting: bool = False


class TrackState(BaseModel):
    id: int
    bbox: BoundingBox
    center: Tuple[float, float]
    velocity: Tuple[float, float] = (0.0, 0.0)
    confidence: float = 1.0
    mode: TrackMode = TrackMode.NORMAL
    age: int = 1
    misses: int = 0
    confirmed: bool = False


class TrackRecord(BaseModel):
    """One row of the tracker output CSV (frame is the 0-based index in memory)."""
    frame: int
    id: int
    x: float
    y: float
    w: float
    h: float
    confidence: float
    mode: TrackMode

    @property
    def bbox(self) -> BoundingBox:
        return BoundingBox(x=self.x, y=self.y, w=self.w, h=self.h)

    @classmethod
    def from_state(cls, frame: int, state: TrackState) -> "TrackRecord":
        return cls(
            frame=frame,
            id=state.id,
            x=state.bbox.x,
            y=state.bbox.y,
            w=state.bbox.w,
            h=state.bbox.h,
            confidence=state.confidence,
            mode=state.mode,
        )


class TrackingRun(BaseModel):
    """Records of one tracking pass plus the wall-clock time of the tracking loop."""
    records: List[TrackRecord] = []
    frames: int = 0
    seconds: float = 0.0

    @property
    def fps(self) -> Optional[float]:
        if self.seconds <= 0:
            return None
        return self.frames / self.seconds
