from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from app.schemas.frame import BoundingBox
from app.services.color_names import BASE_COLOR_NAMES


def _check_color(name: str) -> str:
    name = name.strip().lower()
    if name not in BASE_COLOR_NAMES:
        raise ValueError(f"unknown color name '{name}', expected one of {', '.join(BASE_COLOR_NAMES)}")
    return name


class BackgroundSpec(BaseModel):
    """Gray background, levels in [0, 255]; noise is i.i.d. per pixel and frame."""
    kind: Literal["constant", "noise"] = "constant"
    mean: float = Field(128.0, ge=0, le=255)
    sigma: float = Field(0.0, ge=0)


class TargetSpec(BaseModel):
    id: int = Field(..., ge=1)
    bbox: BoundingBox
    velocity: Tuple[float, float] = (0.0, 0.0)
    scale_rate: float = Field(0.0, gt=-1)
    colors: List[str] = Field(default_factory=lambda: ["red"], min_length=1)
    texture: Literal["solid", "checker"] = "solid"
    checker_cell: int = Field(8, ge=1)
    appear_frame: int = Field(0, ge=0)
    allow_clipping: bool = False

    @field_validator("colors")
    @classmethod
    def _known_colors(cls, v: List[str]) -> List[str]:
        return [_check_color(c) for c in v]

    def box_at(self, t: int) -> BoundingBox:
        """Exact box at frame t: center moves linearly, size grows by (1 + scale_rate)^t."""
        cx, cy = self.bbox.center
        factor = (1.0 + self.scale_rate) ** t
        return BoundingBox.from_center(
            cx + self.velocity[0] * t,
            cy + self.velocity[1] * t,
            self.bbox.w * factor,
            self.bbox.h * factor,
        )


class OccluderSpec(BaseModel):
    bbox: BoundingBox
    color: str = "blue"
    start_frame: int = Field(0, ge=0)
    end_frame: int = Field(..., ge=0)

    @field_validator("color")
    @classmethod
    def _known_color(cls, v: str) -> str:
        return _check_color(v)

    @model_validator(mode="after")
    def _ordered(self):
        if self.end_frame < self.start_frame:
            raise ValueError("occluder end_frame precedes start_frame")
        return self

    def active(self, t: int) -> bool:
        return self.start_frame <= t <= self.end_frame


class ScenarioSpec(BaseModel):
    width: int = Field(..., ge=8)
    height: int = Field(..., ge=8)
    n_frames: int = Field(..., ge=1)
    background: BackgroundSpec = Field(default_factory=BackgroundSpec)
    targets: List[TargetSpec] = Field(default_factory=list)
    occluders: List[OccluderSpec] = Field(default_factory=list)
    rng_seed: int = 0

    @model_validator(mode="after")
    def _targets_stay_in_frame(self):
        ids = [t.id for t in self.targets]
        if len(set(ids)) != len(ids):
            raise ValueError("target ids must be unique")
        for target in self.targets:
            for t in range(target.appear_frame, self.n_frames):
                box = target.box_at(t)
                inside = box.x >= 0 and box.y >= 0 and box.x + box.w <= self.width and box.y + box.h <= self.height
                if not inside and not target.allow_clipping:
                    raise ValueError(
                        f"target {target.id} leaves the frame at frame {t}; set allow_clipping to keep it"
                    )
        return self


class FrameScore(BaseModel):
    frame: int
    truth_id: int
    track_id: Optional[int] = None
    iou: float = 0.0
    center_error: Optional[float] = None


class TrackScore(BaseModel):
    truth_id: int
    mean_iou: float
    mean_center_error: Optional[float] = None
    frames_tracked: int
    frames_total: int
    tracker_ids: List[int] = []


class EvalReport(BaseModel):
    tracks: List[TrackScore]
    frames: List[FrameScore]
    mean_iou: float
    mean_center_error: Optional[float] = None
    success_rate: float
    fps: Optional[float] = Field(None, gt=0)

    def by_truth_id(self) -> Dict[int, TrackScore]:
        return {t.truth_id: t for t in self.tracks}


class ThroughputReport(BaseModel):
    frames: int
    width: int
    height: int
    samples: List[float]
    median_fps: float
