from dataclasses import dataclass
from typing import Tuple

import numpy as np
from pydantic import BaseModel, field_validator


@dataclass
class Frame:
    """RGB image, pixels shaped (height, width, 3) uint8."""
    pixels: np.ndarray
    index: int = 0

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"Frame pixels must be (h, w, 3), got {self.pixels.shape}")
        if self.pixels.shape[0] == 0 or self.pixels.shape[1] == 0:
            raise ValueError("Frame must have positive width and height")
        if self.pixels.dtype != np.uint8:
            self.pixels = np.clip(self.pixels, 0, 255).astype(np.uint8)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class GrayFrame:
    """Normalized gray image, values shaped (height, width) in [0, 1]."""
    values: np.ndarray
    index: int = 0

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


class BoundingBox(BaseModel):
    x: float
    y: float
    w: float
    h: float

    @field_validator("w", "h")
    @classmethod
    def _positive_extent(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("box extent must be positive")
        return v

    @property
    def ex(self) -> float:
        return self.x + self.w - 1

    @property
    def ey(self) -> float:
        return self.y + self.h - 1

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.w, self.h))

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(x=cx - w / 2.0, y=cy - h / 2.0, w=w, h=h)

    def shifted(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(x=self.x + dx, y=self.y + dy, w=self.w, h=self.h)

    def intersection(self, other: "BoundingBox") -> float:
        iw = min(self.x + self.w, other.x + other.w) - max(self.x, other.x)
        ih = min(self.y + self.h, other.y + other.h) - max(self.y, other.y)
        return max(0.0, iw) * max(0.0, ih)

    def iou(self, other: "BoundingBox") -> float:
        inter = self.intersection(other)
        if inter <= 0:
            return 0.0
        return inter / (self.area + other.area - inter)

    def intersects_frame(self, width: int, height: int) -> bool:
        return self.x < width and self.y < height and self.x + self.w > 0 and self.y + self.h > 0

    def clipped(self, width: int, height: int) -> "BoundingBox":
        """Largest part of the box inside the frame (box must intersect it)."""
        x0 = max(0.0, self.x)
        y0 = max(0.0, self.y)
        x1 = min(float(width), self.x + self.w)
        y1 = min(float(height), self.y + self.h)
        return BoundingBox(x=x0, y=y0, w=x1 - x0, h=y1 - y0)

    def pixel_slice(self, width: int, height: int) -> Tuple[int, int, int, int]:
        """Integer (x0, y0, x1, y1) covering the box, clipped to the frame, end exclusive."""
        x0 = max(0, int(round(self.x)))
        y0 = max(0, int(round(self.y)))
        x1 = min(width, int(round(self.x + self.w)))
        y1 = min(height, int(round(self.y + self.h)))
        return x0, y0, x1, y1
