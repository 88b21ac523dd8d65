"""
MeanShift Localization
Weighted MeanShift vector over a per-pixel weight field and the
mode-seeking iteration started from a candidate block-group center.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Literal, Tuple

import numpy as np
from pydantic import BaseModel, Field

from app.core.config import TrackerSettings
from app.core.errors import EmptyKernelSupportError
from app.schemas.frame import BoundingBox
from app.services.color_names import LabelMap

Point = Tuple[float, float]


class KernelSpec(BaseModel):
    profile: Literal["epanechnikov", "gaussian"] = "epanechnikov"
    bandwidth: float = Field(..., gt=0)


@dataclass
class WeightField:
    """Non-negative weights of the pixels in a window whose top-left pixel is (x0, y0)."""
    weights: np.ndarray
    x0: int = 0
    y0: int = 0

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise ValueError("weight field must be non-negative")

    def pixel_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        h, w = self.weights.shape
        xs = self.x0 + np.arange(w) + 0.5
        ys = self.y0 + np.arange(h) + 0.5
        return xs, ys

    def scaled(self, c: float) -> "WeightField":
        return WeightField(weights=self.weights * c, x0=self.x0, y0=self.y0)


def kernel_g(r2, profile: str = "epanechnikov"):
    """Kernel profile g evaluated at squared normalized distances (scalar or array)."""
    r2 = np.asarray(r2, dtype=np.float64)
    if np.any(r2 < 0):
        raise ValueError("squared distance must be non-negative")
    if profile == "epanechnikov":
        out = (r2 <= 1.0).astype(np.float64)
    elif profile == "gaussian":
        out = np.exp(-r2 / 2.0)
    else:
        raise ValueError(f"unknown kernel profile: {profile}")
    return float(out) if out.ndim == 0 else out


def meanshift_vector(x: Point, field: WeightField, k: KernelSpec) -> np.ndarray:
    """m(x) = sum g w (x_i - x) / sum g w over the field's pixels."""
    xs, ys = field.pixel_centers()
    dx = xs[None, :] - x[0]
    dy = ys[:, None] - x[1]
    g = kernel_g((dx * dx + dy * dy) / (k.bandwidth * k.bandwidth), k.profile)
    gw = g * field.weights
    denominator = gw.sum()
    if denominator <= 0:
        raise EmptyKernelSupportError(f"empty kernel support at ({x[0]:.1f}, {x[1]:.1f})")
    return np.array([(gw * dx).sum() / denominator, (gw * dy).sum() / denominator])


def meanshift_iterate(
    start: Point,
    field_provider: Callable[[Point], WeightField],
    k: KernelSpec,
    eps: float = 0.5,
    max_iters: int = 20
) -> Tuple[Point, int, bool]:
    """Move x by m(x) until |m(x)| < eps; returns (center, iterations, converged)."""
    x = np.array(start, dtype=np.float64)
    for iteration in range(max_iters):
        m = meanshift_vector((x[0], x[1]), field_provider((x[0], x[1])), k)
        x = x + m
        if np.hypot(m[0], m[1]) < eps:
            return (float(x[0]), float(x[1])), iteration + 1, True
    return (float(x[0]), float(x[1])), max_iters, False


def build_weight_field(
    label_map: LabelMap,
    label_weights: np.ndarray,
    window: Tuple[int, int, int, int]
) -> WeightField:
    """Per-pixel weight = weight of the pixel's label; 0 outside the label map."""
    x0, y0, x1, y1 = window
    labels = label_map.window(x0, y0, max(0, x1 - x0), max(0, y1 - y0))
    lookup = np.append(np.asarray(label_weights, dtype=np.float64), 0.0)
    # label -1 indexes the trailing zero
    return WeightField(weights=lookup[labels], x0=x0, y0=y0)


def kernel_window(center: Point, bandwidth: float, width: int, height: int) -> Tuple[int, int, int, int]:
    """Integer pixel window covering the kernel support around center, clipped to the frame."""
    x0 = max(0, int(np.floor(center[0] - bandwidth)))
    y0 = max(0, int(np.floor(center[1] - bandwidth)))
    x1 = min(width, int(np.ceil(center[0] + bandwidth)) + 1)
    y1 = min(height, int(np.ceil(center[1] + bandwidth)) + 1)
    return x0, y0, max(x0, x1), max(y0, y1)


class MeanShiftLocalizer:
    """Runs the MeanShift search for one target over a frame's label map."""

    def __init__(self, settings: TrackerSettings):
        self.logger = logging.getLogger(__name__)
        self.settings = settings

    def kernel_for(self, bbox: BoundingBox) -> KernelSpec:
        # half the box diagonal
        return KernelSpec(
            profile=self.settings.kernel,
            bandwidth=max(1.0, self.settings.bandwidth_scale * bbox.diagonal / 2.0),
        )

    def localize(
        self,
        start: Point,
        bbox: BoundingBox,
        label_map: LabelMap,
        label_weights: np.ndarray,
        frame_size: Tuple[int, int]
    ) -> Tuple[Point, int, bool]:
        k = self.kernel_for(bbox)
        width, height = frame_size
        # gaussian support is unbounded, truncate at 3 bandwidths
        reach = k.bandwidth if k.profile == "epanechnikov" else 3.0 * k.bandwidth

        def provider(x: Point) -> WeightField:
            return build_weight_field(label_map, label_weights, kernel_window(x, reach, width, height))

        center, iters, converged = meanshift_iterate(
            start, provider, k, self.settings.ms_eps, self.settings.ms_max_iters
        )
        if not converged:
            self.logger.debug(f"MeanShift stopped after {iters} iterations at ({center[0]:.1f}, {center[1]:.1f})")
        return center, iters, converged
