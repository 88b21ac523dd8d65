"""
Background Model Service
Per-pixel Gaussian statistics of normalized gray, 2-sigma foreground
classification, gray-histogram refinement, block-gated learning rates.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy import ndimage

from app.core.config import TrackerSettings
from app.core.errors import DimensionMismatchError, ModelInitError
from app.schemas.frame import GrayFrame

EIGHT_NEIGHBORHOOD = np.ones((3, 3), dtype=bool)


@dataclass
class GaussianBackground:
    mu: np.ndarray
    sigma2: np.ndarray
    frames_seen: int

    @property
    def width(self) -> int:
        return self.mu.shape[1]

    @property
    def height(self) -> int:
        return self.mu.shape[0]


@dataclass
class ForegroundMask:
    flags: np.ndarray

    @property
    def width(self) -> int:
        return self.flags.shape[1]

    @property
    def height(self) -> int:
        return self.flags.shape[0]

    @property
    def fraction(self) -> float:
        return float(self.flags.mean()) if self.flags.size else 0.0


class LearningRates(BaseModel):
    alpha_bg: float = Field(0.05, ge=0, le=1)
    alpha_fg: float = Field(0.005, ge=0, le=1)

    @model_validator(mode="after")
    def _fg_not_above_bg(self):
        if self.alpha_fg > self.alpha_bg:
            raise ValueError("alpha_fg must not exceed alpha_bg")
        return self


def _check_shape(expected: tuple, actual: tuple):
    if expected != actual:
        raise DimensionMismatchError(None, expected[::-1], actual[::-1])


def init_model(frames: Sequence[GrayFrame]) -> GaussianBackground:
    """Mean and population variance over the first N gray frames."""
    if len(frames) < 2:
        raise ModelInitError(f"background initialization needs at least 2 frames, got {len(frames)}")
    shape = frames[0].values.shape
    for frame in frames[1:]:
        _check_shape(shape, frame.values.shape)

    stack = np.stack([f.values for f in frames]).astype(np.float64)
    mu = stack.mean(axis=0)
    sigma2 = ((stack - mu) ** 2).mean(axis=0)
    return GaussianBackground(mu=mu, sigma2=sigma2, frames_seen=len(frames))


def classify_foreground(
    model: GaussianBackground,
    g: GrayFrame,
    k_sigma: float = 2.0,
    sigma_floor: float = 0.01
) -> ForegroundMask:
    if k_sigma <= 0:
        raise ValueError("k_sigma must be positive")
    _check_shape(model.mu.shape, g.values.shape)
    sigma = np.maximum(np.sqrt(model.sigma2), sigma_floor)
    return ForegroundMask(flags=np.abs(g.values - model.mu) > k_sigma * sigma)


def update_model(
    model: GaussianBackground,
    g: GrayFrame,
    moving_region: np.ndarray,
    rates: LearningRates
) -> GaussianBackground:
    """Exponential update; pixels inside moving blocks learn at alpha_fg."""
    _check_shape(model.mu.shape, g.values.shape)
    _check_shape(model.mu.shape, moving_region.shape)

    alpha = np.where(moving_region, rates.alpha_fg, rates.alpha_bg)
    l = g.values
    mu = (1.0 - alpha) * model.mu + alpha * l
    # variance uses the already-updated mean
    sigma2 = (1.0 - alpha) * model.sigma2 + alpha * (l - mu) ** 2
    return GaussianBackground(
        mu=np.clip(mu, 0.0, 1.0),
        sigma2=np.maximum(sigma2, 0.0),
        frames_seen=model.frames_seen + 1,
    )


def moving_region_from_blocks(moving: np.ndarray, block_size: int, width: int, height: int) -> np.ndarray:
    """Expand per-block moving flags to a per-pixel mask of the frame."""
    expanded = np.repeat(np.repeat(moving, block_size, axis=0), block_size, axis=1)
    return expanded[:height, :width]


def refine_by_gray_histogram(
    mask: ForegroundMask,
    g: GrayFrame,
    model: GaussianBackground,
    bins: int = 32
) -> ForegroundMask:
    """
    Fill holes and drop noise points using gray histograms.

    A bin's ratio is foreground density over background density (each
    histogram normalized by its own pixel count). Unflagged pixels 8-adjacent
    to the input mask whose bin ratio is >= 2 are added; flagged pixels whose
    bin ratio is < 0.5 are removed.
    """
    _check_shape(model.mu.shape, g.values.shape)
    _check_shape(mask.flags.shape, g.values.shape)

    flags = mask.flags
    n_fg = int(flags.sum())
    if n_fg == 0:
        return ForegroundMask(flags=flags.copy())

    bin_index = np.minimum((g.values * bins).astype(np.int64), bins - 1)
    fg_density = np.bincount(bin_index[flags], minlength=bins) / n_fg
    n_bg = flags.size - n_fg
    bg_counts = np.bincount(bin_index[~flags], minlength=bins)
    bg_density = bg_counts / n_bg if n_bg else np.zeros(bins)

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = fg_density / bg_density
    ratio[fg_density == 0] = 0.0

    pixel_ratio = ratio[bin_index]
    near = ndimage.binary_dilation(flags, structure=EIGHT_NEIGHBORHOOD)
    filled = ~flags & near & (pixel_ratio >= 2.0)
    kept = flags & (pixel_ratio >= 0.5)
    return ForegroundMask(flags=kept | filled)


class GaussianBackgroundModel:
    """
    Owner of the scene's background statistics.
    Bootstraps from the first frames, then detects and updates frame by frame.
    """

    def __init__(self, settings: TrackerSettings):
        self.logger = logging.getLogger(__name__)
        self.settings = settings
        self.rates = LearningRates(alpha_bg=settings.alpha_bg, alpha_fg=settings.alpha_fg)
        self.model: Optional[GaussianBackground] = None

    @property
    def ready(self) -> bool:
        return self.model is not None

    def bootstrap(self, frames: Sequence[GrayFrame]) -> GaussianBackground:
        self.model = init_model(frames)
        self.logger.info(
            f"Background initialized from {len(frames)} frames "
            f"({self.model.width}x{self.model.height}, mean sigma {np.sqrt(self.model.sigma2).mean():.4f})"
        )
        return self.model

    def detect(self, g: GrayFrame) -> ForegroundMask:
        raw = classify_foreground(self.model, g, self.settings.k_sigma, self.settings.sigma_floor)
        return refine_by_gray_histogram(raw, g, self.model, self.settings.hist_bins)

    def update(self, g: GrayFrame, moving_region: np.ndarray) -> GaussianBackground:
        self.model = update_model(self.model, g, moving_region, self.rates)
        return self.model
