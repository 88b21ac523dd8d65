"""
Color-Names Features
Quantizes RGB into the 11 linguistic color labels, selects a reduced,
well-separated sub-palette (Fisher / MMSE projection between label
populations) and derives entropy weights from label frequencies.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.errors import DegenerateClassesError, InputError, ZeroWeightError

logger = logging.getLogger(__name__)

BASE_COLOR_NAMES = (
    "black", "blue", "brown", "gray", "green", "orange",
    "pink", "purple", "red", "white", "yellow",
)

BASE_PROTOTYPES = np.array([
    (0, 0, 0),        # black
    (0, 0, 255),      # blue
    (139, 69, 19),    # brown
    (128, 128, 128),  # gray
    (0, 128, 0),      # green
    (255, 165, 0),    # orange
    (255, 192, 203),  # pink
    (128, 0, 128),    # purple
    (255, 0, 0),      # red
    (255, 255, 255),  # white
    (255, 255, 0),    # yellow
], dtype=np.int64)


@dataclass(frozen=True)
class ColorPalette:
    """Base prototypes plus the selected, ordered subset of base label indices."""
    prototypes: np.ndarray
    selected: Tuple[int, ...]
    label_weights: Tuple[float, ...]
    padded: bool = False

    @classmethod
    def full(cls, prototypes: Optional[np.ndarray] = None) -> "ColorPalette":
        protos = BASE_PROTOTYPES if prototypes is None else prototypes
        return cls(prototypes=protos, selected=tuple(range(len(protos))),
                   label_weights=tuple([0.0] * len(protos)))

    @property
    def size(self) -> int:
        return len(self.selected)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(BASE_COLOR_NAMES[i] for i in self.selected)

    def selected_prototypes(self) -> np.ndarray:
        return self.prototypes[list(self.selected)]


@dataclass
class LabelMap:
    """Per-pixel indices into a palette's selected labels, anchored at (x0, y0) in the frame."""
    labels: np.ndarray
    x0: int = 0
    y0: int = 0

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def window(self, x0: int, y0: int, w: int, h: int) -> np.ndarray:
        """Labels of a frame-coordinate window; -1 where the map has no data."""
        out = np.full((h, w), -1, dtype=self.labels.dtype)
        sx0, sy0 = max(x0, self.x0), max(y0, self.y0)
        sx1, sy1 = min(x0 + w, self.x0 + self.width), min(y0 + h, self.y0 + self.height)
        if sx0 < sx1 and sy0 < sy1:
            out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = \
                self.labels[sy0 - self.y0:sy1 - self.y0, sx0 - self.x0:sx1 - self.x0]
        return out


@dataclass
class LabelHistogram:
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.total

    def present(self) -> np.ndarray:
        return self.counts > 0


@dataclass
class FisherSample:
    """Two-class sample matrix; rows of Y are normalized RGB, b holds class 1 or 2."""
    Y: np.ndarray
    b: np.ndarray

    @classmethod
    def from_classes(cls, first: np.ndarray, second: np.ndarray) -> "FisherSample":
        Y = np.vstack([first, second]).astype(np.float64)
        b = np.concatenate([np.ones(len(first), dtype=int), np.full(len(second), 2, dtype=int)])
        return cls(Y=Y, b=b)

    def class_rows(self, k: int) -> np.ndarray:
        return self.Y[self.b == k]

    @property
    def m1(self) -> np.ndarray:
        return self.class_rows(1).mean(axis=0)

    @property
    def m2(self) -> np.ndarray:
        return self.class_rows(2).mean(axis=0)

    @property
    def S_w(self) -> np.ndarray:
        return _scatter(self.class_rows(1)) + _scatter(self.class_rows(2))


def _scatter(rows: np.ndarray) -> np.ndarray:
    centered = rows - rows.mean(axis=0)
    return centered.T @ centered


def _fisher_direction(m1: np.ndarray, m2: np.ndarray, S_w: np.ndarray, reg: float) -> np.ndarray:
    diff = m1 - m2
    if not np.any(diff):
        raise DegenerateClassesError("degenerate classes: identical class means")
    a = np.linalg.solve(S_w + reg * np.eye(len(diff)), diff)
    return a / np.linalg.norm(a)


def fisher_projection(s: FisherSample, reg: float = 1e-6) -> np.ndarray:
    """Unit projection a = (S_w + reg I)^-1 (m1 - m2)."""
    for k in (1, 2):
        if int(np.sum(s.b == k)) < 2:
            raise DegenerateClassesError(f"class {k} needs at least 2 samples")
    return _fisher_direction(s.m1, s.m2, s.S_w, reg)


# Label mapping

def _nearest_labels(rgb: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Index of the nearest prototype per pixel (exact integer distances, first minimum wins)."""
    pix = rgb.reshape(-1, 3).astype(np.int64)
    protos = prototypes.astype(np.int64)
    dist = (pix * pix).sum(axis=1)[:, None] - 2 * pix @ protos.T + (protos * protos).sum(axis=1)[None, :]
    return np.argmin(dist, axis=1).reshape(rgb.shape[:2])


def map_rgb_to_labels(region: np.ndarray, palette: ColorPalette, x0: int = 0, y0: int = 0) -> LabelMap:
    """
    Nearest selected prototype per pixel.
    Ties go to the lower base label index; the result indexes palette.selected.
    """
    if palette.size == 0:
        raise ValueError("palette has no selected labels")
    order = np.argsort(palette.selected, kind="stable")
    nearest = _nearest_labels(region, palette.selected_prototypes()[order])
    return LabelMap(labels=order[nearest].astype(np.int16), x0=x0, y0=y0)


def label_histogram(label_map: LabelMap, size: int) -> LabelHistogram:
    valid = label_map.labels[label_map.labels >= 0]
    return LabelHistogram(counts=np.bincount(valid.ravel(), minlength=size)[:size])


def label_populations(region: np.ndarray, prototypes: Optional[np.ndarray] = None) -> Dict[int, np.ndarray]:
    """Normalized RGB samples of the region grouped by base label."""
    protos = BASE_PROTOTYPES if prototypes is None else prototypes
    labels = _nearest_labels(region, protos).ravel()
    rgb = region.reshape(-1, 3).astype(np.float64) / 255.0
    return {int(k): rgb[labels == k] for k in np.unique(labels)}


# Sub-palette selection

def label_separation(
    palette: ColorPalette,
    i: int,
    chosen: Iterable[int],
    samples: Mapping[int, np.ndarray],
    reg: float = 1e-6
) -> float:
    """
    Minimum separation between label i and the chosen labels: the distance
    of the two populations' means along their Fisher direction, or the
    normalized prototype distance when a population has fewer than 2 samples.
    """
    chosen = list(chosen)
    if not chosen:
        raise ValueError("label_separation needs at least one chosen label")
    if i in chosen:
        return 0.0
    return min(_pair_separation(palette.prototypes, i, c, samples, reg) for c in chosen)


def _pair_separation(
    prototypes: np.ndarray,
    i: int,
    c: int,
    samples: Mapping[int, np.ndarray],
    reg: float
) -> float:
    pop_i = samples.get(i, np.empty((0, 3)))
    pop_c = samples.get(c, np.empty((0, 3)))
    if len(pop_i) < 2 or len(pop_c) < 2:
        return float(np.linalg.norm((prototypes[i] - prototypes[c]) / 255.0))

    m_i, m_c = pop_i.mean(axis=0), pop_c.mean(axis=0)
    try:
        a = _fisher_direction(m_i, m_c, _scatter(pop_i) + _scatter(pop_c), reg)
    except DegenerateClassesError:
        return 0.0
    return float(abs(a @ (m_i - m_c)))


def select_labels(
    region: np.ndarray,
    K: int,
    prototypes: Optional[np.ndarray] = None,
    reg: float = 1e-6
) -> ColorPalette:
    """
    Greedy sub-palette: the most frequent label first, then repeatedly the
    label maximizing min-separation times frequency.
    """
    protos = BASE_PROTOTYPES if prototypes is None else prototypes
    if not 1 <= K <= len(protos):
        raise ValueError(f"K must lie in [1, {len(protos)}], got {K}")
    if region.size == 0:
        raise ValueError("cannot select labels from an empty region")

    palette = ColorPalette.full(protos)
    samples = label_populations(region, protos)
    counts = np.zeros(len(protos))
    for label, rows in samples.items():
        counts[label] = len(rows)
    freq = counts / counts.sum()
    occurring = [k for k in range(len(protos)) if counts[k] > 0]

    cache: Dict[Tuple[int, int], float] = {}

    def separation(a: int, b: int) -> float:
        key = (min(a, b), max(a, b))
        if key not in cache:
            cache[key] = _pair_separation(protos, a, b, samples, reg)
        return cache[key]

    # argmax with ties to the lower index
    chosen = [max(occurring, key=lambda k: (freq[k], -k))]
    while len(chosen) < min(K, len(occurring)):
        candidates = [k for k in occurring if k not in chosen]
        scores = {k: min(separation(k, c) for c in chosen) * freq[k] for k in candidates}
        chosen.append(max(candidates, key=lambda k: (scores[k], -k)))

    padded = K > len(occurring)
    if padded:
        rest = sorted((k for k in range(len(protos)) if k not in chosen), key=lambda k: (-freq[k], k))
        chosen.extend(rest[:K - len(chosen)])
        logger.debug(f"Palette padded: only {len(occurring)} labels occur, K={K}")

    weights = []
    for k in chosen:
        others = [c for c in chosen if c != k]
        spread = min(separation(k, c) for c in others) if others else 1.0
        weights.append(float(spread * freq[k]))

    return ColorPalette(prototypes=protos, selected=tuple(chosen), label_weights=tuple(weights), padded=padded)


def entropy_weights(h: LabelHistogram, C: float = 1.0) -> np.ndarray:
    """Self-information weight -C log p per label (0 for absent labels)."""
    if h.total <= 0:
        raise ZeroWeightError("entropy weights need a non-empty label histogram")
    p = h.counts / h.total
    weights = np.zeros(len(p))
    present = h.counts > 0
    weights[present] = -C * np.log(p[present])
    return weights


def load_palette_file(path: str, base: Optional[np.ndarray] = None) -> np.ndarray:
    """Prototype table with `name,R,G,B` lines overriding base colors by name."""
    if not Path(path).is_file():
        raise InputError(f"palette file not found: {path}")

    prototypes = (BASE_PROTOTYPES if base is None else base).copy()
    overrides = 0
    for line_number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        fields = [f.strip() for f in text.split(",")]
        if len(fields) != 4:
            raise InputError(f"{path}: line {line_number}: expected name,R,G,B")
        name = fields[0].lower()
        if name not in BASE_COLOR_NAMES:
            raise InputError(f"{path}: line {line_number}: unknown color name '{fields[0]}'")
        values = pd.to_numeric(pd.Series(fields[1:]), errors="coerce")
        if values.isna().any() or ((values < 0) | (values > 255)).any() or (values % 1 != 0).any():
            raise InputError(f"{path}: line {line_number}: RGB values must be integers in [0, 255]")
        prototypes[BASE_COLOR_NAMES.index(name)] = values.astype(int).to_numpy()
        overrides += 1
    logger.info(f"Loaded {overrides} palette overrides from {path}")
    return prototypes


def resolve_prototypes(palette_file: Optional[str]) -> np.ndarray:
    return load_palette_file(palette_file) if palette_file else BASE_PROTOTYPES


def labels_for_frame(pixels: np.ndarray, palette: ColorPalette, window: Sequence[int]) -> LabelMap:
    """Label map of a frame window (x0, y0, x1, y1), clipped to the frame."""
    height, width = pixels.shape[:2]
    x0, y0 = max(0, int(window[0])), max(0, int(window[1]))
    x1, y1 = min(width, int(window[2])), min(height, int(window[3]))
    if x1 <= x0 or y1 <= y0:
        return LabelMap(labels=np.full((0, 0), -1, dtype=np.int16), x0=x0, y0=y0)
    return map_rgb_to_labels(pixels[y0:y1, x0:x1], palette, x0=x0, y0=y0)
