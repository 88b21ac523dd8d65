"""
Block Analysis Service
Equal-size block partition of the foreground mask, moving-block
classification, SAD block-matching motion, motion-coherent grouping
of adjacent blocks into candidate targets, and the gray density score.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import cv2
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.core.errors import BlockNotInGroupError, BlockSizeError, DimensionMismatchError
from app.schemas.frame import BoundingBox, GrayFrame
from app.services.background_model import ForegroundMask, moving_region_from_blocks

logger = logging.getLogger(__name__)

SAD_TIE_TOL = 1e-6
MIN_COMPONENT_PIXELS = 4


@dataclass
class BlockGrid:
    """
    Per-block statistics on a rows x cols grid; block i sits at
    (row, col) = divmod(i, cols). motion is NaN where unknown.
    """
    block_size: int
    width: int
    height: int
    moving_count: np.ndarray
    total_count: np.ndarray
    moving: np.ndarray
    motion: np.ndarray
    ambiguous: np.ndarray

    @property
    def rows(self) -> int:
        return self.moving_count.shape[0]

    @property
    def cols(self) -> int:
        return self.moving_count.shape[1]

    def cell(self, index: int) -> Tuple[int, int]:
        return divmod(index, self.cols)

    def bounds(self, index: int) -> Tuple[int, int, int, int]:
        """Pixel extent (x0, y0, x1, y1) of a block, end exclusive."""
        row, col = self.cell(index)
        bs = self.block_size
        return col * bs, row * bs, min((col + 1) * bs, self.width), min((row + 1) * bs, self.height)

    def center(self, index: int) -> Tuple[float, float]:
        x0, y0, x1, y1 = self.bounds(index)
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)

    def motion_of(self, index: int) -> Optional[Tuple[float, float]]:
        row, col = self.cell(index)
        if np.isnan(self.motion[row, col, 0]):
            return None
        return (float(self.motion[row, col, 0]), float(self.motion[row, col, 1]))

    def moving_indices(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.moving.ravel())]


@dataclass
class BlockGroup:
    members: Tuple[int, ...]
    centroid: Tuple[float, float]
    bbox: BoundingBox
    velocity: Tuple[float, float]
    radius: float
    velocity_known: bool = True
    moving_pixels: int = 0


def partition_blocks(mask: ForegroundMask, block_size: int) -> BlockGrid:
    if block_size < 4:
        raise BlockSizeError(f"block_size must be at least 4, got {block_size}")
    height, width = mask.flags.shape
    rows = -(-height // block_size)
    cols = -(-width // block_size)
    pad = ((0, rows * block_size - height), (0, cols * block_size - width))

    def block_sums(values: np.ndarray) -> np.ndarray:
        padded = np.pad(values, pad)
        return padded.reshape(rows, block_size, cols, block_size).sum(axis=(1, 3))

    return BlockGrid(
        block_size=block_size,
        width=width,
        height=height,
        moving_count=block_sums(mask.flags.astype(np.int64)),
        total_count=block_sums(np.ones((height, width), dtype=np.int64)),
        moving=np.zeros((rows, cols), dtype=bool),
        motion=np.full((rows, cols, 2), np.nan),
        ambiguous=np.zeros((rows, cols), dtype=bool),
    )


def classify_moving_blocks(grid: BlockGrid, theta: float = 0.10) -> BlockGrid:
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    return replace(grid, moving=(grid.moving_count / grid.total_count) > theta)


def moving_region(grid: BlockGrid) -> np.ndarray:
    """Pixel mask of all moving blocks."""
    return moving_region_from_blocks(grid.moving, grid.block_size, grid.width, grid.height)


def _best_offset(sad: np.ndarray, radius: int) -> Tuple[Tuple[int, int], bool]:
    """Minimum-SAD offset; ties go to the smallest magnitude, then lexicographic (dx, dy)."""
    best = np.min(sad)
    tied_a, tied_b = np.nonzero(sad <= best + SAD_TIE_TOL)
    # sad[a, b] holds offset (dx, dy) = (radius - b, radius - a)
    candidates = sorted(
        ((radius - b) ** 2 + (radius - a) ** 2, radius - b, radius - a)
        for a, b in zip(tied_a.tolist(), tied_b.tolist())
    )
    _, dx, dy = candidates[0]
    return (dx, dy), len(candidates) > 1


def estimate_block_motion(
    prev: Optional[BlockGrid],
    cur: BlockGrid,
    prev_mask: Optional[ForegroundMask],
    cur_mask: ForegroundMask,
    search_radius: int,
    prev_gray: Optional[GrayFrame],
    cur_gray: GrayFrame
) -> BlockGrid:
    """
    Exhaustive SAD block matching for every moving block.

    Motion is the displacement from the previous frame to the current one.
    Blocks with no previous foreground within the search window are unknown;
    blocks whose SAD minimum is not unique are flagged ambiguous.
    """
    motion = np.full(cur.motion.shape, np.nan)
    ambiguous = np.zeros(cur.moving.shape, dtype=bool)
    if prev is None or prev_mask is None or prev_gray is None:
        return replace(cur, motion=motion, ambiguous=ambiguous)

    if prev.moving.shape != cur.moving.shape or prev_mask.flags.shape != cur_mask.flags.shape:
        raise DimensionMismatchError(None, prev_mask.flags.shape[::-1], cur_mask.flags.shape[::-1])

    r = search_radius
    padded_prev = np.pad(prev_gray.values, r, constant_values=np.nan)
    for index in cur.moving_indices():
        x0, y0, x1, y1 = cur.bounds(index)
        wx0, wy0 = max(0, x0 - r), max(0, y0 - r)
        wx1, wy1 = min(cur.width, x1 + r), min(cur.height, y1 + r)
        if not prev_mask.flags[wy0:wy1, wx0:wx1].any():
            continue

        block = cur_gray.values[y0:y1, x0:x1]
        region = padded_prev[y0:y1 + 2 * r, x0:x1 + 2 * r]
        windows = sliding_window_view(region, block.shape)
        sad = np.abs(windows - block).sum(axis=(2, 3))
        sad = np.where(np.isnan(sad), np.inf, sad)
        if not np.isfinite(sad).any():
            continue

        (dx, dy), tied = _best_offset(sad, r)
        row, col = cur.cell(index)
        motion[row, col] = (dx, dy)
        ambiguous[row, col] = tied

    return replace(cur, motion=motion, ambiguous=ambiguous)


def _find(parent: Dict[int, int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def _union(parent: Dict[int, int], a: int, b: int):
    ra, rb = _find(parent, a), _find(parent, b)
    if ra != rb:
        # smaller index is the root so labels do not depend on visiting order
        parent[max(ra, rb)] = min(ra, rb)


def _neighbors(grid: BlockGrid, index: int) -> List[int]:
    row, col = grid.cell(index)
    out = []
    for r, c in ((row - 1, col), (row + 1, col), (row, col - 1), (row, col + 1)):
        if 0 <= r < grid.rows and 0 <= c < grid.cols:
            out.append(r * grid.cols + c)
    return out


def group_blocks(
    grid: BlockGrid,
    motion_tol: float = 2.0,
    min_group_blocks: int = 2,
    mask: Optional[ForegroundMask] = None
) -> List[BlockGroup]:
    """
    Group 4-adjacent moving blocks with coherent motion.

    Blocks with known, unambiguous motion are united when their vectors
    differ by at most motion_tol. Unknown or ambiguous blocks then join an
    adjacent group layer by layer (ties to the group whose lowest member
    index is smallest); any left over form groups among themselves.
    """
    moving = set(grid.moving_indices())
    known = {i for i in moving if grid.motion_of(i) is not None and not grid.ambiguous[grid.cell(i)]}
    loose = moving - known

    parent = {i: i for i in known}
    for i in known:
        mi = np.array(grid.motion_of(i))
        for j in _neighbors(grid, i):
            if j in known and np.linalg.norm(mi - np.array(grid.motion_of(j))) <= motion_tol:
                _union(parent, i, j)
    label = {i: _find(parent, i) for i in known}

    while True:
        layer = {}
        for i in loose - set(label):
            adjacent = [label[j] for j in _neighbors(grid, i) if j in label]
            if adjacent:
                layer[i] = min(adjacent)
        if not layer:
            break
        label.update(layer)

    rest = loose - set(label)
    parent = {i: i for i in rest}
    for i in rest:
        for j in _neighbors(grid, i):
            if j in rest:
                _union(parent, i, j)
    label.update({i: _find(parent, i) for i in rest})

    members_by_label: Dict[int, List[int]] = {}
    for i, root in label.items():
        members_by_label.setdefault(root, []).append(i)

    kept = [sorted(members_by_label[root]) for root in sorted(members_by_label)]
    kept = [members for members in kept if len(members) >= min_group_blocks]
    # labelled only when some group needs a box
    components = ForegroundComponents.of(mask) if mask is not None and kept else None
    groups = [_build_group(grid, members, components) for members in kept]
    logger.debug(f"{len(groups)} block groups from {len(moving)} moving blocks")
    return groups


@dataclass
class ForegroundComponents:
    """8-connected components of a foreground mask, labelled once per frame."""
    labels: np.ndarray
    # one (left, top, width, height, area) row per label, row 0 is the background
    stats: np.ndarray

    @classmethod
    def of(cls, mask: ForegroundMask) -> "ForegroundComponents":
        _, labels, stats, _ = cv2.connectedComponentsWithStats(mask.flags.astype(np.uint8), connectivity=8)
        return cls(labels=labels, stats=stats)

    @property
    def sizes(self) -> np.ndarray:
        return self.stats[:, cv2.CC_STAT_AREA]

    def extent(self, keep: np.ndarray) -> Tuple[int, int, int, int]:
        """Union box (x0, y0, x1, y1) of the given labels, exclusive ends."""
        rows = self.stats[keep]
        left, top = rows[:, cv2.CC_STAT_LEFT], rows[:, cv2.CC_STAT_TOP]
        return (
            int(left.min()),
            int(top.min()),
            int((left + rows[:, cv2.CC_STAT_WIDTH]).max()),
            int((top + rows[:, cv2.CC_STAT_HEIGHT]).max()),
        )


def _build_group(grid: BlockGrid, members: List[int], components: Optional[ForegroundComponents]) -> BlockGroup:
    centers = np.array([grid.center(i) for i in members])
    counts = np.array([grid.moving_count[grid.cell(i)] for i in members], dtype=np.float64)
    weights = counts if counts.sum() > 0 else np.ones(len(members))
    centroid = (weights[:, None] * centers).sum(axis=0) / weights.sum()
    radius = float(np.max(np.linalg.norm(centers - centroid, axis=1)))

    motions = [grid.motion_of(i) for i in members if not grid.ambiguous[grid.cell(i)]]
    motions = [m for m in motions if m is not None]
    velocity = tuple(np.mean(motions, axis=0).tolist()) if motions else (0.0, 0.0)

    return BlockGroup(
        members=tuple(members),
        centroid=(float(centroid[0]), float(centroid[1])),
        bbox=_group_bbox(grid, members, components),
        velocity=(float(velocity[0]), float(velocity[1])),
        radius=radius,
        velocity_known=bool(motions),
        moving_pixels=int(counts.sum()),
    )


def _group_bbox(grid: BlockGrid, members: List[int], components: Optional[ForegroundComponents]) -> BoundingBox:
    """
    Tight box of the significant foreground components touching the member
    blocks, taken over their full extent so that every fragment of one
    object reports the object's box.
    """
    extents = np.array([grid.bounds(i) for i in members])
    x0, y0 = int(extents[:, 0].min()), int(extents[:, 1].min())
    x1, y1 = int(extents[:, 2].max()), int(extents[:, 3].max())
    block_box = BoundingBox(x=x0, y=y0, w=x1 - x0, h=y1 - y0)
    if components is None:
        return block_box

    touching = np.unique(np.concatenate([
        components.labels[by0:by1, bx0:bx1].ravel() for bx0, by0, bx1, by1 in extents
    ]))
    touching = touching[touching > 0]
    if touching.size == 0:
        return block_box
    sizes = components.sizes[touching]
    keep = touching[sizes >= max(MIN_COMPONENT_PIXELS, 0.1 * sizes.max())]
    if keep.size == 0:
        return block_box

    bx0, by0, bx1, by1 = components.extent(keep)
    return BoundingBox(x=float(bx0), y=float(by0), w=float(bx1 - bx0), h=float(by1 - by0))


def density_from_counts(n_i: float, n: float, h: float, h_eps: float) -> float:
    """Gray density n_i (h - h_eps) / (n h), clamped at zero; n_i / n when h is 0."""
    if n <= 0:
        return 0.0
    if h <= 0:
        return max(0.0, n_i / n)
    return max(0.0, (n_i * (h - h_eps)) / (n * h))


def gray_density(block_index: int, group: BlockGroup, grid: BlockGrid) -> float:
    if block_index not in group.members:
        raise BlockNotInGroupError(f"block {block_index} is not a member of the group")
    cell = grid.cell(block_index)
    cx, cy = grid.center(block_index)
    h_eps = float(np.hypot(cx - group.centroid[0], cy - group.centroid[1]))
    return density_from_counts(
        float(grid.moving_count[cell]), float(grid.total_count[cell]), group.radius, h_eps
    )
