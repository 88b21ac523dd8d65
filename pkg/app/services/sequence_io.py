"""
Sequence I/O Service
Image sequences in and out (PNG / binary PPM), normalized gray conversion,
MOT-style ground truth and tracker record CSV files, overlay rendering.
"""
import logging
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple

import cv2
import numpy as np
import pandas as pd

from app.core.errors import (
    DimensionMismatchError,
    GroundTruthParseError,
    InputError,
    MissingDirectoryError,
    NoFramesError,
    UndecodableFrameError,
)
from app.schemas.frame import BoundingBox, Frame, GrayFrame
from app.schemas.tracking import TrackMode, TrackRecord

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".ppm"}

# ITU-R BT.601 luma
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

GT_COLUMNS = ["frame", "id", "x", "y", "w", "h"]
RECORD_COLUMNS = ["frame", "id", "x", "y", "w", "h", "confidence", "mode"]

GroundTruth = Dict[int, List[Tuple[int, BoundingBox]]]


def list_sequence(dir_path: str, pattern: str = "*") -> List[Path]:
    """Sorted image paths of a sequence directory, validated for count."""
    directory = Path(dir_path)
    if not directory.is_dir():
        raise MissingDirectoryError(str(directory))

    paths = sorted(
        (p for p in directory.glob(pattern) if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )
    if len(paths) < 2:
        raise NoFramesError(str(directory), found=len(paths))
    return paths


def read_frame(path: Path, index: int) -> Frame:
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise UndecodableFrameError(str(path))
    return Frame(pixels=cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB), index=index)


def load_sequence(dir_path: str, pattern: str = "*") -> Iterator[Frame]:
    """
    Stream the frames of a directory in lexicographic filename order.

    Directory and count problems are raised before the first frame is
    yielded; decode and dimension problems when the offending file is reached.
    """
    paths = list_sequence(dir_path, pattern)
    logger.info(f"Loading {len(paths)} frames from {dir_path}")
    return _iter_frames(paths)


def _iter_frames(paths: Sequence[Path]) -> Iterator[Frame]:
    size = None
    for index, path in enumerate(paths):
        frame = read_frame(path, index)
        if size is None:
            size = (frame.width, frame.height)
        elif (frame.width, frame.height) != size:
            raise DimensionMismatchError(str(path), size, (frame.width, frame.height))
        yield frame


def to_gray_normalized(frame: Frame) -> GrayFrame:
    gray = frame.pixels.astype(np.float64) @ LUMA_WEIGHTS / 255.0
    return GrayFrame(values=np.clip(gray, 0.0, 1.0), index=frame.index)


def write_frames(frames: Sequence[Frame], out_dir: str, ext: str = "png") -> List[Path]:
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for frame in frames:
        path = directory / f"f{frame.index:05d}.{ext}"
        if not cv2.imwrite(str(path), cv2.cvtColor(frame.pixels, cv2.COLOR_RGB2BGR)):
            raise InputError(f"cannot write image: {path}")
        written.append(path)
    return written


# Ground truth (MOT style: frame,id,x,y,w,h[,...], frames 1-based)

def _split_csv_lines(path: str) -> Tuple[pd.DataFrame, List[int]]:
    """Ragged comma-split table of the non-blank lines plus their 1-based line numbers."""
    text = Path(path).read_text()
    if not text.strip():
        return pd.DataFrame(), []
    lines = pd.Series(text.splitlines(), dtype=object)
    keep = lines.str.strip() != ""
    line_numbers = [int(i) + 1 for i in np.flatnonzero(keep.to_numpy())]
    return lines[keep].str.split(",", expand=True), line_numbers


def parse_mot_ground_truth(path: str) -> GroundTruth:
    if not Path(path).is_file():
        raise InputError(f"ground truth file not found: {path}")

    table, line_numbers = _split_csv_lines(path)
    truth: GroundTruth = {}
    if table.empty:
        return truth

    if table.shape[1] < len(GT_COLUMNS):
        raise GroundTruthParseError(path, line_numbers[0], f"expected at least {len(GT_COLUMNS)} fields")

    head = table.iloc[:, :len(GT_COLUMNS)].apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    bad = head.isna().any(axis=1).to_numpy()
    if bad.any():
        row = int(np.argmax(bad))
        missing = table.iloc[row, :len(GT_COLUMNS)].isna().any()
        reason = f"expected at least {len(GT_COLUMNS)} fields" if missing else "non-numeric field"
        raise GroundTruthParseError(path, line_numbers[row], reason)

    values = head.to_numpy()
    for row, (frame, track_id, x, y, w, h) in enumerate(values):
        if frame < 1 or frame != int(frame):
            raise GroundTruthParseError(path, line_numbers[row], "frame numbers are 1-based integers")
        if w <= 0 or h <= 0:
            raise GroundTruthParseError(path, line_numbers[row], "box extent must be positive")
        truth.setdefault(int(frame) - 1, []).append(
            (int(track_id), BoundingBox(x=float(x), y=float(y), w=float(w), h=float(h)))
        )
    return truth


def write_mot_ground_truth(path: str, truth: GroundTruth):
    rows = [
        (frame + 1, track_id, box.x, box.y, box.w, box.h)
        for frame in sorted(truth)
        for track_id, box in truth[frame]
    ]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=GT_COLUMNS).to_csv(path, header=False, index=False)


# Tracker records: frame,id,x,y,w,h,confidence,mode with a header, frames 1-based

def write_track_records(path: str, records: Sequence[TrackRecord]):
    df = pd.DataFrame([r.model_dump() for r in records], columns=RECORD_COLUMNS)
    df["frame"] = df["frame"].astype(int) + 1
    for column in ("x", "y", "w", "h"):
        df[column] = df[column].map("{:.2f}".format)
    df["confidence"] = df["confidence"].map("{:.4f}".format)
    df["mode"] = df["mode"].map(lambda m: TrackMode(m).value)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n")


def read_track_records(path: str) -> List[TrackRecord]:
    if not Path(path).is_file():
        raise InputError(f"track record file not found: {path}")
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputError(f"cannot parse track records {path}: {e}")

    missing = [c for c in RECORD_COLUMNS if c not in df.columns]
    if missing:
        raise InputError(f"track records {path} lack columns: {', '.join(missing)}")

    records = []
    for row in df.itertuples(index=False):
        records.append(TrackRecord(
            frame=int(row.frame) - 1,
            id=int(row.id),
            x=float(row.x),
            y=float(row.y),
            w=float(row.w),
            h=float(row.h),
            confidence=float(row.confidence),
            mode=TrackMode(row.mode),
        ))
    return records


# Overlay

_OVERLAY_COLORS = [
    (255, 64, 64), (64, 255, 64), (64, 128, 255), (255, 255, 0),
    (255, 0, 255), (0, 255, 255), (255, 160, 0), (160, 64, 255),
]


def render_overlay(frame: Frame, records: Sequence[TrackRecord]) -> Frame:
    """Copy of the frame with each record's box and id burned in."""
    canvas = np.ascontiguousarray(frame.pixels.copy())
    for record in records:
        color = _OVERLAY_COLORS[record.id % len(_OVERLAY_COLORS)]
        box = record.bbox
        x0, y0 = int(round(box.x)), int(round(box.y))
        # cv2 corners are inclusive
        x1, y1 = int(round(box.ex)), int(round(box.ey))
        thickness = 1 if record.mode == TrackMode.NORMAL else 2
        cv2.rectangle(canvas, (x0, y0), (x1, y1), color, thickness)
        cv2.putText(canvas, str(record.id), (x0, max(10, y0 - 3)),
                    cv2.FONT_HERSHEY_PLAIN, 0.9, color, 1)
    return Frame(pixels=canvas, index=frame.index)
