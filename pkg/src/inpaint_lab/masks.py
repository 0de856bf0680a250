"""Box trajectories, mask rasterization, and frame-masking modes.

Masks are binary (frames x 1 x H x W) uint8 arrays where 1 marks the region
to inpaint. The effective conditioning pair is m (holes) and x_m = x * (1 - m)
(known content kept, holes zeroed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import EmptyMaskError, ParameterError, ShapeError, TrajectoryError


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in normalized [0,1] coordinates, origin top-left."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise TrajectoryError(f"invalid box ({self.x1},{self.y1},{self.x2},{self.y2})")

    @property
    def center(self):
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    def as_list(self):
        return [self.x1, self.y1, self.x2, self.y2]

    def iou(self, other: "Box") -> float:
        ix = max(0.0, min(self.x2, other.x2) - max(self.x1, other.x1))
        iy = max(0.0, min(self.y2, other.y2) - max(self.y1, other.y1))
        inter = ix * iy
        union = self.width * self.height + other.width * other.height - inter
        return inter / union if union > 0 else 0.0


class FrameMaskMode(Enum):
    T2V = "t2v"
    I2V = "i2v"
    K2V = "k2v"


@dataclass
class BoxTrajectory:
    """Keyed boxes (1-based frame index -> Box) plus an optional center path."""

    keys: dict[int, Box]
    length: int
    path: list[tuple[float, float]] | None = None

    def __post_init__(self):
        if self.length < 2:
            raise TrajectoryError("trajectory length must be >= 2")
        frames = sorted(self.keys)
        if not frames or frames[0] != 1 or frames[-1] != self.length:
            raise TrajectoryError("trajectory needs keyed boxes at frame 1 and frame L")
        if any(f < 1 or f > self.length for f in frames):
            raise TrajectoryError("keyed frame index outside [1, L]")
        if self.path is not None:
            if len(self.path) < 2:
                raise TrajectoryError("path needs at least 2 points")
            c0 = self.keys[1].center
            c1 = self.keys[self.length].center
            for got, want in ((self.path[0], c0), (self.path[-1], c1)):
                if abs(got[0] - want[0]) > 1e-6 or abs(got[1] - want[1]) > 1e-6:
                    raise TrajectoryError("path endpoints must match keyed box centers")

    @classmethod
    def from_json(cls, text_or_obj):
        obj = json.loads(text_or_obj) if isinstance(text_or_obj, (str, bytes)) else text_or_obj
        try:
            length = int(obj["length"])
            keys = {int(k): Box(*map(float, v)) for k, v in obj["boxes"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise TrajectoryError(f"malformed trajectory JSON: {exc}") from exc
        path = obj.get("path")
        if path is not None:
            path = [(float(p[0]), float(p[1])) for p in path]
        return cls(keys=keys, length=length, path=path)

    def to_json(self) -> str:
        obj = {
            "length": self.length,
            "boxes": {str(k): self.keys[k].as_list() for k in sorted(self.keys)},
        }
        if self.path is not None:
            obj["path"] = [[x, y] for x, y in self.path]
        return json.dumps(obj, indent=2)


@dataclass
class MaskSequence:
    """Binary (N, 1, H, W) mask; 1 marks pixels to inpaint."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4 or arr.shape[1] != 1 or arr.shape[0] < 1:
            raise ShapeError(f"mask sequence must be (N,1,H,W), got {arr.shape}")
        uniq = np.unique(arr)
        if not np.all(np.isin(uniq, (0, 1))):
            raise ShapeError("mask sequence must be exactly binary")
        self.data = arr.astype(np.uint8)

    @property
    def frames(self):
        return self.data.shape[0]

    def coverage(self):
        return self.data.reshape(self.frames, -1).mean(axis=1)


def _polyline_arclen(points):
    pts = np.asarray(points, dtype=np.float64)
    seglen = np.sqrt(((pts[1:] - pts[:-1]) ** 2).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    return pts, cum


def _point_at_fraction(pts, cum, frac):
    total = cum[-1]
    if total <= 0:
        return tuple(pts[0])
    target = frac * total
    i = int(np.searchsorted(cum, target, side="right")) - 1
    i = min(max(i, 0), len(pts) - 2)
    seg = cum[i + 1] - cum[i]
    t = 0.0 if seg <= 0 else (target - cum[i]) / seg
    p = pts[i] * (1 - t) + pts[i + 1] * t
    return float(p[0]), float(p[1])


def _clamp_box(cx, cy, w, h):
    w = min(w, 1.0)
    h = min(h, 1.0)
    x1 = min(max(cx - w / 2.0, 0.0), 1.0 - w)
    y1 = min(max(cy - h / 2.0, 0.0), 1.0 - h)
    return Box(x1, y1, x1 + w, y1 + h)


def interpolate_boxes(traj: BoxTrajectory, length: int) -> list[Box]:
    """Per-frame boxes: centers sampled arc-length-uniformly along the path
    (polyline through keyed centers when no explicit path), sizes linear in
    frame index between the enclosing keyed boxes."""
    if length < 2:
        raise TrajectoryError("interpolate_boxes needs L >= 2")
    frames = sorted(traj.keys)
    centers = traj.path if traj.path is not None else [traj.keys[f].center for f in frames]
    pts, cum = _polyline_arclen(centers)
    boxes = []
    for i in range(length):
        frac = i / (length - 1)
        cx, cy = _point_at_fraction(pts, cum, frac)
        fidx = 1 + frac * (traj.length - 1)
        j = 0
        while j + 1 < len(frames) - 1 and frames[j + 1] <= fidx:
            j += 1
        f0, f1 = frames[j], frames[j + 1]
        t = 0.0 if f1 == f0 else min(max((fidx - f0) / (f1 - f0), 0.0), 1.0)
        b0, b1 = traj.keys[f0], traj.keys[f1]
        w = b0.width * (1 - t) + b1.width * t
        h = b0.height * (1 - t) + b1.height * t
        boxes.append(_clamp_box(cx, cy, w, h))
    # endpoints reproduce the keyed boxes exactly
    boxes[0] = traj.keys[1]
    boxes[-1] = traj.keys[traj.length]
    return boxes


def rasterize(boxes, height, width) -> MaskSequence:
    """Pixel-center rasterization; a nondegenerate box never rasterizes empty."""
    if height < 1 or width < 1:
        raise ShapeError("rasterize: H,W must be >= 1")
    cy = (np.arange(height) + 0.5) / height
    cx = (np.arange(width) + 0.5) / width
    out = np.zeros((len(boxes), 1, height, width), dtype=np.uint8)
    for k, box in enumerate(boxes):
        rows = (cy >= box.y1) & (cy < box.y2)
        cols = (cx >= box.x1) & (cx < box.x2)
        frame = np.outer(rows, cols)
        if not frame.any():
            bx, by = box.center
            r = min(int(by * height), height - 1)
            c = min(int(bx * width), width - 1)
            frame = np.zeros((height, width), dtype=bool)
            frame[r, c] = True
        out[k, 0] = frame
    return MaskSequence(out)


def dilate_to_box(object_mask, margin=1) -> Box:
    """Tight bounding box of the set pixels, expanded by `margin` pixels."""
    mask = np.asarray(object_mask)
    mask = mask.reshape(mask.shape[-2], mask.shape[-1])
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyMaskError("dilate_to_box: mask has no set pixels")
    h, w = mask.shape
    r1 = max(ys.min() - margin, 0)
    r2 = min(ys.max() + margin, h - 1)
    c1 = max(xs.min() - margin, 0)
    c2 = min(xs.max() + margin, w - 1)
    return Box(c1 / w, r1 / h, (c2 + 1) / w, (r2 + 1) / h)


def random_mask_sequence(rng_seed, frames, height, width,
                         count_range=(1, 3), size_range=(0.15, 0.5),
                         drift_range=0.05, coverage=(0.05, 0.5),
                         max_tries=200) -> MaskSequence:
    """Union of 1..k rectangles drifting frame to frame; coverage bounded."""
    lo, hi = coverage
    if not (0.0 <= lo < hi <= 1.0):
        raise ParameterError("random_mask_sequence: bad coverage bounds")
    rng = np.random.default_rng(rng_seed)
    for _ in range(max_tries):
        k = int(rng.integers(count_range[0], count_range[1] + 1))
        rects = []
        for _ in range(k):
            w = rng.uniform(*size_range)
            h = rng.uniform(*size_range)
            x = rng.uniform(0, 1 - w)
            y = rng.uniform(0, 1 - h)
            dx = rng.uniform(-drift_range, drift_range) if drift_range > 0 else 0.0
            dy = rng.uniform(-drift_range, drift_range) if drift_range > 0 else 0.0
            rects.append((x, y, w, h, dx, dy))
        seq = np.zeros((frames, 1, height, width), dtype=np.uint8)
        for f in range(frames):
            for (x, y, w, h, dx, dy) in rects:
                bx = min(max(x + dx * f, 0.0), 1.0 - w)
                by = min(max(y + dy * f, 0.0), 1.0 - h)
                box = Box(bx, by, bx + w, by + h)
                seq[f] |= rasterize([box], height, width).data[0]
        cov = seq.reshape(frames, -1).mean(axis=1)
        if np.all((cov >= lo) & (cov <= hi)):
            return MaskSequence(seq)
    raise ParameterError("random_mask_sequence: coverage bounds unsatisfiable")


def frame_mask(mode: FrameMaskMode, frames: int) -> list[bool]:
    """Known-frame flags per mode: T2V none, I2V first, K2V first and last."""
    minimum = {FrameMaskMode.T2V: 1, FrameMaskMode.I2V: 2, FrameMaskMode.K2V: 3}[mode]
    if frames < minimum:
        raise ShapeError(f"{mode.value} needs at least {minimum} frames, got {frames}")
    flags = [False] * frames
    if mode is FrameMaskMode.I2V:
        flags[0] = True
    elif mode is FrameMaskMode.K2V:
        flags[0] = True
        flags[-1] = True
    return flags


def compose_condition(video, region_mask: MaskSequence, known_flags):
    """Effective (m, x_m): known frames keep full content and a zero mask."""
    vid = np.asarray(video.data if type(video).__name__ == "Tensor" else video)
    m = region_mask.data.astype(vid.dtype).copy()
    if vid.shape[0] != m.shape[0] or vid.shape[-2:] != m.shape[-2:]:
        raise ShapeError(f"compose_condition: video {vid.shape} vs mask {m.shape}")
    if len(known_flags) != vid.shape[0]:
        raise ShapeError("compose_condition: known_flags length mismatch")
    for f, known in enumerate(known_flags):
        if known:
            m[f] = 0
    x_m = vid * (1.0 - m)
    return m, x_m
