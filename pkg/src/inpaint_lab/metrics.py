"""Deterministic desk-scale metric proxies: PSNR, temporal consistency,
color-threshold grounding, and report assembly. Learned perceptual metrics
are out of scope; proxy columns are prefixed to avoid conflation."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError
from .masks import Box, MaskSequence
from .nd import as_tensor, bilinear_resize
from .synth import Vocabulary

PSNR_CAP = 99.0


def psnr(a, b) -> float:
    """10*log10(1/MSE) with values mapped [-1,1] -> [0,1]; identical clips cap at 99."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError("psnr: shape mismatch")
    mse = float((((x - y) / 2.0) ** 2).mean())
    if mse <= 0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def _region_patch(frame, mask_frame, size=8):
    """Crop the mask bbox (or the whole frame) and resize to size x size."""
    img = frame
    if mask_frame is not None:
        ys, xs = np.nonzero(mask_frame[0])
        if ys.size == 0:
            return None
        img = frame[:, ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    return bilinear_resize(as_tensor(img.astype(np.float32)), size, size).data


def temp_cons(video, regions: MaskSequence | None = None, reference="previous") -> float:
    """Mean cosine similarity of mean-subtracted 8x8 region patches.

    reference="previous" compares consecutive frames; "first" compares every
    frame to frame 0. Pairs with an empty region are skipped.
    """
    vid = np.asarray(video)
    n = vid.shape[0]
    if n < 2:
        raise ShapeError("temp_cons needs >= 2 frames")
    if reference not in ("previous", "first"):
        raise ParameterError("reference must be 'previous' or 'first'")
    sims = []
    for i in range(1, n):
        j = i - 1 if reference == "previous" else 0
        pa = _region_patch(vid[j], regions.data[j] if regions else None)
        pb = _region_patch(vid[i], regions.data[i] if regions else None)
        if pa is None or pb is None:
            continue
        va = pa.ravel() - pa.mean()
        vb = pb.ravel() - pb.mean()
        denom = math.sqrt(float((va * va).sum()) * float((vb * vb).sum()))
        if denom <= 1e-12:
            sims.append(1.0 if float(np.abs(va - vb).max()) < 1e-9 else 0.0)
            continue
        sims.append(float((va * vb).sum()) / denom)
    if not sims:
        raise ParameterError("temp_cons: every comparison had an empty region")
    return float(np.mean(sims))


def keyframe_consistency(video, regions: MaskSequence | None = None) -> float:
    """Interval proxy: each intermediate frame vs the nearer endpoint frame."""
    vid = np.asarray(video)
    n = vid.shape[0]
    if n < 3:
        raise ShapeError("keyframe_consistency needs >= 3 frames")
    sims = []
    for i in range(1, n - 1):
        ref = 0 if i <= (n - 1) / 2 else n - 1
        pa = _region_patch(vid[ref], regions.data[ref] if regions else None)
        pb = _region_patch(vid[i], regions.data[i] if regions else None)
        if pa is None or pb is None:
            continue
        va = pa.ravel() - pa.mean()
        vb = pb.ravel() - pb.mean()
        denom = math.sqrt(float((va * va).sum()) * float((vb * vb).sum()))
        sims.append(float((va * vb).sum()) / denom if denom > 1e-12 else 1.0)
    return float(np.mean(sims)) if sims else 0.0


# -- color-threshold detector ------------------------------------------

_CROSS = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))  # 4-connected element


def _binary_erode(mask):
    padded = np.pad(mask, 1, constant_values=False)
    out = np.ones_like(mask)
    for dy, dx in _CROSS:
        out &= padded[1 + dy:1 + dy + mask.shape[0], 1 + dx:1 + dx + mask.shape[1]]
    return out


def _binary_dilate(mask):
    padded = np.pad(mask, 1, constant_values=False)
    out = np.zeros_like(mask)
    for dy, dx in _CROSS:
        out |= padded[1 + dy:1 + dy + mask.shape[0], 1 + dx:1 + dx + mask.shape[1]]
    return out


def _largest_component(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    current = 0
    best_size, best = 0, None
    for r in range(h):
        for c in range(w):
            if mask[r, c] and labels[r, c] == 0:
                current += 1
                stack = [(r, c)]
                labels[r, c] = current
                cells = []
                while stack:
                    y, x = stack.pop()
                    cells.append((y, x))
                    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and labels[yy, xx] == 0:
                            labels[yy, xx] = current
                            stack.append((yy, xx))
                if len(cells) > best_size:
                    best_size = len(cells)
                    best = cells
    if best is None:
        return None
    comp = np.zeros((h, w), dtype=bool)
    for y, x in best:
        comp[y, x] = True
    return comp


def color_dominance(frame01, color):
    """Signature-channel dominance map in [0,1] units per the palette."""
    r, g, b = frame01[0], frame01[1], frame01[2]
    if color == "red":
        return r - np.maximum(g, b)
    if color == "green":
        return g - np.maximum(r, b)
    if color == "blue":
        return b - np.maximum(r, g)
    if color == "yellow":
        return np.minimum(r, g) - b
    raise ParameterError(f"no color signature for {color!r}")


def detect_boxes(video, color, threshold=0.3, min_pixels=4):
    """Per-frame Box (normalized) of the largest thresholded component, or None."""
    if color not in Vocabulary.COLORS:
        raise ParameterError(f"unknown color {color!r}")
    vid = np.asarray(video, dtype=np.float32)
    n, _, h, w = vid.shape
    out = []
    for f in range(n):
        frame01 = (vid[f] + 1.0) / 2.0
        mask = color_dominance(frame01, color) > threshold
        mask = _binary_dilate(_binary_erode(mask))
        comp = _largest_component(mask)
        if comp is None or comp.sum() < min_pixels:
            out.append(None)
            continue
        ys, xs = np.nonzero(comp)
        out.append(Box(xs.min() / w, ys.min() / h, (xs.max() + 1) / w, (ys.max() + 1) / h))
    return out


def miou_ap50(detections, targets):
    """Single-object grounding: mean IoU and fraction of frames with IoU > 0.5."""
    if len(detections) != len(targets):
        raise ShapeError("miou_ap50: frame count mismatch")
    ious = []
    for det, tgt in zip(detections, targets):
        if det is None:
            ious.append(0.0)
        else:
            ious.append(det.iou(tgt))
    miou = float(np.mean(ious)) if ious else 0.0
    ap50 = float(np.mean([1.0 if v > 0.5 else 0.0 for v in ious])) if ious else 0.0
    return miou, ap50


def color_match_fraction(video, region: MaskSequence, color, threshold=0.3) -> float:
    """Prompt-faithfulness proxy: in-mask pixels matching the color signature."""
    vid = np.asarray(video, dtype=np.float32)
    hits, total = 0, 0
    for f in range(vid.shape[0]):
        sel = region.data[f, 0].astype(bool)
        if not sel.any():
            continue
        frame01 = (vid[f] + 1.0) / 2.0
        dom = color_dominance(frame01, color)
        hits += int((dom[sel] > threshold).sum())
        total += int(sel.sum())
    return hits / total if total else 0.0


# -- reports ------------------------------------------------------------

@dataclass
class MetricReport:
    job_id: str
    checkpoint: str = ""
    seeds: list = field(default_factory=list)
    scalars: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)

    def __post_init__(self):
        for key, val in self.scalars.items():
            if not math.isfinite(float(val)):
                raise ParameterError(f"metric {key} is not finite")

    def config_hash(self):
        blob = json.dumps({"job": self.job_id, "checkpoint": self.checkpoint,
                           "seeds": self.seeds}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def to_json(self) -> str:
        return json.dumps({
            "job_id": self.job_id,
            "checkpoint": self.checkpoint,
            "seeds": self.seeds,
            "config_hash": self.config_hash(),
            "scalars": {k: self.scalars[k] for k in sorted(self.scalars)},
            "series": {k: list(map(float, v)) for k, v in sorted(self.series.items())},
        }, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = sorted(self.scalars)
        writer.writerow(["job_id", "config_hash", *cols])
        writer.writerow([self.job_id, self.config_hash(),
                         *[f"{self.scalars[c]:.6f}" for c in cols]])
        return buf.getvalue()


def assemble_report(job_id, scalars=None, series=None, checkpoint="", seeds=None,
                    out_dir=None) -> MetricReport:
    report = MetricReport(job_id=job_id, checkpoint=str(checkpoint),
                          seeds=list(seeds or []), scalars=dict(scalars or {}),
                          series=dict(series or {}))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(report.to_json())
        (out / "metrics.csv").write_text(report.to_csv())
    return report
