"""Self-supervised camera motion: crop-window augmentation, parameter sampling,
analytic ground-truth transforms, and a phase-correlation shift estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleParameters, ShapeError, UndefinedShiftError
from .model import CamParams
from .nd import bilinear_resize, fft3, ifft3
from .nd.tensor import Tensor, as_tensor


@dataclass
class CropWindowSequence:
    """Per-frame crop boxes before and after the joint min-max normalization."""

    raw: np.ndarray          # (f, 4) [x1, y1, x2, y2] relative coordinates
    normalized: np.ndarray   # (f, 4) spanning exactly [0, 1] per axis

    def frame_box(self, i):
        return tuple(float(v) for v in self.normalized[i])


@dataclass
class FrameTransform:
    """Consecutive-pair motion: scale and translation in output pixels."""

    scale: float
    dx: float
    dy: float


def crop_windows(cam: CamParams, frames: int) -> CropWindowSequence:
    """The augmentation's window trace: linspace endpoints then min-max normalize."""
    if frames < 2:
        raise ShapeError("camera augmentation needs f >= 2")
    boxes = np.zeros((frames, 4), dtype=np.float64)
    boxes[:, 0] = np.linspace(0.0, cam.cx + (1.0 - 1.0 / cam.cz) / 2.0, frames)
    boxes[:, 1] = np.linspace(0.0, cam.cy + (1.0 - 1.0 / cam.cz) / 2.0, frames)
    boxes[:, 2] = np.linspace(1.0, cam.cx + (1.0 + 1.0 / cam.cz) / 2.0, frames)
    boxes[:, 3] = np.linspace(1.0, cam.cy + (1.0 + 1.0 / cam.cz) / 2.0, frames)
    normalized = np.zeros_like(boxes)
    min_x, max_x = boxes[:, 0::2].min(), boxes[:, 0::2].max()
    min_y, max_y = boxes[:, 1::2].min(), boxes[:, 1::2].max()
    if max_x - min_x <= 0 or max_y - min_y <= 0:
        raise InfeasibleParameters("degenerate window span")
    normalized[:, 0::2] = (boxes[:, 0::2] - min_x) / (max_x - min_x)
    normalized[:, 1::2] = (boxes[:, 1::2] - min_y) / (max_y - min_y)
    return CropWindowSequence(raw=boxes, normalized=normalized)


def aug_with_cam_motion(src_video, cam: CamParams, out_h, out_w) -> np.ndarray:
    """Crop-window camera simulation; integer truncation of crop coordinates
    is kept as-is from the reference procedure (<= 1 px bias accepted)."""
    src = src_video.data if isinstance(src_video, Tensor) else np.asarray(src_video)
    if src.ndim != 4:
        raise ShapeError("aug_with_cam_motion expects (f, C, H, W)")
    f, _, src_h, src_w = src.shape
    windows = crop_windows(cam, f)
    out = np.zeros((f, src.shape[1], out_h, out_w), dtype=np.float32)
    scale = np.array([src_w, src_h, src_w, src_h], dtype=np.float64)
    for i in range(f):
        x1, y1, x2, y2 = windows.normalized[i] * scale
        xi1, yi1, xi2, yi2 = int(x1), int(y1), int(x2), int(y2)
        if xi2 - xi1 < 1 or yi2 - yi1 < 1:
            raise InfeasibleParameters(
                f"crop window collapsed to {xi2 - xi1}x{yi2 - yi1} source pixels at frame {i}")
        crop = src[i][:, yi1:yi2, xi1:xi2]
        out[i] = bilinear_resize(as_tensor(crop), out_h, out_w).data
    return out


def sample_cam_params(rng) -> CamParams:
    """Pan components are 0 w.p. 1/3 else U(-1,1); zoom 1 w.p. 1/3 else 2^U(-1,1)."""
    cx = 0.0 if rng.random() < 1 / 3 else float(rng.uniform(-1.0, 1.0))
    cy = 0.0 if rng.random() < 1 / 3 else float(rng.uniform(-1.0, 1.0))
    cz = 1.0 if rng.random() < 1 / 3 else float(2.0 ** rng.uniform(-1.0, 1.0))
    return CamParams(cx, cy, cz)


def gt_transforms(cam: CamParams, frames: int, out_h, out_w) -> list[FrameTransform]:
    """Analytic per-pair motion from the normalized windows (no truncation)."""
    win = crop_windows(cam, frames).normalized
    out = []
    for i in range(frames - 1):
        w_i = win[i, 2] - win[i, 0]
        w_n = win[i + 1, 2] - win[i + 1, 0]
        h_i = win[i, 3] - win[i, 1]
        out.append(FrameTransform(
            scale=w_i / w_n,
            dx=(win[i + 1, 0] - win[i, 0]) / w_i * out_w,
            dy=(win[i + 1, 1] - win[i, 1]) / h_i * out_h,
        ))
    return out


def _phase_corr_surface(a, b):
    """Cross-power spectrum correlation surface; peak encodes the shift a -> b."""
    fa = fft3(as_tensor(a[None, :, :]))
    fb = fft3(as_tensor(b[None, :, :]))
    # conj(fa) * fb, normalized to unit magnitude
    re = fa.real * fb.real + fa.imag * fb.imag
    im = fa.real * fb.imag - fa.imag * fb.real
    mag = np.sqrt(re * re + im * im)
    mag[mag < 1e-12] = 1.0
    from .nd.fft import ComplexField

    surface = ifft3(ComplexField(re / mag, im / mag), dtype=np.float64)
    return surface.data[0]


def _parabolic_refine(values, peak):
    """1D three-point parabola around an (circular) integer peak index."""
    n = len(values)
    y0 = values[(peak - 1) % n]
    y1 = values[peak]
    y2 = values[(peak + 1) % n]
    denom = y0 - 2.0 * y1 + y2
    if abs(denom) < 1e-12:
        return 0.0
    delta = 0.5 * (y0 - y2) / denom
    return float(np.clip(delta, -0.5, 0.5))


def estimate_shift(frame_a, frame_b):
    """(dx, dy) in pixels such that frame_b ~ frame_a shifted by (dx, dy).

    Phase correlation with parabolic sub-pixel refinement; frames must share
    power-of-two dims. Averages channels of (C, H, W) inputs first.
    """
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("estimate_shift: shape mismatch")
    if a.ndim == 3:
        a = a.mean(axis=0)
        b = b.mean(axis=0)
    if a.std() < 1e-9 or b.std() < 1e-9:
        raise UndefinedShiftError("flat frame: shift undefined")
    surface = _phase_corr_surface(a, b)
    h, w = surface.shape
    peak = np.unravel_index(np.argmax(surface), surface.shape)
    ry = _parabolic_refine(surface[:, peak[1]], int(peak[0]))
    rx = _parabolic_refine(surface[peak[0], :], int(peak[1]))
    # refinements below float noise are artifacts; integer shifts stay exact
    if abs(ry) < 1e-9:
        ry = 0.0
    if abs(rx) < 1e-9:
        rx = 0.0
    dy = peak[0] + ry
    dx = peak[1] + rx
    if dy > h / 2:
        dy -= h
    if dx > w / 2:
        dx -= w
    return float(dx), float(dy)


def estimate_zoom(frame_a, frame_b, scales=None):
    """Discrete scale search: the scale whose center-crop resize of b best
    correlates with a. Used for zoom evaluation of generated clips."""
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.ndim == 3:
        a = a.mean(axis=0)
        b = b.mean(axis=0)
    h, w = a.shape
    if scales is None:
        scales = np.exp(np.linspace(math.log(0.8), math.log(1.25), 12))
    best, best_scale = -np.inf, 1.0
    for s in scales:
        ch, cw = max(int(round(h / s)), 2), max(int(round(w / s)), 2)
        ch, cw = min(ch, h), min(cw, w)
        y0, x0 = (h - ch) // 2, (w - cw) // 2
        crop = b[y0:y0 + ch, x0:x0 + cw]
        resized = bilinear_resize(as_tensor(crop), h, w).data
        am = a - a.mean()
        rm = resized - resized.mean()
        denom = math.sqrt((am * am).sum() * (rm * rm).sum())
        score = float((am * rm).sum() / denom) if denom > 0 else -np.inf
        if score > best:
            best, best_scale = score, float(s)
    return best_scale


def flow_error(video, cam: CamParams) -> float:
    """Mean distance between estimated and analytic per-pair camera shifts,
    normalized by frame width. The camera shift is minus the content shift."""
    vid = video.data if isinstance(video, Tensor) else np.asarray(video)
    f, _, h, w = vid.shape
    gts = gt_transforms(cam, f, h, w)
    errs = []
    for i in range(f - 1):
        dx_c, dy_c = estimate_shift(vid[i], vid[i + 1])
        est_dx, est_dy = -dx_c, -dy_c
        errs.append(math.hypot(est_dx - gts[i].dx, est_dy - gts[i].dy))
    return float(np.mean(errs) / w)
