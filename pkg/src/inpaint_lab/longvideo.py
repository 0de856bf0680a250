"""Long-video orchestration: keyframe in-betweening, co-denoised overlapping
windows, recurrent I2V chaining, and the K2V prior-noise initialization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError
from .masks import FrameMaskMode, MaskSequence, compose_condition, frame_mask
from .model import BranchKind, InpaintUNet
from .nd import as_tensor, bilinear_resize, fft3, gaussian_lpf, ifft3
from .diffusion import (
    ConditionBundle,
    DiffusionSchedule,
    SamplerConfig,
    cfg_combine,
    ddim_sample,
)
from .synth import Vocabulary

DIRECT_FRAME_CAP = 16


@dataclass
class NoiseInitConfig:
    enabled: bool = True
    tau_frac: float = 0.9
    sigma_frac: float = 0.25


@dataclass
class LongVideoConfig:
    window: int = 8
    strategy: str = "keyframe_inbetween"  # direct | multi | recur_i2v | keyframe_inbetween
    overlap: int = None
    noise_init: NoiseInitConfig = field(default_factory=NoiseInitConfig)

    def __post_init__(self):
        if self.window < 3:
            raise ParameterError("window must be >= 3")
        if self.overlap is None:
            self.overlap = self.window // 2
        if not 0 < self.overlap < self.window:
            raise ParameterError("overlap must lie in (0, window)")
        if self.strategy not in ("direct", "multi", "recur_i2v", "keyframe_inbetween"):
            raise ParameterError(f"unknown strategy {self.strategy!r}")


@dataclass
class KeyframePlan:
    indices: list[int]   # 0-based, first == 0 and last == N-1

    @property
    def intervals(self):
        return [(self.indices[i], self.indices[i + 1]) for i in range(len(self.indices) - 1)]


def pick_keyframes(n_frames, window) -> KeyframePlan:
    """ceil((N-1)/(window-1)) + 1 evenly spaced keyframes, endpoints pinned."""
    if n_frames < 2:
        raise ParameterError("need at least 2 frames")
    count = math.ceil((n_frames - 1) / (window - 1)) + 1
    idx = np.round(np.linspace(0, n_frames - 1, count)).astype(int).tolist()
    return KeyframePlan(indices=idx)


def _mask_bbox(mask_frame):
    ys, xs = np.nonzero(mask_frame[0])
    if ys.size == 0:
        return None
    return int(ys.min()), int(ys.max()) + 1, int(xs.min()), int(xs.max()) + 1


def _next_pow2(n):
    return 1 << (n - 1).bit_length()


def prior_noise_init(key_a, key_b, masks: MaskSequence, schedule: DiffusionSchedule,
                     tau_frac=0.9, sigma_frac=0.25, rng=None, source=None,
                     lpf_override=None):
    """Structured K2V initial noise for one interval.

    Builds per-frame interpolations of the two keyframes' masked regions,
    noises the sequence once at timestep tau*T, then keeps its low
    frequencies and fresh noise's high frequencies via the Gaussian LPF.
    lpf_override replaces the Gaussian mask (limit-case testing).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    n = masks.frames
    if n < 3:
        raise ParameterError("interval needs >= 3 frames")
    key_a = np.asarray(key_a, dtype=np.float32)
    key_b = np.asarray(key_b, dtype=np.float32)
    c, h, w = key_a.shape
    base = np.asarray(source, dtype=np.float32).copy() if source is not None \
        else np.zeros((n, c, h, w), dtype=np.float32)
    box_a = _mask_bbox(masks.data[0])
    box_b = _mask_bbox(masks.data[-1])
    heights, widths = [], []
    for f in range(n):
        bb = _mask_bbox(masks.data[f])
        if bb:
            heights.append(bb[1] - bb[0])
            widths.append(bb[3] - bb[2])
    filled = np.zeros(n, dtype=bool)
    if box_a and box_b and heights:
        med_h = max(int(np.median(heights)), 1)
        med_w = max(int(np.median(widths)), 1)
        reg_a = bilinear_resize(as_tensor(key_a[:, box_a[0]:box_a[1], box_a[2]:box_a[3]]),
                                med_h, med_w).data
        reg_b = bilinear_resize(as_tensor(key_b[:, box_b[0]:box_b[1], box_b[2]:box_b[3]]),
                                med_h, med_w).data
        base[0] = key_a
        base[-1] = key_b
        filled[0] = filled[-1] = True
        for f in range(1, n - 1):
            bb = _mask_bbox(masks.data[f])
            if bb is None:
                continue  # empty mask: frame falls back to pure noise
            eta = f / (n - 1)
            blend = (1.0 - eta) * reg_a + eta * reg_b
            y0, y1, x0, x1 = bb
            patch = bilinear_resize(as_tensor(blend), y1 - y0, x1 - x0).data
            base[f, :, y0:y1, x0:x1] = patch
            filled[f] = True
    tau = int(round(tau_frac * schedule.t_train))
    eps = rng.standard_normal(base.shape).astype(np.float32)
    x_tau = schedule.add_noise(base, tau, eps)
    # pad frames to a power of two for the radix-2 transform, then crop back
    n_pad = _next_pow2(n)
    if lpf_override is not None:
        lpf = np.broadcast_to(np.asarray(lpf_override, dtype=np.float32),
                              (n_pad, h, w)).copy()
    else:
        lpf = gaussian_lpf((n_pad, h, w), sigma_frac).data
    out = np.empty_like(eps)
    for ch in range(c):
        xt = np.concatenate([x_tau[:, ch], np.repeat(x_tau[-1:, ch], n_pad - n, axis=0)]) \
            if n_pad != n else x_tau[:, ch]
        ep = np.concatenate([eps[:, ch], np.repeat(eps[-1:, ch], n_pad - n, axis=0)]) \
            if n_pad != n else eps[:, ch]
        f_low = fft3(as_tensor(xt)).scaled(lpf)
        f_high = fft3(as_tensor(ep)).scaled(1.0 - lpf)
        mixed = ifft3(f_low + f_high).data
        out[:, ch] = mixed[:n]
    out[~filled] = eps[~filled]
    return out


@dataclass
class LongVideoJob:
    video: np.ndarray          # (N, 3, H, W) source
    region_mask: MaskSequence  # (N, 1, H, W)
    tokens: list
    branch: BranchKind = BranchKind.INSERTION
    base_mode: FrameMaskMode = FrameMaskMode.T2V   # stage-1 / first-clip mode
    cam: object = None
    attn_hook_factory: object = None   # callable(frame_indices) -> hook


def _bundle(job: LongVideoJob, idx, mode: FrameMaskMode, video_override=None):
    vid = job.video[idx] if video_override is None else video_override
    masks = MaskSequence(job.region_mask.data[idx])
    flags = frame_mask(mode, len(idx))
    m, x_m = compose_condition(vid, masks, flags)
    hook = job.attn_hook_factory(idx) if job.attn_hook_factory else None
    return ConditionBundle(m=m, x_m=x_m, tokens=job.tokens, branch=job.branch,
                           cam=job.cam, attn_hook=hook, known_flags=flags)


def _sample_clip(model, job, idx, mode, sampler, schedule, video_override=None,
                 init_noise=None):
    cond = _bundle(job, idx, mode, video_override)
    return ddim_sample(model, cond, sampler, schedule, init_noise=init_noise)


def run_strategy(model: InpaintUNet, job: LongVideoJob, config: LongVideoConfig,
                 sampler: SamplerConfig, schedule: DiffusionSchedule | None = None):
    """Inpaint a video longer than the model window; see LongVideoConfig.strategy."""
    schedule = schedule or DiffusionSchedule(model.config.t_scale)
    n = job.video.shape[0]
    if job.region_mask.frames != n:
        raise ShapeError("mask frame count must match the video")
    window = config.window

    if n <= window:
        out = _sample_clip(model, job, list(range(n)), job.base_mode, sampler, schedule)
        return _restore_outside(out, job)

    if config.strategy == "direct":
        if n > DIRECT_FRAME_CAP:
            raise ParameterError(
                f"direct strategy refuses {n} frames (cap {DIRECT_FRAME_CAP}); "
                f"use multi, recur_i2v, or keyframe_inbetween")
        out = _sample_clip(model, job, list(range(n)), job.base_mode, sampler, schedule)
        return _restore_outside(out, job)

    if config.strategy == "multi":
        return _restore_outside(_run_multi(model, job, config, sampler, schedule), job)

    if config.strategy == "recur_i2v":
        return _restore_outside(_run_recur(model, job, config, sampler, schedule), job)

    return _restore_outside(_run_keyframe(model, job, config, sampler, schedule), job)


def _restore_outside(out, job: LongVideoJob):
    """Everything outside the inpainting masks equals the source exactly."""
    m = job.region_mask.data.astype(np.float32)
    return (m * out + (1.0 - m) * job.video).astype(np.float32)


def _clip_starts(n, window, stride):
    starts = list(range(0, n - window + 1, stride))
    if starts[-1] != n - window:
        starts.append(n - window)
    return starts


def _run_multi(model, job, config, sampler, schedule):
    """MultiDiffusion-style: co-denoise overlapped clips, average overlaps per step."""
    window, overlap = config.window, config.overlap
    starts = _clip_starts(job.video.shape[0], window, window - overlap)
    n = job.video.shape[0]
    rng = np.random.default_rng(sampler.seed)
    x = rng.standard_normal(job.video.shape).astype(np.float32)
    flags = frame_mask(job.base_mode, n)
    m_full, xm_full = compose_condition(job.video, job.region_mask, flags)
    null_tokens = Vocabulary.null_prompt()
    taus = np.round(np.linspace(schedule.t_train, 0, sampler.steps + 1)).astype(int)
    known = [i for i, k in enumerate(flags) if k]
    for si in range(sampler.steps):
        t, t_prev = int(taus[si]), int(taus[si + 1])
        for k in known:
            noise = rng.standard_normal(x.shape[1:]).astype(np.float32)
            x[k] = schedule.add_noise(xm_full[k], t, noise)
        acc = np.zeros_like(x)
        cnt = np.zeros((n, 1, 1, 1), dtype=np.float32)
        for s0 in starts:
            idx = list(range(s0, s0 + window))
            hook = job.attn_hook_factory(idx) if job.attn_hook_factory else None
            eps_c = model.forward(x[idx], m_full[idx], xm_full[idx], job.tokens,
                                  t=max(t, 1), branch=job.branch, attn_hook=hook).data
            eps_u = model.forward(x[idx], m_full[idx], xm_full[idx], null_tokens,
                                  t=max(t, 1), branch=job.branch).data
            eps_hat = cfg_combine(eps_u, eps_c, sampler.cfg_scale).astype(np.float32)
            a_t, s_t = schedule.alpha[t], schedule.sigma[t]
            a_p, s_p = schedule.alpha[t_prev], schedule.sigma[t_prev]
            x0_hat = np.clip((x[idx] - np.float32(s_t) * eps_hat) / np.float32(a_t), -1, 1)
            acc[idx] += np.float32(a_p) * x0_hat + np.float32(s_p) * eps_hat
            cnt[idx] += 1.0
        x = acc / cnt
    for k in known:
        x[k] = xm_full[k]
    return np.clip(x, -1, 1).astype(np.float32)


def _run_recur(model, job, config, sampler, schedule):
    """Sequential clips; each conditions on the previous clip's last frame (I2V)."""
    window = config.window
    n = job.video.shape[0]
    out = job.video.copy()
    start = 0
    first = True
    clip_seed = sampler.seed
    while start < n - 1 or first:
        end = min(start + window, n)
        idx = list(range(start, end))
        if len(idx) < 2:
            break
        clip_sampler = SamplerConfig(steps=sampler.steps, cfg_scale=sampler.cfg_scale,
                                     seed=clip_seed, camera_cfg=sampler.camera_cfg,
                                     camera_cutoff_frac=sampler.camera_cutoff_frac)
        clip_seed += 1
        if first:
            res = _sample_clip(model, job, idx, job.base_mode, clip_sampler, schedule)
            first = False
        else:
            vid = out[idx].copy()  # frame idx[0] already inpainted by previous clip
            res = _sample_clip(model, job, idx, FrameMaskMode.I2V, clip_sampler,
                               schedule, video_override=vid)
        out[idx] = res
        if end == n:
            break
        start = end - 1  # the conditioning frame overlaps into the next clip
    return out


def _run_keyframe(model, job, config, sampler, schedule):
    """Stage 1: inpaint keyframes as one contiguous clip; stage 2: K2V per interval."""
    n = job.video.shape[0]
    plan = pick_keyframes(n, config.window)
    out = job.video.copy()
    stage1 = _sample_clip(model, job, plan.indices, job.base_mode, sampler, schedule)
    for j, k in enumerate(plan.indices):
        out[k] = stage1[j]
    interval_seed = sampler.seed + 1
    for (a, b) in plan.intervals:
        if b - a < 2:
            continue
        idx = list(range(a, b + 1))
        vid = out[idx].copy()
        init = None
        if config.noise_init.enabled:
            masks = MaskSequence(job.region_mask.data[idx])
            init = prior_noise_init(out[a], out[b], masks, schedule,
                                    tau_frac=config.noise_init.tau_frac,
                                    sigma_frac=config.noise_init.sigma_frac,
                                    rng=np.random.default_rng(interval_seed),
                                    source=vid)
        clip_sampler = SamplerConfig(steps=sampler.steps, cfg_scale=sampler.cfg_scale,
                                     seed=interval_seed, camera_cfg=sampler.camera_cfg,
                                     camera_cutoff_frac=sampler.camera_cutoff_frac)
        interval_seed += 1
        res = _sample_clip(model, job, idx, FrameMaskMode.K2V, clip_sampler, schedule,
                           video_override=vid, init_noise=init)
        out[idx[1:-1]] = res[1:-1]  # keyframes are never rewritten
    return out
