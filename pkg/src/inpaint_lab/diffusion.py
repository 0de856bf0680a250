"""Noise schedules, masked-loss training, DDIM sampling with CFG, blending baseline."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError
from .masks import (
    Box,
    FrameMaskMode,
    MaskSequence,
    compose_condition,
    frame_mask,
    random_mask_sequence,
    rasterize,
)
from .model import BranchKind, CamParams, InpaintUNet, save_checkpoint
from .nd import GradientTape, tmean, as_tensor
from .synth import Corpus, Vocabulary


class DiffusionSchedule:
    """Linear-beta DDPM tables; index 0 is the identity level (alpha_bar=1)."""

    def __init__(self, t_train=1000, beta_start=1e-4, beta_end=0.02):
        self.t_train = int(t_train)
        betas = np.linspace(beta_start, beta_end, self.t_train, dtype=np.float64)
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        self.alpha_bar = alpha_bar
        self.alpha = np.sqrt(alpha_bar)            # sqrt(cumprod) multiplies x0
        self.sigma = np.sqrt(1.0 - alpha_bar)      # multiplies the noise

    def add_noise(self, x0, t, eps):
        if not 0 <= t <= self.t_train:
            raise ParameterError(f"timestep {t} outside [0, {self.t_train}]")
        x0 = np.asarray(x0)
        eps = np.asarray(eps)
        if x0.shape != eps.shape:
            raise ShapeError("add_noise: x0 and eps shapes differ")
        a = np.float32(self.alpha[t])
        s = np.float32(self.sigma[t])
        return a * x0 + s * eps


def cfg_combine(eps_uncond, eps_cond, scale):
    """Classifier-free guidance: uncond + s * (cond - uncond).

    The boundary scales are exact: s=1 returns the conditional prediction
    bit-for-bit and s=0 the unconditional one.
    """
    u = np.asarray(eps_uncond)
    c = np.asarray(eps_cond)
    if u.shape != c.shape:
        raise ShapeError("cfg_combine: shape mismatch")
    if scale == 1.0:
        return c.copy()
    if scale == 0.0:
        return u.copy()
    return u + scale * (c - u)


def camera_cutoff_gate(t, cutoff_fraction, t_train):
    """Camera module applies only early (t >= cutoff * T)."""
    return t >= cutoff_fraction * t_train


@dataclass
class SamplerConfig:
    steps: int = 30
    cfg_scale: float = 8.0
    eta: float = 0.0  # deterministic DDIM only
    seed: int = 0
    camera_cfg: bool = True
    camera_cutoff_frac: float = 0.85

    def __post_init__(self):
        if self.steps < 1:
            raise ParameterError("sampler needs steps >= 1")
        if not 0.0 <= self.camera_cutoff_frac <= 1.0:
            raise ParameterError("camera cutoff fraction must lie in [0,1]")
        if self.eta != 0.0:
            raise ParameterError("stochastic DDIM (eta > 0) is out of scope")


@dataclass
class ConditionBundle:
    """Everything the sampler needs besides the evolving x_t."""

    m: np.ndarray
    x_m: np.ndarray
    tokens: list
    branch: BranchKind = BranchKind.COMPLETION
    cam: CamParams | None = None
    attn_hook: object = None
    known_flags: list = None

    def __post_init__(self):
        if self.known_flags is None:
            self.known_flags = [False] * self.m.shape[0]


def _timestep_path(t_train, steps):
    return np.round(np.linspace(t_train, 0, steps + 1)).astype(int)


def ddim_sample(model: InpaintUNet, cond: ConditionBundle, sampler: SamplerConfig,
                schedule: DiffusionSchedule, init_noise=None, progress=None):
    """Deterministic DDIM; known frames re-imposed at every step and exactly at the end."""
    shape = cond.x_m.shape
    rng = np.random.default_rng(sampler.seed)
    if init_noise is not None:
        if tuple(init_noise.shape) != tuple(shape):
            raise ShapeError("init_noise shape mismatch")
        x = np.asarray(init_noise, dtype=np.float32).copy()
    else:
        x = rng.standard_normal(shape).astype(np.float32)
    known = [i for i, k in enumerate(cond.known_flags) if k]
    null_tokens = Vocabulary.null_prompt()
    taus = _timestep_path(schedule.t_train, sampler.steps)
    for i in range(sampler.steps):
        t, t_prev = int(taus[i]), int(taus[i + 1])
        for k in known:
            noise = rng.standard_normal(shape[1:]).astype(np.float32)
            x[k] = schedule.add_noise(cond.x_m[k], t, noise)
        cam_c, cam_u = None, None
        if cond.cam is not None and model.config.camera_module_enabled:
            if camera_cutoff_gate(t, sampler.camera_cutoff_frac, schedule.t_train):
                cam_c = cond.cam
                cam_u = CamParams.static() if sampler.camera_cfg else None
        eps_c = model.forward(x, cond.m, cond.x_m, cond.tokens, cam=cam_c, t=max(t, 1),
                              branch=cond.branch, attn_hook=cond.attn_hook).data
        eps_u = model.forward(x, cond.m, cond.x_m, null_tokens, cam=cam_u, t=max(t, 1),
                              branch=cond.branch).data
        eps_hat = cfg_combine(eps_u, eps_c, sampler.cfg_scale).astype(np.float32)
        a_t, s_t = schedule.alpha[t], schedule.sigma[t]
        a_p, s_p = schedule.alpha[t_prev], schedule.sigma[t_prev]
        x0_hat = (x - np.float32(s_t) * eps_hat) / np.float32(a_t)
        x0_hat = np.clip(x0_hat, -1.0, 1.0)
        x = np.float32(a_p) * x0_hat + np.float32(s_p) * eps_hat
        if progress is not None:
            progress(i + 1, sampler.steps)
    for k in known:
        x[k] = cond.x_m[k]
    return np.clip(x, -1.0, 1.0).astype(np.float32)


def latent_blend_baseline(model: InpaintUNet, video, region_mask: MaskSequence,
                          tokens, sampler: SamplerConfig, schedule: DiffusionSchedule,
                          branch: BranchKind = BranchKind.COMPLETION):
    """Blending baseline: plain generation, known regions noised-in each step."""
    src = np.asarray(video, dtype=np.float32)
    mask = region_mask.data.astype(np.float32)
    rng = np.random.default_rng(sampler.seed)
    x = rng.standard_normal(src.shape).astype(np.float32)
    full_m = np.ones_like(mask)
    zero_xm = np.zeros_like(src)
    null_tokens = Vocabulary.null_prompt()
    taus = _timestep_path(schedule.t_train, sampler.steps)
    for i in range(sampler.steps):
        t, t_prev = int(taus[i]), int(taus[i + 1])
        eps_c = model.forward(x, full_m, zero_xm, tokens, t=max(t, 1), branch=branch).data
        eps_u = model.forward(x, full_m, zero_xm, null_tokens, t=max(t, 1), branch=branch).data
        eps_hat = cfg_combine(eps_u, eps_c, sampler.cfg_scale).astype(np.float32)
        a_t, s_t = schedule.alpha[t], schedule.sigma[t]
        a_p, s_p = schedule.alpha[t_prev], schedule.sigma[t_prev]
        x0_hat = np.clip((x - np.float32(s_t) * eps_hat) / np.float32(a_t), -1.0, 1.0)
        x = np.float32(a_p) * x0_hat + np.float32(s_p) * eps_hat
        if t_prev > 0:
            noise = rng.standard_normal(src.shape).astype(np.float32)
            outside = schedule.add_noise(src, t_prev, noise)
            x = mask * x + (1.0 - mask) * outside
    x = mask * x + (1.0 - mask) * src
    return np.clip(x, -1.0, 1.0).astype(np.float32)


# -- training ----------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 1
    learning_rate: float = 2e-3
    lambda_loss: float = 2.0
    mode_probs: tuple = (1 / 3, 1 / 3, 1 / 3)      # T2V, I2V, K2V
    insertion_prob: float = 0.5
    full_mask_prob: float = 0.25   # completion arm: full-frame mask (plain T2V)
    cond_dropout: float = 0.1
    t_range: tuple = None                          # defaults to [1, T]
    clip_lengths: tuple = (4, 8)
    frame_strides: tuple = (1, 4)
    seed: int = 0
    checkpoint_every: int = 1000
    eval_every: int = 250
    box_margin: int = 1

    def __post_init__(self):
        if abs(sum(self.mode_probs) - 1.0) > 1e-9:
            raise ParameterError("mode probabilities must sum to 1")
        if self.lambda_loss < 0:
            raise ParameterError("lambda_loss must be >= 0")


class Adam:
    """Bias-corrected first/second-moment adaptive optimizer."""

    def __init__(self, params: dict, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * (g * g)
            mhat = self.m[k] / b1c
            vhat = self.v[k] / b2c
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


@dataclass
class TrainSample:
    video: np.ndarray
    region_mask: MaskSequence
    tokens: list
    cam: CamParams | None = None


def masked_weighted_loss(eps_true, eps_pred, m, lambda_loss):
    """Mean of squared residual weighted by (lambda * m + 1)."""
    resid = as_tensor(eps_true) - eps_pred
    weight = as_tensor(lambda_loss * np.asarray(m, dtype=np.float32) + 1.0)
    return tmean(resid * resid * weight)


def train_step(model: InpaintUNet, batch: list, mode: FrameMaskMode, branch: BranchKind,
               rng, schedule: DiffusionSchedule, config: TrainConfig, optimizer: Adam,
               param_filter=None, with_camera=False):
    """One optimization step over a batch of clips; returns the scalar loss."""
    params = optimizer.params
    names = list(params)
    losses = []
    with GradientTape() as tape:
        tape.watch(*params.values())
        for sample in batch:
            n = sample.video.shape[0]
            flags = frame_mask(mode, n)
            m, x_m = compose_condition(sample.video, sample.region_mask, flags)
            t = int(rng.integers(*(config.t_range or (1, schedule.t_train + 1))))
            eps = rng.standard_normal(sample.video.shape).astype(np.float32)
            x_t = schedule.add_noise(sample.video, t, eps)
            tokens = sample.tokens
            if rng.random() < config.cond_dropout:
                tokens = Vocabulary.null_prompt()
            cam = sample.cam if with_camera else None
            if cam is not None and rng.random() < config.cond_dropout:
                cam = CamParams.static()
            pred = model.forward(x_t, m, x_m, tokens, cam=cam, t=t, branch=branch)
            losses.append(masked_weighted_loss(eps, pred, m, config.lambda_loss))
        total = losses[0] if len(losses) == 1 else sum(losses[1:], losses[0]) * (1.0 / len(losses))
        loss_val = float(total.data)
        if not math.isfinite(loss_val):
            raise ParameterError(f"non-finite loss at t={t}, mode={mode.value}")
        grads = tape.gradients(total, list(params.values()))
    gdict = dict(zip(names, grads))
    if param_filter is not None:
        gdict = {k: g for k, g in gdict.items() if param_filter(k)}
    optimizer.step(gdict)
    return loss_val


def insertion_mask_from_label(label, frames_idx, height, width, margin=1):
    """Union of per-object boxes dilated from the stored tight boxes."""
    total = np.zeros((len(frames_idx), 1, height, width), dtype=np.uint8)
    pix_w = margin / width
    pix_h = margin / height
    for obj in label["objects"]:
        boxes = []
        for fi in frames_idx:
            x1, y1, x2, y2 = obj["boxes"][fi]
            boxes.append(Box(max(x1 - pix_w, 0.0), max(y1 - pix_h, 0.0),
                             min(x2 + pix_w, 1.0), min(y2 + pix_h, 1.0)))
        total |= rasterize(boxes, height, width).data
    return MaskSequence(total)


def _clip_indices(rng, n_frames, lengths, strides):
    length = int(rng.integers(lengths[0], lengths[1] + 1))
    max_stride = max(1, min(strides[1], (n_frames - 1) // max(length - 1, 1)))
    stride = int(rng.integers(strides[0], max_stride + 1)) if max_stride > strides[0] else strides[0]
    span = (length - 1) * stride + 1
    start = int(rng.integers(0, n_frames - span + 1)) if n_frames > span else 0
    return list(range(start, start + span, stride))


def make_train_batch(corpus: Corpus, rng, config: TrainConfig, split="train"):
    """Draw clips and decide (mode, branch) per the configured probabilities."""
    entries = corpus.entries(split)
    mode = [FrameMaskMode.T2V, FrameMaskMode.I2V, FrameMaskMode.K2V][
        rng.choice(3, p=list(config.mode_probs))]
    insertion = rng.random() < config.insertion_prob
    batch = []
    for _ in range(config.batch_size):
        entry = entries[int(rng.integers(len(entries)))]
        video, mask, label = corpus.load(entry)
        n, _, h, w = video.shape
        idx = _clip_indices(rng, n, config.clip_lengths, config.frame_strides)
        clip = video[idx]
        if insertion and label["objects"]:
            # vary the box dilation so the mask is a region hint, not a silhouette
            margin = int(rng.integers(config.box_margin, config.box_margin + 3))
            region = insertion_mask_from_label(label, idx, h, w, margin)
            tokens = label["prompt"]
            branch = BranchKind.INSERTION
        else:
            if rng.random() < config.full_mask_prob:
                # plain T2V generation: nothing known anywhere
                region = MaskSequence(np.ones((len(idx), 1, h, w), dtype=np.uint8))
            else:
                region = random_mask_sequence(int(rng.integers(2 ** 31)), len(idx), h, w)
            tokens = Vocabulary.background_prompt()
            branch = BranchKind.COMPLETION
        batch.append(TrainSample(video=clip, region_mask=region, tokens=tokens))
    return batch, mode, branch


def heldout_masked_loss(model, corpus: Corpus, schedule, config: TrainConfig, seed=1234,
                        n_samples=4, t_values=(100, 300, 500, 700, 900)):
    """Average squared residual inside the mask on fixed eval conditions."""
    rng = np.random.default_rng(seed)
    entries = corpus.entries("eval") or corpus.entries("train")
    total, count = 0.0, 0
    for i in range(n_samples):
        entry = entries[i % len(entries)]
        video, mask, label = corpus.load(entry)
        n, _, h, w = video.shape
        idx = list(range(min(n, 8)))
        clip = video[idx]
        if label["objects"]:
            region = insertion_mask_from_label(label, idx, h, w, config.box_margin)
            tokens = label["prompt"]
            branch = BranchKind.INSERTION
        else:
            region = random_mask_sequence(seed + i, len(idx), h, w)
            tokens = Vocabulary.background_prompt()
            branch = BranchKind.COMPLETION
        flags = frame_mask(FrameMaskMode.T2V, len(idx))
        m, x_m = compose_condition(clip, region, flags)
        for t in t_values:
            eps = rng.standard_normal(clip.shape).astype(np.float32)
            x_t = schedule.add_noise(clip, t, eps)
            pred = model.forward(x_t, m, x_m, tokens, t=t, branch=branch).data
            sq = (eps - pred) ** 2
            sel = np.broadcast_to(m.astype(bool), sq.shape)
            total += float(sq[sel].sum())
            count += int(sel.sum())
    return total / max(count, 1)


def train_loop(model: InpaintUNet, corpus: Corpus, config: TrainConfig, out_dir,
               schedule: DiffusionSchedule | None = None, camera_phase=False,
               camera_corpus_cfg=None, log=print):
    """Full training run: metrics.csv, periodic checkpoints, final checkpoint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schedule = schedule or DiffusionSchedule(model.config.t_scale)
    (out / "config.json").write_text(json.dumps(
        {"train": asdict(config), "model": model.config.to_dict()}, indent=2, default=str))
    rng = np.random.default_rng(config.seed)
    trainable = model.camera_parameters() if camera_phase else model.parameters()
    opt = Adam(trainable, config.learning_rate)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    metrics_path = out / "metrics.csv"
    base_eval = None
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "mode", "branch", "eval_masked_loss"])
        for step in range(config.steps):
            if camera_phase:
                batch, mode, branch = make_camera_batch(corpus, rng, config, camera_corpus_cfg)
            else:
                batch, mode, branch = make_train_batch(corpus, rng, config)
            try:
                loss = train_step(model, batch, mode, branch, rng, schedule, config, opt,
                                  with_camera=camera_phase)
            except ParameterError as exc:
                raise ParameterError(f"step {step}: {exc}") from exc
            ev = ""
            if config.eval_every and step % config.eval_every == 0 and not camera_phase:
                ev = heldout_masked_loss(model, corpus, schedule, config)
                if base_eval is None:
                    base_eval = ev
                log(f"step {step} loss {loss:.4f} eval {ev:.4f}")
            writer.writerow([step, f"{loss:.6f}", mode.value, branch.value, ev])
            if config.checkpoint_every and step and step % config.checkpoint_every == 0:
                save_checkpoint(ckpt_dir / f"step_{step}.ckpt", model, step=step)
    final = ckpt_dir / f"step_{config.steps}.ckpt"
    save_checkpoint(final, model, step=config.steps)
    return final


def make_camera_batch(corpus: Corpus, rng, config: TrainConfig, corpus_cfg=None):
    """Camera fine-tuning batch: augmented clips, full-frame masks, T2V mode."""
    from .camera import aug_with_cam_motion, sample_cam_params

    entries = corpus.entries("train")
    batch = []
    for _ in range(config.batch_size):
        entry = entries[int(rng.integers(len(entries)))]
        video, mask, label = corpus.load(entry)
        cam = sample_cam_params(rng)
        h = corpus_cfg["height"] if corpus_cfg else 16
        w = corpus_cfg["width"] if corpus_cfg else 16
        n = corpus_cfg.get("frames", 8) if corpus_cfg else 8
        clip = aug_with_cam_motion(video[:n], cam, h, w)
        full = MaskSequence(np.ones((clip.shape[0], 1, h, w), dtype=np.uint8))
        tokens = label["prompt"]
        batch.append(TrainSample(video=clip, region_mask=full, tokens=tokens, cam=cam))
    return batch, FrameMaskMode.T2V, BranchKind.COMPLETION
