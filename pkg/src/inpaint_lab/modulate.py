"""Training-free cross-attention modulation for box-directed object motion.

Builds the additive term S used as softmax((QK^T + lambda*S)/sqrt(d)):
amplification boosts object-word logits inside the object's box early in
sampling; suppression hard-masks (-inf) every unmatched image/word pair
except the <sos>/<eos> columns, throughout sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BindingError, ParameterError
from .masks import Box

ZONES = ("encoder", "mid", "decoder")


@dataclass
class ObjectBinding:
    """Prompt span [start, end) bound to per-frame boxes (full-video indexing)."""

    span: tuple
    boxes: list  # list[Box], one per absolute frame index

    def box_at(self, frame_idx):
        return self.boxes[min(frame_idx, len(self.boxes) - 1)]


@dataclass
class ModulationConfig:
    lambda_attn: float = 25.0
    tau_frac: float = 0.95
    targets: tuple = ZONES
    normalization: str = "literal"          # literal | area_ratio
    bindings: list = field(default_factory=list)
    background_span: tuple | None = None
    amplification: bool = True
    suppression: bool = True

    def __post_init__(self):
        if self.lambda_attn < 0:
            raise ParameterError("lambda_attn must be >= 0")
        if not 0.0 <= self.tau_frac <= 1.0:
            raise ParameterError("tau_frac must lie in [0,1]")
        if self.normalization not in ("literal", "area_ratio"):
            raise ParameterError(f"unknown normalization {self.normalization!r}")
        bad = [z for z in self.targets if z not in ZONES]
        if bad:
            raise ParameterError(f"unknown layer zones {bad}")
        spans = sorted(tuple(b.span) for b in self.bindings)
        for a, b in zip(spans, spans[1:]):
            if b[0] < a[1]:
                raise ParameterError(f"overlapping bindings {a} and {b}")

    @classmethod
    def from_json(cls, obj, bindings=None, background_span=None):
        return cls(
            lambda_attn=float(obj.get("lambda", 25.0)),
            tau_frac=float(obj.get("tau_frac", 0.95)),
            targets=tuple(obj.get("targets", list(ZONES))),
            normalization=obj.get("normalization", "literal"),
            bindings=bindings or [],
            background_span=background_span,
            amplification=bool(obj.get("amplification", True)),
            suppression=bool(obj.get("suppression", True)),
        )


@dataclass
class ModulationTerm:
    """S for one (frame, attention site): (image_tokens, text_tokens)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = self.matrix
        finite = m[np.isfinite(m)]
        if finite.size and (np.any(finite < 0) or np.any(finite >= 1)):
            bad = finite[(finite < 0) | (finite >= 1)]
            if np.any(bad != 0):
                raise ParameterError("amplification entries must lie in [0,1)")
        if m.shape[1] >= 2 and (np.isneginf(m[:, 0]).any() or np.isneginf(m[:, -1]).any()):
            raise ParameterError("<sos>/<eos> columns must never be suppressed")


def _tokens_in_box(box: Box, grid_h, grid_w):
    """Image-token membership on the site's grid, pixel-center rule."""
    cy = (np.arange(grid_h) + 0.5) / grid_h
    cx = (np.arange(grid_w) + 0.5) / grid_w
    rows = (cy >= box.y1) & (cy < box.y2)
    cols = (cx >= box.x1) & (cx < box.x2)
    return np.outer(rows, cols).ravel()


def build_term(config: ModulationConfig, frame_idx, zone, grid, t, t_train,
               n_tokens) -> ModulationTerm:
    """S per the piecewise rule; all-zero when the zone is untargeted."""
    gh, gw = grid
    n_img = gh * gw
    s = np.zeros((n_img, n_tokens), dtype=np.float64)
    if zone not in config.targets:
        return ModulationTerm(s)
    for binding in config.bindings:
        lo, hi = binding.span
        if not (0 < lo and hi <= n_tokens - 1 and lo < hi):
            raise BindingError(f"span {binding.span} outside prompt interior")
    tau = config.tau_frac * t_train
    covered = np.zeros(n_img, dtype=bool)
    allowed = np.zeros((n_img, n_tokens), dtype=bool)
    allowed[:, 0] = True            # <sos>
    allowed[:, n_tokens - 1] = True  # <eos>
    for binding in config.bindings:
        inside = _tokens_in_box(binding.box_at(frame_idx), gh, gw)
        covered |= inside
        lo, hi = binding.span
        allowed[inside, lo:hi] = True
        if config.amplification and t >= tau:
            n_box = int(inside.sum())
            if config.normalization == "literal":
                amp = 1.0 - n_box / (n_img * n_tokens)
            else:
                amp = 1.0 - n_box / n_img
            s[np.ix_(inside, range(lo, hi))] = amp
    if config.background_span is not None:
        lo, hi = config.background_span
        allowed[~covered, lo:hi] = True
    if config.suppression:
        s[~allowed] = -np.inf
    return ModulationTerm(s)


class ModulationHook:
    """Per-sampler hook: builds S lazily per site and returns (S, lambda)."""

    def __init__(self, config: ModulationConfig, t_train, n_tokens, frame_indices=None):
        self.config = config
        self.t_train = t_train
        self.n_tokens = n_tokens
        self.frame_indices = frame_indices

    def for_frames(self, frame_indices):
        return ModulationHook(self.config, self.t_train, self.n_tokens, list(frame_indices))

    def __call__(self, zone, grid, frames, t):
        cfg = self.config
        if not cfg.targets or (not cfg.bindings and cfg.background_span is None):
            return None
        if zone not in cfg.targets:
            return None
        idx = self.frame_indices if self.frame_indices is not None else list(range(frames))
        mats = [build_term(cfg, idx[k], zone, grid, t, self.t_train, self.n_tokens).matrix
                for k in range(frames)]
        return np.stack(mats), cfg.lambda_attn


def attach_to_sampler(config: ModulationConfig, prompt_tokens, t_train) -> ModulationHook:
    """Validate bindings against the prompt and build the sampler hook."""
    n = len(prompt_tokens)
    for binding in config.bindings:
        lo, hi = binding.span
        if not (0 < lo < hi <= n - 1):
            raise BindingError(f"binding span {binding.span} outside prompt of {n} tokens")
    if config.background_span is not None:
        lo, hi = config.background_span
        if not (0 < lo < hi <= n - 1):
            raise BindingError(f"background span outside prompt of {n} tokens")
    return ModulationHook(config, t_train, n)


def bindings_from_label(label, n_frames):
    """Object spans and stored per-frame boxes from a synth-data label."""
    out = []
    for obj in label["objects"]:
        boxes = [Box(*obj["boxes"][min(i, len(obj["boxes"]) - 1)]) for i in range(n_frames)]
        out.append(ObjectBinding(span=tuple(obj["span"]), boxes=boxes))
    return out


def sweep(run_fn, lambdas, taus):
    """Cross-product sweep; run_fn(lam, tau) -> dict of metrics. Returns rows."""
    rows = []
    for lam in lambdas:
        for tau in taus:
            metrics = run_fn(lam, tau)
            rows.append({"lambda": lam, "tau_frac": tau, **metrics})
    return rows
