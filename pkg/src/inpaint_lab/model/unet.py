"""Miniature video inpainting denoiser.

A 3D U-Net over (frames, channels, H, W): spatial residual conv blocks,
dual-branch spatial attention (dual-reference self-attention + text
cross-attention), shared temporal attention, and a tanh-gated camera module
appended after each temporal attention block. Input is the channel
concatenation [noised video (3), mask (1), masked video (3)]; the mask and
masked-video input weights start at exactly zero, as does every camera gate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from ..errors import ConfigError, ShapeError
from ..nd import tensor as T
from ..nd.tensor import Tensor
from ..synth import Vocabulary
from .layers import (
    Conv2d,
    GroupNorm,
    Layer,
    Linear,
    MLP,
    dual_ref_self_attention,
    modulated_cross_attention,
    scaled_attention,
    sinusoid_positions,
)


class BranchKind(Enum):
    INSERTION = "insertion"
    COMPLETION = "completion"


@dataclass(frozen=True)
class CamParams:
    """Camera triplet: pan ratios in [-1,1], zoom ratio in [0.5,2]."""

    cx: float
    cy: float
    cz: float

    def __post_init__(self):
        if not (-1.0 <= self.cx <= 1.0 and -1.0 <= self.cy <= 1.0):
            raise ConfigError(f"pan ratios out of range: ({self.cx}, {self.cy})")
        if not (0.5 <= self.cz <= 2.0):
            raise ConfigError(f"zoom ratio out of range: {self.cz}")

    @classmethod
    def static(cls):
        return cls(0.0, 0.0, 1.0)

    def as_list(self):
        return [self.cx, self.cy, self.cz]


@dataclass
class ModelConfig:
    base_channels: int = 32
    depth: int = 2
    head_dim: int = 16
    n_freqs: int = 8
    vocab_size: int = Vocabulary.size()
    window: int = 8
    in_channels: int = 7    # 3 noised + 1 mask + 3 masked video
    out_channels: int = 3
    txt_dim: int = 32
    cam_dim: int = 32
    t_dim: int = 64
    t_scale: int = 1000
    norm_groups: int = 4
    dual_branch: bool = True
    separate_cam_embed: bool = True
    camera_module_enabled: bool = True
    init_seed: int = 0

    def __post_init__(self):
        if self.window < 3:
            raise ConfigError("window must be >= 3 (K2V feasibility)")
        for lvl in range(self.depth):
            ch = self.base_channels * (2 ** lvl)
            if ch % self.head_dim:
                raise ConfigError(f"head_dim {self.head_dim} does not divide width {ch}")

    def channels(self):
        return [self.base_channels * (2 ** i) for i in range(self.depth)]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ResBlock(Layer):
    def __init__(self, rng, c_in, c_out, t_dim, groups, dtype):
        self.norm1 = GroupNorm(c_in, groups, dtype)
        self.conv1 = Conv2d(rng, c_in, c_out, dtype=dtype)
        self.t_proj = Linear(rng, t_dim, c_out, dtype)
        self.norm2 = GroupNorm(c_out, groups, dtype)
        self.conv2 = Conv2d(rng, c_out, c_out, dtype=dtype)
        self.skip = Conv2d(rng, c_in, c_out, k=1, dtype=dtype) if c_in != c_out else None

    def __call__(self, x, t_emb):
        h = self.conv1(T.silu(self.norm1(x)))
        bias = self.t_proj(T.silu(t_emb))
        h = h + T.reshape(bias, (1, h.shape[1], 1, 1))
        h = self.conv2(T.silu(self.norm2(h)))
        return h + (self.skip(x) if self.skip else x)


class SpatialAttention(Layer):
    """One branch's spatial stack: dual-reference self-attn + text cross-attn."""

    def __init__(self, rng, channels, head_dim, txt_dim, groups, dtype):
        self.norm_self = GroupNorm(channels, groups, dtype)
        self.q_s = Linear(rng, channels, channels, dtype)
        self.k_s = Linear(rng, channels, channels, dtype)
        self.v_s = Linear(rng, channels, channels, dtype)
        self.o_s = Linear(rng, channels, channels, dtype, zero_init=True)
        self.norm_cross = GroupNorm(channels, groups, dtype)
        self.q_c = Linear(rng, channels, channels, dtype)
        self.k_c = Linear(rng, txt_dim, channels, dtype)
        self.v_c = Linear(rng, txt_dim, channels, dtype)
        self.o_c = Linear(rng, channels, channels, dtype, zero_init=True)
        self._d = head_dim

    def __call__(self, x, txt_emb, modulation):
        n, c, h, w = x.shape
        tok = T.reshape(T.transpose(self.norm_self(x), (0, 2, 3, 1)), (n, h * w, c))
        attn = dual_ref_self_attention(self.q_s(tok), self.k_s(tok), self.v_s(tok), self._d)
        x = x + T.transpose(T.reshape(self.o_s(attn), (n, h, w, c)), (0, 3, 1, 2))

        tok = T.reshape(T.transpose(self.norm_cross(x), (0, 2, 3, 1)), (n, h * w, c))
        k = self.k_c(txt_emb)
        v = self.v_c(txt_emb)
        k = T.broadcast_to(T.reshape(k, (1, *k.shape)), (n, *k.shape))
        v = T.broadcast_to(T.reshape(v, (1, *v.shape)), (n, *v.shape))
        s, lam = (None, 0.0) if modulation is None else modulation
        attn = modulated_cross_attention(self.q_c(tok), k, v, self._d, s, lam)
        return x + T.transpose(T.reshape(self.o_c(attn), (n, h, w, c)), (0, 3, 1, 2))


class CameraModule(Layer):
    """Gated temporal cross-attention: F + tanh(alpha) * Attn(F, e_cam)."""

    def __init__(self, rng, channels, head_dim, cam_dim, dtype):
        self.q = Linear(rng, channels, channels, dtype)
        self.k_xy = Linear(rng, cam_dim, channels, dtype)
        self.v_xy = Linear(rng, cam_dim, channels, dtype)
        self.k_z = Linear(rng, cam_dim, channels, dtype)
        self.v_z = Linear(rng, cam_dim, channels, dtype)
        self.alpha = Tensor(np.zeros((), dtype=dtype), requires_grad=True)
        self._d = head_dim

    def __call__(self, f_seq, e_cam):
        """f_seq: (HW, N, C); e_cam: list of 1 or 2 embedding Tensors (cam_dim,)."""
        hw = f_seq.shape[0]
        pairs = [(self.k_xy, self.v_xy), (self.k_z, self.v_z)]
        ks, vs = [], []
        for emb, (k_proj, v_proj) in zip(e_cam, pairs):
            e = T.reshape(emb, (1, 1, emb.shape[-1]))
            ks.append(T.broadcast_to(k_proj(e), (hw, 1, f_seq.shape[2])))
            vs.append(T.broadcast_to(v_proj(e), (hw, 1, f_seq.shape[2])))
        k = T.concat(ks, axis=1) if len(ks) > 1 else ks[0]
        v = T.concat(vs, axis=1) if len(vs) > 1 else vs[0]
        attn = scaled_attention(self.q(f_seq), k, v, self._d)
        return f_seq + T.tanh(self.alpha) * attn


class TemporalAttention(Layer):
    """Self-attention over frames at each spatial site, then the camera module."""

    def __init__(self, rng, channels, head_dim, cam_dim, groups, dtype, with_camera):
        self.norm = GroupNorm(channels, groups, dtype)
        self.q = Linear(rng, channels, channels, dtype)
        self.k = Linear(rng, channels, channels, dtype)
        self.v = Linear(rng, channels, channels, dtype)
        self.o = Linear(rng, channels, channels, dtype, zero_init=True)
        self.camera = CameraModule(rng, channels, head_dim, cam_dim, dtype) if with_camera else None
        self._d = head_dim

    def __call__(self, x, e_cam):
        n, c, h, w = x.shape
        tok = T.reshape(T.transpose(self.norm(x), (2, 3, 0, 1)), (h * w, n, c))
        pe = Tensor(sinusoid_positions(n, c, dtype=x.dtype))
        tok = tok + pe
        attn = scaled_attention(self.q(tok), self.k(tok), self.v(tok), self._d)
        x = x + T.transpose(T.reshape(self.o(attn), (h, w, n, c)), (2, 3, 0, 1))
        if self.camera is not None and e_cam is not None:
            f_seq = T.reshape(T.transpose(x, (2, 3, 0, 1)), (h * w, n, c))
            f_seq = self.camera(f_seq, e_cam)
            x = T.transpose(T.reshape(f_seq, (h, w, n, c)), (2, 3, 0, 1))
        return x


class CameraEmbedder(Layer):
    """Fourier features + MLPs; separate panning/zooming or a joint encoder."""

    def __init__(self, rng, cfg: ModelConfig, dtype):
        self.separate = cfg.separate_cam_embed
        self._n_freqs = cfg.n_freqs
        d_feat = 2 * cfg.n_freqs
        if self.separate:
            self.mlp_xy = MLP(rng, 2 * d_feat, cfg.cam_dim, cfg.cam_dim, dtype)
            self.mlp_z = MLP(rng, d_feat, cfg.cam_dim, cfg.cam_dim, dtype)
        else:
            self.mlp_joint = MLP(rng, 3 * d_feat, cfg.cam_dim, cfg.cam_dim, dtype)

    def __call__(self, cam: CamParams, dtype=np.float32):
        if self.separate:
            f_xy = T.fourier_embed(Tensor(np.asarray([cam.cx, cam.cy], dtype=dtype)), self._n_freqs)
            f_z = T.fourier_embed(Tensor(np.asarray([cam.cz], dtype=dtype)), self._n_freqs)
            return [self.mlp_xy(f_xy), self.mlp_z(f_z)]
        f = T.fourier_embed(Tensor(np.asarray([cam.cx, cam.cy, cam.cz], dtype=dtype)), self._n_freqs)
        return [self.mlp_joint(f)]


class EncoderLevel(Layer):
    def __init__(self, rng, cfg, c_in, c_out, branches, dtype, last):
        self.res = ResBlock(rng, c_in, c_out, cfg.t_dim, cfg.norm_groups, dtype)
        self.spatial = {b: SpatialAttention(rng, c_out, cfg.head_dim, cfg.txt_dim,
                                            cfg.norm_groups, dtype) for b in branches}
        self.temporal = TemporalAttention(rng, c_out, cfg.head_dim, cfg.cam_dim,
                                          cfg.norm_groups, dtype, cfg.camera_module_enabled)
        self.down = Conv2d(rng, c_out, c_out, k=3, stride=2, dtype=dtype) if not last else None


class DecoderLevel(Layer):
    def __init__(self, rng, cfg, c_in, c_out, branches, dtype):
        self.res = ResBlock(rng, c_in, c_out, cfg.t_dim, cfg.norm_groups, dtype)
        self.spatial = {b: SpatialAttention(rng, c_out, cfg.head_dim, cfg.txt_dim,
                                            cfg.norm_groups, dtype) for b in branches}
        self.temporal = TemporalAttention(rng, c_out, cfg.head_dim, cfg.cam_dim,
                                          cfg.norm_groups, dtype, cfg.camera_module_enabled)


class InpaintUNet(Layer):
    """The denoiser: eps = model(x_t, m, x_m | tokens, cam, t, branch)."""

    def __init__(self, config: ModelConfig | None = None, dtype=np.float32):
        cfg = config or ModelConfig()
        self.config = cfg
        self._dtype = dtype
        rng = np.random.default_rng(cfg.init_seed)
        branches = ([BranchKind.INSERTION.value, BranchKind.COMPLETION.value]
                    if cfg.dual_branch else ["shared"])
        self._branches = branches
        chans = cfg.channels()

        self.token_table = Tensor(
            rng.normal(0, 0.35, size=(cfg.vocab_size, cfg.txt_dim)).astype(dtype),
            requires_grad=True)
        self.t_mlp = MLP(rng, 2 * cfg.n_freqs, cfg.t_dim, cfg.t_dim, dtype)
        self.cam_embedder = CameraEmbedder(rng, cfg, dtype) if cfg.camera_module_enabled else None

        self.conv_in = Conv2d(rng, cfg.in_channels, chans[0], dtype=dtype)
        # mask + masked-video input weights start at exactly zero
        self.conv_in.w.data[:, 3:, :, :] = 0.0

        self.enc = []
        c_prev = chans[0]
        for lvl, ch in enumerate(chans):
            self.enc.append(EncoderLevel(rng, cfg, c_prev, ch, branches, dtype,
                                         last=(lvl == len(chans) - 1)))
            c_prev = ch
        self.mid = EncoderLevel(rng, cfg, c_prev, c_prev, branches, dtype, last=True)
        self.dec = []
        for lvl in reversed(range(len(chans))):
            ch = chans[lvl]
            self.dec.append(DecoderLevel(rng, cfg, c_prev + ch, ch, branches, dtype))
            c_prev = ch
        self.norm_out = GroupNorm(chans[0], cfg.norm_groups, dtype)
        self.conv_out = Conv2d(rng, chans[0], cfg.out_channels, dtype=dtype)

    # -- helpers -------------------------------------------------------
    def parameters(self):
        return self.named_params()

    def camera_parameters(self):
        """Camera embedder + camera module weights (the fine-tuned subset)."""
        out = {}
        for name, p in self.named_params().items():
            if "cam_embedder" in name or ".camera." in name or name.endswith("alpha"):
                out[name] = p
        return out

    def _branch_key(self, branch: BranchKind):
        if not self.config.dual_branch:
            return "shared"
        return branch.value

    def _validate(self, x_t, m, x_m, tokens, cam, t):
        for name, arr, c in (("x_t", x_t, 3), ("m", m, 1), ("x_m", x_m, 3)):
            if arr.ndim != 4 or arr.shape[1] != c:
                raise ShapeError(f"{name}: expected (N,{c},H,W), got {arr.shape}")
        if not (x_t.shape[0] == m.shape[0] == x_m.shape[0]
                and x_t.shape[2:] == m.shape[2:] == x_m.shape[2:]):
            raise ShapeError("x_t, m, x_m must share frames and resolution")
        if not 1 <= t <= self.config.t_scale:
            raise ShapeError(f"timestep {t} outside [1, {self.config.t_scale}]")
        toks = list(tokens)
        if not toks or toks[0] != Vocabulary.SOS or toks[-1] != Vocabulary.EOS:
            raise ShapeError("prompt must start with <sos> and end with <eos>")
        if any(not 0 <= tk < self.config.vocab_size for tk in toks):
            raise ShapeError("prompt token id out of vocabulary")
        if cam is not None and not self.config.camera_module_enabled:
            raise ConfigError("camera parameters supplied but camera module disabled")

    def forward(self, x_t, m, x_m, tokens, cam=None, t=1,
                branch: BranchKind = BranchKind.COMPLETION, attn_hook=None):
        """Predict the noise for one clip. Tensors are (N, C, H, W) numpy or Tensor."""
        x_t = T.as_tensor(x_t)
        m = T.as_tensor(m)
        x_m = T.as_tensor(x_m)
        self._validate(x_t, m, x_m, tokens, cam, t)
        key = self._branch_key(branch)
        n, _, h, w = x_t.shape

        t_feat = T.fourier_embed(
            Tensor(np.asarray([t / self.config.t_scale], dtype=x_t.data.dtype)),
            self.config.n_freqs)
        t_emb = self.t_mlp(t_feat)
        txt = T.take_rows(self.token_table, list(tokens))
        e_cam = self.cam_embedder(cam, dtype=x_t.data.dtype) if cam is not None else None

        def site(zone, grid_hw):
            if attn_hook is None:
                return None
            return attn_hook(zone=zone, grid=grid_hw, frames=n, t=t)

        x = T.concat([x_t, m, x_m], axis=1)
        x = self.conv_in(x)
        skips = []
        for level in self.enc:
            x = level.res(x, t_emb)
            x = level.spatial[key](x, txt, site("encoder", x.shape[2:]))
            x = level.temporal(x, e_cam)
            skips.append(x)
            if level.down is not None:
                x = level.down(x)
        x = self.mid.res(x, t_emb)
        x = self.mid.spatial[key](x, txt, site("mid", x.shape[2:]))
        x = self.mid.temporal(x, e_cam)
        for level in self.dec:
            skip = skips.pop()
            if x.shape[2:] != skip.shape[2:]:
                x = T.upsample2(x)
            x = T.concat([x, skip], axis=1)
            x = level.res(x, t_emb)
            x = level.spatial[key](x, txt, site("decoder", x.shape[2:]))
            x = level.temporal(x, e_cam)
        return self.conv_out(T.silu(self.norm_out(x)))

    __call__ = forward
