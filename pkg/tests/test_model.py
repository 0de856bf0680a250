"""Denoiser contracts: zero-init, attention equations, branch isolation,
camera module gating, checkpoint roundtrip."""

import math

import numpy as np
import pytest

from inpaint_lab import nd
from inpaint_lab.errors import ConfigError, ShapeError
from inpaint_lab.model import (
    BranchKind,
    CamParams,
    InpaintUNet,
    ModelConfig,
    dual_ref_self_attention,
    load_checkpoint,
    modulated_cross_attention,
    save_checkpoint,
    scaled_attention,
)
from inpaint_lab.model.layers import sinusoid_positions
from inpaint_lab.model.unet import CameraModule
from inpaint_lab.synth import Vocabulary

TOKENS = [Vocabulary.SOS, Vocabulary.id("red"), Vocabulary.id("circle"), Vocabulary.EOS]


def inputs(n=4, h=8, w=8, seed=0):
    rng = np.random.default_rng(seed)
    x_t = rng.normal(size=(n, 3, h, w)).astype(np.float32)
    m = rng.integers(0, 2, size=(n, 1, h, w)).astype(np.float32)
    x_m = rng.normal(size=(n, 3, h, w)).astype(np.float32)
    return x_t, m, x_m


class TestZeroInitContract:
    def test_invariant_to_mask_inputs(self, tiny_model):
        x_t, m, x_m = inputs()
        out1 = tiny_model.forward(x_t, m, x_m, TOKENS, t=500, branch=BranchKind.INSERTION)
        out2 = tiny_model.forward(x_t, np.zeros_like(m), np.zeros_like(x_m), TOKENS,
                                  t=500, branch=BranchKind.INSERTION)
        assert np.abs(out1.data - out2.data).max() == 0.0

    def test_invariant_to_camera(self, tiny_model):
        x_t, m, x_m = inputs(seed=1)
        base = tiny_model.forward(x_t, m, x_m, TOKENS, t=400, branch=BranchKind.COMPLETION)
        cam = tiny_model.forward(x_t, m, x_m, TOKENS, cam=CamParams(0.7, -0.3, 1.8),
                                 t=400, branch=BranchKind.COMPLETION)
        assert np.abs(base.data - cam.data).max() == 0.0

    def test_camera_rejected_when_disabled(self):
        model = InpaintUNet(ModelConfig(base_channels=8, head_dim=4,
                                        camera_module_enabled=False))
        x_t, m, x_m = inputs()
        with pytest.raises(ConfigError):
            model.forward(x_t, m, x_m, TOKENS, cam=CamParams.static(), t=10)

    def test_output_shape_and_finite(self, tiny_model):
        x_t, m, x_m = inputs(seed=2)
        out = tiny_model.forward(x_t, m, x_m, TOKENS, t=999, branch=BranchKind.INSERTION)
        assert out.shape == x_t.shape
        assert np.isfinite(out.data).all()


class TestValidation:
    def test_token_contract(self, tiny_model):
        x_t, m, x_m = inputs()
        with pytest.raises(ShapeError):
            tiny_model.forward(x_t, m, x_m, [Vocabulary.id("red")], t=10)

    def test_timestep_range(self, tiny_model):
        x_t, m, x_m = inputs()
        with pytest.raises(ShapeError):
            tiny_model.forward(x_t, m, x_m, TOKENS, t=0)
        with pytest.raises(ShapeError):
            tiny_model.forward(x_t, m, x_m, TOKENS, t=1001)

    def test_shape_checks(self, tiny_model):
        x_t, m, x_m = inputs()
        with pytest.raises(ShapeError):
            tiny_model.forward(x_t[:3], m, x_m, TOKENS, t=10)


class TestDualRefSelfAttention:
    def test_single_frame_equals_plain(self):
        rng = np.random.default_rng(0)
        q = nd.Tensor(rng.normal(size=(1, 5, 4)).astype(np.float32))
        k = nd.Tensor(rng.normal(size=(1, 5, 4)).astype(np.float32))
        v = nd.Tensor(rng.normal(size=(1, 5, 4)).astype(np.float32))
        dual = dual_ref_self_attention(q, k, v, head_dim=4)
        plain = scaled_attention(q, k, v, head_dim=4)
        assert np.abs(dual.data - plain.data).max() < 1e-6

    def test_duplicate_reference_invariance(self):
        # frames 1 and n duplicating frame i's keys/values leaves attention unchanged
        rng = np.random.default_rng(1)
        base_k = rng.normal(size=(1, 6, 8)).astype(np.float32)
        base_v = rng.normal(size=(1, 6, 8)).astype(np.float32)
        q = nd.Tensor(np.repeat(rng.normal(size=(1, 6, 8)), 3, axis=0).astype(np.float32))
        k = nd.Tensor(np.repeat(base_k, 3, axis=0))
        v = nd.Tensor(np.repeat(base_v, 3, axis=0))
        dual = dual_ref_self_attention(q, k, v, head_dim=4)
        plain = scaled_attention(q, k, v, head_dim=4)
        assert np.abs(dual.data - plain.data).max() < 1e-6

    def test_identical_values_convexity(self):
        rng = np.random.default_rng(2)
        vvec = rng.normal(size=4).astype(np.float32)
        q = nd.Tensor(rng.normal(size=(3, 5, 4)).astype(np.float32))
        k = nd.Tensor(rng.normal(size=(3, 5, 4)).astype(np.float32))
        v = nd.Tensor(np.broadcast_to(vvec, (3, 5, 4)).copy())
        out = dual_ref_self_attention(q, k, v, head_dim=4)
        assert np.abs(out.data - vvec).max() < 1e-5

    def test_hand_computed_two_frames_scalar(self):
        # 2 frames x 1 token, d=1: frame i attends over [k_i, k_0, k_1]
        q = nd.Tensor(np.array([[[1.0]], [[1.0]]], np.float32))
        k = nd.Tensor(np.array([[[0.0]], [[math.log(2.0)]]], np.float32))
        v = nd.Tensor(np.array([[[1.0]], [[3.0]]], np.float32))
        out = dual_ref_self_attention(q, k, v, head_dim=1).data
        # frame 0: logits [0, 0, ln2] over values [1, 1, 3] -> (1+1+2*3)/4 = 2
        e = [1.0, 1.0, 2.0]
        expect0 = (e[0] * 1 + e[1] * 1 + e[2] * 3) / sum(e)
        # frame 1: logits [ln2, 0, ln2] over values [3, 1, 3] -> (2*3+1+2*3)/5
        e1 = [2.0, 1.0, 2.0]
        expect1 = (e1[0] * 3 + e1[1] * 1 + e1[2] * 3) / sum(e1)
        assert abs(out[0, 0, 0] - expect0) < 1e-6
        assert abs(out[1, 0, 0] - expect1) < 1e-6


class TestModulatedCrossAttention:
    def test_zero_s_identity(self):
        rng = np.random.default_rng(3)
        q = nd.Tensor(rng.normal(size=(2, 4, 4)).astype(np.float32))
        k = nd.Tensor(rng.normal(size=(2, 3, 4)).astype(np.float32))
        v = nd.Tensor(rng.normal(size=(2, 3, 4)).astype(np.float32))
        s = np.zeros((2, 4, 3))
        mod = modulated_cross_attention(q, k, v, 4, s, 25.0)
        plain = modulated_cross_attention(q, k, v, 4)
        assert np.abs(mod.data - plain.data).max() < 1e-7

    def test_lambda_zero_identity_finite_s(self):
        rng = np.random.default_rng(4)
        q = nd.Tensor(rng.normal(size=(1, 4, 4)).astype(np.float32))
        k = nd.Tensor(rng.normal(size=(1, 2, 4)).astype(np.float32))
        v = nd.Tensor(rng.normal(size=(1, 2, 4)).astype(np.float32))
        s = rng.uniform(0, 1, (1, 4, 2))
        mod = modulated_cross_attention(q, k, v, 4, s, 0.0)
        plain = modulated_cross_attention(q, k, v, 4)
        assert np.abs(mod.data - plain.data).max() < 1e-7

    def test_neg_inf_masks_to_single_token(self):
        # 1 image token, 2 text tokens, S = [0, -inf] -> output = first value row
        q = nd.Tensor(np.array([[[2.0, -1.0]]], np.float32))
        k = nd.Tensor(np.random.default_rng(5).normal(size=(1, 2, 2)).astype(np.float32))
        v = nd.Tensor(np.array([[[5.0, 7.0], [-3.0, 4.0]]], np.float32))
        s = np.array([[[0.0, -np.inf]]])
        out = modulated_cross_attention(q, k, v, 2, s, 1.0)
        assert np.abs(out.data[0, 0] - np.array([5.0, 7.0])).max() < 1e-6

    def test_shape_mismatch_rejected(self):
        q = nd.Tensor(np.zeros((1, 4, 4), np.float32))
        k = nd.Tensor(np.zeros((1, 3, 4), np.float32))
        v = nd.Tensor(np.zeros((1, 3, 4), np.float32))
        with pytest.raises(ShapeError):
            modulated_cross_attention(q, k, v, 4, np.zeros((1, 4, 2)), 1.0)


class TestCameraModule:
    def _module(self, channels=2, dtype=np.float64):
        rng = np.random.default_rng(0)
        return CameraModule(rng, channels, head_dim=channels, cam_dim=2, dtype=dtype)

    def test_alpha_zero_is_identity(self):
        mod = self._module()
        f = nd.Tensor(np.random.default_rng(1).normal(size=(3, 4, 2)))
        e = [nd.Tensor(np.ones(2)), nd.Tensor(np.zeros(2))]
        out = mod(f, e)
        assert np.abs(out.data - f.data).max() == 0.0

    def test_duplicate_key_invariance(self):
        mod = self._module()
        mod.alpha.data = np.asarray(0.7)
        mod.k_z.w.data = mod.k_xy.w.data.copy()
        mod.k_z.b.data = mod.k_xy.b.data.copy()
        mod.v_z.w.data = mod.v_xy.w.data.copy()
        mod.v_z.b.data = mod.v_xy.b.data.copy()
        f = nd.Tensor(np.random.default_rng(2).normal(size=(2, 3, 2)))
        e_same = nd.Tensor(np.array([0.4, -0.2]))
        two = mod(f, [e_same, e_same]).data
        one = mod(f, [e_same]).data
        assert np.abs(two - one).max() < 1e-9

    def test_hand_computed_gated_residual(self):
        # scalar features, 2 frames, alpha=0.5, hand-set projections
        mod = CameraModule(np.random.default_rng(0), channels=1, head_dim=1,
                           cam_dim=1, dtype=np.float64)
        mod.alpha.data = np.asarray(0.5)
        mod.q.w.data = np.array([[1.0]])
        mod.q.b.data = np.array([0.0])
        mod.k_xy.w.data = np.array([[1.0]])
        mod.k_xy.b.data = np.array([0.0])
        mod.v_xy.w.data = np.array([[2.0]])
        mod.v_xy.b.data = np.array([0.0])
        mod.k_z.w.data = np.array([[-1.0]])
        mod.k_z.b.data = np.array([0.0])
        mod.v_z.w.data = np.array([[3.0]])
        mod.v_z.b.data = np.array([0.0])
        f = nd.Tensor(np.array([[[1.0], [2.0]]]))  # (hw=1, n=2, c=1)
        e_xy = nd.Tensor(np.array([1.0]))
        e_z = nd.Tensor(np.array([1.0]))
        out = mod(f, [e_xy, e_z]).data
        for i, fv in enumerate([1.0, 2.0]):
            logits = np.array([fv * 1.0, fv * -1.0])  # k_xy=1, k_z=-1
            wts = np.exp(logits - logits.max())
            wts /= wts.sum()
            attn = wts[0] * 2.0 + wts[1] * 3.0       # v_xy=2, v_z=3
            expect = fv + math.tanh(0.5) * attn
            assert abs(out[0, i, 0] - expect) < 1e-9


class TestCameraEmbedder:
    def test_sequence_lengths(self):
        sep = InpaintUNet(ModelConfig(base_channels=8, head_dim=4))
        joint = InpaintUNet(ModelConfig(base_channels=8, head_dim=4,
                                        separate_cam_embed=False))
        cam = CamParams(0.3, -0.1, 1.2)
        assert len(sep.cam_embedder(cam)) == 2
        assert len(joint.cam_embedder(cam)) == 1

    def test_deterministic(self, tiny_model):
        cam = CamParams.static()
        a = tiny_model.cam_embedder(cam)
        b = tiny_model.cam_embedder(cam)
        assert np.array_equal(a[0].data, b[0].data)
        assert np.array_equal(a[1].data, b[1].data)

    def test_zero_pan_gives_zero_sin_features(self):
        feats = nd.fourier_embed(nd.Tensor([0.0, 0.0]), 4).data
        assert np.allclose(feats[0::2], 0.0)


class TestBranchIsolation:
    def test_gradient_isolation(self):
        model = InpaintUNet(ModelConfig(base_channels=8, head_dim=4, window=4,
                                        init_seed=0))
        params = model.parameters()
        x_t, m, x_m = inputs(n=4, h=8, w=8, seed=3)
        with nd.GradientTape() as tape:
            tape.watch(*params.values())
            out = model.forward(x_t, m, x_m, TOKENS, t=50, branch=BranchKind.INSERTION)
            loss = nd.tmean(out * out)
        grads = dict(zip(params, tape.gradients(loss, list(params.values()))))
        completion = {k: g for k, g in grads.items() if ".completion." in k}
        insertion = {k: g for k, g in grads.items() if ".insertion." in k}
        temporal = {k: g for k, g in grads.items() if ".temporal." in k and ".camera." not in k}
        assert completion and insertion and temporal
        assert all((g == 0).all() for g in completion.values())
        assert any((g != 0).any() for g in insertion.values())
        assert any((g != 0).any() for g in temporal.values())

    def test_branch_swap_changes_output_after_perturbation(self, tiny_model):
        # proxy for "trained checkpoint": nudge one insertion-branch out-projection
        # (at init those are zero, so the branches coincide by construction)
        params = tiny_model.parameters()
        key = next(k for k in params if ".insertion." in k and k.endswith("o_s.w"))
        x_t, m, x_m = inputs(seed=4)
        old = params[key].data.copy()
        try:
            params[key].data = old + 0.5
            a = tiny_model.forward(x_t, m, x_m, TOKENS, t=100, branch=BranchKind.INSERTION)
            b = tiny_model.forward(x_t, m, x_m, TOKENS, t=100, branch=BranchKind.COMPLETION)
            assert float(((a.data - b.data) ** 2).sum()) > 0.0
        finally:
            params[key].data = old

    def test_single_branch_mode_shares_weights(self):
        model = InpaintUNet(ModelConfig(base_channels=8, head_dim=4, dual_branch=False))
        x_t, m, x_m = inputs(seed=5)
        a = model.forward(x_t, m, x_m, TOKENS, t=100, branch=BranchKind.INSERTION)
        b = model.forward(x_t, m, x_m, TOKENS, t=100, branch=BranchKind.COMPLETION)
        assert np.array_equal(a.data, b.data)


class TestAttnHook:
    def test_hook_receives_all_zones(self, tiny_model):
        seen = []

        def hook(zone, grid, frames, t):
            seen.append((zone, tuple(grid), frames, t))
            return None

        x_t, m, x_m = inputs(seed=6)
        tiny_model.forward(x_t, m, x_m, TOKENS, t=77, branch=BranchKind.INSERTION,
                           attn_hook=hook)
        zones = {z for z, *_ in seen}
        assert zones == {"encoder", "mid", "decoder"}
        assert all(t == 77 and frames == 4 for _, _, frames, t in seen)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, tiny_model):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, tiny_model, step=42, rng_state={"seed": 9})
        loaded, header = load_checkpoint(path)
        assert header["step"] == 42
        assert header["rng_state"] == {"seed": 9}
        src = tiny_model.parameters()
        dst = loaded.parameters()
        assert set(src) == set(dst)
        for name in src:
            assert np.array_equal(src[name].data, dst[name].data), name
        x_t, m, x_m = inputs(seed=7)
        a = tiny_model.forward(x_t, m, x_m, TOKENS, t=10)
        b = loaded.forward(x_t, m, x_m, TOKENS, t=10)
        assert np.array_equal(a.data, b.data)


class TestGradientChecks:
    def test_end_to_end_masked_loss(self):
        """4-frame 8x8 model, float64: masked loss vs finite differences."""
        from inpaint_lab.diffusion import masked_weighted_loss

        model = InpaintUNet(ModelConfig(base_channels=8, head_dim=4, window=4,
                                        init_seed=1), dtype=np.float64)
        rng = np.random.default_rng(0)
        x_t = rng.normal(size=(4, 3, 8, 8))
        m = rng.integers(0, 2, size=(4, 1, 8, 8)).astype(np.float64)
        x_m = rng.normal(size=(4, 3, 8, 8))
        eps = rng.normal(size=(4, 3, 8, 8))
        params = model.parameters()

        def f():
            pred = model.forward(x_t, m, x_m, TOKENS, t=321, branch=BranchKind.INSERTION)
            return masked_weighted_loss(eps, pred, m, 2.0)

        keys = sorted(params)[::6]  # probe a spread of layers
        subset = [params[k] for k in keys]
        err = nd.grad_check(f, subset, eps=1e-5, samples=3,
                            rng=np.random.default_rng(1))
        assert err <= 1e-4

    def test_camera_module_gradients(self):
        mod = CameraModule(np.random.default_rng(3), channels=4, head_dim=2,
                           cam_dim=3, dtype=np.float64)
        mod.alpha.data = np.asarray(0.3)
        f = nd.Tensor(np.random.default_rng(4).normal(size=(2, 3, 4)))
        e = [nd.Tensor(np.random.default_rng(5).normal(size=3)),
             nd.Tensor(np.random.default_rng(6).normal(size=3))]
        params = list(mod.named_params().values())

        def fn():
            return nd.tmean(mod(f, e) ** 2.0)

        assert nd.grad_check(fn, params, eps=1e-5) <= 1e-4

    def test_dual_ref_attention_gradients(self):
        rng = np.random.default_rng(7)
        q = nd.Tensor(rng.normal(size=(3, 4, 4)), requires_grad=True)
        k = nd.Tensor(rng.normal(size=(3, 4, 4)), requires_grad=True)
        v = nd.Tensor(rng.normal(size=(3, 4, 4)), requires_grad=True)

        def fn():
            return nd.tmean(dual_ref_self_attention(q, k, v, head_dim=2) ** 2.0)

        assert nd.grad_check(fn, [q, k, v], eps=1e-5, samples=12) <= 1e-4

    def test_text_cross_attention_gradients_with_finite_s(self):
        rng = np.random.default_rng(8)
        q = nd.Tensor(rng.normal(size=(2, 4, 4)), requires_grad=True)
        k = nd.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        v = nd.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        s = rng.uniform(0, 0.9, size=(2, 4, 3))

        def fn():
            return nd.tmean(modulated_cross_attention(q, k, v, 2, s, 7.5) ** 2.0)

        assert nd.grad_check(fn, [q, k, v], eps=1e-5, samples=12) <= 1e-4


def test_sinusoid_positions_shape_and_range():
    pe = sinusoid_positions(6, 8)
    assert pe.shape == (6, 8)
    assert np.abs(pe).max() <= 1.0 + 1e-6
    assert not np.array_equal(pe[0], pe[1])
