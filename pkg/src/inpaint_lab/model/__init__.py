"""Video inpainting denoiser: dual-branch U-Net, camera module, checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    dual_ref_self_attention,
    modulated_cross_attention,
    scaled_attention,
)
from .unet import BranchKind, CamParams, InpaintUNet, ModelConfig

__all__ = [
    "BranchKind", "CamParams", "InpaintUNet", "ModelConfig",
    "dual_ref_self_attention", "modulated_cross_attention", "scaled_attention",
    "load_checkpoint", "save_checkpoint",
]
