"""Numpy CBCT-to-CT translation with a Mamba-enhanced U-Net.

Everything runs on a small reverse-mode autograd engine (``glfc.tensor``),
so no deep-learning framework is needed.
"""

from .errors import (CheckpointError, ConfigError, ContractError, DataError, DatasetError,
                     EvaluationError, FormatError, GLFCError, ShapeError, VerificationError)
from .estimator import SCTTranslator
from .io import Volume, checkpoint_load, checkpoint_save, gvol_read, gvol_write, load_weights
from .losses import BONE, GLOBAL, SOFT, IntensityWindow, hu_to_norm, mcl_loss, norm_to_hu
from .metrics import evaluate_pair, masked_psnr, masked_ssim, region_masks_from_ct
from .meunet import VARIANTS, MEUNet, MEUNetConfig, adaptive_patch_size, build_model
from .phantom import PhantomConfig, gen_phantom_pair
from .tensor import Tensor, no_grad
from .training import RunConfig, fit_new, train

__version__ = "0.1.0"

__all__ = [
    "BONE", "GLOBAL", "SOFT", "VARIANTS", "CheckpointError", "ConfigError", "ContractError",
    "DataError", "DatasetError", "EvaluationError", "FormatError", "GLFCError",
    "IntensityWindow", "MEUNet", "MEUNetConfig", "PhantomConfig", "RunConfig",
    "SCTTranslator", "ShapeError", "Tensor", "VerificationError", "Volume",
    "adaptive_patch_size", "build_model", "checkpoint_load", "checkpoint_save",
    "evaluate_pair", "fit_new", "gen_phantom_pair", "gvol_read", "gvol_write",
    "hu_to_norm", "load_weights", "masked_psnr", "masked_ssim", "mcl_loss", "no_grad",
    "norm_to_hu", "region_masks_from_ct", "train",
]
