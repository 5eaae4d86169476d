"""HU normalisation, intensity windows and the multiple-contrast loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor

HU_MIN = -1024.0
HU_MAX = 3000.0


@dataclass(frozen=True)
class IntensityWindow:
    lo: float
    hi: float
    label: str = ""

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ContractError(f"window {self.label!r} is degenerate: [{self.lo}, {self.hi}]")


GLOBAL = IntensityWindow(-1.0, 1.0, "global")
SOFT = IntensityWindow(-0.615, -0.368, "soft")
BONE = IntensityWindow(-0.368, 1.0, "bone")


def hu_to_norm(h):
    """Map HU (clipped to [-1024, 3000]) linearly onto [-1, 1]."""
    h = np.clip(np.asarray(h, dtype=np.float64), HU_MIN, HU_MAX)
    return 2.0 * (h - HU_MIN) / (HU_MAX - HU_MIN) - 1.0


def norm_to_hu(v):
    v = np.asarray(v, dtype=np.float64)
    return (v + 1.0) * (HU_MAX - HU_MIN) / 2.0 + HU_MIN


def window_renormalize(p: Tensor, w: IntensityWindow) -> Tensor:
    """Stretch window ``w`` onto [-1, 1] and clip everything outside it."""
    if not w.hi > w.lo:
        raise ContractError(f"degenerate window [{w.lo}, {w.hi}]")
    scale = 2.0 / (w.hi - w.lo)
    return T.clip(p * scale - (w.lo * scale + 1.0), -1.0, 1.0)


def mcl_loss(p: Tensor, y: Tensor) -> Tuple[Tensor, Dict[str, float]]:
    """Global L1 plus soft-tissue and bone window L1 terms, unweighted.

    Returns the total (differentiable) and the three terms as floats.
    """
    if p.shape != y.shape:
        raise ShapeError(f"prediction {p.shape} and target {y.shape} differ in shape")
    glob = T.l1_mean(p, y)
    soft = T.l1_mean(window_renormalize(p, SOFT), window_renormalize(y, SOFT))
    bone = T.l1_mean(window_renormalize(p, BONE), window_renormalize(y, BONE))
    total = glob + soft + bone
    return total, {"glob": glob.item(), "soft": soft.item(), "bone": bone.item()}


def glob_loss(p: Tensor, y: Tensor) -> Tuple[Tensor, Dict[str, float]]:
    loss = T.l1_mean(p, y)
    return loss, {"glob": loss.item()}


LOSSES = {"glob": glob_loss, "mcl": mcl_loss}
