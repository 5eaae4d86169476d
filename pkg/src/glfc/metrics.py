"""Region masks and masked SSIM / PSNR.

Metrics are computed in normalised intensity units ([-1, 1], data range 2)
on each 2-D slice, restricted to body / soft-tissue / bone masks derived
from the reference CT, and averaged over slices whose mask is non-empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np
from scipy import ndimage

from .errors import EvaluationError, ShapeError
from .losses import hu_to_norm

REGIONS = ("full", "ST", "bone")

BODY_THRESHOLD_HU = -500.0
SOFT_RANGE_HU = (-250.0, 250.0)
BONE_RANGE_HU = (250.0, 3000.0)


@dataclass(frozen=True)
class SSIMConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 2.0


DEFAULT_SSIM = SSIMConfig()


def body_mask(ct_hu: np.ndarray) -> np.ndarray:
    """Threshold at -500 HU, keep the largest connected component, fill holes."""
    fg = np.asarray(ct_hu) > BODY_THRESHOLD_HU
    labels, n = ndimage.label(fg)
    if n == 0:
        return fg
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return ndimage.binary_fill_holes(labels == sizes.argmax())


def region_masks_from_ct(ct_hu: np.ndarray) -> Dict[str, np.ndarray]:
    """Boolean masks for 'full', 'ST' and 'bone' from a 2-D reference CT slice."""
    ct_hu = np.asarray(ct_hu, dtype=np.float64)
    if ct_hu.ndim != 2:
        raise ShapeError(f"region masks are computed per 2-D slice, got {ct_hu.shape}")
    full = body_mask(ct_hu)
    if not full.any():
        raise EvaluationError("reference slice has an empty body mask (all air?)")
    soft = full & (ct_hu >= SOFT_RANGE_HU[0]) & (ct_hu <= SOFT_RANGE_HU[1])
    bone = full & (ct_hu > BONE_RANGE_HU[0]) & (ct_hu <= BONE_RANGE_HU[1])
    return {"full": full, "ST": soft, "bone": bone}


def _gaussian_kernel(cfg: SSIMConfig) -> np.ndarray:
    r = cfg.window // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(ax ** 2) / (2.0 * cfg.sigma ** 2))
    g /= g.sum()
    return g


def ssim_map(p: np.ndarray, y: np.ndarray, cfg: SSIMConfig = DEFAULT_SSIM) -> np.ndarray:
    """Per-pixel SSIM with Gaussian local statistics (reflect padding at borders)."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    g = _gaussian_kernel(cfg)

    def blur(a):
        a = ndimage.correlate1d(a, g, axis=0, mode="reflect")
        return ndimage.correlate1d(a, g, axis=1, mode="reflect")

    mp, my = blur(p), blur(y)
    vp = blur(p * p) - mp * mp
    vy = blur(y * y) - my * my
    cov = blur(p * y) - mp * my
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    num = (2.0 * mp * my + c1) * (2.0 * cov + c2)
    den = (mp * mp + my * my + c1) * (vp + vy + c2)
    return num / den


def _check(p, y, mask):
    p, y, mask = np.asarray(p), np.asarray(y), np.asarray(mask, dtype=bool)
    if p.shape != y.shape or mask.shape != p.shape:
        raise ShapeError(f"shape mismatch: {p.shape}, {y.shape}, mask {mask.shape}")
    if not mask.any():
        raise EvaluationError("empty evaluation mask")
    return p, y, mask


def masked_ssim(p, y, mask, cfg: SSIMConfig = DEFAULT_SSIM) -> float:
    p, y, mask = _check(p, y, mask)
    return float(ssim_map(p, y, cfg)[mask].mean())


def masked_psnr(p, y, mask, data_range: float = 2.0) -> float:
    """PSNR over mask pixels; identical inputs give ``math.inf``."""
    p, y, mask = _check(p, y, mask)
    d = p.astype(np.float64)[mask] - y.astype(np.float64)[mask]
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


@dataclass
class MetricsReport:
    """SSIM (fraction) and PSNR (dB) per region; None where a region is empty."""

    ssim: Dict[str, Optional[float]] = field(default_factory=dict)
    psnr: Dict[str, Optional[float]] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)
    mae_hu: Optional[float] = None

    def as_kv(self, prefix: str = "") -> Dict[str, str]:
        out = {}
        for r in REGIONS:
            out[f"{prefix}ssim.{r}"] = _fmt_value(self.ssim.get(r), 6)
            out[f"{prefix}psnr.{r}"] = _fmt_value(self.psnr.get(r), 4)
            out[f"{prefix}count.{r}"] = str(self.counts.get(r, 0))
        if self.mae_hu is not None:
            out[f"{prefix}mae_hu"] = f"{self.mae_hu:.4f}"
        return out


def _fmt_value(v: Optional[float], digits: int) -> str:
    if v is None:
        return "nan"
    if math.isinf(v):
        return "inf"
    return f"{v:.{digits}f}"


def evaluate_pair(pred_hu: np.ndarray, ref_hu: np.ndarray,
                  cfg: SSIMConfig = DEFAULT_SSIM) -> MetricsReport:
    """Masked SSIM / PSNR of a prediction against a registered reference CT."""
    pred_hu = np.asarray(pred_hu, dtype=np.float64)
    ref_hu = np.asarray(ref_hu, dtype=np.float64)
    if pred_hu.shape != ref_hu.shape:
        raise ShapeError(f"prediction {pred_hu.shape} and reference {ref_hu.shape} differ")
    if pred_hu.ndim == 2:
        pred_hu, ref_hu = pred_hu[None], ref_hu[None]
    elif pred_hu.ndim != 3:
        raise ShapeError(f"expected a 2-D slice or 3-D volume, got {pred_hu.shape}")

    ssims = {r: [] for r in REGIONS}
    psnrs = {r: [] for r in REGIONS}
    counts = {r: 0 for r in REGIONS}
    abs_err, n_body = 0.0, 0
    for ps, rs in zip(pred_hu, ref_hu):
        if not body_mask(rs).any():
            continue
        masks = region_masks_from_ct(rs)
        pn, rn = hu_to_norm(ps), hu_to_norm(rs)
        smap = ssim_map(pn, rn, cfg)
        for r in REGIONS:
            m = masks[r]
            if not m.any():
                continue
            counts[r] += int(m.sum())
            ssims[r].append(float(smap[m].mean()))
            psnrs[r].append(masked_psnr(pn, rn, m, cfg.data_range))
        body = masks["full"]
        abs_err += float(np.abs(np.clip(ps, -1024, 3000) - np.clip(rs, -1024, 3000))[body].sum())
        n_body += int(body.sum())
    if n_body == 0:
        raise EvaluationError("reference has an empty body mask in every slice")
    return MetricsReport(
        ssim={r: (float(np.mean(v)) if v else None) for r, v in ssims.items()},
        psnr={r: (float(np.mean(v)) if v else None) for r, v in psnrs.items()},
        counts=counts,
        mae_hu=abs_err / n_body,
    )


def format_table(rows: Mapping[str, MetricsReport]) -> str:
    """Text table: one row per method, SSIM (%) and PSNR (dB) for full / ST / bone."""
    name_w = max([len("Method")] + [len(k) for k in rows])
    head1 = f"{'':<{name_w}} | {'SSIM (%)':^26} | {'PSNR (dB)':^26} | {'voxels':^26}"
    head2 = f"{'Method':<{name_w}} | " + " | ".join(
        " ".join(f"{r:>8}" for r in REGIONS) for _ in range(3))
    lines = [head1, head2, "-" * len(head2)]

    def cell(v, pct):
        if v is None:
            return f"{'n/a':>8}"
        if math.isinf(v):
            return f"{'inf':>8}"
        return f"{v * 100 if pct else v:8.2f}"

    for name, rep in rows.items():
        s = " ".join(cell(rep.ssim.get(r), True) for r in REGIONS)
        p = " ".join(cell(rep.psnr.get(r), False) for r in REGIONS)
        c = " ".join(f"{rep.counts.get(r, 0):>8d}" for r in REGIONS)
        lines.append(f"{name:<{name_w}} | {s} | {p} | {c}")
    return "\n".join(lines) + "\n"


def report_kv(rows: Mapping[str, MetricsReport]) -> Dict[str, str]:
    out = {}
    for name, rep in rows.items():
        out.update(rep.as_kv(prefix=f"{name}."))
    return out
