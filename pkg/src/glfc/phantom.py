"""Seeded 2-D head phantoms paired with CBCT-like degraded copies.

Randomness comes from numpy's PCG64 generator, seeded through a
``SeedSequence`` so output is identical across platforms. Anatomy and
artifacts use separate child streams: changing an artifact strength never
changes the underlying CT.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .io import Volume

AIR, SOFT, BONE = 0, 1, 2

AIR_HU = -1000.0


@dataclass(frozen=True)
class PhantomConfig:
    size: int = 256
    seed: int = 0
    shading: float = 0.2        # peak relative change of attenuation
    streak: float = 150.0       # HU amplitude of angular streaks
    noise: float = 60.0         # HU std of additive noise
    drift: float = 0.08         # relative HU scale drift (offset drift is 500 * drift HU)

    def __post_init__(self):
        if self.size <= 0 or self.size % 2:
            raise ValueError(f"phantom size must be even and positive, got {self.size}")
        if min(self.shading, self.streak, self.noise, self.drift) < 0:
            raise ValueError("artifact strengths must be >= 0")


def _grid(n: int):
    ax = (np.arange(n, dtype=np.float64) + 0.5) / n * 2.0 - 1.0
    return np.meshgrid(ax, ax, indexing="ij")


def _ellipse(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    dy, dx = yy - cy, xx - cx
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    return u * u + v * v


def _smooth_field(rng, yy, xx, terms: int, max_freq: float) -> np.ndarray:
    """Sum of random low-frequency cosines scaled to [-1, 1]."""
    f = np.zeros_like(yy)
    for _ in range(terms):
        ky, kx = rng.uniform(-max_freq, max_freq, 2)
        f += rng.uniform(0.5, 1.0) * np.cos(np.pi * (ky * yy + kx * xx) + rng.uniform(0, 2 * np.pi))
    peak = np.abs(f).max()
    return f / peak if peak > 0 else f


def _anatomy(rng, n: int) -> Tuple[np.ndarray, np.ndarray]:
    yy, xx = _grid(n)
    cy, cx = rng.uniform(-0.04, 0.04, 2)
    ry, rx = rng.uniform(0.74, 0.84), rng.uniform(0.60, 0.70)
    theta = rng.uniform(-0.15, 0.15)
    thick = rng.uniform(0.07, 0.10)
    outer = _ellipse(yy, xx, cy, cx, ry, rx, theta) <= 1.0
    inner = _ellipse(yy, xx, cy, cx, ry * (1 - thick), rx * (1 - thick), theta) <= 1.0

    labels = np.full((n, n), AIR, dtype=np.uint8)
    labels[outer] = BONE
    labels[inner] = SOFT

    ct = np.full((n, n), AIR_HU)
    skull = 1000.0 + 250.0 * _smooth_field(rng, yy, xx, 3, 3.0)
    ct[labels == BONE] = skull[labels == BONE]

    # grey/white matter texture in [0, 60] HU
    brain = 30.0 + 22.0 * _smooth_field(rng, yy, xx, 6, 4.0)
    for _ in range(rng.integers(3, 6)):
        by, bx = rng.uniform(-0.4, 0.4, 2)
        r = rng.uniform(0.08, 0.2)
        brain += rng.uniform(-12, 12) * np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2 * r * r))
    brain = np.clip(brain, 0.0, 60.0)
    # paired ventricles (CSF-like, ~5-10 HU)
    vy = cy + rng.uniform(-0.1, 0.05)
    off = rng.uniform(0.08, 0.14)
    vent_hu = rng.uniform(4.0, 10.0)
    for sign in (-1.0, 1.0):
        v = _ellipse(yy, xx, vy, cx + sign * off, rng.uniform(0.12, 0.2),
                     rng.uniform(0.04, 0.07), sign * rng.uniform(0.1, 0.4)) <= 1.0
        brain[v] = vent_hu
    ct[labels == SOFT] = brain[labels == SOFT]
    return ct, labels


def _degrade(rng, ct: np.ndarray, cfg: PhantomConfig) -> np.ndarray:
    n = ct.shape[0]
    yy, xx = _grid(n)
    shading = _smooth_field(rng, yy, xx, 4, 1.2)
    # angular streaks through a random point near the centre
    py, px = rng.uniform(-0.2, 0.2, 2)
    streaks = np.zeros_like(ct)
    for _ in range(rng.integers(4, 9)):
        ang = rng.uniform(0, np.pi)
        dist = np.abs(np.cos(ang) * (yy - py) - np.sin(ang) * (xx - px))
        width = rng.uniform(0.005, 0.02)
        streaks += rng.choice([-1.0, 1.0]) * np.exp(-(dist / width) ** 2)
    scale_u, offset_u = rng.uniform(-1.0, 1.0, 2)
    noise = rng.standard_normal(ct.shape)

    cb = ct + (ct - AIR_HU) * (cfg.shading * shading)
    cb = cb + cfg.streak * streaks
    cb = cb * (1.0 + cfg.drift * scale_u) + 500.0 * cfg.drift * offset_u
    cb = cb + cfg.noise * noise
    return cb


def gen_phantom_pair(cfg: PhantomConfig) -> Tuple[Volume, Volume, np.ndarray]:
    """Return (ct, cbct, labels); labels are 0 air, 1 soft tissue, 2 bone."""
    anat_seq, art_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    ct, labels = _anatomy(np.random.Generator(np.random.PCG64(anat_seq)), cfg.size)
    cbct = _degrade(np.random.Generator(np.random.PCG64(art_seq)), ct, cfg)
    return Volume(ct.astype(np.float32)), Volume(cbct.astype(np.float32)), labels
