"""Mamba-enhanced UNet and the plain-UNet ablation variants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import ConvBlock, Conv2d, LayerNorm, Linear, Module, param
from .ssm import SSMParams, ss2d, token_grid_side
from .tensor import Tensor

VARIANTS = ("meunet", "meunet_v1", "meunet_v2", "meunet_fixed_patch",
            "unet_d2", "unet_d3", "unet_d4")

FIXED_PATCH = 8


def adaptive_patch_size(n: int, tokens: int) -> int:
    """Patch side M with (n / M)**2 == tokens."""
    if tokens <= 0 or (n * n) % tokens:
        raise ConfigError(f"{n}x{n} map cannot be split into {tokens} tokens")
    m = math.isqrt(n * n // tokens)
    if m * m * tokens != n * n:
        raise ConfigError(f"patch size sqrt({n}^2/{tokens}) is not an integer")
    return m


@dataclass(frozen=True)
class MEUNetConfig:
    variant: str = "meunet"
    channels: Tuple[int, ...] = (64, 128, 256)
    token_count: int = 1024
    vss_depths: Tuple[int, int] = (16, 8)
    embed_dims: Tuple[int, int] = (128, 256)
    state_dim: int = 8
    input_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "vss_depths", tuple(int(d) for d in self.vss_depths))
        object.__setattr__(self, "embed_dims", tuple(int(e) for e in self.embed_dims))

    @property
    def downsamples(self) -> int:
        if self.variant.startswith("unet_d"):
            return int(self.variant[len("unet_d"):])
        return 2

    @property
    def vss_levels(self) -> Tuple[int, ...]:
        return {"meunet": (0, 1), "meunet_fixed_patch": (0, 1),
                "meunet_v1": (0,), "meunet_v2": (1,)}.get(self.variant, ())

    def level_channels(self) -> Tuple[int, ...]:
        """Channel width per resolution level; unet_dN extends by doubling."""
        ch = list(self.channels)
        while len(ch) < self.downsamples + 1:
            ch.append(ch[-1] * 2)
        return tuple(ch[: self.downsamples + 1])

    def patch_size(self, level: int) -> int:
        n = self.input_size >> level
        if self.variant == "meunet_fixed_patch":
            if n % FIXED_PATCH:
                raise ConfigError(f"{n}x{n} map is not divisible by the fixed {FIXED_PATCH}x{FIXED_PATCH} patch")
            return FIXED_PATCH
        return adaptive_patch_size(n, self.token_count)

    def validate(self) -> "MEUNetConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.variant.startswith("meunet") and len(self.channels) != 3:
            raise ConfigError("MEUNet variants need exactly three channel widths")
        if any(c <= 0 for c in self.channels) or not self.channels:
            raise ConfigError("channel widths must be positive")
        if self.input_size % (1 << self.downsamples):
            raise ConfigError(f"input size {self.input_size} not divisible by 2^{self.downsamples}")
        for lvl in self.vss_levels:
            self.patch_size(lvl)
            if self.vss_depths[lvl] < 0 or self.embed_dims[lvl] <= 0:
                raise ConfigError("VSS depths must be >= 0 and embed dims > 0")
        if self.state_dim <= 0:
            raise ConfigError("state_dim must be positive")
        return self


# -- patching -------------------------------------------------------------

def patchify(feat: Tensor, m: int) -> Tensor:
    """[B,C,N,N] -> [B,(N/m)^2,C*m*m]; tokens in row-major patch order."""
    B, C, N, N2 = feat.shape
    if N != N2 or N % m:
        raise ShapeError(f"feature map {feat.shape} cannot be cut into {m}x{m} patches")
    g = N // m
    x = T.reshape(feat, (B, C, g, m, g, m))
    x = T.permute(x, (0, 2, 4, 1, 3, 5))
    return T.reshape(x, (B, g * g, C * m * m))


def unpatchify(tokens: Tensor, m: int, channels: int) -> Tensor:
    B, L, _ = tokens.shape
    g = token_grid_side(L)
    x = T.reshape(tokens, (B, g, g, channels, m, m))
    x = T.permute(x, (0, 3, 1, 4, 2, 5))
    return T.reshape(x, (B, channels, g * m, g * m))


class PatchEmbed(Module):
    def __init__(self, channels: int, patch: int, embed: int, rng, dtype=np.float32):
        self.patch = patch
        self.channels = channels
        flat = channels * patch * patch
        self.embed = Linear(flat, embed, rng, dtype)
        self.unembed = Linear(embed, flat, rng, dtype, bias=False)

    def forward(self, feat: Tensor) -> Tensor:
        return self.embed(patchify(feat, self.patch))

    def inverse(self, tokens: Tensor) -> Tensor:
        return unpatchify(self.unembed(tokens), self.patch, self.channels)


# -- VSS ------------------------------------------------------------------

class VSSBlock(Module):
    """Residual gated SS2D block on a [B, L, E] token sequence."""

    def __init__(self, embed: int, state: int, rng, dtype=np.float32, zero_out: bool = True):
        self.norm_in = LayerNorm(embed, dtype)
        self.in_proj = Linear(embed, 2 * embed, rng, dtype)
        self.dw_weight = param(rng.normal(0.0, 1.0 / 3.0, (embed, 3, 3)), dtype)
        self.dw_bias = param(np.zeros(embed), dtype)
        self.ssm = SSMParams(embed, state, rng, dtype, n_sets=4)
        self.norm_out = LayerNorm(embed, dtype)
        self.out_proj = Linear(embed, embed, rng, dtype, zero=zero_out)

    def forward(self, tokens: Tensor) -> Tensor:
        B, L, E = tokens.shape
        G = token_grid_side(L)
        h = self.in_proj(self.norm_in(tokens))
        main, gate = h[..., :E], h[..., E:]
        grid = T.permute(T.reshape(main, (B, G, G, E)), (0, 3, 1, 2))
        grid = T.silu(T.depthwise_conv2d(grid, self.dw_weight, self.dw_bias))
        grid = T.permute(grid, (0, 2, 3, 1))
        y = ss2d(grid, self.ssm, self.norm_out, self.out_proj,
                 gate=T.reshape(gate, (B, G, G, E)))
        return tokens + T.reshape(y, (B, L, E))


class VSSSkip(Module):
    """Patch tokens -> VSS stack -> back to a feature map of the input shape.

    The stack's change to the tokens is un-embedded and added to the feature
    map, so a stack whose blocks are all identities passes the skip feature
    through unchanged.
    """

    def __init__(self, channels: int, patch: int, embed: int, depth: int, state: int,
                 rng, dtype=np.float32):
        self.patch_embed = PatchEmbed(channels, patch, embed, rng, dtype)
        self.blocks = [VSSBlock(embed, state, rng, dtype) for _ in range(depth)]

    def forward(self, feat: Tensor) -> Tensor:
        tokens = self.patch_embed(feat)
        out = tokens
        for blk in self.blocks:
            out = blk(out)
        return feat + self.patch_embed.inverse(out - tokens)


# -- the network ----------------------------------------------------------

class UpStage(Module):
    def __init__(self, c_in: int, c_out: int, rng, dtype=np.float32):
        self.up_conv = Conv2d(c_in, c_out, rng, dtype=dtype)
        self.block = ConvBlock(2 * c_out, c_out, rng, dtype)

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        x = self.up_conv(T.upsample2(x))
        return self.block(T.concat([x, skip], axis=1))


class MEUNet(Module):
    def __init__(self, cfg: MEUNetConfig, rng: Optional[np.random.Generator] = None,
                 dtype=np.float32):
        cfg.validate()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = cfg
        self._dtype = np.dtype(dtype)
        ch = cfg.level_channels()
        depth = cfg.downsamples
        self.encoders = [ConvBlock(1 if i == 0 else ch[i - 1], ch[i], rng, dtype)
                         for i in range(depth)]
        self.bottleneck = ConvBlock(ch[depth - 1], ch[depth], rng, dtype)
        self.decoders = [UpStage(ch[i + 1], ch[i], rng, dtype) for i in reversed(range(depth))]
        self.head = Conv2d(ch[0], 1, rng, k=1, dtype=dtype)
        skips = []
        for lvl in cfg.vss_levels:
            skips.append(VSSSkip(ch[lvl], cfg.patch_size(lvl), cfg.embed_dims[lvl],
                                 cfg.vss_depths[lvl], cfg.state_dim, rng, dtype))
        self.skip_vss = skips

    @property
    def dtype(self):
        return self._dtype

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (cfg.input_size, cfg.input_size):
            raise ShapeError(f"expected input [B,1,{cfg.input_size},{cfg.input_size}], got {x.shape}")
        skips = []
        h = x
        for enc in self.encoders:
            h = enc(h)
            skips.append(h)
            h = T.maxpool2(h)
        h = self.bottleneck(h)
        for lvl, mod in zip(cfg.vss_levels, self.skip_vss):
            skips[lvl] = mod(skips[lvl])
        for dec, skip in zip(self.decoders, reversed(skips)):
            h = dec(h, skip)
        return T.tanh(self.head(h))

    def predict(self, x: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self.forward(Tensor(np.asarray(x, dtype=self.dtype))).data


def build_model(cfg: MEUNetConfig, seed: int = 0, dtype=np.float32) -> MEUNet:
    return MEUNet(cfg, np.random.default_rng(seed), dtype)


def param_count(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


def serialized_size(model: Module) -> int:
    """Byte size of the model's checkpoint file."""
    from .io import CKPT_MAGIC

    total = len(CKPT_MAGIC) + 4
    for name, p in model.named_parameters():
        total += 8 + len(name.encode("utf-8")) + 4 * p.ndim + 4 * p.size
    return total


def miniature_config(variant: str = "meunet", size: int = 32, **overrides) -> MEUNetConfig:
    """Small config for tests and desk-scale training."""
    tokens = overrides.pop("token_count", (size // 8) ** 2)
    base = MEUNetConfig(variant=variant, channels=(4, 8, 16), token_count=tokens,
                        vss_depths=(2, 1), embed_dims=(8, 16), state_dim=4, input_size=size)
    return replace(base, **overrides)
