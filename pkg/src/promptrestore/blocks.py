"""Composite building blocks for the restoration network.

Features are channels-last [H,W,C]; the depthwise convolutions hop through
[C,H,W] internally. 1x1 convolutions are realized as linear maps on the
channel axis (identical math, better GEMM shapes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AgentSelfAttention, AttnConfig
from .nn import Conv2d, LayerNorm, Linear, Module
from .tensor import Tensor

DEGRADATION_KINDS = ("blur", "rain", "haze", "lowlight", "snow")


@dataclass
class BlockConfig:
    channels: int
    heads: int
    agent_h: int
    agent_w: int
    height: int
    width: int
    gdfn_expansion: float = 2.66

    @property
    def hidden(self) -> int:
        return max(1, round(self.channels * self.gdfn_expansion))


def _to_spatial(x: Tensor, h: int, w: int) -> Tensor:
    return T.transpose(T.reshape(x, (h, w, x.shape[-1])), (2, 0, 1))


def _to_tokens(x: Tensor) -> Tensor:
    c, h, w = x.shape
    return T.reshape(T.transpose(x, (1, 2, 0)), (h * w, c))


class GatedDConvFFN(Module):
    """Two 1x1-conv + depthwise-3x3 paths; GELU(path1) gates path2."""

    def __init__(self, channels: int, rng: np.random.Generator,
                 expansion: float = 2.66):
        h = max(1, round(channels * expansion))
        self.hidden = h
        self.proj1 = Linear(channels, h, rng)
        self.proj2 = Linear(channels, h, rng)
        self.dw1 = Conv2d(h, h, 3, rng, padding=1, groups=h)
        self.dw2 = Conv2d(h, h, 3, rng, padding=1, groups=h)
        self.proj_out = Linear(h, channels, rng)

    def __call__(self, x: Tensor) -> Tensor:
        hh, ww, c = x.shape
        tokens = T.reshape(x, (hh * ww, c))
        p1 = _to_tokens(self.dw1(_to_spatial(self.proj1(tokens), hh, ww)))
        p2 = _to_tokens(self.dw2(_to_spatial(self.proj2(tokens), hh, ww)))
        gated = T.mul(T.gelu(p1), p2)
        return T.reshape(self.proj_out(gated), (hh, ww, c))


class ContextBlock(Module):
    """norm -> agent attention -> residual, then norm -> gated FFN -> residual."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator):
        c = cfg.channels
        attn_cfg = AttnConfig(c, cfg.heads, cfg.agent_h, cfg.agent_w,
                              cfg.height, cfg.width)
        self.norm1 = LayerNorm(c)
        self.attn = AgentSelfAttention(attn_cfg, rng)
        self.norm2 = LayerNorm(c)
        self.ffn = GatedDConvFFN(c, rng, cfg.gdfn_expansion)

    def __call__(self, x: Tensor) -> Tensor:
        y = T.add(x, self.attn(self.norm1(x)))
        return T.add(y, self.ffn(self.norm2(y)))


class Downsample(Module):
    """1x1 conv C -> C/2 then pixel-unshuffle r=2: [H,W,C] -> [H/2,W/2,2C]."""

    def __init__(self, channels: int, rng: np.random.Generator):
        if channels % 2:
            raise ValueError("downsample needs even channel count")
        self.proj = Linear(channels, channels // 2, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h, w, c = x.shape
        tokens = self.proj(T.reshape(x, (h * w, c)))
        spatial = _to_spatial(tokens, h, w)
        down = T.pixel_unshuffle(spatial, 2)
        return T.transpose(down, (1, 2, 0))


class Upsample(Module):
    """1x1 conv C -> 2C then pixel-shuffle r=2: [H,W,C] -> [2H,2W,C/2]."""

    def __init__(self, channels: int, rng: np.random.Generator):
        if channels % 2:
            raise ValueError("upsample needs even channel count")
        self.proj = Linear(channels, channels * 2, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h, w, c = x.shape
        tokens = self.proj(T.reshape(x, (h * w, c)))
        spatial = _to_spatial(tokens, h, w)
        up = T.pixel_shuffle(spatial, 2)
        return T.transpose(up, (1, 2, 0))


class DegradationClassifier(Module):
    """Multi-label head on the encoder latent: which degradations are present.

    A stride-2 3x3 conv + channel LayerNorm + GELU compresses the latent,
    global average pooling removes the spatial extent, and three linear
    layers map to one raw logit per degradation kind (sigmoid belongs to
    the loss / metrics).
    """

    def __init__(self, channels: int, rng: np.random.Generator,
                 n_labels: int = len(DEGRADATION_KINDS)):
        self.conv = Conv2d(channels, channels, 3, rng, stride=2, padding=1)
        self.norm = LayerNorm(channels)
        self.fc1 = Linear(channels, max(1, channels // 2), rng)
        self.fc2 = Linear(max(1, channels // 2), max(1, channels // 4), rng)
        self.fc3 = Linear(max(1, channels // 4), n_labels, rng)

    def compress(self, x: Tensor) -> Tensor:
        # [H,W,C] -> half-resolution [H',W',C] feature
        h, w, c = x.shape
        y = self.conv(_to_spatial(x, h, w))
        return T.gelu(self.norm(T.transpose(y, (1, 2, 0))))

    def head(self, feat: Tensor) -> Tensor:
        # global mean over the spatial grid, then the classifier stack
        h, w, c = feat.shape
        pooled = T.adaptive_avg_pool(_to_spatial(feat, h, w), 1, 1)
        flat = T.reshape(pooled, (1, c))
        logits = self.fc3(T.gelu(self.fc2(T.gelu(self.fc1(flat)))))
        return T.reshape(logits, (logits.shape[-1],))

    def __call__(self, x: Tensor) -> Tensor:
        return self.head(self.compress(x))
