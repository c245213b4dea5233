"""Prompt tokenization and the trainable prompt encoder.

The prompt grammar is tiny (two templates over five degradation names), so
the default encoder is a small two-layer transformer trained jointly with
the restoration model. Two linear heads project the encoded sequence to the
channel widths consumed by the two fusion points (8C and 4C).
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttnConfig, VanillaSelfAttention
from .nn import Linear, LayerNorm, Module, ModuleList, param
from .tensor import Tensor

PAD, UNK = "<pad>", "<unk>"

_TEMPLATE_WORDS = ("remove", "there", "are", "in", "the", "image")
_KINDS = ("blur", "rain", "haze", "lowlight", "snow")
_PUNCT = (",", ".")


class Vocab:
    """token -> id map; ids follow sorted token order for reproducibility."""

    def __init__(self, tokens=None):
        if tokens is None:
            tokens = sorted({PAD, UNK, *_TEMPLATE_WORDS, *_KINDS, *_PUNCT})
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.pad_id = self.index[PAD]
        self.unk_id = self.index[UNK]

    def __len__(self):
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, self.unk_id)

    def serialize(self) -> str:
        # one token per line, line index = id
        return "\n".join(self.tokens) + "\n"

    @classmethod
    def deserialize(cls, text: str) -> "Vocab":
        return cls([line for line in text.splitlines() if line])

    def content_hash(self) -> bytes:
        return hashlib.sha256(self.serialize().encode("utf-8")).digest()


def split_tokens(prompt: str) -> list[str]:
    """Lowercase, whitespace split, peel terminal ','/'.' into own tokens."""
    out: list[str] = []
    for word in prompt.lower().split():
        tail: list[str] = []
        while word and word[-1] in _PUNCT:
            tail.append(word[-1])
            word = word[:-1]
        if word:
            out.append(word)
        out.extend(reversed(tail))
    return out


def tokenize(prompt: str, vocab: Vocab, length: int) -> np.ndarray:
    """Token ids padded/truncated to a fixed length."""
    toks = split_tokens(prompt)
    if len(toks) > length:
        warnings.warn(f"prompt truncated from {len(toks)} to {length} tokens")
        toks = toks[:length]
    ids = [vocab.id_of(t) for t in toks]
    ids += [vocab.pad_id] * (length - len(ids))
    return np.array(ids, dtype=np.int64)


@dataclass
class TextEncoderConfig:
    vocab_size: int
    length: int = 20
    embed_dim: int = 128
    heads: int = 4
    layers: int = 2


class _EncoderLayer(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        # token sequence treated as an [L,1,dim] grid to reuse the attention op
        self.norm1 = LayerNorm(dim)
        self.attn = VanillaSelfAttention(AttnConfig(dim, heads, 1, 1, 1, 1), rng)
        self.norm2 = LayerNorm(dim)
        self.ff1 = Linear(dim, dim * 2, rng)
        self.ff2 = Linear(dim * 2, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        length, dim = x.shape
        attended = self.attn(T.reshape(self.norm1(x), (length, 1, dim)))
        y = T.add(x, T.reshape(attended, (length, dim)))
        return T.add(y, self.ff2(T.gelu(self.ff1(self.norm2(y)))))


class PromptEncoder(Module):
    """Embed token ids, run a small transformer, emit both fusion features.

    Output widths are tied to the restoration model's base channel count:
    feat_wide is [L, 8C] (latent fusion), feat_mid is [L, 4C] (mid-decoder
    fusion). Pure function of (ids, parameters); nothing stochastic at
    inference.
    """

    def __init__(self, cfg: TextEncoderConfig, base_channels: int,
                 rng: np.random.Generator):
        self.cfg = cfg
        dim = cfg.embed_dim
        self.embed = param(rng.normal(0.0, 0.02, (cfg.vocab_size, dim)))
        self.pos = param(rng.normal(0.0, 0.02, (cfg.length, dim)))
        self.layers = ModuleList(_EncoderLayer(dim, cfg.heads, rng)
                                 for _ in range(cfg.layers))
        self.norm = LayerNorm(dim)
        self.head_wide = Linear(dim, 8 * base_channels, rng)
        self.head_mid = Linear(dim, 4 * base_channels, rng)

    def __call__(self, ids: np.ndarray) -> tuple[Tensor, Tensor]:
        if len(ids) != self.cfg.length:
            raise ValueError(f"expected {self.cfg.length} ids, got {len(ids)}")
        x = T.add(T.embedding(self.embed, ids), self.pos)
        for layer in self.layers:
            x = layer(x)
        x = self.norm(x)
        return self.head_wide(x), self.head_mid(x)
