"""Set-Transformer building blocks over the autodiff core.

Blocks follow the post-norm residual form without positional encoding or
dropout::

    L   = LayerNorm(X + Multihead(X, Y, Y))
    MAB = LayerNorm(L + FFN(L))
    SAB(X)  = MAB(X, X)
    PMA(Z)  = MAB(S, FFN(Z))          # S: k trainable seed vectors
    Encoder = SAB o ... o SAB          # b blocks
    Decoder = FFN o SAB o PMA

All blocks accept leading batch dimensions: a set is the second-to-last axis.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError
from .nn import Module, Parameter, Tensor, affine, conv1d, glorot_uniform, layer_norm, ones, relu, softmax, swapaxes, zeros


@dataclass(frozen=True)
class Hyperparams:
    alpha: int = 2  # patch-embedding kernel size
    beta: int = 1  # stride
    gamma: int = 1  # patch size
    D: int = 128  # conv filters = latent dim
    h: int = 8  # attention heads
    ffe: int = 256  # feed-forward expansion
    b: int = 2  # stacked SAB blocks in the encoder
    k: int = 3  # PMA seed vectors

    def __post_init__(self):
        for name, value in asdict(self).items():
            if int(value) != value or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.D % self.h:
            raise ConfigurationError(f"latent dim {self.D} is not divisible by {self.h} heads")
        if self.gamma != 1:
            raise ConfigurationError("only patch size gamma=1 is supported")

    @property
    def d(self) -> int:
        return self.D

    @property
    def head_dim(self) -> int:
        return self.D // self.h

    def to_dict(self) -> dict:
        return asdict(self)


def attention(Q: Tensor, K: Tensor, V: Tensor) -> Tensor:
    """Scaled dot-product attention, softmax over keys."""
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeError(f"attention: Q {Q.shape}, K {K.shape}, V {V.shape} do not agree")
    scores = (Q * (1.0 / math.sqrt(Q.shape[-1]))) @ swapaxes(K, -1, -2)
    return softmax(scores, axis=-1) @ V


def _split_heads(x: Tensor, h: int) -> Tensor:
    *lead, n, d = x.shape
    return swapaxes(x.reshape(*lead, n, h, d // h), -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    return swapaxes(x, -2, -3).reshape(*lead, n, h * dh)


class PatchEmbed(Module):
    """1-D convolution over time; each output step becomes a D-dim token."""

    def __init__(self, c_in: int, hp: Hyperparams, rng: np.random.Generator, dtype=np.float32):
        self.stride = hp.beta
        self.kernels = glorot_uniform(rng, (hp.D, c_in, hp.alpha), c_in * hp.alpha, hp.D * hp.alpha, dtype)
        self.bias = zeros(hp.D, dtype)

    def forward(self, x: Tensor) -> Tensor:
        """(..., C_in, L) -> (..., N, D)."""
        return swapaxes(conv1d(x, self.kernels, self.bias, self.stride), -1, -2)


class MultiheadAttention(Module):
    """Per-head projections stored as fused d x d matrices (head j owns columns j*d/h .. (j+1)*d/h)."""

    def __init__(self, d: int, h: int, rng: np.random.Generator, dtype=np.float32):
        if d % h:
            raise ConfigurationError(f"latent dim {d} is not divisible by {h} heads")
        self.h = h
        self.wq = glorot_uniform(rng, (d, d), d, d, dtype)
        self.wk = glorot_uniform(rng, (d, d), d, d, dtype)
        self.wv = glorot_uniform(rng, (d, d), d, d, dtype)
        self.wo = glorot_uniform(rng, (d, d), d, d, dtype)

    def forward(self, Q: Tensor, K: Tensor, V: Tensor) -> Tensor:
        d = self.wq.shape[0]
        for name, x in (("Q", Q), ("K", K), ("V", V)):
            if x.shape[-1] != d:
                raise ShapeError(f"multihead: {name} has feature dim {x.shape[-1]}, expected {d}")
        q = _split_heads(affine(Q, self.wq), self.h)
        k = _split_heads(affine(K, self.wk), self.h)
        v = _split_heads(affine(V, self.wv), self.h)
        return affine(_merge_heads(attention(q, k, v)), self.wo)


class FeedForward(Module):
    """max(0, x W1 + b1) W2 + b2."""

    def __init__(self, d: int, ffe: int, rng: np.random.Generator, dtype=np.float32):
        self.w1 = glorot_uniform(rng, (d, ffe), d, ffe, dtype)
        self.b1 = zeros(ffe, dtype)
        self.w2 = glorot_uniform(rng, (ffe, d), ffe, d, dtype)
        self.b2 = zeros(d, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return affine(relu(affine(x, self.w1, self.b1)), self.w2, self.b2)


class MAB(Module):
    def __init__(self, d: int, h: int, ffe: int, rng: np.random.Generator, dtype=np.float32):
        self.attn = MultiheadAttention(d, h, rng, dtype)
        self.ln1_gain = ones(d, dtype)
        self.ln1_shift = zeros(d, dtype)
        self.ffn = FeedForward(d, ffe, rng, dtype)
        self.ln2_gain = ones(d, dtype)
        self.ln2_shift = zeros(d, dtype)

    def forward(self, X: Tensor, Y: Tensor) -> Tensor:
        if X.shape[-1] != Y.shape[-1]:
            raise ShapeError(f"mab: X {X.shape} and Y {Y.shape} differ in feature dim")
        L = layer_norm(X + self.attn(X, Y, Y), self.ln1_gain, self.ln1_shift)
        return layer_norm(L + self.ffn(L), self.ln2_gain, self.ln2_shift)


class SAB(Module):
    def __init__(self, d: int, h: int, ffe: int, rng: np.random.Generator, dtype=np.float32):
        self.mab = MAB(d, h, ffe, rng, dtype)

    def forward(self, X: Tensor) -> Tensor:
        return self.mab(X, X)


class PMA(Module):
    """Pools any number of set elements onto ``k`` trainable seed vectors."""

    def __init__(self, d: int, h: int, ffe: int, k: int, rng: np.random.Generator, dtype=np.float32):
        self.seeds = Parameter((rng.standard_normal((k, d)) * 0.02).astype(dtype))
        self.ffn = FeedForward(d, ffe, rng, dtype)
        self.mab = MAB(d, h, ffe, rng, dtype)

    def forward(self, Z: Tensor) -> Tensor:
        if Z.shape[-2] < 1:
            raise ShapeError("pma: empty set")
        return self.mab(self.seeds, self.ffn(Z))


class Encoder(Module):
    def __init__(self, hp: Hyperparams, rng: np.random.Generator, dtype=np.float32):
        self.blocks = [SAB(hp.d, hp.h, hp.ffe, rng, dtype) for _ in range(hp.b)]

    def forward(self, X: Tensor) -> Tensor:
        for block in self.blocks:
            X = block(X)
        return X


class Decoder(Module):
    def __init__(self, hp: Hyperparams, rng: np.random.Generator, dtype=np.float32):
        self.pma = PMA(hp.d, hp.h, hp.ffe, hp.k, rng, dtype)
        self.sab = SAB(hp.d, hp.h, hp.ffe, rng, dtype)
        self.ffn = FeedForward(hp.d, hp.ffe, rng, dtype)

    def forward(self, Z: Tensor) -> Tensor:
        return self.ffn(self.sab(self.pma(Z)))
