"""Coordinate encoder: quadkey n-gram self-attention fused with learnable
Fourier features, projected into the recommender's embedding space.

One (lat, lon) becomes one D-dimensional vector. The n-gram branch embeds
the overlapping quadkey grams, adds per-index position embeddings, runs
single-head self-attention and mean-pools; the Fourier branch maps the
raw digit vector through a trainable frequency matrix. Both are fused by
a single affine layer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geocode import NGramSequence, gram_index, ngrams, project, quadkey

CHECKPOINT_PREFIX = "gcim."


@dataclass
class GeoEncoderConfig:
    level: int = 25          # quadkey length L
    ngram_n: int = 3
    gram_dim: int = 64       # gram embedding width
    key_dim: int = 64        # attention key width
    fourier_dim: int = 64    # Fourier output width M (even)
    fourier_scale: float = 1.0  # frequency init: N(0, scale^-2)
    out_dim: int = 128       # fused output width D
    normalize_digits: bool = False  # rescale digits 0..3 into [0, 1]

    def __post_init__(self):
        if self.fourier_dim % 2 != 0:
            raise ValueError(f"fourier_dim must be even, got {self.fourier_dim}")
        if min(self.level, self.ngram_n, self.gram_dim, self.key_dim,
               self.fourier_dim, self.out_dim) < 1:
            raise ValueError("all encoder dimensions must be >= 1")

    @property
    def n_positions(self) -> int:
        return max(1, self.level - self.ngram_n + 1)

    @property
    def n_grams_vocab(self) -> int:
        return 4**self.ngram_n


class GeoEncoderParams:
    """Trainable state for the coordinate encoder."""

    def __init__(self, config: GeoEncoderConfig, rng: np.random.Generator):
        c = config
        self.config = c
        self.gram_table = ad.parameter(rng.normal(0.0, 0.02, (c.n_grams_vocab, c.gram_dim)))
        self.pos_table = ad.parameter(rng.normal(0.0, 0.02, (c.n_positions, c.gram_dim)))
        self.wq = ad.parameter(rng.normal(0.0, 1.0 / math.sqrt(c.gram_dim), (c.gram_dim, c.key_dim)))
        self.wk = ad.parameter(rng.normal(0.0, 1.0 / math.sqrt(c.gram_dim), (c.gram_dim, c.key_dim)))
        self.wv = ad.parameter(rng.normal(0.0, 1.0 / math.sqrt(c.gram_dim), (c.gram_dim, c.gram_dim)))
        self.w_s = ad.parameter(rng.normal(0.0, 1.0 / c.fourier_scale, (c.fourier_dim // 2, c.level)))
        self.fusion_w = ad.parameter(
            rng.normal(0.0, 1.0 / math.sqrt(c.gram_dim + c.fourier_dim), (c.gram_dim + c.fourier_dim, c.out_dim))
        )
        self.fusion_b = ad.parameter(np.zeros(c.out_dim))

    def parameters(self) -> list[Tensor]:
        return [self.gram_table, self.pos_table, self.wq, self.wk, self.wv,
                self.w_s, self.fusion_w, self.fusion_b]

    def named_arrays(self) -> dict[str, np.ndarray]:
        names = ["gram_table", "pos_table", "wq", "wk", "wv", "w_s", "fusion_w", "fusion_b"]
        return {CHECKPOINT_PREFIX + n: getattr(self, n).values for n in names}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name in ["gram_table", "pos_table", "wq", "wk", "wv", "w_s", "fusion_w", "fusion_b"]:
            tensor = getattr(self, name)
            src = arrays[CHECKPOINT_PREFIX + name]
            if src.shape != tensor.shape:
                raise ValueError(f"{name}: checkpoint shape {src.shape} vs model {tensor.shape}")
            tensor.values = src.copy()


def coordinate_features(lats, lons, config: GeoEncoderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Digit vectors (N, L) and gram index matrix (N, P) for coordinates."""
    lats = np.atleast_1d(np.asarray(lats, dtype=np.float64))
    lons = np.atleast_1d(np.asarray(lons, dtype=np.float64))
    n = len(lats)
    digits = np.zeros((n, config.level), dtype=np.float64)
    grams = np.zeros((n, config.n_positions), dtype=np.int64)
    for i in range(n):
        key = quadkey(project(lats[i], lons[i], config.level))
        digits[i] = key.digit_values()
        seq = ngrams(key, config.ngram_n)
        grams[i] = [gram_index(g) for g in seq.grams]
    if config.normalize_digits:
        digits /= 3.0
    return digits, grams


def attend_gram_batch(gram_idx: np.ndarray, params: GeoEncoderParams) -> Tensor:
    """Self-attention over gram embeddings, mean-pooled to (N, gram_dim)."""
    c = params.config
    n, p = gram_idx.shape
    if p != c.n_positions:
        raise ValueError(f"expected {c.n_positions} grams per row, got {p}")
    x = ad.embedding_gather(params.gram_table, gram_idx)  # (N, P, dg)
    pos = ad.embedding_gather(params.pos_table, np.arange(p))  # (P, dg)
    pos = ad.broadcast_to(ad.reshape(pos, (1, p, c.gram_dim)), (n, p, c.gram_dim))
    x = ad.add(x, pos)
    q = ad.matmul(x, params.wq)
    k = ad.matmul(x, params.wk)
    v = ad.matmul(x, params.wv)
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(c.key_dim))
    attn = ad.softmax(scores)
    pooled = ad.mean(ad.matmul(attn, v), axis=1)  # (N, dg)
    return pooled


def fourier_batch(digits: np.ndarray, w_s: Tensor, fourier_dim: int) -> Tensor:
    """F(S) = (1/sqrt(M)) [cos(S W_s^T) || sin(S W_s^T)] per row."""
    if digits.shape[1] != w_s.shape[1]:
        raise ValueError(f"digit width {digits.shape[1]} vs frequency matrix {w_s.shape}")
    proj = ad.matmul(ad.constant(digits), ad.transpose(w_s))  # (N, M/2)
    feats = ad.concat([ad.cos(proj), ad.sin(proj)], axis=-1)
    return ad.mul(feats, 1.0 / math.sqrt(fourier_dim))


def encode_batch(lats, lons, params: GeoEncoderParams, *, zero_fourier: bool = False) -> Tensor:
    """Encode N coordinates into (N, out_dim) through the fused affine map."""
    c = params.config
    digits, grams = coordinate_features(lats, lons, c)
    pooled = attend_gram_batch(grams, params)
    if zero_fourier:
        four = ad.constant(np.zeros((digits.shape[0], c.fourier_dim)))
    else:
        four = fourier_batch(digits, params.w_s, c.fourier_dim)
    z = ad.concat([pooled, four], axis=-1)
    return ad.add(ad.matmul(z, params.fusion_w),
                  ad.broadcast_to(ad.reshape(params.fusion_b, (1, c.out_dim)), (digits.shape[0], c.out_dim)))


def encode_gps(lat: float, lon: float, params: GeoEncoderParams, *, zero_fourier: bool = False) -> Tensor:
    """Single-coordinate encoding, shape (out_dim,)."""
    out = encode_batch([lat], [lon], params, zero_fourier=zero_fourier)
    return ad.reshape(out, (params.config.out_dim,))


def attend_grams(grams: NGramSequence, params: GeoEncoderParams) -> Tensor:
    """Attention-pooled embedding of one gram sequence, shape (gram_dim,)."""
    idx = np.array([[gram_index(g) for g in grams.grams]], dtype=np.int64)
    pooled = attend_gram_batch(idx, params)
    return ad.reshape(pooled, (params.config.gram_dim,))


def fourier_encode(digit_vector, w_s: Tensor) -> Tensor:
    """Fourier features of one digit vector, shape (M,)."""
    s = np.asarray(digit_vector, dtype=np.float64).reshape(1, -1)
    m = 2 * w_s.shape[0]
    return ad.reshape(fourier_batch(s, w_s, m), (m,))
