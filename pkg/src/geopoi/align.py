"""POI alignment projector: one affine map from transition-embedding
space into the recommender's embedding space, plus slot splicing.

The projector is trained jointly with the recommender while the source
embeddings stay frozen. Splicing substitutes aligned vectors at the POI
placeholder positions of a token-embedding sequence.
"""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_PREFIX = "pam."


class PoiAlignerParams:
    """Affine map in_dim -> out_dim; weight shaped (out_dim, in_dim)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = ad.parameter(rng.normal(0.0, 1.0 / math.sqrt(in_dim), (out_dim, in_dim)))
        self.bias = ad.parameter(np.zeros(out_dim))

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {CHECKPOINT_PREFIX + "weight": self.weight.values,
                CHECKPOINT_PREFIX + "bias": self.bias.values}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, tensor in (("weight", self.weight), ("bias", self.bias)):
            src = arrays[CHECKPOINT_PREFIX + name]
            if src.shape != tensor.shape:
                raise ValueError(f"pam.{name}: checkpoint shape {src.shape} vs model {tensor.shape}")
            tensor.values = src.copy()


def align(e: Tensor, params: PoiAlignerParams) -> Tensor:
    """Project one embedding (in_dim,) to (out_dim,)."""
    if e.shape != (params.in_dim,):
        raise ValueError(f"align: expected shape ({params.in_dim},), got {e.shape}")
    if not np.isfinite(e.values).all():
        raise ValueError("align: non-finite input embedding")
    return ad.add(ad.matmul(params.weight, e), params.bias)


def align_batch(e: Tensor, params: PoiAlignerParams) -> Tensor:
    """Project a stack of embeddings (N, in_dim) to (N, out_dim)."""
    if e.values.ndim != 2 or e.shape[1] != params.in_dim:
        raise ValueError(f"align_batch: expected (N, {params.in_dim}), got {e.shape}")
    n = e.shape[0]
    proj = ad.matmul(e, ad.transpose(params.weight))
    return ad.add(proj, ad.broadcast_to(ad.reshape(params.bias, (1, params.out_dim)), (n, params.out_dim)))


def splice(h_text: Tensor, slots: list[int], aligned: Tensor | list[Tensor]) -> Tensor:
    """Replace rows of (T, D) `h_text` at `slots` with aligned vectors.

    Slot positions must be strictly increasing and within bounds; the
    sequence length is unchanged and non-slot rows are untouched.
    """
    if isinstance(aligned, list):
        if aligned:
            aligned = ad.concat([ad.reshape(a, (1, a.shape[0])) for a in aligned], axis=0)
        else:
            aligned = ad.constant(np.zeros((0, h_text.shape[1])))
    if len(slots) != aligned.shape[0]:
        raise ValueError(f"splice: {len(slots)} slots but {aligned.shape[0]} aligned vectors")
    if not slots:
        return h_text
    if any(b <= a for a, b in zip(slots, slots[1:])):
        raise ValueError(f"splice: slot positions must be strictly increasing, got {slots}")
    if slots[0] < 0 or slots[-1] >= h_text.shape[0]:
        raise ValueError(f"splice: slots {slots} out of bounds for length {h_text.shape[0]}")
    return ad.scatter_rows(h_text, np.asarray(slots, dtype=np.int64), aligned)
