"""Scaled dot-product attention and multi-head attention with key padding masks.

Queries are never masked here; padded query rows are excluded later by
masked mean pooling. Key masking is additive -inf before the softmax, so
masked positions get weight exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class MhaParams:
    """Projection matrices and head geometry for one multi-head attention unit.

    All projections are pure matrices (no bias terms). Per-head query, key
    and value widths are all d_head = d_model // h.
    """

    w_q: Tensor  # [d_model, h*d_head]
    w_k: Tensor  # [d_model, h*d_head]
    w_v: Tensor  # [d_model, h*d_head]
    w_o: Tensor  # [h*d_head, d_model]
    h: int
    d_head: int

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def create(cls, rng: np.random.Generator, d_model: int, h: int,
               std: float = 0.02) -> "MhaParams":
        if d_model <= 0 or h < 1:
            raise ValueError(f"need d_model > 0 and h >= 1, got {d_model}, {h}")
        if d_model % h != 0:
            raise ValueError(f"d_model {d_model} not divisible by {h} heads")
        d_head = d_model // h
        def w(rows, cols):
            return T.tensor(rng.normal(0.0, std, (rows, cols)), requires_grad=True)
        return cls(w_q=w(d_model, h * d_head), w_k=w(d_model, h * d_head),
                   w_v=w(d_model, h * d_head), w_o=w(h * d_head, d_model),
                   h=h, d_head=d_head)

    def named(self, prefix: str):
        yield f"{prefix}.w_q", self.w_q
        yield f"{prefix}.w_k", self.w_k
        yield f"{prefix}.w_v", self.w_v
        yield f"{prefix}.w_o", self.w_o


def additive_mask(mask) -> Tensor:
    """Binary key mask -> additive row (0 where kept, -inf where masked)."""
    mask = np.asarray(mask)
    if mask.ndim != 1:
        raise ShapeError(f"mask must be 1-d, got shape {mask.shape}")
    if mask.sum() == 0:
        raise ValueError("fully masked row: mask has no unmasked key")
    return T.tensor(np.where(mask != 0, 0.0, -np.inf))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask):
    """softmax(q kᵀ / √d) over unmasked keys, applied to value rows.

    Returns (ctx [l_q×d_v], weights [l_q×l_k]).
    """
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError(f"expected 2-d q/k/v, got {q.shape}, {k.shape}, {v.shape}")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"q width {q.shape} does not match k width {k.shape}")
    if v.shape[0] != k.shape[0]:
        raise ShapeError(f"v rows {v.shape} do not match k rows {k.shape}")
    scores = T.scale(T.matmul(q, T.transpose_last2(k)), 1.0 / np.sqrt(q.shape[1]))
    weights = T.softmax_last(T.add_row(scores, additive_mask(mask)))
    return T.matmul(weights, v), weights


def multi_head_attention(p: MhaParams, query: Tensor, kv: Tensor, kv_mask,
                         dropout: float = 0.0,
                         rng: np.random.Generator | None = None) -> Tensor:
    """Project, attend per head over kv, concatenate heads, apply w_o.

    query and kv are [l, d_model], or [n, l, d_model] to attend n sequences
    at once; batched calls take kv_mask=None (nothing masked), single calls
    take a binary key mask. dropout (off by default) zeroes attention weights
    at the given rate, with inverted scaling; it needs an rng and is only for
    training.
    """
    if query.ndim not in (2, 3) or query.shape[-1] != p.d_model:
        raise ShapeError(f"query shape {query.shape} does not match d_model {p.d_model}")
    if kv.ndim != query.ndim or kv.shape[-1] != p.d_model or kv.shape[:-2] != query.shape[:-2]:
        raise ShapeError(f"kv shape {kv.shape} does not match query shape {query.shape}")
    if kv_mask is None:
        if query.ndim == 2:
            raise ValueError("unbatched attention needs a key mask (pass all ones to keep every key)")
    elif query.ndim == 3:
        raise ValueError("batched attention does not support key masks")
    qh = T.split_heads(T.matmul(query, p.w_q), p.h)   # [..., h, l_q, d_head]
    kh = T.split_heads(T.matmul(kv, p.w_k), p.h)
    vh = T.split_heads(T.matmul(kv, p.w_v), p.h)
    scores = T.scale(T.matmul(qh, T.transpose_last2(kh)), 1.0 / np.sqrt(p.d_head))
    if kv_mask is not None:
        scores = T.add_row(scores, additive_mask(kv_mask))
    weights = T.softmax_last(scores)
    if dropout > 0.0:
        if rng is None:
            raise ValueError("dropout needs an rng")
        keep = (rng.random(weights.shape) >= dropout) / (1.0 - dropout)
        weights = T.mul(weights, T.tensor(keep))
    ctx = T.merge_heads(T.matmul(weights, vh))        # [..., l_q, h*d_head]
    return T.matmul(ctx, p.w_o)
