"""Dual cross-attention between passage and question-answer segments.

The layer takes the encoder output split in two, runs k rounds where each
side attends over the other, then mean-pools both sides and fuses them
into a single option vector for the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import MhaParams, multi_head_attention
from .tensor import ShapeError, Tensor

FUSE_MODES = ("mul", "sum", "concat")
DIRECTIONS = ("both", "p2q_only", "q2p_only")
VARIANTS = ("plain", "tb")


@dataclass
class DumaConfig:
    """Shape and wiring of the co-attention head.

    direction picks which attention pass survives: p2q_only keeps the pass
    where the passage rows query the question-answer rows, q2p_only the
    reverse, both keeps the pair and fuses their pooled vectors.
    """

    fuse_mode: str = "concat"
    direction: str = "both"
    k: int = 2
    variant: str = "plain"
    share_directions: bool = True
    share_layers: bool = True

    def __post_init__(self):
        if self.fuse_mode not in FUSE_MODES:
            raise ValueError(f"fuse_mode must be one of {FUSE_MODES}, got {self.fuse_mode!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not isinstance(self.k, int) or self.k < 1:
            raise ValueError(f"k must be a positive int, got {self.k!r}")


def output_width(cfg: DumaConfig, d_model: int) -> int:
    """Width of the vector duma_forward hands to the decoder."""
    if cfg.fuse_mode == "concat" and cfg.direction == "both":
        return 2 * d_model
    return d_model


@dataclass
class TbExtras:
    """Residual-block trimmings for the tb variant: two layer norms and a
    position-wise feed-forward around each attention pass (post-norm order)."""

    ln1_g: Tensor
    ln1_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln2_g: Tensor
    ln2_b: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, d_model: int, std: float = 0.02) -> "TbExtras":
        d_ff = 4 * d_model
        t = lambda a: Tensor(a, requires_grad=True)
        return cls(
            ln1_g=t(np.ones(d_model)),
            ln1_b=t(np.zeros(d_model)),
            w1=t(rng.normal(0.0, std, (d_model, d_ff))),
            b1=t(np.zeros(d_ff)),
            w2=t(rng.normal(0.0, std, (d_ff, d_model))),
            b2=t(np.zeros(d_model)),
            ln2_g=t(np.ones(d_model)),
            ln2_b=t(np.zeros(d_model)),
        )

    def named(self, prefix: str):
        for field in ("ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b"):
            yield f"{prefix}.{field}", getattr(self, field)


@dataclass
class BlockParams:
    """One attention pass worth of parameters, optionally wrapped in a
    residual block (also serves as the encoder's transformer block)."""

    mha: MhaParams
    tb: TbExtras | None = None

    @classmethod
    def create(cls, rng, d_model, h, variant, std=0.02):
        mha = MhaParams.create(rng, d_model, h, std)
        tb = TbExtras.create(rng, d_model, std) if variant == "tb" else None
        return cls(mha=mha, tb=tb)

    def named(self, prefix: str):
        yield from self.mha.named(f"{prefix}.mha")
        if self.tb is not None:
            yield from self.tb.named(f"{prefix}.tb")


@dataclass
class DumaParams:
    """Parameter sets plus the sharing scheme that maps (layer, branch) onto them.

    sets is laid out layer-major: sets[li * n_dir + bi]. n_lay is 1 when all
    layers share, k otherwise; n_dir is 1 unless both directions are live and
    unshared.
    """

    sets: list[BlockParams]
    n_lay: int
    n_dir: int

    @classmethod
    def create(cls, rng: np.random.Generator, d_model: int, h: int,
               cfg: DumaConfig, std: float = 0.02) -> "DumaParams":
        n_lay = 1 if cfg.share_layers else cfg.k
        n_dir = 2 if (cfg.direction == "both" and not cfg.share_directions) else 1
        sets = [BlockParams.create(rng, d_model, h, cfg.variant, std)
                for _ in range(n_lay * n_dir)]
        return cls(sets=sets, n_lay=n_lay, n_dir=n_dir)

    def block(self, layer: int, branch: int) -> BlockParams:
        li = layer if self.n_lay > 1 else 0
        bi = branch if self.n_dir > 1 else 0
        return self.sets[li * self.n_dir + bi]

    def named(self, prefix: str = "duma"):
        for i, s in enumerate(self.sets):
            yield from s.named(f"{prefix}.{i}")


@dataclass
class SegmentedEncoding:
    """Encoder output routed into passage rows and question-answer rows,
    each with its padding mask. Batched encodings [n, l, d] carry mask None,
    meaning no row is padding."""

    e_p: Tensor
    e_qa: Tensor
    mask_p: np.ndarray | None
    mask_qa: np.ndarray | None


def split_segments(e: Tensor, seg_ids, pad_mask) -> SegmentedEncoding:
    """Route encoder rows by segment id (0 = passage, 1 = question-answer).

    Segment 0 rows must all precede segment 1 rows. Padding rows travel with
    their segment, mask 0. Either segment ending up with no unmasked row is
    an error.
    """
    seg_ids = np.asarray(seg_ids)
    pad_mask = np.asarray(pad_mask)
    if e.ndim != 2 or seg_ids.shape != (e.shape[0],) or pad_mask.shape != (e.shape[0],):
        raise ShapeError(
            f"expected e [L x d] with seg_ids and pad_mask of length L, got "
            f"{e.shape}, {seg_ids.shape}, {pad_mask.shape}")
    if not np.isin(seg_ids, (0, 1)).all():
        raise ValueError("seg_ids must contain only 0 and 1")
    if np.any(np.diff(seg_ids) < 0):
        raise ValueError("segment 0 rows must precede segment 1 rows")
    boundary = int(np.searchsorted(seg_ids, 1))
    mask_p = pad_mask[:boundary]
    mask_qa = pad_mask[boundary:]
    if mask_p.sum() == 0:
        raise ValueError("empty passage segment: no unmasked passage token")
    if mask_qa.sum() == 0:
        raise ValueError("empty QA segment: no unmasked question-answer token")
    return SegmentedEncoding(
        e_p=T.slice_rows(e, 0, boundary),
        e_qa=T.slice_rows(e, boundary, e.shape[0]),
        mask_p=mask_p,
        mask_qa=mask_qa,
    )


def fuse(u: Tensor, v: Tensor, mode: str) -> Tensor:
    """Combine the two pooled segment vectors: elementwise product, sum, or
    concatenation (u first)."""
    if u.shape != v.shape:
        raise ShapeError(f"fuse expects equal widths, got {u.shape} and {v.shape}")
    if mode == "mul":
        return T.mul(u, v)
    if mode == "sum":
        return T.add(u, v)
    if mode == "concat":
        return T.concat_last(u, v)
    raise ValueError(f"fuse mode must be one of {FUSE_MODES}, got {mode!r}")


def block_residual(block: BlockParams, x: Tensor, att: Tensor) -> Tensor:
    """Post-norm residual tail of a transformer block: x + att, norm,
    feed-forward, norm. Requires tb extras."""
    tb = block.tb
    if tb is None:
        raise ValueError("block_residual needs tb extras on the block")
    y = T.layer_norm(T.add(x, att), tb.ln1_g, tb.ln1_b)
    inner = T.relu(T.add_row(T.matmul(y, tb.w1), tb.b1))
    ff = T.add_row(T.matmul(inner, tb.w2), tb.b2)
    return T.layer_norm(T.add(y, ff), tb.ln2_g, tb.ln2_b)


def attend_block(block: BlockParams, query: Tensor, kv: Tensor, kv_mask) -> Tensor:
    out = multi_head_attention(block.mha, query, kv, kv_mask)
    if block.tb is None:
        return out
    return block_residual(block, query, out)


def pool_rows(x: Tensor, mask) -> Tensor:
    """Mean over unmasked rows; mask None means every row counts."""
    if mask is None:
        return T.mean_rows(x)
    return T.mean_pool_rows(x, mask)


def duma_forward(seg: SegmentedEncoding, params: DumaParams, cfg: DumaConfig) -> Tensor:
    """Run k rounds of dual cross-attention and pool to one vector.

    Each round computes both passes from the same round inputs, then swaps
    them in together. Under a single-direction config only that side is
    updated and its pooled vector is returned without fusing.
    """
    e_p, e_qa = seg.e_p, seg.e_qa
    for layer in range(cfg.k):
        new_p = new_qa = None
        if cfg.direction != "q2p_only":
            new_p = attend_block(params.block(layer, 0), e_p, e_qa, seg.mask_qa)
        if cfg.direction != "p2q_only":
            new_qa = attend_block(params.block(layer, 1), e_qa, e_p, seg.mask_p)
        if new_p is not None:
            e_p = new_p
        if new_qa is not None:
            e_qa = new_qa
    if cfg.direction == "p2q_only":
        return pool_rows(e_p, seg.mask_p)
    if cfg.direction == "q2p_only":
        return pool_rows(e_qa, seg.mask_qa)
    return fuse(pool_rows(e_p, seg.mask_p),
                pool_rows(e_qa, seg.mask_qa), cfg.fuse_mode)
