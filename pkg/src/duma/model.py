"""Small transformer encoder, option scoring head variants, loss, and the
assembled model.

Every answer option gets its own passage+question+option sequence; options
are scored independently with shared parameters and the softmax over their
s logits drives the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import MhaParams, multi_head_attention
from .coattn import (BlockParams, DumaConfig, DumaParams, SegmentedEncoding,
                     attend_block, block_residual, duma_forward, output_width,
                     split_segments)
from .tensor import ShapeError, Tensor

HEAD_MODES = ("duma", "vanilla_sa", "sa_plus_ca")


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    h: int = 4
    n_enc: int = 2
    max_len: int = 64
    head_mode: str = "duma"
    share_encoder_layers: bool = False
    init_std: float = 0.02
    duma: DumaConfig = field(default_factory=DumaConfig)

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ValueError("vocab_size must cover the 4 special tokens")
        if self.d_model < 1 or self.d_model % self.h != 0:
            raise ValueError(
                f"d_model {self.d_model} must be positive and divisible by h {self.h}")
        if self.n_enc < 1:
            raise ValueError("n_enc must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.init_std <= 0:
            raise ValueError("init_std must be positive")
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"head_mode must be one of {HEAD_MODES}, got {self.head_mode!r}")

    @property
    def head_width(self) -> int:
        """Width of the vector the decoder dots with its weight."""
        if self.head_mode == "duma":
            return output_width(self.duma, self.d_model)
        return self.d_model


@dataclass
class EncoderParams:
    """Token, position, and segment tables plus the transformer blocks.

    blocks has length 1 when layers are shared, n_enc otherwise."""

    tok: Tensor
    pos: Tensor
    seg: Tensor
    blocks: list[BlockParams]
    n_enc: int

    @classmethod
    def create(cls, rng: np.random.Generator, cfg: ModelConfig,
               std: float = 0.02) -> "EncoderParams":
        n_blocks = 1 if cfg.share_encoder_layers else cfg.n_enc
        t = lambda a: Tensor(a, requires_grad=True)
        return cls(
            tok=t(rng.normal(0.0, std, (cfg.vocab_size, cfg.d_model))),
            pos=t(rng.normal(0.0, std, (cfg.max_len, cfg.d_model))),
            seg=t(rng.normal(0.0, std, (2, cfg.d_model))),
            blocks=[BlockParams.create(rng, cfg.d_model, cfg.h, "tb", std)
                    for _ in range(n_blocks)],
            n_enc=cfg.n_enc,
        )

    def block(self, i: int) -> BlockParams:
        return self.blocks[i if len(self.blocks) > 1 else 0]

    def named(self, prefix: str = "enc"):
        yield f"{prefix}.tok", self.tok
        yield f"{prefix}.pos", self.pos
        yield f"{prefix}.seg", self.seg
        for i, b in enumerate(self.blocks):
            yield from b.named(f"{prefix}.block{i}")


@dataclass
class DecoderParams:
    """Single weight vector dotted with the head output to score one option."""

    w: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, width: int,
               std: float = 0.02) -> "DecoderParams":
        return cls(w=Tensor(rng.normal(0.0, std, width), requires_grad=True))

    def named(self, prefix: str = "dec"):
        yield f"{prefix}.w", self.w


def _embed(token_ids, seg_ids, p: EncoderParams) -> Tensor:
    token_ids = np.asarray(token_ids)
    seg_ids = np.asarray(seg_ids)
    l = token_ids.shape[-1]
    if l > p.pos.shape[0]:
        raise ValueError(f"sequence length {l} exceeds max_len {p.pos.shape[0]}")
    x = T.embedding(p.tok, token_ids)
    x = T.add(x, T.embedding(p.pos, np.broadcast_to(np.arange(l), token_ids.shape)))
    return T.add(x, T.embedding(p.seg, seg_ids))


def encode(token_ids, seg_ids, pad_mask, p: EncoderParams) -> Tensor:
    """Embed and run the self-attention blocks with padding masked out.

    token_ids and seg_ids are one sequence [l], or a batch [n, l] with
    pad_mask None (no padding anywhere)."""
    x = _embed(token_ids, seg_ids, p)
    for i in range(p.n_enc):
        x = attend_block(p.block(i), x, x, pad_mask)
    return x


def _shared_seg_row(seg_ids) -> np.ndarray:
    if seg_ids.ndim == 1:
        return seg_ids
    if not (seg_ids == seg_ids[0]).all():
        raise ValueError("batched encoding needs one shared segment layout")
    return seg_ids[0]


def encode_cross(token_ids, seg_ids, pad_mask, p: EncoderParams) -> Tensor:
    """Encoder variant where each block attends across segments instead of
    over the whole sequence: passage rows query the question-answer rows and
    vice versa, with one shared projection set per block."""
    seg_ids = np.asarray(seg_ids)
    seg_row = _shared_seg_row(seg_ids)
    l = seg_row.shape[0]
    boundary = int(np.searchsorted(seg_row, 1))
    if pad_mask is None:
        mask_p = mask_qa = None
        if boundary in (0, l):
            raise ValueError("cross-segment encoding needs unmasked tokens in both segments")
    else:
        pad_mask = np.asarray(pad_mask)
        mask_p, mask_qa = pad_mask[:boundary], pad_mask[boundary:]
        if mask_p.sum() == 0 or mask_qa.sum() == 0:
            raise ValueError("cross-segment encoding needs unmasked tokens in both segments")
    x = _embed(token_ids, seg_ids, p)
    for i in range(p.n_enc):
        blk = p.block(i)
        x_p = T.slice_rows(x, 0, boundary)
        x_qa = T.slice_rows(x, boundary, l)
        att = T.concat_rows(multi_head_attention(blk.mha, x_p, x_qa, mask_qa),
                            multi_head_attention(blk.mha, x_qa, x_p, mask_p))
        x = block_residual(blk, x, att)
    return x


@dataclass
class Model:
    cfg: ModelConfig
    enc: EncoderParams
    head: DumaParams | MhaParams | None
    dec: DecoderParams

    @classmethod
    def create(cls, cfg: ModelConfig, seed=0, std: float | None = None) -> "Model":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        std = cfg.init_std if std is None else std
        enc = EncoderParams.create(rng, cfg, std)
        if cfg.head_mode == "duma":
            head = DumaParams.create(rng, cfg.d_model, cfg.h, cfg.duma, std)
        elif cfg.head_mode == "vanilla_sa":
            head = MhaParams.create(rng, cfg.d_model, cfg.h, std)
        else:
            head = None
        dec = DecoderParams.create(rng, cfg.head_width, std)
        return cls(cfg=cfg, enc=enc, head=head, dec=dec)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = list(self.enc.named())
        if isinstance(self.head, DumaParams):
            out.extend(self.head.named("head"))
        elif isinstance(self.head, MhaParams):
            out.extend(self.head.named("head"))
        out.extend(self.dec.named())
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def option_vector(self, token_ids, seg_ids, pad_mask) -> Tensor:
        """Encode one option sequence and reduce it to the head output."""
        mode = self.cfg.head_mode
        if mode == "sa_plus_ca":
            e = encode_cross(token_ids, seg_ids, pad_mask, self.enc)
            return T.mean_pool_rows(e, pad_mask)
        e = encode(token_ids, seg_ids, pad_mask, self.enc)
        if mode == "duma":
            seg = split_segments(e, seg_ids, pad_mask)
            return duma_forward(seg, self.head, self.cfg.duma)
        att = multi_head_attention(self.head, e, e, pad_mask)
        return T.mean_pool_rows(att, pad_mask)


def score_options(seqs, model: Model) -> Tensor:
    """Score each option sequence independently; returns the s logits.

    seqs is a list of (token_ids, seg_ids, pad_mask) triples, one per option.
    """
    if len(seqs) < 2:
        raise ValueError(f"need at least 2 options, got {len(seqs)}")
    logits = [T.dot(model.dec.w, model.option_vector(ids, segs, mask))
              for ids, segs, mask in seqs]
    return T.stack(logits)


def score_batch(option_ids, seg_row, model: Model) -> Tensor:
    """Score many examples' options in one batched pass; returns [n, s] logits.

    option_ids is [n, s, l]: n examples, s options each, every sequence the
    same length with no padding and the shared segment layout seg_row. The
    logits agree with per-sequence score_options up to float rounding from
    the reordered sums.
    """
    option_ids = np.asarray(option_ids)
    seg_row = np.asarray(seg_row)
    if option_ids.ndim != 3:
        raise ShapeError(f"score_batch expects [n, s, l] ids, got {option_ids.shape}")
    n, s, l = option_ids.shape
    if s < 2:
        raise ValueError(f"need at least 2 options, got {s}")
    if seg_row.shape != (l,):
        raise ShapeError(f"seg_row shape {seg_row.shape} does not match length {l}")
    flat = option_ids.reshape(n * s, l)
    segs = np.broadcast_to(seg_row, flat.shape)
    mode = model.cfg.head_mode
    if mode == "sa_plus_ca":
        vec = T.mean_rows(encode_cross(flat, segs, None, model.enc))
    else:
        e = encode(flat, segs, None, model.enc)
        if mode == "duma":
            boundary = int(np.searchsorted(seg_row, 1))
            if boundary in (0, l):
                raise ValueError("score_batch needs tokens in both segments")
            seg = SegmentedEncoding(e_p=T.slice_rows(e, 0, boundary),
                                    e_qa=T.slice_rows(e, boundary, l),
                                    mask_p=None, mask_qa=None)
            vec = duma_forward(seg, model.head, model.cfg.duma)
        else:
            vec = T.mean_rows(multi_head_attention(model.head, e, e, None))
    return T.reshape(T.matvec(vec, model.dec.w), (n, s))


def loss(logits: Tensor, gold: int) -> Tensor:
    """Negative log softmax probability of the gold option."""
    return T.cross_entropy(logits, gold)


def predict(logits) -> int:
    """Argmax over option logits; ties break toward the lowest index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if data.ndim != 1 or data.shape[0] < 1:
        raise ShapeError(f"predict expects a nonempty 1-d logit vector, got {data.shape}")
    return int(np.argmax(data))


def predict_rows(logits) -> np.ndarray:
    """Row-wise argmax over an [n, s] logit grid, ties toward the lowest index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if data.ndim != 2 or data.shape[1] < 1:
        raise ShapeError(f"predict_rows expects a nonempty 2-d logit grid, got {data.shape}")
    return np.argmax(data, axis=1)


def count_params(cfg: ModelConfig) -> dict[str, int]:
    """Trainable scalar counts per component, from closed forms.

    encoder: V*d + L*d + 2d embeddings plus B blocks of 12d^2+9d each
    (4d^2 attention, 8d^2+5d feed-forward, 4d norms), B=1 when shared.
    duma head: one 4d^2 projection set per distinct (layer, direction) slot,
    plus 8d^2+9d residual-block extras per slot for the tb variant.
    decoder: one weight per head output width.
    """
    d = cfg.d_model
    block = 12 * d * d + 9 * d
    n_blocks = 1 if cfg.share_encoder_layers else cfg.n_enc
    encoder = (cfg.vocab_size + cfg.max_len + 2) * d + n_blocks * block

    if cfg.head_mode == "duma":
        dc = cfg.duma
        n_lay = 1 if dc.share_layers else dc.k
        n_dir = 2 if (dc.direction == "both" and not dc.share_directions) else 1
        per_set = 4 * d * d + ((8 * d * d + 9 * d) if dc.variant == "tb" else 0)
        head = n_lay * n_dir * per_set
    elif cfg.head_mode == "vanilla_sa":
        head = 4 * d * d
    else:
        head = 0

    decoder = cfg.head_width
    return {"encoder": encoder, "head": head, "decoder": decoder,
            "total": encoder + head + decoder}
