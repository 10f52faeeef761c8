"""Tokenization, vocabulary, example formats, and data sources.

Two sources feed the harness: a native reader for dialogue-style dataset
files, and a synthetic key-value retrieval task small enough to train on a
laptop while still requiring the model to match the question against the
passage rather than memorize pairs.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

PAD, UNK, CLS, SEP = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<cls>", "<sep>")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and detach punctuation."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens) -> str:
    return " ".join(tokens)


class Vocab:
    """Dense token-to-id map with fixed special slots at 0..3."""

    def __init__(self, tokens):
        self.id_to_token = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, examples) -> "Vocab":
        seen = set()
        for ex in examples:
            for text in [ex.passage, ex.question, *ex.options]:
                seen.update(tokenize(text))
        return cls(sorted(seen))

    def encode(self, tokens) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"tokens": self.id_to_token[len(SPECIALS):]}, f)

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f)["tokens"])


@dataclass
class McExample:
    """One multi-choice question: passage, question, s options, gold index."""

    passage: str
    question: str
    options: list[str]
    gold: int
    id: str

    def __post_init__(self):
        if len(self.options) < 2:
            raise ValueError(f"example {self.id}: needs at least 2 options")
        if not 0 <= self.gold < len(self.options):
            raise ValueError(
                f"example {self.id}: gold {self.gold} out of range for "
                f"{len(self.options)} options")
        if not self.passage or not self.question or not all(self.options):
            raise ValueError(f"example {self.id}: empty text field")


def load_jsonl(path) -> list[McExample]:
    """Read the canonical line-delimited format, one example per line."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(McExample(passage=obj["passage"], question=obj["question"],
                                     options=list(obj["options"]), gold=obj["gold"],
                                     id=str(obj["id"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path} line {lineno}: {e}") from e
    return out


def save_jsonl(examples, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps({"passage": ex.passage, "question": ex.question,
                                "options": ex.options, "gold": ex.gold,
                                "id": ex.id}) + "\n")


def load_dream(path) -> list[McExample]:
    """Read a dialogue-dataset release file: a list of records, each holding
    the dialogue turns, a list of question objects, and a record id. Turns
    are joined with newlines into the passage; the gold index is recovered
    from the answer text, which must match one choice exactly."""
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a top-level list of records")
    out = []
    for rec in data:
        if not (isinstance(rec, list) and len(rec) == 3):
            raise ValueError(f"{path}: record must be [turns, questions, id], got {rec!r}")
        turns, questions, rec_id = rec
        passage = "\n".join(turns)
        for qi, q in enumerate(questions):
            try:
                question, choices, answer = q["question"], q["choice"], q["answer"]
            except (KeyError, TypeError) as e:
                raise ValueError(f"{path}: bad question object in record {rec_id}") from e
            if answer not in choices:
                raise ValueError(
                    f"record {rec_id}: answer {answer!r} not among choices")
            out.append(McExample(passage=passage, question=question,
                                 options=list(choices), gold=choices.index(answer),
                                 id=f"{rec_id}-q{qi}"))
    return out


# ---------------------------------------------------------------------------
# synthetic retrieval task
# ---------------------------------------------------------------------------

@dataclass
class SyntheticTaskConfig:
    """Key-value retrieval: each passage lists m "key value" pairs, the
    question names one key, and the gold option is its paired value with
    distractors drawn from the other in-passage values."""

    n_keys: int = 24
    n_values: int = 24
    pairs_per_passage: int = 6
    options: int = 4
    train_size: int = 8000
    dev_size: int = 500
    test_size: int = 1000
    seed: int = 0

    def __post_init__(self):
        m, s = self.pairs_per_passage, self.options
        if s < 2:
            raise ValueError("options must be >= 2")
        if m < s:
            raise ValueError(
                f"pairs_per_passage {m} must be >= options {s} so distractors "
                "can come from the passage")
        if self.n_keys < m or self.n_values < m:
            raise ValueError(
                f"alphabet too small for {m} distinct pairs per passage "
                f"(n_keys={self.n_keys}, n_values={self.n_values})")


def _draw_passage(rng, n_keys, n_values, m):
    """Pair m distinct keys with m distinct values by a fresh random matching."""
    keys = rng.choice(n_keys, size=m, replace=False)
    values = rng.choice(n_values, size=m, replace=False)
    return list(zip(keys.tolist(), values.tolist()))


def _make_example(rng, cfg, m, s, ex_id):
    pairs = _draw_passage(rng, cfg.n_keys, cfg.n_values, m)
    qi = int(rng.integers(m))
    key, gold_val = pairs[qi]
    others = [v for j, (_, v) in enumerate(pairs) if j != qi]
    distractors = rng.choice(others, size=s - 1, replace=False)
    values = [gold_val] + [int(v) for v in distractors]
    order = rng.permutation(s)
    options = [f"v{values[i]}" for i in order]
    return McExample(
        passage=" ".join(f"k{k} v{v}" for k, v in pairs),
        question=f"k{key}",
        options=options,
        gold=int(np.argwhere(order == 0)[0, 0]),
        id=ex_id,
    )


def synthetic_vocab(cfg: SyntheticTaskConfig) -> Vocab:
    """Vocabulary over the full key/value alphabet, independent of which
    tokens happen to appear in a sampled split."""
    return Vocab([f"k{i}" for i in range(cfg.n_keys)]
                 + [f"v{j}" for j in range(cfg.n_values)])


def gen_synthetic(cfg: SyntheticTaskConfig, seed: int | None = None):
    """Build (train, dev, test) example lists, deterministic given the seed.

    Every passage pairs its keys and values by a fresh random matching, so
    each key is equally likely to sit next to each value in every split.
    Memorizing pairings therefore carries no signal at all (an earlier pool
    design that held out test pairings leaked pool membership instead, which
    anti-predicts held-out golds); the only way to reduce the loss is to
    read the pairing out of the passage at hand.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    sizes = {"train": cfg.train_size, "dev": cfg.dev_size, "test": cfg.test_size}
    m, s = cfg.pairs_per_passage, cfg.options
    out = {}
    for split, size in sizes.items():
        out[split] = [_make_example(rng, cfg, m, s, f"syn-{split}-{i}")
                      for i in range(size)]
    return out["train"], out["dev"], out["test"]


# ---------------------------------------------------------------------------
# tensorization
# ---------------------------------------------------------------------------

def tensorize(ex: McExample, vocab: Vocab, max_len: int):
    """Build one (token_ids, seg_ids, pad_mask) triple per option.

    Layout is [CLS] passage [SEP] question [SEP] option [SEP]; segment 0 runs
    through the first separator. The passage is cut from the right when the
    sequence would overflow max_len; question and option are never cut."""
    p_ids = vocab.encode(tokenize(ex.passage))
    q_ids = vocab.encode(tokenize(ex.question))
    seqs = []
    for opt in ex.options:
        a_ids = vocab.encode(tokenize(opt))
        budget = max_len - (4 + len(q_ids) + len(a_ids))
        if budget < 0:
            raise ValueError(
                f"example {ex.id}: question and option need "
                f"{4 + len(q_ids) + len(a_ids)} tokens, over max_len {max_len}")
        p_use = p_ids[:budget]
        ids = [CLS] + p_use + [SEP] + q_ids + [SEP] + a_ids + [SEP]
        segs = [0] * (len(p_use) + 2) + [1] * (len(q_ids) + len(a_ids) + 2)
        seqs.append((np.asarray(ids), np.asarray(segs),
                     np.ones(len(ids), dtype=np.int64)))
    return seqs


def tensorize_dataset(examples, vocab: Vocab, max_len: int):
    """Precompute option sequences for a whole dataset: list of (seqs, gold)."""
    return [(tensorize(ex, vocab, max_len), ex.gold) for ex in examples]


@dataclass
class UniformBatch:
    """A whole dataset as one id block, for datasets regular enough to batch:
    same option count, same sequence length, same segment layout, no padding."""

    ids: np.ndarray    # [n, s, l] int64
    seg_row: np.ndarray  # [l], shared by every sequence
    golds: np.ndarray  # [n]


def pack_uniform(packed) -> UniformBatch | None:
    """Try to view a tensorized dataset as one UniformBatch.

    Returns None when the dataset is ragged in any way (option counts,
    lengths, segment layouts, padding), in which case callers fall back to
    per-sequence scoring.
    """
    if not packed:
        return None
    first_ids, first_segs, _ = packed[0][0][0]
    s, l = len(packed[0][0]), len(first_ids)
    for seqs, _ in packed:
        if len(seqs) != s:
            return None
        for ids, segs, mask in seqs:
            if len(ids) != l or not np.array_equal(segs, first_segs) or not mask.all():
                return None
    block = np.stack([np.stack([ids for ids, _, _ in seqs]) for seqs, _ in packed])
    golds = np.array([gold for _, gold in packed], dtype=np.int64)
    return UniformBatch(ids=block.astype(np.int64), seg_row=np.asarray(first_segs),
                        golds=golds)
