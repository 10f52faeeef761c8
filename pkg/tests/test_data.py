"""Tokenizer, vocab, loaders, synthetic task, and tensorization."""

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from duma.data import (CLS, PAD, SEP, UNK, McExample, SyntheticTaskConfig, Vocab,
                       detokenize, gen_synthetic, load_dream, load_jsonl,
                       pack_uniform, save_jsonl, synthetic_vocab, tokenize,
                       tensorize, tensorize_dataset)


def test_tokenize_examples():
    assert tokenize("Hello world") == ["hello", "world"]
    assert tokenize("a, b.") == ["a", ",", "b", "."]
    assert tokenize("") == []
    assert tokenize("don't stop") == ["don", "'", "t", "stop"]


@given(st.text(max_size=80))
def test_tokenize_detokenize_stable(text):
    toks = tokenize(text)
    assert tokenize(detokenize(toks)) == toks


def test_vocab_specials_and_lookup():
    v = Vocab(["cat", "dog"])
    assert (PAD, UNK, CLS, SEP) == (0, 1, 2, 3)
    assert v.encode(["cat", "unseen", "dog"]) == [4, UNK, 5]
    assert len(v) == 6


def test_vocab_round_trip(tmp_path):
    v = Vocab.build([McExample("a b c", "b?", ["a", "c"], 0, "x")])
    path = tmp_path / "vocab.json"
    v.save(path)
    v2 = Vocab.load(path)
    assert v2.id_to_token == v.id_to_token
    assert v2.token_to_id == v.token_to_id


def test_example_validation():
    with pytest.raises(ValueError, match="at least 2"):
        McExample("p", "q", ["only"], 0, "e1")
    with pytest.raises(ValueError, match="out of range"):
        McExample("p", "q", ["a", "b"], 2, "e2")
    with pytest.raises(ValueError, match="empty"):
        McExample("", "q", ["a", "b"], 0, "e3")


# ---------------------------------------------------------------------------
# canonical format
# ---------------------------------------------------------------------------

def test_jsonl_round_trip(tmp_path):
    examples = [McExample("p one", "q one", ["a", "b", "c"], 1, "r1"),
                McExample("p two", "q two", ["x", "y"], 0, "r2")]
    path = tmp_path / "data.jsonl"
    save_jsonl(examples, path)
    assert load_jsonl(path) == examples


def test_jsonl_bad_gold_names_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = {"passage": "p", "question": "q", "options": ["a", "b"], "gold": 0, "id": "g"}
    bad = dict(good, gold=5, id="b")
    path.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(ValueError, match="line 2"):
        load_jsonl(path)


# ---------------------------------------------------------------------------
# dialogue-format reader
# ---------------------------------------------------------------------------

MOVIE_DIALOGUE = [
    [
        ["W: So, you have three days off, what are you going to do?",
         "M: Well, I probably will rent some movies with my friend Bob."],
        [{"question": "What will the man probably do?",
          "choice": ["Ask for a three-day leave.",
                     "Go out with his friend.",
                     "Watch films at home."],
          "answer": "Watch films at home."}],
        "5-510",
    ],
]


def test_dream_minimal_file(tmp_path):
    path = tmp_path / "dev.json"
    path.write_text(json.dumps(MOVIE_DIALOGUE))
    examples = load_dream(path)
    assert len(examples) == 1
    ex = examples[0]
    assert len(ex.options) == 3
    assert ex.gold == 2
    assert ex.options[ex.gold] == "Watch films at home."
    assert ex.passage.count("\n") == 1
    assert ex.question == "What will the man probably do?"
    assert ex.id == "5-510-q0"


def test_dream_answer_missing_names_record(tmp_path):
    rec = json.loads(json.dumps(MOVIE_DIALOGUE))
    rec[0][1][0]["answer"] = "Sleep in."
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(rec))
    with pytest.raises(ValueError, match="5-510"):
        load_dream(path)


def test_dream_malformed_container(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ValueError, match="not valid JSON"):
        load_dream(path)
    path2 = tmp_path / "dict.json"
    path2.write_text(json.dumps({"a": 1}))
    with pytest.raises(ValueError, match="top-level list"):
        load_dream(path2)


# ---------------------------------------------------------------------------
# synthetic task
# ---------------------------------------------------------------------------

def small_task(**kw):
    base = dict(n_keys=10, n_values=10, pairs_per_passage=4, options=3,
                train_size=60, dev_size=20, test_size=20, seed=7)
    base.update(kw)
    return SyntheticTaskConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError, match=">= options"):
        small_task(pairs_per_passage=2)
    with pytest.raises(ValueError, match="alphabet too small"):
        small_task(n_keys=3)
    with pytest.raises(ValueError, match="options"):
        small_task(options=1)


def passage_pairs(ex):
    toks = ex.passage.split()
    return {toks[i]: toks[i + 1] for i in range(0, len(toks), 2)}


def test_gold_is_the_paired_value():
    train, dev, test = gen_synthetic(small_task())
    for ex in train + dev + test:
        pairs = passage_pairs(ex)
        assert ex.options[ex.gold] == pairs[ex.question]
        in_passage = set(pairs.values())
        for j, opt in enumerate(ex.options):
            assert opt in in_passage
            if j != ex.gold:
                assert opt != ex.options[ex.gold]


def test_same_seed_same_data():
    a = gen_synthetic(small_task(), seed=3)
    b = gen_synthetic(small_task(), seed=3)
    assert a == b
    c = gen_synthetic(small_task(), seed=4)
    assert a != c


def test_split_sizes():
    train, dev, test = gen_synthetic(small_task())
    assert (len(train), len(dev), len(test)) == (60, 20, 20)


def test_pair_memorization_carries_no_signal():
    # every key must appear with many different gold values across training
    # examples, so a learned key->value map cannot reduce the loss
    train, _, _ = gen_synthetic(small_task(train_size=600))
    golds_by_key = {}
    for ex in train:
        golds_by_key.setdefault(ex.question, set()).add(ex.options[ex.gold])
    assert all(len(vals) >= 5 for vals in golds_by_key.values())


def test_gold_pair_frequencies_roughly_uniform():
    train, _, _ = gen_synthetic(small_task(train_size=2000))
    counts = np.zeros((10, 10), dtype=int)
    for ex in train:
        counts[int(ex.question[1:]), int(ex.options[ex.gold][1:])] += 1
    # 2000 golds over 100 cells: mean 20, a dead cell or a hot spot means bias
    assert counts.min() >= 4 and counts.max() <= 50


def test_gold_index_roughly_uniform():
    _, _, test = gen_synthetic(small_task(test_size=1000))
    counts = np.bincount([ex.gold for ex in test], minlength=3)
    assert counts.min() > 230 and counts.max() < 440  # ~5 sigma around 333


# ---------------------------------------------------------------------------
# tensorization
# ---------------------------------------------------------------------------

def test_tensorize_layout():
    ex = McExample("k1 v2 k3 v4", "k3", ["v2", "v4"], 1, "t1")
    vocab = Vocab.build([ex])
    seqs = tensorize(ex, vocab, max_len=32)
    assert len(seqs) == 2
    ids, segs, mask = seqs[0]
    # [CLS] k1 v2 k3 v4 [SEP] k3 [SEP] v2 [SEP]
    assert ids[0] == CLS
    assert list(np.flatnonzero(ids == SEP)) == [5, 7, 9]
    assert list(segs) == [0] * 6 + [1] * 4
    assert mask.all() and len(ids) == 10


def test_tensorize_truncates_passage_only():
    ex = McExample("a b c d e f g h", "q q q", ["x", "y"], 0, "t2")
    vocab = Vocab.build([ex])
    full_q = vocab.encode(tokenize(ex.question))
    ids, segs, _ = tensorize(ex, vocab, max_len=12)[0]
    assert len(ids) == 12
    # question and option survive intact at the tail
    assert list(ids[-7:-3]) == [SEP] + full_q
    assert (segs[:6] == 0).all() and (segs[6:] == 1).all()


def test_tensorize_overflow_errors():
    ex = McExample("p", "one two three four five", ["x", "y"], 0, "t3")
    vocab = Vocab.build([ex])
    with pytest.raises(ValueError, match="max_len"):
        tensorize(ex, vocab, max_len=8)


def test_tensorize_dataset_pairs_sequences_with_gold():
    train, _, _ = gen_synthetic(small_task(train_size=5))
    vocab = Vocab.build(train)
    packed = tensorize_dataset(train, vocab, 32)
    assert len(packed) == 5
    for (seqs, gold), ex in zip(packed, train):
        assert len(seqs) == len(ex.options)
        assert gold == ex.gold


# ---------------------------------------------------------------------------
# uniform packing
# ---------------------------------------------------------------------------

def test_pack_uniform_on_synthetic_data():
    train, _, _ = gen_synthetic(small_task(train_size=6))
    vocab = synthetic_vocab(small_task())
    packed = tensorize_dataset(train, vocab, 32)
    ub = pack_uniform(packed)
    assert ub is not None
    assert ub.ids.shape == (6, 3, len(packed[0][0][0][0]))
    assert ub.golds.tolist() == [g for _, g in packed]
    for i, (seqs, _) in enumerate(packed):
        for j, (ids, segs, _) in enumerate(seqs):
            assert np.array_equal(ub.ids[i, j], ids)
            assert np.array_equal(ub.seg_row, segs)


def test_pack_uniform_rejects_ragged_lengths():
    a = McExample("k1 v2 k3 v4", "k3", ["v2", "v4"], 1, "a")
    b = McExample("k1 v2 k3 v4 k5 v6", "k3", ["v2", "v4"], 1, "b")
    vocab = Vocab.build([a, b])
    assert pack_uniform(tensorize_dataset([a, b], vocab, 32)) is None


def test_pack_uniform_rejects_ragged_option_counts():
    a = McExample("k1 v2 k3 v4", "k3", ["v2", "v4"], 1, "a")
    b = McExample("k1 v2 k3 v4", "k3", ["v2", "v4", "v2"], 1, "b")
    vocab = Vocab.build([a, b])
    assert pack_uniform(tensorize_dataset([a, b], vocab, 32)) is None


def test_pack_uniform_rejects_padding_and_empty():
    assert pack_uniform([]) is None
    a = McExample("k1 v2 k3 v4", "k3", ["v2", "v4"], 1, "a")
    vocab = Vocab.build([a])
    ids, segs, mask = tensorize(a, vocab, 32)[0]
    padded_seq = (np.append(ids, PAD), np.append(segs, 1), np.append(mask, 0))
    assert pack_uniform([([padded_seq, padded_seq], 0)]) is None


def test_pack_uniform_rejects_mixed_segment_layouts():
    a = McExample("k1 v2 k3 v4", "k3", ["v2", "v4"], 1, "a")
    vocab = Vocab.build([a])
    ids, segs, mask = tensorize(a, vocab, 32)[0]
    other_segs = segs.copy()
    other_segs[4] = 1 - other_segs[4]
    assert pack_uniform([([(ids, segs, mask), (ids, other_segs, mask)], 0)]) is None
