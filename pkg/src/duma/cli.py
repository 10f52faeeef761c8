"""Command-line surface: data generation, training, evaluation, ablations,
gradient checks, and parameter counting.

Configuration comes from an optional JSON file mirroring TrainConfig (unknown
keys rejected), with individual flags overriding file values. Every output
artifact embeds the config hash; primary artifacts are byte-identical across
reruns with the same flags and seed, with wall-clock timing written to a
separate timing file.

Exit codes: 0 success, 1 validation or runtime failure (one-line error on
stderr), 2 usage errors (unknown flag or subcommand).
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _single_thread_blas() -> None:
    # keeps runs deterministic and prevents oversubscription; must happen
    # before numpy loads, which is why library imports below are lazy
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duma",
        description="Dual multi-head co-attention: train, evaluate, and ablate "
                    "option-scoring readers on synthetic or dialogue data.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p, with_training=True):
        p.add_argument("--config", help="JSON config file mirroring the training config")
        p.add_argument("--k-layers", type=int, help="co-attention rounds (duma.k)")
        p.add_argument("--fuse", choices=["mul", "sum", "concat"],
                       help="pooled-vector fusion mode")
        p.add_argument("--direction", choices=["both", "p2q_only", "q2p_only"],
                       help="which co-attention passes are live")
        p.add_argument("--variant", choices=["plain", "tb"],
                       help="bare attention passes or residual-block passes")
        p.add_argument("--head-mode", choices=["duma", "vanilla_sa", "sa_plus_ca"],
                       help="option-vector head")
        if with_training:
            p.add_argument("--max-steps", type=int, help="optimizer step budget")
            p.add_argument("--lr", type=float, help="peak learning rate")
            p.add_argument("--batch-size", type=int, help="examples per step")
            p.add_argument("--warmup-steps", type=int, help="linear warmup length")

    p = sub.add_parser("gen-data", help="generate the synthetic retrieval datasets")
    p.add_argument("--out", required=True, help="directory for the jsonl splits and vocab")
    p.add_argument("--config", help="JSON task file (the task.json shape); "
                                    "flags win over file values")
    p.add_argument("--seed", type=int, help="generator seed (default 0)")

    p = sub.add_parser("train", help="train one or more seeds and report accuracy")
    p.add_argument("--data", required=True, help="directory from gen-data")
    p.add_argument("--out", required=True, help="directory for checkpoints and reports")
    p.add_argument("--seed", type=int, help="train this single seed instead of the config list")
    add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a data split")
    p.add_argument("--data", required=True, help="directory from gen-data")
    p.add_argument("--checkpoint", required=True, help="checkpoint file from train")
    p.add_argument("--split", choices=["train", "dev", "test"], default="test")

    p = sub.add_parser("ablate", help="run an ablation suite")
    p.add_argument("--suite", required=True,
                   choices=["fuse_modes", "directions", "layer_sweep", "head_modes"])
    p.add_argument("--data", required=True, help="directory from gen-data")
    p.add_argument("--out", required=True, help="directory for reports and checkpoints")
    p.add_argument("--seeds", type=int, help="number of seeds (0..n-1)")
    p.add_argument("--parallel-seeds", type=int, default=1,
                   help="train this many seeds in parallel worker processes")
    add_config_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the end-to-end gradient")
    p.add_argument("--dims", choices=["tiny", "small"], default="tiny",
                   help="model size to check")

    p = sub.add_parser("count-params", help="closed-form parameter counts per component")
    p.add_argument("--data", help="directory from gen-data, to size the vocabulary")
    add_config_flags(p, with_training=False)

    return parser


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _load_config_dict(path) -> dict:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return raw


_TOP_FLAGS = ("max_steps", "lr", "batch_size", "warmup_steps")
_DUMA_FLAGS = (("k_layers", "k"), ("fuse", "fuse_mode"),
               ("direction", "direction"), ("variant", "variant"))


def _config_from_args(args, vocab_size: int | None):
    """File values, then flag overrides, then vocab size from the data."""
    from .train import train_config_from_dict

    raw = _load_config_dict(args.config) if getattr(args, "config", None) else {}
    raw.setdefault("model", {})
    for name in _TOP_FLAGS:
        if getattr(args, name, None) is not None:
            raw[name] = getattr(args, name)
    for flag, key in _DUMA_FLAGS:
        if getattr(args, flag, None) is not None:
            raw["model"].setdefault("duma", {})[key] = getattr(args, flag)
    if getattr(args, "head_mode", None) is not None:
        raw["model"]["head_mode"] = args.head_mode
    if "vocab_size" not in raw["model"]:
        if vocab_size is None:
            raise ValueError("model.vocab_size missing: set it in the config "
                             "file or point --data at a generated dataset")
        raw["model"]["vocab_size"] = vocab_size
    return train_config_from_dict(raw)


def _load_data_dir(path):
    from .data import Vocab, load_jsonl

    splits = tuple(load_jsonl(os.path.join(path, f"{name}.jsonl"))
                   for name in ("train", "dev", "test"))
    vocab = Vocab.load(os.path.join(path, "vocab.json"))
    return splits, vocab


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _split_timing(report: dict):
    """Pull wall seconds out of a run_seeds report so the primary artifact
    stays byte-identical across reruns."""
    timing = {str(r["seed"]): r.pop("wall_seconds") for r in report["per_seed"]}
    return report, {"wall_seconds": timing}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .data import SyntheticTaskConfig, gen_synthetic, save_jsonl, synthetic_vocab
    import dataclasses

    raw = _load_config_dict(args.config) if args.config else {}
    known = {f.name for f in dataclasses.fields(SyntheticTaskConfig)}
    if not set(raw) <= known:
        raise ValueError(f"unknown task fields: {sorted(set(raw) - known)}")
    if args.seed is not None:
        raw["seed"] = args.seed
    task = SyntheticTaskConfig(**raw)
    train, dev, test = gen_synthetic(task)
    os.makedirs(args.out, exist_ok=True)
    for name, split in (("train", train), ("dev", dev), ("test", test)):
        save_jsonl(split, os.path.join(args.out, f"{name}.jsonl"))
    synthetic_vocab(task).save(os.path.join(args.out, "vocab.json"))
    _write_json(os.path.join(args.out, "task.json"), dataclasses.asdict(task))
    print(f"wrote {len(train)}/{len(dev)}/{len(test)} examples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .train import config_hash, run_seeds, train_config_to_dict

    (train_ex, dev_ex, test_ex), vocab = _load_data_dir(args.data)
    cfg = _config_from_args(args, vocab_size=len(vocab))
    seeds = [args.seed] if args.seed is not None else None
    os.makedirs(args.out, exist_ok=True)
    snapshot = train_config_to_dict(cfg)
    snapshot["config_hash"] = config_hash(cfg)
    _write_json(os.path.join(args.out, "config.json"), snapshot)
    report = run_seeds(cfg, train_ex, dev_ex, test_ex, vocab,
                       seeds=seeds, out_dir=args.out)
    report, timing = _split_timing(report)
    _write_json(os.path.join(args.out, "report.json"), report)
    _write_json(os.path.join(args.out, "timing.json"), timing)
    print(f"median test accuracy {report['median_test_acc']:.4f} "
          f"(config {report['config_hash']})")
    return 0


def cmd_eval(args) -> int:
    from .train import evaluate, model_from_checkpoint

    (train_ex, dev_ex, test_ex), vocab = _load_data_dir(args.data)
    split = {"train": train_ex, "dev": dev_ex, "test": test_ex}[args.split]
    model, meta = model_from_checkpoint(args.checkpoint, which="best")
    acc = evaluate(model, split, vocab)
    print(json.dumps({"split": args.split, "acc": acc,
                      "config_hash": meta["config_hash"],
                      "checkpoint": os.path.basename(args.checkpoint)},
                     sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    from .ablation import run_ablation

    (train_ex, dev_ex, test_ex), vocab = _load_data_dir(args.data)
    cfg = _config_from_args(args, vocab_size=len(vocab))
    seeds = list(range(args.seeds)) if args.seeds is not None else None
    os.makedirs(args.out, exist_ok=True)
    report = run_ablation(args.suite, cfg, train_ex, dev_ex, test_ex, vocab,
                          seeds=seeds, out_dir=args.out,
                          parallel=args.parallel_seeds)
    for row in report["rows"]:
        print(f"{row['variant']}\t{row['median_test_acc']:.4f}")
    for flag in report["regressions"]:
        print(f"regression: {flag}")
    return 0


def cmd_gradcheck(args) -> int:
    import numpy as np

    from . import tensor as T
    from .coattn import DumaConfig
    from .model import Model, ModelConfig, loss, score_options

    dims = {"tiny": dict(d_model=8, h=2, n_enc=1),
            "small": dict(d_model=16, h=4, n_enc=2)}[args.dims]
    cfg = ModelConfig(vocab_size=12, max_len=10, duma=DumaConfig(k=2), **dims)
    model = Model.create(cfg, seed=0, std=0.3)
    rng = np.random.default_rng(1)
    seqs = []
    for _ in range(2):
        ids = rng.integers(4, 12, 8)
        ids[0], ids[4], ids[7] = 2, 3, 3
        seqs.append((ids, np.array([0] * 5 + [1] * 3), np.ones(8, dtype=np.int64)))

    def f(_):
        return loss(score_options(seqs, model), 1)

    err = T.grad_check(f, model.parameters(), eps=1e-5)
    print(f"max relative error {err:.3e} over {sum(p.size for p in model.parameters())} "
          f"parameters ({args.dims})")
    return 0 if err <= 1e-4 else 1


def cmd_count_params(args) -> int:
    from .model import count_params

    vocab_size = None
    if args.data is not None:
        _, vocab = _load_data_dir(args.data)
        vocab_size = len(vocab)
    cfg = _config_from_args(args, vocab_size=vocab_size)
    counts = count_params(cfg.model)
    print(json.dumps(counts, sort_keys=True))
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "count-params": cmd_count_params,
}


def main(argv=None) -> int:
    _single_thread_blas()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
