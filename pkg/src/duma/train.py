"""Training loop with warmup/decay schedule, Adam, periodic evaluation with
best-model retention, deterministic seeding, and resumable checkpoints.

Runs are reproducible at the byte level: batch sampling is i.i.d. from a
seeded generator whose state rides along in the checkpoint, so a resumed run
replays the exact trajectory of an uninterrupted one. Wall-clock time is
kept out of the primary metrics records for the same reason.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_arrays, save_arrays
from .coattn import DumaConfig
from .data import pack_uniform, tensorize_dataset
from .model import (Model, ModelConfig, loss, predict, predict_rows,
                    score_batch, score_options)
from .tensor import no_grad


class DivergenceError(RuntimeError):
    """Raised when training hits a non-finite loss."""


@dataclass
class TrainConfig:
    model: ModelConfig
    lr: float = 1e-3
    warmup_steps: int = 100
    batch_size: int = 8
    max_steps: int = 5000
    eval_every: int = 250
    patience: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    constant_lr: bool = False
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])

    def __post_init__(self):
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")


# ---------------------------------------------------------------------------
# config serialization
# ---------------------------------------------------------------------------

def _check_keys(d: dict, allowed, where: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ValueError(f"unknown config key(s) in {where}: {', '.join(unknown)}")


def _field_names(cls) -> list[str]:
    return [f.name for f in dataclasses.fields(cls)]


def duma_config_from_dict(d: dict) -> DumaConfig:
    _check_keys(d, _field_names(DumaConfig), "duma")
    return DumaConfig(**d)


def model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    _check_keys(d, _field_names(ModelConfig), "model")
    duma = d.pop("duma", None)
    if duma is not None:
        d["duma"] = duma_config_from_dict(duma)
    return ModelConfig(**d)


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    _check_keys(d, _field_names(TrainConfig), "top level")
    if "model" not in d:
        raise ValueError("config needs a 'model' section (at least model.vocab_size)")
    d["model"] = model_config_from_dict(d["model"])
    if "seeds" in d:
        d["seeds"] = [int(s) for s in d["seeds"]]
    return TrainConfig(**d)


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: TrainConfig) -> str:
    blob = json.dumps(train_config_to_dict(cfg), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


# ---------------------------------------------------------------------------
# schedule and optimizer
# ---------------------------------------------------------------------------

def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to the peak, then linear decay to zero at max_steps
    (or flat after warmup when constant_lr is set)."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    if cfg.constant_lr:
        return cfg.lr
    if step >= cfg.max_steps:
        return 0.0
    return cfg.lr * (cfg.max_steps - step) / (cfg.max_steps - cfg.warmup_steps)


class Adam:
    """Standard Adam over named parameter tensors.

    Moments are keyed by parameter name so they can ride along in checkpoints."""

    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros(p.shape) for n, p in self.named}
        self.v = {n: np.zeros(p.shape) for n, p in self.named}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.named:
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"adam_m.{name}"] = self.m[name]
            out[f"adam_v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for name in self.m:
            self.m[name] = arrays[f"adam_m.{name}"].copy()
            self.v[name] = arrays[f"adam_v.{name}"].copy()


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

class MetricsLog:
    """Append-only training record. Wall time lives on the object, never in
    the serialized records, so identical runs dump identical files."""

    def __init__(self, seed: int, cfg_hash: str):
        self.seed = seed
        self.config_hash = cfg_hash
        self.records: list[dict] = []
        self.wall_seconds = 0.0

    def log(self, **kw) -> None:
        self.records.append(kw)

    def dump_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps({"seed": self.seed, "config_hash": self.config_hash},
                               sort_keys=True) + "\n")
            for r in self.records:
                f.write(json.dumps(r, sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "MetricsLog":
        with open(path, encoding="utf-8") as f:
            header = json.loads(f.readline())
            log = cls(header["seed"], header["config_hash"])
            for line in f:
                if line.strip():
                    log.records.append(json.loads(line))
        return log


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

EVAL_CHUNK = 64


def evaluate_packed(model: Model, packed) -> float:
    """Fraction of examples whose argmax logit hits the gold option.

    Datasets regular enough to batch are scored in chunks; ragged ones fall
    back to one sequence at a time. Both routes agree on the prediction."""
    if not packed:
        raise ValueError("cannot evaluate on an empty dataset")
    uniform = pack_uniform(packed)
    correct = 0
    with no_grad():
        if uniform is not None:
            for lo in range(0, len(uniform.golds), EVAL_CHUNK):
                logits = score_batch(uniform.ids[lo:lo + EVAL_CHUNK],
                                     uniform.seg_row, model)
                correct += int((predict_rows(logits)
                                == uniform.golds[lo:lo + EVAL_CHUNK]).sum())
        else:
            for seqs, gold in packed:
                if predict(score_options(seqs, model)) == gold:
                    correct += 1
    return correct / len(packed)


def evaluate(model: Model, examples, vocab, max_len: int | None = None) -> float:
    max_len = model.cfg.max_len if max_len is None else max_len
    return evaluate_packed(model, tensorize_dataset(examples, vocab, max_len))


# ---------------------------------------------------------------------------
# checkpoint plumbing
# ---------------------------------------------------------------------------

def _snapshot(model: Model) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in model.named_parameters()}


def _restore(model: Model, arrays: dict[str, np.ndarray], prefix: str) -> None:
    for name, t in model.named_parameters():
        t.data[...] = arrays[prefix + name]


def save_checkpoint(path, cfg: TrainConfig, seed: int, model: Model, opt: Adam,
                    batch_rng: np.random.Generator, step: int, best: dict) -> None:
    arrays = {f"param.{n}": t.data for n, t in model.named_parameters()}
    arrays.update(opt.state_arrays())
    if best["params"] is not None:
        arrays.update({f"best.{n}": a for n, a in best["params"].items()})
    meta = {
        "config": train_config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "seed": seed,
        "step": step,
        "adam_t": opt.t,
        "rng_state": batch_rng.bit_generator.state,
        "best_acc": best["acc"],
        "best_step": best["step"],
        "since_best": best["since"],
        "has_best": best["params"] is not None,
    }
    save_arrays(path, arrays, meta)


def model_from_checkpoint(path, which: str = "best") -> tuple[Model, dict]:
    """Rebuild the model a checkpoint describes. which='best' loads the
    retained best-dev parameters (falling back to the live ones if the run
    never evaluated); which='last' loads the live parameters."""
    if which not in ("best", "last"):
        raise ValueError("which must be 'best' or 'last'")
    arrays, meta = load_arrays(path)
    cfg = train_config_from_dict(meta["config"])
    model = Model.create(cfg.model, seed=0)
    prefix = "best." if (which == "best" and meta["has_best"]) else "param."
    _restore(model, arrays, prefix)
    return model, meta


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(cfg: TrainConfig, train_examples, dev_examples, vocab, seed: int | None = None,
          save_to=None, resume_from=None, stop_after: int | None = None
          ) -> tuple[Model, MetricsLog]:
    """Run one seed to completion or early stop; returns the model with its
    best dev-accuracy parameters restored, plus the metrics record.

    stop_after simulates an interruption at the given step (after any
    checkpoint write there); it is not part of the config and exists so
    resume behavior can be exercised."""
    seed = cfg.seeds[0] if seed is None else seed
    chash = config_hash(cfg)
    train_packed = tensorize_dataset(train_examples, vocab, cfg.model.max_len)
    dev_packed = tensorize_dataset(dev_examples, vocab, cfg.model.max_len)

    init_rng, batch_rng = np.random.default_rng(seed).spawn(2)
    model = Model.create(cfg.model, seed=init_rng)
    params = model.parameters()
    opt = Adam(model.named_parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    metrics = MetricsLog(seed, chash)
    best = {"acc": -1.0, "step": -1, "since": 0, "params": None}
    start_step = 0

    if resume_from is not None:
        arrays, meta = load_arrays(resume_from)
        if meta["config_hash"] != chash:
            raise ValueError(
                f"checkpoint config hash {meta['config_hash']} does not match "
                f"current config {chash}")
        if meta["seed"] != seed:
            raise ValueError(f"checkpoint seed {meta['seed']} does not match {seed}")
        _restore(model, arrays, "param.")
        opt.load_state(arrays, meta["adam_t"])
        batch_rng.bit_generator.state = meta["rng_state"]
        start_step = meta["step"]
        best = {"acc": meta["best_acc"], "step": meta["best_step"],
                "since": meta["since_best"],
                "params": ({n: arrays[f"best.{n}"] for n, _ in model.named_parameters()}
                           if meta["has_best"] else None)}

    uniform = pack_uniform(train_packed)
    n = len(train_packed)
    t0 = time.perf_counter()
    for step in range(start_step + 1, cfg.max_steps + 1):
        lr = lr_at(step, cfg)
        idx = batch_rng.integers(0, n, cfg.batch_size)
        T.zero_grads(params)
        try:
            if uniform is not None:
                l = T.cross_entropy_rows(
                    score_batch(uniform.ids[idx], uniform.seg_row, model),
                    uniform.golds[idx])
                mean_loss = l.item()
                T.backward(l)
            else:
                total = 0.0
                for i in idx:
                    seqs, gold = train_packed[i]
                    l = loss(score_options(seqs, model), gold)
                    total += l.item()
                    T.backward(T.scale(l, 1.0 / cfg.batch_size))
                mean_loss = total / cfg.batch_size
        except FloatingPointError as e:
            raise DivergenceError(
                f"{e}: at step {step}, lr {lr:.6g}, "
                f"batch ids {[int(i) for i in idx]}") from e
        if not np.isfinite(mean_loss):
            raise DivergenceError(
                f"non-finite loss at step {step}, lr {lr:.6g}, "
                f"batch ids {[int(i) for i in idx]}")
        opt.step(lr)
        metrics.log(step=step, loss=mean_loss, lr=lr)

        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            acc = evaluate_packed(model, dev_packed)
            if acc > best["acc"]:
                best.update(acc=acc, step=step, since=0, params=_snapshot(model))
            else:
                best["since"] += 1
            metrics.log(step=step, dev_acc=acc, best_acc=best["acc"])
            if save_to is not None:
                save_checkpoint(save_to, cfg, seed, model, opt, batch_rng, step, best)
            if best["since"] >= cfg.patience:
                metrics.log(step=step, early_stop=True)
                break
        if stop_after is not None and step >= stop_after:
            break

    metrics.wall_seconds = time.perf_counter() - t0
    if best["params"] is not None:
        for name, t in model.named_parameters():
            t.data[...] = best["params"][name]
    return model, metrics


def _seed_job(cfg: TrainConfig, train_examples, dev_examples, vocab,
              test_packed, seed: int, save_to, metrics_path) -> dict:
    """Train one seed, score it on the test split, and dump its artifacts.

    Module-level so parallel runs can ship it to worker processes."""
    model, metrics = train(cfg, train_examples, dev_examples, vocab,
                           seed=seed, save_to=save_to)
    test_acc = evaluate_packed(model, test_packed)
    metrics.log(step=metrics.records[-1]["step"], test_acc=test_acc)
    if metrics_path is not None:
        metrics.dump_jsonl(metrics_path)
    return {"seed": seed, "dev_acc": max(
        (r["dev_acc"] for r in metrics.records if "dev_acc" in r), default=-1.0),
        "test_acc": test_acc,
        "steps": metrics.records[-1]["step"],
        "wall_seconds": metrics.wall_seconds}


def run_seeds(cfg: TrainConfig, train_examples, dev_examples, test_examples,
              vocab, seeds=None, out_dir=None, tag="run", parallel: int = 1) -> dict:
    """Train one model per seed and report the per-seed and median accuracy.

    parallel > 1 trains that many seeds at once in worker processes; results
    and artifacts are identical to a sequential run because each seed's work
    is self-contained and reported in seed order.
    """
    if parallel < 1:
        raise ValueError("parallel must be >= 1")
    seeds = list(cfg.seeds if seeds is None else seeds)
    test_packed = tensorize_dataset(test_examples, vocab, cfg.model.max_len)
    jobs = []
    for seed in seeds:
        save_to = metrics_path = None
        if out_dir is not None:
            save_to = f"{out_dir}/{tag}_seed{seed}.ckpt"
            metrics_path = f"{out_dir}/{tag}_seed{seed}.metrics.jsonl"
        jobs.append((cfg, train_examples, dev_examples, vocab, test_packed,
                     seed, save_to, metrics_path))
    if parallel > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(parallel, len(seeds))) as pool:
            per_seed = list(pool.map(_seed_job_star, jobs))
    else:
        per_seed = [_seed_job(*job) for job in jobs]
    report = {
        "seeds": seeds,
        "per_seed": per_seed,
        "median_dev_acc": float(np.median([r["dev_acc"] for r in per_seed])),
        "median_test_acc": float(np.median([r["test_acc"] for r in per_seed])),
        "config_hash": config_hash(cfg),
    }
    return report


def _seed_job_star(args) -> dict:
    return _seed_job(*args)
