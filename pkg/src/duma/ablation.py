"""Ablation suites over the co-attention head.

Each suite sweeps one knob of a base training config, trains every variant
on the same data with the same seeds and step budget, and reports
per-variant median dev/test accuracy as a machine-readable table. Expected
orderings (dual attention beating single-pass pooling, both directions
beating either alone) are checked and reported as regressions when they
fail; the report is still written.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .train import TrainConfig, config_hash, run_seeds

SUITES = ("fuse_modes", "directions", "layer_sweep", "head_modes")

LAYER_SWEEP_RANGE = range(1, 7)


def _with_duma(cfg: TrainConfig, **duma_kw) -> TrainConfig:
    duma = dataclasses.replace(cfg.model.duma, **duma_kw)
    model = dataclasses.replace(cfg.model, head_mode="duma", duma=duma)
    return dataclasses.replace(cfg, model=model)


def _with_head(cfg: TrainConfig, head_mode: str) -> TrainConfig:
    return dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, head_mode=head_mode))


def suite_variants(suite: str, base_cfg: TrainConfig) -> list[tuple[str, TrainConfig]]:
    """Expand a suite name into (label, config) rows derived from base_cfg."""
    if suite == "fuse_modes":
        return [(mode, _with_duma(base_cfg, fuse_mode=mode))
                for mode in ("mul", "sum", "concat")]
    if suite == "directions":
        return [(d, _with_duma(base_cfg, direction=d))
                for d in ("p2q_only", "q2p_only", "both")]
    if suite == "layer_sweep":
        return [(f"k{k}", _with_duma(base_cfg, k=k, share_layers=True))
                for k in LAYER_SWEEP_RANGE]
    if suite == "head_modes":
        return [("duma", _with_duma(base_cfg, variant="plain")),
                ("tb_duma", _with_duma(base_cfg, variant="tb")),
                ("vanilla_sa", _with_head(base_cfg, "vanilla_sa")),
                ("sa_plus_ca", _with_head(base_cfg, "sa_plus_ca"))]
    raise ValueError(f"suite must be one of {SUITES}, got {suite!r}")


def _find(rows, variant):
    return next(r for r in rows if r["variant"] == variant)


def check_orderings(suite: str, rows) -> list[str]:
    """Expected-orderings check on median test accuracy; returns regressions."""
    out = []
    if suite == "head_modes":
        duma = _find(rows, "duma")["median_test_acc"]
        vanilla = _find(rows, "vanilla_sa")["median_test_acc"]
        if duma < vanilla:
            out.append(f"duma {duma:.4f} below vanilla_sa {vanilla:.4f}")
    if suite == "directions":
        both = _find(rows, "both")["median_test_acc"]
        best_uni = max(_find(rows, "p2q_only")["median_test_acc"],
                       _find(rows, "q2p_only")["median_test_acc"])
        if both < best_uni - 0.01:
            out.append(f"both {both:.4f} below best single direction {best_uni:.4f} - 0.01")
    return out


def report_tsv(report: dict) -> str:
    lines = ["variant\tmedian_dev_acc\tmedian_test_acc\tper_seed_test"]
    for row in report["rows"]:
        per_seed = ",".join(f"{r['test_acc']:.4f}" for r in row["per_seed"])
        lines.append(f"{row['variant']}\t{row['median_dev_acc']:.4f}"
                     f"\t{row['median_test_acc']:.4f}\t{per_seed}")
    return "\n".join(lines) + "\n"


def run_ablation(suite: str, base_cfg: TrainConfig, train_examples, dev_examples,
                 test_examples, vocab, seeds=None, out_dir=None,
                 parallel: int = 1) -> dict:
    """Train every variant of the suite and build the comparison report.

    All variants see the same data, seeds, and budget; only the swept knob
    changes. With out_dir set, writes {suite}.json and {suite}.tsv plus the
    per-variant checkpoints and metrics files run_seeds produces. parallel
    fans each variant's seeds out to that many worker processes.
    """
    seeds = list(base_cfg.seeds if seeds is None else seeds)
    rows = []
    timing = {}
    for label, cfg in suite_variants(suite, base_cfg):
        sub = run_seeds(cfg, train_examples, dev_examples, test_examples, vocab,
                        seeds=seeds, out_dir=out_dir, tag=f"{suite}_{label}",
                        parallel=parallel)
        # wall time stays out of the primary report so reruns are byte-identical
        per_seed = [{k: v for k, v in r.items() if k != "wall_seconds"}
                    for r in sub["per_seed"]]
        timing[label] = {str(r["seed"]): r["wall_seconds"] for r in sub["per_seed"]}
        rows.append({
            "variant": label,
            "median_dev_acc": sub["median_dev_acc"],
            "median_test_acc": sub["median_test_acc"],
            "per_seed": per_seed,
            "config_hash": sub["config_hash"],
        })
    report = {
        "suite": suite,
        "seeds": seeds,
        "base_config_hash": config_hash(base_cfg),
        "rows": rows,
        "regressions": check_orderings(suite, rows),
    }
    if out_dir is not None:
        with open(f"{out_dir}/{suite}.json", "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
        with open(f"{out_dir}/{suite}.tsv", "w", encoding="utf-8") as f:
            f.write(report_tsv(report))
        with open(f"{out_dir}/{suite}.timing.json", "w", encoding="utf-8") as f:
            json.dump({"wall_seconds": timing}, f, indent=2, sort_keys=True)
            f.write("\n")
    return report
