"""Run every ablation suite on the synthetic task and print the tables.

Usage: python scripts/run_ablations.py [out_dir] [suite ...]

Suites default to all four (fuse_modes, directions, layer_sweep, head_modes).
Reports land under out_dir (default runs/ablations) as {suite}.json and
{suite}.tsv; regressions against the expected orderings are printed and do
not abort the sweep.
"""

import os
import sys

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))


def main() -> int:
    from duma.ablation import SUITES, report_tsv, run_ablation
    from duma.coattn import DumaConfig
    from duma.data import SyntheticTaskConfig, gen_synthetic, synthetic_vocab
    from duma.model import ModelConfig
    from duma.train import TrainConfig

    args = sys.argv[1:]
    out_dir = args[0] if args else "runs/ablations"
    suites = args[1:] or list(SUITES)
    os.makedirs(out_dir, exist_ok=True)

    # Smallest task instance that trains through its phase transition inside
    # the step budget; the full-size task plateaus at chance for far longer
    # than any desk-scale budget, which would turn every comparison into a
    # coin flip.
    task = SyntheticTaskConfig(n_keys=3, n_values=3, pairs_per_passage=2,
                               options=2, train_size=1500, dev_size=300,
                               test_size=300)
    train_ex, dev_ex, test_ex = gen_synthetic(task)
    vocab = synthetic_vocab(task)

    base = TrainConfig(
        model=ModelConfig(vocab_size=len(vocab), d_model=32, h=4, n_enc=2,
                          max_len=64, init_std=0.1,
                          duma=DumaConfig(k=2, fuse_mode="concat")),
        lr=1e-3, batch_size=16, warmup_steps=150, max_steps=5000,
        eval_every=250, patience=50, seeds=[0, 1, 2])

    failures = []
    for suite in suites:
        print(f"== {suite} ==")
        report = run_ablation(suite, base, train_ex, dev_ex, test_ex, vocab,
                              out_dir=out_dir)
        print(report_tsv(report), end="")
        for flag in report["regressions"]:
            print(f"regression: {flag}")
            failures.append(f"{suite}: {flag}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
