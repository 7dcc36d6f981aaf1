#!/usr/bin/env python3
"""Train one model per modality combination on an existing cohort directory
and print a ranked AUROC/AUPRC table, plus DeLong p-values against the best.

Usage:
    python3 scripts/run_modality_ablation.py --data /tmp/synth_exp/data \
        --combos C M C|M C|M|X|E|T
"""

import argparse
import json
from pathlib import Path

from modimg import pipeline
from modimg.encode import RenderConfig
from modimg.metrics import delong_test
from modimg.model import EncoderConfig, TaskSpec, TextConfig, TrainConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", required=True, help="cohort directory (csv inputs)")
    ap.add_argument("--combos", nargs="+", default=["C", "M", "C|M"])
    ap.add_argument("--task", choices=["mortality", "phenotyping"], default="mortality")
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--batch-size", type=int, default=8)
    ap.add_argument("--lr", type=float, default=3e-4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="optional JSON results path")
    args = ap.parse_args()

    dataset = pipeline.load_dataset(args.data, seed=0)
    task = TaskSpec(name=args.task, n_outputs=1 if args.task == "mortality" else 25)
    lrs = (args.lr / 3, args.lr, args.lr / 3)[: args.epochs] or (args.lr,)
    results = {}
    for combo in args.combos:
        result = pipeline.run_experiment(
            dataset,
            combo,
            task,
            EncoderConfig(image_size=96, patch_size=16, embed_dim=64, n_layers=2,
                          n_heads=4, mlp_ratio=4.0, feature_dim=64),
            TrainConfig(epochs=args.epochs, learning_rates=lrs,
                        batch_size=args.batch_size, seed=args.seed),
            RenderConfig(canvas_size=96),
            base_dir=args.data,
            text_config=TextConfig() if "T" in combo.upper() else None,
        )
        results[combo] = result

    ranked = sorted(results, key=lambda c: -results[c].report.auroc)
    best = ranked[0]
    print(f"{'combo':<12}{'auroc':>8}{'auprc':>8}{'bal_acc':>9}{'delong_p vs ' + best:>16}")
    table = {}
    for combo in ranked:
        rep = results[combo].report
        if combo == best or task.n_outputs != 1:
            p = float("nan")
        else:
            _, _, _, p = delong_test(
                results[best].test_scores, results[combo].test_scores,
                results[best].test_labels,
            )
        print(f"{combo:<12}{rep.auroc:>8.4f}{rep.auprc:>8.4f}{rep.bal_acc:>9.4f}{p:>16.4g}")
        table[combo] = {"auroc": rep.auroc, "auprc": rep.auprc,
                        "bal_acc": rep.bal_acc, "delong_p_vs_best": p}
    if args.out:
        Path(args.out).write_text(json.dumps(table, indent=2))


if __name__ == "__main__":
    main()
