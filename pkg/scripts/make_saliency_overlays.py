#!/usr/bin/env python3
"""Render attention-saliency overlays for test-split stays of a trained model.

Loads a checkpoint produced by `modimg train` (or save_checkpoint), re-renders
each requested stay's modality images at model scale, and writes
{stay_id}.{modality}.attn.png heatmap overlays.

Usage:
    python3 scripts/make_saliency_overlays.py --data /tmp/synth_exp/data \
        --checkpoint /tmp/synth_exp/model.pt --out /tmp/overlays --limit 8
"""

import argparse
from pathlib import Path

import numpy as np
import torch

from modimg import encode, pipeline
from modimg.catalog import clinical_catalog, medication_catalog
from modimg.explain import cls_attention_map, overlay
from modimg.model import load_checkpoint


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", required=True)
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--limit", type=int, default=8)
    ap.add_argument("--alpha", type=float, default=0.5)
    args = ap.parse_args()

    model, _ = load_checkpoint(args.checkpoint)
    model.eval()
    size = model.encoder_config.image_size
    dataset = pipeline.load_dataset(args.data, seed=0)
    cfg = encode.RenderConfig(canvas_size=size)
    variables, meds = clinical_catalog(), medication_catalog()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = 0
    for inst in dataset.instances("test")[: args.limit]:
        images = encode.render_instance(inst, variables, meds, dataset.dose_stats,
                                        cfg, args.data)
        batch = {}
        for m in model.modalities:
            normalized = encode.normalize_image(images[m])
            batch[m] = torch.from_numpy(
                normalized.data.transpose(2, 0, 1).astype(np.float32)
            ).unsqueeze(0)
        with torch.no_grad():
            _, stacks = model(batch, record_attention=True)
        for m in model.modalities:
            stack = [layer[0].numpy() for layer in stacks[m]]
            sal = cls_attention_map(stack, image_size=size)
            heat = overlay(images[m], sal, alpha=args.alpha)
            encode.save_png(out_dir / f"{inst.stay_id}.{m}.attn.png", heat)
            written += 1
    print(f"wrote {written} overlays to {out_dir}")


if __name__ == "__main__":
    main()
