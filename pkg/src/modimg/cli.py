"""`modimg` command line: synth, cohort, render, train, eval, compare, explain.

Every subcommand reads one TOML config file and prints a machine-readable
JSON summary on success. Exit codes: 0 success, 1 validation failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np
import torch

from . import encode, ingest, pipeline, textmeta
from .catalog import clinical_catalog, layout_grid, medication_catalog, save_catalogs
from .explain import cls_attention_map, overlay, text_attention
from .metrics import compare_methods
from .model import (
    EncoderConfig,
    TaskSpec,
    TextConfig,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
)
from .synth import SignalSpec, SynthSpec, generate_synthetic


def _load_config(path: str) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _section(config: dict, name: str) -> dict:
    if name not in config:
        raise ValueError(f"config is missing the [{name}] section")
    return config[name]


def _dataset_from_config(config: dict) -> tuple[pipeline.Dataset, Path]:
    cohort_cfg = _section(config, "cohort")
    data_dir = Path(cohort_cfg["data_dir"])
    dataset = pipeline.load_dataset(
        data_dir,
        window_h=float(cohort_cfg.get("window_h", 48.0)),
        fractions=tuple(cohort_cfg.get("fractions", (0.72, 0.08, 0.20))),
        seed=int(cohort_cfg.get("seed", 0)),
    )
    return dataset, data_dir


def cmd_synth(config: dict, out_override: str | None) -> dict:
    cfg = _section(config, "synth")
    signals = [
        SignalSpec(modality=s["modality"], channel=s["channel"], weight=float(s["weight"]))
        for s in cfg.get("signals", [])
    ]
    spec = SynthSpec(
        n_stays=int(cfg["n_stays"]),
        seed=int(cfg.get("seed", 0)),
        window_h=float(cfg.get("window_h", 48.0)),
        event_rate=float(cfg.get("event_rate", 6.0)),
        signals=signals,
        label_noise=float(cfg.get("label_noise", 0.0)),
        bias=float(cfg.get("bias", 0.0)),
        ecg_missing_rate=float(cfg.get("ecg_missing_rate", 0.44)),
        modalities=tuple(cfg.get("modalities", ("clinical", "meds", "cxr", "ecg"))),
    )
    return generate_synthetic(spec, out_override or cfg["out_dir"])


def cmd_cohort(config: dict, out_override: str | None) -> dict:
    cfg = _section(config, "cohort")
    dataset, _ = _dataset_from_config(config)
    out_dir = Path(out_override or cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ingest.save_cohort(out_dir / "cohort.json", dataset.cohort)
    (out_dir / "split.json").write_text(
        json.dumps(
            {
                "train": dataset.split.train,
                "val": dataset.split.val,
                "test": dataset.split.test,
                "seed": dataset.split.seed,
            }
        )
    )
    encode.save_dose_stats(out_dir / "dose_stats.json", dataset.dose_stats, dataset.split.seed)
    save_catalogs(out_dir / "catalogs.json", clinical_catalog(), medication_catalog())
    return {
        "cohort_size": len(dataset.cohort),
        "train": len(dataset.split.train),
        "val": len(dataset.split.val),
        "test": len(dataset.split.test),
        "warnings": dataset.warnings,
    }


def cmd_render(config: dict, out_override: str | None) -> dict:
    cfg = _section(config, "render")
    dataset, data_dir = _dataset_from_config(config)
    render_config = encode.RenderConfig(
        canvas_size=int(cfg.get("canvas_size", 384)),
        window_h=float(config["cohort"].get("window_h", 48.0)),
    )
    n = encode.render_cohort(
        dataset.cohort,
        clinical_catalog(),
        medication_catalog(),
        dataset.dose_stats,
        render_config,
        out_dir=out_override or cfg["out_dir"],
        base_dir=data_dir,
        threads=int(cfg["threads"]) if "threads" in cfg else None,
    )
    return {"rendered": n}


def _model_configs(cfg: dict) -> tuple[EncoderConfig, TaskSpec, TrainConfig, TextConfig | None]:
    encoder = EncoderConfig(
        image_size=int(cfg.get("image_size", 96)),
        patch_size=int(cfg.get("patch_size", 16)),
        embed_dim=int(cfg.get("embed_dim", 64)),
        n_layers=int(cfg.get("n_layers", 2)),
        n_heads=int(cfg.get("n_heads", 4)),
        window_size=int(cfg.get("window_size", 0)),
        mlp_ratio=float(cfg.get("mlp_ratio", 4.0)),
        feature_dim=int(cfg.get("feature_dim", 64)),
    )
    task_name = cfg.get("task", "mortality")
    task = TaskSpec(name=task_name, n_outputs=1 if task_name == "mortality" else 25)
    train_cfg = TrainConfig(
        learning_rates=tuple(cfg.get("learning_rates", (1e-5, 5e-6, 1e-6))),
        weight_decay=float(cfg.get("weight_decay", 3e-8)),
        epochs=int(cfg.get("epochs", 3)),
        batch_size=int(cfg.get("batch_size", 8)),
        seed=int(cfg.get("seed", 0)),
    )
    text_config = None
    if "T" in cfg.get("modalities", "").upper():
        text_config = TextConfig(
            vocab_size=int(cfg.get("text_vocab_size", 512)),
            context_length=int(cfg.get("context_length", 512)),
            embed_dim=int(cfg.get("embed_dim", 64)),
            n_layers=int(cfg.get("n_layers", 2)),
            n_heads=int(cfg.get("n_heads", 4)),
            feature_dim=int(cfg.get("feature_dim", 64)),
        )
    return encoder, task, train_cfg, text_config


def cmd_train(config: dict, out_override: str | None) -> dict:
    cfg = _section(config, "train")
    dataset, data_dir = _dataset_from_config(config)
    encoder, task, train_cfg, text_config = _model_configs(cfg)
    render_config = encode.RenderConfig(
        canvas_size=encoder.image_size,
        window_h=float(config["cohort"].get("window_h", 48.0)),
    )
    result = pipeline.run_experiment(
        dataset,
        cfg.get("modalities", "C"),
        task,
        encoder,
        train_cfg,
        render_config,
        base_dir=data_dir,
        text_config=text_config,
    )
    out_dir = Path(out_override or cfg.get("out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "model.pt", result.model, result.history)
    with (out_dir / "train_log.jsonl").open("w") as fh:
        for record in result.history:
            fh.write(json.dumps(record) + "\n")
    pipeline.save_scores(
        out_dir / "test_scores.json", result.test_stay_ids, result.test_scores, result.test_labels
    )
    return {
        "checkpoint": str(out_dir / "model.pt"),
        "epochs": len(result.history),
        "report": pipeline.report_to_json(result.report),
    }


def cmd_eval(config: dict, out_override: str | None) -> dict:
    cfg = _section(config, "eval")
    dataset, data_dir = _dataset_from_config(config)
    model, _ = load_checkpoint(cfg["checkpoint"])
    render_config = encode.RenderConfig(
        canvas_size=model.encoder_config.image_size,
        window_h=float(config["cohort"].get("window_h", 48.0)),
    )
    use_text = model.text_encoder is not None
    tokenizer = None
    if use_text:
        tokenizer = pipeline.fit_tokenizer(dataset, model.task, model.text_config.vocab_size)
    batch, labels, stay_ids = pipeline.prepare_tensors(
        dataset, cfg.get("split", "test"), model.modalities, model.task, render_config,
        data_dir, use_text=use_text, tokenizer=tokenizer,
        context_length=model.text_config.context_length if use_text else textmeta.CONTEXT_LENGTH,
    )
    from .model import predict
    from .metrics import auroc, auprc, balanced_accuracy

    scores = predict(model, batch).numpy()
    y = labels.numpy()
    if model.task.n_outputs == 1:
        threshold = float(cfg.get("threshold", 0.5))
        out = {
            "auroc": auroc(scores, y),
            "auprc": auprc(scores, y),
            "bal_acc": balanced_accuracy(scores, y, threshold),
            "threshold": threshold,
            "n": len(stay_ids),
        }
    else:
        per_class = [
            auroc(scores[:, j], y[:, j]) if 0 < y[:, j].sum() < y.shape[0] else None
            for j in range(model.task.n_outputs)
        ]
        valid = [v for v in per_class if v is not None]
        out = {"auroc": float(np.mean(valid)), "per_phenotype_auroc": per_class, "n": len(stay_ids)}
    if out_override:
        Path(out_override).mkdir(parents=True, exist_ok=True)
        (Path(out_override) / "eval.json").write_text(json.dumps(out))
    return out


def cmd_compare(config: dict, out_override: str | None) -> dict:
    cfg = _section(config, "compare")
    ids_a, scores_a, labels_a = pipeline.load_scores(cfg["scores_a"])
    ids_b, scores_b, labels_b = pipeline.load_scores(cfg["scores_b"])
    if ids_a != ids_b or not np.array_equal(labels_a, labels_b):
        raise ValueError("score files are not paired on the same instances")
    record = compare_methods(
        scores_a, scores_b, labels_a,
        n_boot=int(cfg.get("n_boot", 1000)), seed=int(cfg.get("seed", 0)),
    )
    return {
        "auroc_a": record.auroc_a,
        "auroc_b": record.auroc_b,
        "delong_z": record.delong_z,
        "delong_p": record.delong_p,
        "bootstrap_t": record.bootstrap_t,
        "bootstrap_df": record.bootstrap_df,
        "bootstrap_p": record.bootstrap_p,
    }


def cmd_explain(config: dict, out_override: str | None) -> dict:
    cfg = _section(config, "explain")
    dataset, data_dir = _dataset_from_config(config)
    model, _ = load_checkpoint(cfg["checkpoint"])
    out_dir = Path(out_override or cfg.get("out_dir", "explain"))
    out_dir.mkdir(parents=True, exist_ok=True)
    render_config = encode.RenderConfig(
        canvas_size=model.encoder_config.image_size,
        window_h=float(config["cohort"].get("window_h", 48.0)),
    )
    mode = cfg.get("mode", "last_layer_mean")
    alpha = float(cfg.get("alpha", 0.5))
    wanted = set(cfg.get("stay_ids", []))
    instances = [i for i in dataset.cohort if not wanted or i.stay_id in wanted]
    variables = clinical_catalog()
    medications = medication_catalog()
    tokenizer = None
    if model.text_encoder is not None:
        tokenizer = pipeline.fit_tokenizer(dataset, model.task, model.text_config.vocab_size)
    written = []
    for inst in instances:
        images = encode.render_instance(
            inst, variables, medications, dataset.dose_stats, render_config, data_dir
        )
        batch = {}
        for m in model.modalities:
            normalized = encode.normalize_image(images[m])
            batch[m] = torch.from_numpy(
                normalized.data.transpose(2, 0, 1).astype(np.float32)
            ).unsqueeze(0)
        if tokenizer is not None:
            prompt = textmeta.serialize_metadata(
                inst.metadata, include_diagnoses=model.task.name == "mortality"
            )
            ids = textmeta.tokenize(prompt.text, tokenizer, model.text_config.context_length)
            batch["text"] = torch.tensor([ids], dtype=torch.long)
        model.eval()
        with torch.no_grad():
            _, stacks = model(batch, record_attention=True)
        for m in model.modalities:
            stack = [layer[0].numpy() for layer in stacks[m]]
            saliency = cls_attention_map(stack, model.encoder_config.image_size, mode)
            blended = overlay(images[m], saliency, alpha)
            path = out_dir / f"{inst.stay_id}.{m}.attn.png"
            encode.save_png(path, blended)
            written.append(str(path))
        if tokenizer is not None:
            stack = [layer[0].numpy() for layer in stacks["text"]]
            weights = text_attention(stack, ids, tokenizer)
            path = out_dir / f"{inst.stay_id}.text.attn.json"
            path.write_text(json.dumps(weights))
            written.append(str(path))
    return {"written": len(written), "out_dir": str(out_dir)}


COMMANDS = {
    "synth": cmd_synth,
    "cohort": cmd_cohort,
    "render": cmd_render,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "explain": cmd_explain,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="modimg")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        summary = COMMANDS[args.command](config, args.out)
    except (ValueError, KeyError, FileNotFoundError, ingest.ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
