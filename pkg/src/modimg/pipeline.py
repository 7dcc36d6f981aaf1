"""End-to-end glue: dataset directory -> cohort -> tensors -> trained model.

The CLI and the experiment scripts are thin wrappers around these functions.
Modality letters follow the run-configuration vocabulary: C = clinical
measurements, M = medications, X = CXR, E = ECG, T = text metadata.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import encode, ingest, textmeta
from .catalog import clinical_catalog, medication_catalog
from .metrics import MetricReport, auroc, auprc, balanced_accuracy, choose_threshold
from .model import (
    EncoderConfig,
    FusionModel,
    TaskSpec,
    TextConfig,
    TrainConfig,
    predict,
    train,
)

LETTER_TO_MODALITY = {"C": "clinical", "M": "meds", "X": "cxr", "E": "ecg"}


def parse_modality_string(spec: str) -> tuple[tuple[str, ...], bool]:
    """'C|M|X|E|T' -> (modalities, use_text)."""
    letters = [p.strip().upper() for p in spec.split("|") if p.strip()]
    use_text = "T" in letters
    unknown = [l for l in letters if l != "T" and l not in LETTER_TO_MODALITY]
    if unknown:
        raise ValueError(f"unknown modality letters {unknown}")
    modalities = tuple(LETTER_TO_MODALITY[l] for l in letters if l != "T")
    if not modalities and not use_text:
        raise ValueError("modality set must be non-empty")
    return modalities, use_text


@dataclass
class Dataset:
    cohort: list[ingest.CohortInstance]
    split: ingest.CohortSplit
    dose_stats: dict
    warnings: list[str] = field(default_factory=list)

    def instances(self, part: str) -> list[ingest.CohortInstance]:
        ids = set(getattr(self.split, part))
        return [inst for inst in self.cohort if inst.stay_id in ids]


def load_dataset(
    data_dir: str | Path,
    window_h: float = 48.0,
    fractions: tuple[float, float, float] = (0.72, 0.08, 0.20),
    seed: int = 0,
) -> Dataset:
    data_dir = Path(data_dir)
    variables = clinical_catalog()
    medications = medication_catalog()
    events = ingest.parse_events(data_dir / "events.csv", {v.variable_id for v in variables})
    meds = ingest.parse_medications(data_dir / "meds.csv", {m.drug_name: m for m in medications})
    stays = ingest.parse_stays(data_dir / "stays.csv")
    metadata = ingest.parse_metadata(data_dir / "metadata.jsonl")
    cxr_refs = ingest.parse_cxr_manifest(data_dir / "cxr_manifest.csv")
    ecg_path = data_dir / "ecg_manifest.csv"
    ecg_refs = ingest.parse_ecg_manifest(ecg_path) if ecg_path.exists() else {}
    cohort = ingest.build_cohort(stays, events.data, meds.data, metadata, cxr_refs, ecg_refs, window_h)
    labels = [inst.label_mortality for inst in cohort]
    split = ingest.split_stratified([i.stay_id for i in cohort], labels, fractions, seed)
    train_ids = set(split.train)
    dose_stats = encode.compute_dose_stats(
        {i.stay_id: i.meds for i in cohort if i.stay_id in train_ids}, medications, window_h
    )
    return Dataset(cohort=cohort, split=split, dose_stats=dose_stats,
                   warnings=events.warnings + meds.warnings)


def prepare_tensors(
    dataset: Dataset,
    part: str,
    modalities: tuple[str, ...],
    task: TaskSpec,
    render_config: encode.RenderConfig,
    base_dir: str | Path,
    use_text: bool = False,
    tokenizer: textmeta.BpeModel | None = None,
    context_length: int = textmeta.CONTEXT_LENGTH,
) -> tuple[dict[str, torch.Tensor], torch.Tensor, list[str]]:
    """Render and normalize the requested modalities for one split part.

    Returns (batch dict, labels, stay_ids in order).
    """
    variables = clinical_catalog()
    medications = medication_catalog()
    instances = dataset.instances(part)
    batch: dict[str, torch.Tensor] = {}
    arrays: dict[str, list[np.ndarray]] = {m: [] for m in modalities}
    token_rows = []
    for inst in instances:
        images = encode.render_instance(
            inst, variables, medications, dataset.dose_stats, render_config, base_dir
        )
        for m in modalities:
            normalized = encode.normalize_image(images[m])
            arrays[m].append(normalized.data.transpose(2, 0, 1).astype(np.float32))
        if use_text:
            prompt = textmeta.serialize_metadata(
                inst.metadata, include_diagnoses=task.name == "mortality"
            )
            token_rows.append(textmeta.tokenize(prompt.text, tokenizer, context_length))
    for m in modalities:
        batch[m] = torch.from_numpy(np.stack(arrays[m]))
    if use_text:
        batch["text"] = torch.tensor(token_rows, dtype=torch.long)
    if task.name == "mortality":
        labels = torch.tensor([inst.label_mortality for inst in instances], dtype=torch.float32)
    else:
        labels = torch.tensor([inst.label_phenotypes for inst in instances], dtype=torch.float32)
    return batch, labels, [inst.stay_id for inst in instances]


def fit_tokenizer(dataset: Dataset, task: TaskSpec, vocab_size: int = 512) -> textmeta.BpeModel:
    prompts = [
        textmeta.serialize_metadata(inst.metadata, include_diagnoses=task.name == "mortality").text
        for inst in dataset.instances("train")
    ]
    return textmeta.train_bpe(prompts, vocab_size)


@dataclass
class ExperimentResult:
    report: MetricReport
    history: list[dict]
    test_scores: np.ndarray
    test_labels: np.ndarray
    test_stay_ids: list[str]
    model: FusionModel


def run_experiment(
    dataset: Dataset,
    modality_spec: str,
    task: TaskSpec,
    encoder_config: EncoderConfig,
    train_config: TrainConfig,
    render_config: encode.RenderConfig,
    base_dir: str | Path,
    text_config: TextConfig | None = None,
) -> ExperimentResult:
    """Train on the train split, select by validation AUROC, report on test."""
    modalities, use_text = parse_modality_string(modality_spec)
    tokenizer = None
    if use_text:
        tokenizer = fit_tokenizer(dataset, task, vocab_size=text_config.vocab_size if text_config else 512)
        if text_config is None:
            text_config = TextConfig(vocab_size=tokenizer.vocab_size)
    parts = {}
    for part in ("train", "val", "test"):
        parts[part] = prepare_tensors(
            dataset, part, modalities, task, render_config, base_dir,
            use_text=use_text, tokenizer=tokenizer,
            context_length=text_config.context_length if text_config else textmeta.CONTEXT_LENGTH,
        )
    torch.manual_seed(train_config.seed)
    model = FusionModel(
        modalities=modalities,
        encoder_config=encoder_config,
        task=task,
        text_config=text_config if use_text else None,
    )
    history = train(
        model, parts["train"][0], parts["train"][1], train_config,
        val_batch=parts["val"][0], val_labels=parts["val"][1],
    )
    val_scores = predict(model, parts["val"][0]).numpy()
    test_scores = predict(model, parts["test"][0]).numpy()
    val_labels = parts["val"][1].numpy()
    test_labels = parts["test"][1].numpy()
    if task.n_outputs == 1:
        threshold = choose_threshold(val_scores, val_labels)
        report = MetricReport(
            auroc=auroc(test_scores, test_labels),
            auprc=auprc(test_scores, test_labels),
            bal_acc=balanced_accuracy(test_scores, test_labels, threshold),
            threshold=threshold,
        )
    else:
        per_class = []
        for j in range(task.n_outputs):
            col_labels = test_labels[:, j]
            if 0 < col_labels.sum() < col_labels.size:
                per_class.append(auroc(test_scores[:, j], col_labels))
            else:
                per_class.append(float("nan"))
        valid = [v for v in per_class if not np.isnan(v)]
        flat_scores = test_scores.reshape(-1)
        flat_labels = test_labels.reshape(-1)
        threshold = choose_threshold(val_scores.reshape(-1), val_labels.reshape(-1))
        report = MetricReport(
            auroc=float(np.mean(valid)) if valid else 0.5,
            auprc=auprc(flat_scores, flat_labels),
            bal_acc=balanced_accuracy(flat_scores, flat_labels, threshold),
            threshold=threshold,
            per_phenotype_auroc=per_class,
        )
    return ExperimentResult(
        report=report,
        history=history,
        test_scores=test_scores,
        test_labels=test_labels,
        test_stay_ids=parts["test"][2],
        model=model,
    )


def report_to_json(report: MetricReport) -> dict:
    out = {
        "auroc": report.auroc,
        "auprc": report.auprc,
        "bal_acc": report.bal_acc,
        "threshold": report.threshold,
    }
    if report.per_phenotype_auroc is not None:
        out["per_phenotype_auroc"] = report.per_phenotype_auroc
    return out


def save_scores(path: str | Path, stay_ids: list[str], scores: np.ndarray, labels: np.ndarray) -> None:
    payload = {
        "stay_ids": stay_ids,
        "scores": np.asarray(scores).tolist(),
        "labels": np.asarray(labels).astype(int).tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_scores(path: str | Path) -> tuple[list[str], np.ndarray, np.ndarray]:
    payload = json.loads(Path(path).read_text())
    return payload["stay_ids"], np.asarray(payload["scores"]), np.asarray(payload["labels"])
