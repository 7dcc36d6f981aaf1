"""Seeded synthetic cohorts with planted, analyzable signals.

Each stay draws one latent value per signal channel; the label is Bernoulli
of the sigmoid of the weighted latent sum, then flipped with the configured
noise. The generator writes the exact input files the ingest module reads,
plus a sidecar with the generative ground truth so tests can compute the
ceiling AUROC any model could reach.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .catalog import clinical_catalog, medication_catalog
from .metrics import auroc

STANDARD_LEADS = ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"]


@dataclass(frozen=True)
class SignalSpec:
    modality: str  # clinical | meds | cxr | ecg
    channel: str  # variable_id / drug_name / "brightness" / "amplitude"
    weight: float


@dataclass
class SynthSpec:
    n_stays: int = 200
    seed: int = 0
    window_h: float = 48.0
    event_rate: float = 6.0  # Poisson observations per variable per window
    signals: list[SignalSpec] = field(default_factory=list)
    label_noise: float = 0.0  # flip probability, in [0, 0.5)
    bias: float = 0.0
    ecg_missing_rate: float = 0.44
    modalities: tuple[str, ...] = ("clinical", "meds", "cxr", "ecg")
    n_background_variables: int = 8  # non-signal variables observed per stay
    n_background_drugs: int = 3
    cxr_size: int = 64
    ecg_hz: int = 125
    ecg_seconds: float = 6.0
    phenotype_prevalence: float = 0.2

    def __post_init__(self):
        if not 0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must be in [0, 0.5)")
        if self.event_rate <= 0:
            raise ValueError("event_rate must be > 0")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def generate_synthetic(spec: SynthSpec, out_dir: str | Path) -> dict:
    """Write a full input file set plus ground-truth sidecar; returns a
    summary dict."""
    out = Path(out_dir)
    (out / "cxr").mkdir(parents=True, exist_ok=True)
    if "ecg" in spec.modalities:
        (out / "ecg").mkdir(exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    variables = clinical_catalog()
    meds = medication_catalog()
    var_by_id = {v.variable_id: v for v in variables}
    signal_clinical = {s.channel: s for s in spec.signals if s.modality == "clinical"}
    signal_meds = {s.channel: s for s in spec.signals if s.modality == "meds"}
    signal_cxr = [s for s in spec.signals if s.modality == "cxr"]
    signal_ecg = [s for s in spec.signals if s.modality == "ecg"]
    for vid in signal_clinical:
        if vid not in var_by_id:
            raise ValueError(f"unknown clinical signal channel {vid!r}")
    drug_names = [m.drug_name for m in meds]
    for d in signal_meds:
        if d not in drug_names:
            raise ValueError(f"unknown drug signal channel {d!r}")

    stay_ids = [f"s{i:05d}" for i in range(spec.n_stays)]
    events_rows = []
    meds_rows = []
    stays_rows = []
    meta_lines = []
    cxr_rows = []
    ecg_rows = []
    sidecar_stats: dict[str, dict[str, float]] = {}
    scores = np.zeros(spec.n_stays)

    sexes = ["F", "M"]
    ethnicities = ["white", "black", "hispanic", "asian", "other"]
    insurances = ["medicare", "medicaid", "private", "other"]

    for idx, stay_id in enumerate(stay_ids):
        latents: dict[str, float] = {}
        score = spec.bias
        stay_drugs: set[str] = set()

        # clinical variables: signal channels ride their latent, background
        # variables are pure population noise
        background = list(
            rng.choice(
                [v.variable_id for v in variables if v.variable_id not in signal_clinical],
                size=min(spec.n_background_variables, len(variables)),
                replace=False,
            )
        )
        for vid in list(signal_clinical) + background:
            var = var_by_id[vid]
            n_obs = int(rng.poisson(spec.event_rate))
            if vid in signal_clinical:
                n_obs = max(n_obs, 3)
                u = float(rng.uniform(-1.0, 1.0))
                latents[f"clinical:{vid}"] = u
                score += signal_clinical[vid].weight * u
                z = 2.2 * u + 0.15 * rng.standard_normal(n_obs)
            else:
                if n_obs == 0:
                    continue
                z = 0.8 * rng.standard_normal(n_obs)
            times = np.sort(rng.uniform(0.0, spec.window_h, size=n_obs))
            for t, zi in zip(times, z):
                events_rows.append([stay_id, vid, f"{t:.4f}", f"{var.pop_mean + var.pop_std * zi:.6f}"])

        # medications: signal drugs administered to everyone with total dose
        # proportional to the latent; background drugs are random
        for drug, sig in signal_meds.items():
            v = float(rng.uniform(0.0, 1.0))
            latents[f"meds:{drug}"] = v
            score += sig.weight * (2.0 * v - 1.0)
            n_doses = int(rng.integers(2, 5))
            times = np.sort(rng.uniform(0.0, spec.window_h, size=n_doses))
            parts = rng.dirichlet(np.ones(n_doses))
            total = 1.0 + 99.0 * v
            stay_drugs.add(drug)
            for t, p in zip(times, parts):
                meds_rows.append([stay_id, drug, f"{t:.4f}", f"{total * p:.6f}"])
        for drug in rng.choice(
            [d for d in drug_names if d not in signal_meds],
            size=spec.n_background_drugs,
            replace=False,
        ):
            if rng.uniform() < 0.5:
                continue
            n_doses = int(rng.integers(1, 4))
            times = np.sort(rng.uniform(0.0, spec.window_h, size=n_doses))
            stay_drugs.add(drug)
            for t in times:
                meds_rows.append([stay_id, drug, f"{t:.4f}", f"{rng.uniform(1.0, 50.0):.6f}"])

        # CXR: procedural texture whose mean brightness carries the latent
        w_lat = float(rng.uniform(-1.0, 1.0))
        if signal_cxr:
            latents["cxr:brightness"] = w_lat
            score += sum(s.weight for s in signal_cxr) * w_lat
        base = 128.0 + (55.0 * w_lat if signal_cxr else 0.0)
        texture = base + 18.0 * rng.standard_normal((spec.cxr_size, spec.cxr_size))
        cxr_path = f"cxr/{stay_id}.png"
        Image.fromarray(np.clip(texture, 0, 255).astype(np.uint8), mode="L").save(out / cxr_path)
        cxr_rows.append([stay_id, f"{rng.uniform(1.0, spec.window_h - 1.0):.4f}", cxr_path])

        # ECG: sine mixture; the signal latent scales a high-frequency burst
        if "ecg" in spec.modalities and rng.uniform() >= spec.ecg_missing_rate:
            n_samp = int(spec.ecg_hz * spec.ecg_seconds)
            t = np.arange(n_samp) / spec.ecg_hz
            e_lat = float(rng.uniform(0.0, 1.0))
            if signal_ecg:
                latents["ecg:amplitude"] = e_lat
                score += sum(s.weight for s in signal_ecg) * (2.0 * e_lat - 1.0)
            leads = np.zeros((12, n_samp), dtype=np.float32)
            for li in range(12):
                leads[li] = np.sin(2 * np.pi * (1.0 + 0.1 * li) * t) + 0.3 * rng.standard_normal(n_samp)
                if signal_ecg:
                    leads[li] += 2.0 * e_lat * np.sin(2 * np.pi * 12.0 * t)
            header_path = f"ecg/{stay_id}.json"
            data_path = f"ecg/{stay_id}.f32"
            (out / header_path).write_text(
                json.dumps(
                    {
                        "stay_id": stay_id,
                        "sample_rate_hz": spec.ecg_hz,
                        "n_samples": n_samp,
                        "lead_names": STANDARD_LEADS,
                    }
                )
            )
            (out / data_path).write_bytes(struct.pack(f"<{12 * n_samp}f", *leads.reshape(-1).tolist()))
            ecg_rows.append([stay_id, f"{rng.uniform(1.0, spec.window_h - 1.0):.4f}", header_path, data_path])

        scores[idx] = score
        sidecar_stats[stay_id] = dict(latents, score=score)

        age = int(rng.integers(18, 92))
        meta_lines.append(
            json.dumps(
                {
                    "stay_id": stay_id,
                    "sex": str(rng.choice(sexes)),
                    "age": age,
                    "ethnicity": str(rng.choice(ethnicities)),
                    "insurance": str(rng.choice(insurances)),
                    "cxr_findings": "no acute process" if rng.uniform() < 0.5 else "mild edema",
                    "cxr_impressions": "stable",
                    "ecg_machine_measurements": "sinus rhythm",
                    "icd_diagnoses": [f"D{int(rng.integers(0, 50)):03d}" for _ in range(int(rng.integers(0, 4)))],
                    "medication_names": sorted(stay_drugs),
                },
                sort_keys=True,
            )
        )

    probs = _sigmoid(scores)
    labels_clean = (rng.uniform(size=spec.n_stays) < probs).astype(int)
    flips = rng.uniform(size=spec.n_stays) < spec.label_noise
    labels = np.where(flips, 1 - labels_clean, labels_clean)

    for idx, stay_id in enumerate(stay_ids):
        phen = (rng.uniform(size=25) < spec.phenotype_prevalence).astype(int)
        los = spec.window_h + float(rng.exponential(24.0)) + 1.0
        stays_rows.append(
            [stay_id, f"h{idx:05d}", f"{los:.2f}", str(int(labels[idx])), "".join(map(str, phen))]
        )

    def write_csv(name: str, header: list[str], rows: list[list[str]]) -> None:
        with (out / name).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)

    write_csv("events.csv", ["stay_id", "variable_id", "time_h", "value"], events_rows)
    write_csv("meds.csv", ["stay_id", "drug_name", "time_h", "dose"], meds_rows)
    write_csv("stays.csv", ["stay_id", "hadm_id", "icu_los_h", "label_mortality", "phenotypes"], stays_rows)
    write_csv("cxr_manifest.csv", ["stay_id", "time_h", "image_path"], cxr_rows)
    if "ecg" in spec.modalities:
        write_csv("ecg_manifest.csv", ["stay_id", "time_h", "header_path", "data_path"], ecg_rows)
    (out / "metadata.jsonl").write_text("\n".join(meta_lines) + "\n")

    sidecar = {
        "spec": {
            **{k: v for k, v in asdict(spec).items() if k != "signals"},
            "signals": [asdict(s) for s in spec.signals],
        },
        "stays": {
            sid: {
                **sidecar_stats[sid],
                "label": int(labels[i]),
                "label_clean": int(labels_clean[i]),
                "flipped": bool(flips[i]),
            }
            for i, sid in enumerate(stay_ids)
        },
    }
    (out / "sidecar.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return {
        "n_stays": spec.n_stays,
        "positive_rate": float(labels.mean()),
        "dir": str(out),
    }


def load_sidecar(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def oracle_auroc(sidecar: dict, stay_ids: list[str] | None = None) -> float:
    """AUROC of the true generative score against the realized labels; the
    ceiling any model trained on the rendered inputs can approach."""
    stays = sidecar["stays"]
    ids = stay_ids if stay_ids is not None else sorted(stays)
    scores = [stays[s]["score"] for s in ids]
    labels = [stays[s]["label"] for s in ids]
    return auroc(scores, labels)
