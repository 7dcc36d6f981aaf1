"""Input parsing, cohort construction, and stratified splits.

File formats are the plain CSV/JSONL contracts documented in the README:
events.csv, meds.csv, stays.csv, metadata.jsonl, cxr_manifest.csv,
ecg_manifest.csv plus per-scan JSON header + raw float32 waveform files.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import MedicationSpec, VariableSpec

N_PHENOTYPES = 25


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    variable_id: str
    time_h: float
    value: float


@dataclass
class EventSeries:
    stay_id: str
    variable_id: str
    observations: list[Observation]


@dataclass(frozen=True)
class MedicationEvent:
    stay_id: str
    drug_name: str
    time_h: float
    dose: float


@dataclass
class EcgRecord:
    stay_id: str
    sample_rate_hz: int
    leads: np.ndarray  # (12, n_samples) float64
    lead_names: list[str]


@dataclass
class PatientMetadata:
    stay_id: str
    sex: str
    age: float
    ethnicity: str
    insurance: str
    cxr_findings: str = ""
    cxr_impressions: str = ""
    ecg_machine_measurements: str = ""
    icd_diagnoses: list[str] = field(default_factory=list)
    medication_names: list[str] = field(default_factory=list)


@dataclass
class StayRecord:
    stay_id: str
    hadm_id: str
    icu_los_h: float
    label_mortality: int
    label_phenotypes: tuple[int, ...]


@dataclass
class CohortInstance:
    stay_id: str
    hadm_id: str
    label_mortality: int
    label_phenotypes: tuple[int, ...]
    events: list[EventSeries]
    meds: list[MedicationEvent]
    cxr_time_h: float
    cxr_path: str
    ecg_time_h: float | None
    ecg_header_path: str | None
    ecg_data_path: str | None
    metadata: PatientMetadata


@dataclass
class ParseResult:
    data: dict
    warnings: list[str]


@dataclass
class CohortSplit:
    train: list[str]
    val: list[str]
    test: list[str]
    seed: int


def _parse_float(raw: str, what: str, line_no: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"line {line_no}: bad {what} {raw!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"line {line_no}: non-finite {what} {raw!r}")
    return value


def _check_header(row: list[str], expected: list[str], path: Path) -> None:
    if row != expected:
        raise ParseError(f"{path}: expected header {expected}, got {row}")


def parse_events(path: str | Path, known_variables: set[str] | None = None) -> ParseResult:
    """Read events.csv into one time-sorted EventSeries per (stay, variable).

    Unknown variable ids are kept but reported in the warning list so that
    nothing is dropped silently.
    """
    path = Path(path)
    series: dict[str, dict[str, list[Observation]]] = {}
    warnings: list[str] = []
    seen_unknown: set[str] = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader), ["stay_id", "variable_id", "time_h", "value"], path)
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ParseError(f"line {line_no}: expected 4 fields, got {len(row)}")
            stay_id, variable_id, time_raw, value_raw = row
            time_h = _parse_float(time_raw, "time_h", line_no)
            if time_h < 0:
                raise ParseError(f"line {line_no}: negative time_h {time_h}")
            value = _parse_float(value_raw, "value", line_no)
            if known_variables is not None and variable_id not in known_variables:
                if variable_id not in seen_unknown:
                    warnings.append(f"unknown variable_id {variable_id!r}")
                    seen_unknown.add(variable_id)
            series.setdefault(stay_id, {}).setdefault(variable_id, []).append(
                Observation(variable_id, time_h, value)
            )
    data = {
        stay_id: [
            EventSeries(stay_id, vid, sorted(obs, key=lambda o: o.time_h))
            for vid, obs in sorted(per_var.items())
        ]
        for stay_id, per_var in series.items()
    }
    return ParseResult(data=data, warnings=warnings)


def parse_medications(path: str | Path, catalog: dict[str, MedicationSpec]) -> ParseResult:
    """Read meds.csv; drugs not in the catalog are skipped with a warning."""
    path = Path(path)
    events: dict[str, list[MedicationEvent]] = {}
    warnings: list[str] = []
    seen_unknown: set[str] = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader), ["stay_id", "drug_name", "time_h", "dose"], path)
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ParseError(f"line {line_no}: expected 4 fields, got {len(row)}")
            stay_id, drug_name, time_raw, dose_raw = row
            time_h = _parse_float(time_raw, "time_h", line_no)
            if time_h < 0:
                raise ParseError(f"line {line_no}: negative time_h {time_h}")
            dose = _parse_float(dose_raw, "dose", line_no)
            if dose < 0:
                raise ParseError(f"line {line_no}: negative dose {dose}")
            if drug_name not in catalog:
                if drug_name not in seen_unknown:
                    warnings.append(f"unresolvable drug {drug_name!r}")
                    seen_unknown.add(drug_name)
                continue
            events.setdefault(stay_id, []).append(
                MedicationEvent(stay_id, drug_name, time_h, dose)
            )
    # stable sort keeps same-drug same-time duplicates in file order
    data = {
        stay_id: sorted(evts, key=lambda e: e.time_h) for stay_id, evts in events.items()
    }
    return ParseResult(data=data, warnings=warnings)


def parse_ecg(header_path: str | Path, data_path: str | Path) -> EcgRecord:
    """Read one ECG scan: a JSON header plus little-endian float32 samples,
    lead-major."""
    header = json.loads(Path(header_path).read_text())
    lead_names = header["lead_names"]
    if len(lead_names) != 12:
        raise ParseError(f"{header_path}: expected 12 leads, got {len(lead_names)}")
    sample_rate_hz = int(header["sample_rate_hz"])
    if sample_rate_hz <= 0:
        raise ParseError(f"{header_path}: sample_rate_hz must be positive")
    n_samples = int(header["n_samples"])
    raw = Path(data_path).read_bytes()
    expected_bytes = 12 * n_samples * 4
    if len(raw) != expected_bytes:
        raise ParseError(
            f"{data_path}: expected {expected_bytes} bytes (12x{n_samples} float32), got {len(raw)}"
        )
    flat = np.array(struct.unpack(f"<{12 * n_samples}f", raw), dtype=np.float64)
    return EcgRecord(
        stay_id=str(header["stay_id"]),
        sample_rate_hz=sample_rate_hz,
        leads=flat.reshape(12, n_samples),
        lead_names=list(lead_names),
    )


def parse_metadata(path: str | Path) -> dict[str, PatientMetadata]:
    out = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {line_no}: bad JSON ({exc})") from None
        meta = PatientMetadata(
            stay_id=str(d["stay_id"]),
            sex=d.get("sex", ""),
            age=float(d["age"]),
            ethnicity=d.get("ethnicity", ""),
            insurance=d.get("insurance", ""),
            cxr_findings=d.get("cxr_findings", ""),
            cxr_impressions=d.get("cxr_impressions", ""),
            ecg_machine_measurements=d.get("ecg_machine_measurements", ""),
            icd_diagnoses=list(d.get("icd_diagnoses", [])),
            medication_names=list(d.get("medication_names", [])),
        )
        out[meta.stay_id] = meta
    return out


def parse_stays(path: str | Path) -> dict[str, StayRecord]:
    path = Path(path)
    out = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _check_header(
            next(reader), ["stay_id", "hadm_id", "icu_los_h", "label_mortality", "phenotypes"], path
        )
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise ParseError(f"line {line_no}: expected 5 fields, got {len(row)}")
            stay_id, hadm_id, los_raw, mort_raw, phen_raw = row
            icu_los_h = _parse_float(los_raw, "icu_los_h", line_no)
            if icu_los_h <= 0:
                raise ParseError(f"line {line_no}: icu_los_h must be > 0")
            if mort_raw not in ("0", "1"):
                raise ParseError(f"line {line_no}: label_mortality must be 0 or 1")
            if len(phen_raw) != N_PHENOTYPES or set(phen_raw) - {"0", "1"}:
                raise ParseError(f"line {line_no}: phenotypes must be a {N_PHENOTYPES}-char 0/1 string")
            out[stay_id] = StayRecord(
                stay_id=stay_id,
                hadm_id=hadm_id,
                icu_los_h=icu_los_h,
                label_mortality=int(mort_raw),
                label_phenotypes=tuple(int(c) for c in phen_raw),
            )
    return out


def parse_cxr_manifest(path: str | Path) -> dict[str, list[tuple[float, str]]]:
    path = Path(path)
    out: dict[str, list[tuple[float, str]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader), ["stay_id", "time_h", "image_path"], path)
        for line_no, row in enumerate(reader, start=2):
            stay_id, time_raw, image_path = row
            out.setdefault(stay_id, []).append((_parse_float(time_raw, "time_h", line_no), image_path))
    return {k: sorted(v) for k, v in out.items()}


def parse_ecg_manifest(path: str | Path) -> dict[str, list[tuple[float, str, str]]]:
    path = Path(path)
    out: dict[str, list[tuple[float, str, str]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader), ["stay_id", "time_h", "header_path", "data_path"], path)
        for line_no, row in enumerate(reader, start=2):
            stay_id, time_raw, header_path, data_path = row
            out.setdefault(stay_id, []).append(
                (_parse_float(time_raw, "time_h", line_no), header_path, data_path)
            )
    return {k: sorted(v) for k, v in out.items()}


def build_cohort(
    stays: dict[str, StayRecord],
    events: dict[str, list[EventSeries]],
    meds: dict[str, list[MedicationEvent]],
    metadata: dict[str, PatientMetadata],
    cxr_refs: dict[str, list[tuple[float, str]]],
    ecg_refs: dict[str, list[tuple[float, str, str]]] | None = None,
    window_h: float = 48.0,
) -> list[CohortInstance]:
    """Apply the benchmark cohort rules.

    A stay is included only when its ICU stay covers the full window and at
    least one CXR falls inside it. Events and doses are truncated to the
    window; the paired CXR/ECG is the latest in-window reference. A missing
    ECG is a valid state, flagged by None fields.
    """
    if window_h <= 0:
        raise ValueError("window_h must be > 0")
    ecg_refs = ecg_refs or {}
    instances = []
    for stay_id in sorted(stays):
        stay = stays[stay_id]
        if stay.icu_los_h < window_h:
            continue
        in_window_cxr = [(t, p) for t, p in cxr_refs.get(stay_id, []) if t <= window_h]
        if not in_window_cxr:
            continue
        cxr_time_h, cxr_path = max(in_window_cxr, key=lambda tp: tp[0])
        in_window_ecg = [r for r in ecg_refs.get(stay_id, []) if r[0] <= window_h]
        if in_window_ecg:
            ecg_time_h, ecg_header_path, ecg_data_path = max(in_window_ecg, key=lambda r: r[0])
        else:
            ecg_time_h = ecg_header_path = ecg_data_path = None
        stay_events = [
            EventSeries(
                stay_id,
                s.variable_id,
                [o for o in s.observations if o.time_h <= window_h],
            )
            for s in events.get(stay_id, [])
        ]
        stay_events = [s for s in stay_events if s.observations]
        stay_meds = [e for e in meds.get(stay_id, []) if e.time_h <= window_h]
        meta = metadata.get(stay_id) or PatientMetadata(
            stay_id=stay_id, sex="", age=0.0, ethnicity="", insurance=""
        )
        instances.append(
            CohortInstance(
                stay_id=stay_id,
                hadm_id=stay.hadm_id,
                label_mortality=stay.label_mortality,
                label_phenotypes=stay.label_phenotypes,
                events=stay_events,
                meds=stay_meds,
                cxr_time_h=cxr_time_h,
                cxr_path=cxr_path,
                ecg_time_h=ecg_time_h,
                ecg_header_path=ecg_header_path,
                ecg_data_path=ecg_data_path,
                metadata=meta,
            )
        )
    return instances


def _largest_remainder(total: int, fractions: tuple[float, ...]) -> list[int]:
    raw = [total * f for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    remainder = total - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (raw[i] - counts[i], -i), reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def split_stratified(
    stay_ids: list[str],
    labels: list[int],
    fractions: tuple[float, float, float] = (0.72, 0.08, 0.20),
    seed: int = 0,
) -> CohortSplit:
    """Deterministic mortality-stratified split.

    Split sizes and positive counts are both allocated by largest remainder,
    which keeps every split's positive count within one of the exact
    proportional target.
    """
    if len(stay_ids) < 3:
        raise ValueError("cohort smaller than 3")
    if len(stay_ids) != len(labels):
        raise ValueError("stay_ids and labels length mismatch")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be non-negative and sum to 1")
    rng = np.random.default_rng(seed)
    positives = sorted(s for s, y in zip(stay_ids, labels) if y == 1)
    negatives = sorted(s for s, y in zip(stay_ids, labels) if y == 0)
    rng.shuffle(positives)
    rng.shuffle(negatives)
    sizes = _largest_remainder(len(stay_ids), fractions)
    pos_counts = _largest_remainder(len(positives), fractions)
    # clamp so negative allocations stay feasible, then rebalance
    neg_counts = [s - p for s, p in zip(sizes, pos_counts)]
    if any(c < 0 for c in neg_counts):  # degenerate tiny splits
        pos_counts = [min(p, s) for p, s in zip(pos_counts, sizes)]
        neg_counts = [s - p for s, p in zip(sizes, pos_counts)]
    splits: list[list[str]] = []
    p0 = n0 = 0
    for p, n in zip(pos_counts, neg_counts):
        splits.append(sorted(positives[p0 : p0 + p] + negatives[n0 : n0 + n]))
        p0 += p
        n0 += n
    return CohortSplit(train=splits[0], val=splits[1], test=splits[2], seed=seed)


def save_cohort(path: str | Path, cohort: list[CohortInstance]) -> None:
    rows = []
    for inst in cohort:
        rows.append(
            {
                "stay_id": inst.stay_id,
                "hadm_id": inst.hadm_id,
                "label_mortality": inst.label_mortality,
                "label_phenotypes": list(inst.label_phenotypes),
                "events": [
                    {
                        "variable_id": s.variable_id,
                        "observations": [[o.time_h, o.value] for o in s.observations],
                    }
                    for s in inst.events
                ],
                "meds": [[e.drug_name, e.time_h, e.dose] for e in inst.meds],
                "cxr_time_h": inst.cxr_time_h,
                "cxr_path": inst.cxr_path,
                "ecg_time_h": inst.ecg_time_h,
                "ecg_header_path": inst.ecg_header_path,
                "ecg_data_path": inst.ecg_data_path,
                "metadata": {
                    "stay_id": inst.metadata.stay_id,
                    "sex": inst.metadata.sex,
                    "age": inst.metadata.age,
                    "ethnicity": inst.metadata.ethnicity,
                    "insurance": inst.metadata.insurance,
                    "cxr_findings": inst.metadata.cxr_findings,
                    "cxr_impressions": inst.metadata.cxr_impressions,
                    "ecg_machine_measurements": inst.metadata.ecg_machine_measurements,
                    "icd_diagnoses": inst.metadata.icd_diagnoses,
                    "medication_names": inst.metadata.medication_names,
                },
            }
        )
    Path(path).write_text(json.dumps(rows, indent=1, sort_keys=True))


def load_cohort(path: str | Path) -> list[CohortInstance]:
    rows = json.loads(Path(path).read_text())
    cohort = []
    for r in rows:
        meta = PatientMetadata(**r["metadata"])
        cohort.append(
            CohortInstance(
                stay_id=r["stay_id"],
                hadm_id=r["hadm_id"],
                label_mortality=r["label_mortality"],
                label_phenotypes=tuple(r["label_phenotypes"]),
                events=[
                    EventSeries(
                        r["stay_id"],
                        s["variable_id"],
                        [Observation(s["variable_id"], t, v) for t, v in s["observations"]],
                    )
                    for s in r["events"]
                ],
                meds=[
                    MedicationEvent(r["stay_id"], d, t, v) for d, t, v in r["meds"]
                ],
                cxr_time_h=r["cxr_time_h"],
                cxr_path=r["cxr_path"],
                ecg_time_h=r["ecg_time_h"],
                ecg_header_path=r["ecg_header_path"],
                ecg_data_path=r["ecg_data_path"],
                metadata=meta,
            )
        )
    return cohort
