"""Variable and medication catalogs.

The catalogs pin, for every clinical variable and drug, the population
statistics used for standardization, the normal ranges drawn as guide lines,
the grid cell each panel occupies, and the line color. Cell and color
assignments are deterministic functions of catalog order so that every
patient's image uses the identical layout.
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path


@dataclass(frozen=True)
class VariableSpec:
    variable_id: str
    display_name: str
    unit: str
    pop_mean: float
    pop_std: float
    normal_lower: float | None
    normal_upper: float | None
    grid_cell: tuple[int, int]
    color: tuple[int, int, int]

    def __post_init__(self):
        if not self.pop_std > 0:
            raise ValueError(f"{self.variable_id}: pop_std must be > 0")


@dataclass(frozen=True)
class MedicationSpec:
    drug_name: str
    category: str
    unit: str
    color: tuple[int, int, int]
    category_cell: tuple[int, int]


MEDICATION_CATEGORIES = (
    "Antiarrhythmics",
    "Electrolyte Supplements",
    "Beta-Blockers",
    "Diuretics",
    "Cardiac Glycosides",
    "Insulins",
    "Opioid Analgesics",
    "Sedatives and Anesthetics",
    "Thrombolytics",
    "Vasopressors and Inotropes",
)

# (variable_id, display name, unit, mean, std, lower, upper)
# For the three GCS scores and PAR-O2 saturation no population statistics are
# published; mean/std are derived from the normal range as (lo+hi)/2 and
# (hi-lo)/4.
_CLINICAL_ROWS = [
    ("troponin_t", "Troponin-T", "ng/mL", 0.70, 1.34, 0.00, 0.01),
    ("potassium", "Potassium (serum)", "mmol/L", 4.08, 0.54, 3.30, 5.10),
    ("sodium", "Sodium (serum)", "mmol/L", 139.09, 5.05, 133.00, 145.00),
    ("hemoglobin", "Hemoglobin", "g/dL", 9.90, 1.93, 12.00, 16.00),
    ("lactic_acid", "Lactic Acid", "mmol/L", 2.52, 2.04, 0.50, 2.00),
    ("creatinine", "Creatinine (serum)", "mg/dL", 1.38, 1.22, 0.40, 1.10),
    ("ck_cpk", "CK (CPK)", "U/L", 1768.03, 4669.05, None, None),
    ("direct_bilirubin", "Direct Bilirubin", "mg/dL", 3.55, 3.93, 0.00, 0.30),
    ("total_bilirubin", "Total Bilirubin", "mg/dL", 2.12, 3.38, 0.00, 1.50),
    ("crp", "CRP", "mg/L", 73.18, 77.64, 0.00, 5.00),
    ("d_dimer", "D-Dimer", "ug/mL", 8042.00, 6100.88, 0.00, 0.50),
    ("bun", "BUN", "mg/dL", 28.31, 22.58, 7.00, 20.00),
    ("arterial_o2_pressure", "Arterial O2 pressure", "mmHg", 143.81, 81.18, 85.00, 105.00),
    ("arterial_co2_pressure", "Arterial CO2 Pressure", "mmHg", 40.85, 8.94, 35.00, 45.00),
    ("o2_pulseoxymetry", "O2 pulseoxymetry", "%", 96.19, 2.24, 95.00, 100.00),
    ("wbc", "WBC", "cells/uL", 11.71, 5.59, 0.00, 5.00),
    ("bnp", "BNP", "pg/mL", 6063.74, 9257.13, 0.00, 100.00),
    ("inr", "INR", "-", 1.46, 0.54, 0.90, 1.10),
    ("alt", "ALT", "U/L", 203.73, 669.92, 0.00, 40.00),
    ("pap_sys", "PAP-SYS", "mmHg", 35.89, 8.94, 15.00, 30.00),
    ("pap_dia", "PAP-DIA", "mmHg", 18.44, 5.37, 8.00, 15.00),
    ("pap_mean", "PAP-MEAN", "mmHg", 25.13, 6.30, 10.00, 20.00),
    ("heart_rate", "Heart Rate", "beats/min", 85.75, 17.27, 60.00, 100.00),
    ("gcs_eye", "GCS-Eye Opening", "-", 2.5, 0.75, 1.00, 4.00),
    ("gcs_verbal", "GCS-Verbal Response", "-", 3.0, 1.0, 1.00, 5.00),
    ("gcs_motor", "GCS-Motor Response", "-", 3.5, 1.25, 1.00, 6.00),
    ("nibp_sys", "NIBP-SYS", "mmHg", 119.52, 20.51, 90.00, 120.00),
    ("nibp_dia", "NIBP-DIA", "mmHg", 65.51, 14.06, 60.00, 80.00),
    ("nibp_mean", "NIBP-MEAN", "mmHg", 78.85, 14.09, 70.00, 100.00),
    ("respiratory_rate", "Respiratory Rate", "breaths/min", 19.80, 5.14, 12.00, 20.00),
    ("temperature", "Temperature", "degF", 98.51, 1.02, 97.00, 99.50),
    ("inspired_o2_fraction", "Inspired O2 Fraction", "-", 44.90, 10.28, 0.21, 1.00),
    ("par_o2_saturation", "PAR-O2 saturation", "%", 97.5, 1.25, 95.00, 100.00),
    ("glucose_whole_blood", "Glucose (whole blood)", "mg/dL", 139.71, 42.06, 70.00, 105.00),
    ("ph_venous", "PH (Venous)", "-", 7.36, 0.09, 7.31, 7.41),
    ("ph_arterial", "PH (Arterial)", "-", 7.38, 0.08, 7.35, 7.45),
]

# (drug name, category, unit)
_MEDICATION_ROWS = [
    ("Amiodarone 600/500", "Antiarrhythmics", "mg"),
    ("Amiodarone", "Antiarrhythmics", "mg"),
    ("Lidocaine", "Antiarrhythmics", "mg"),
    ("Adenosine", "Antiarrhythmics", "mg"),
    ("Procainamide", "Antiarrhythmics", "mg"),
    ("Potassium Chloride", "Electrolyte Supplements", "mEq"),
    ("Calcium Gluconate", "Electrolyte Supplements", "g"),
    ("Calcium Gluconate (CRRT)", "Electrolyte Supplements", "g"),
    ("K Phos", "Electrolyte Supplements", "mmol"),
    ("Na Phos", "Electrolyte Supplements", "mmol"),
    ("Metoprolol", "Beta-Blockers", "mg"),
    ("Labetalol", "Beta-Blockers", "mg"),
    ("Esmolol", "Beta-Blockers", "mg"),
    ("Furosemide (Lasix)", "Diuretics", "mg"),
    ("Furosemide (Lasix) 250/50", "Diuretics", "mg"),
    ("Mannitol", "Diuretics", "g"),
    ("Digoxin (Lanoxin)", "Cardiac Glycosides", "mg"),
    ("Insulin - Regular", "Insulins", "units"),
    ("Insulin - Humalog", "Insulins", "units"),
    ("Insulin - Glargine", "Insulins", "units"),
    ("Insulin - NPH", "Insulins", "units"),
    ("Insulin - 70/30", "Insulins", "units"),
    ("Insulin - Novolog", "Insulins", "units"),
    ("Insulin - Humalog 75/25", "Insulins", "units"),
    ("Fentanyl", "Opioid Analgesics", "mcg"),
    ("Fentanyl (Concentrate)", "Opioid Analgesics", "mg"),
    ("Hydromorphone (Dilaudid)", "Opioid Analgesics", "mg"),
    ("Morphine Sulfate", "Opioid Analgesics", "mg"),
    ("Meperidine (Demerol)", "Opioid Analgesics", "mg"),
    ("Methadone Hydrochloride", "Opioid Analgesics", "mg"),
    ("Propofol", "Sedatives and Anesthetics", "mg"),
    ("Midazolam (Versed)", "Sedatives and Anesthetics", "mg"),
    ("Dexmedetomidine (Precedex)", "Sedatives and Anesthetics", "mcg"),
    ("Lorazepam (Ativan)", "Sedatives and Anesthetics", "mg"),
    ("Ketamine", "Sedatives and Anesthetics", "mg"),
    ("Diazepam (Valium)", "Sedatives and Anesthetics", "mg"),
    ("Pentobarbital", "Sedatives and Anesthetics", "mg"),
    ("Alteplase (TPA)", "Thrombolytics", "mg"),
    ("Norepinephrine", "Vasopressors and Inotropes", "mg"),
    ("Phenylephrine", "Vasopressors and Inotropes", "mg"),
    ("Epinephrine", "Vasopressors and Inotropes", "mg"),
    ("Dopamine", "Vasopressors and Inotropes", "mg"),
    ("Vasopressin", "Vasopressors and Inotropes", "units"),
    ("Milrinone", "Vasopressors and Inotropes", "mg"),
    ("Isuprel", "Vasopressors and Inotropes", "mg"),
]


def layout_grid(n_panels: int) -> tuple[int, int]:
    """Grid shape for n panels: cols = ceil(sqrt(n)), rows = ceil(n/cols)."""
    if n_panels < 1:
        raise ValueError("need at least one panel")
    cols = math.ceil(math.sqrt(n_panels))
    rows = math.ceil(n_panels / cols)
    return rows, cols


def palette(n: int, saturation: float = 0.85, value: float = 0.82) -> list[tuple[int, int, int]]:
    """n distinct colors by stepping hue at maximal spacing.

    Hue starts offset from 0 so no entry approaches the pure red used for
    normal-range guide lines. If 8-bit rounding ever collides, value is
    nudged until all entries are unique.
    """
    colors: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()
    for i in range(n):
        hue = (0.06 + i / n) % 1.0
        v = value
        rgb = tuple(round(255 * c) for c in colorsys.hsv_to_rgb(hue, saturation, v))
        while rgb in seen:
            v = max(0.2, v - 0.03)
            rgb = tuple(round(255 * c) for c in colorsys.hsv_to_rgb(hue, saturation, v))
        seen.add(rgb)
        colors.append(rgb)  # type: ignore[arg-type]
    return colors


def clinical_catalog() -> list[VariableSpec]:
    rows, cols = layout_grid(len(_CLINICAL_ROWS))
    colors = palette(len(_CLINICAL_ROWS))
    specs = []
    for i, (vid, name, unit, mean, std, lo, hi) in enumerate(_CLINICAL_ROWS):
        specs.append(
            VariableSpec(
                variable_id=vid,
                display_name=name,
                unit=unit,
                pop_mean=mean,
                pop_std=std,
                normal_lower=lo,
                normal_upper=hi,
                grid_cell=(i // cols, i % cols),
                color=colors[i],
            )
        )
    return specs


def medication_catalog() -> list[MedicationSpec]:
    _, cat_cols = layout_grid(len(MEDICATION_CATEGORIES))
    cat_cell = {
        cat: (i // cat_cols, i % cat_cols) for i, cat in enumerate(MEDICATION_CATEGORIES)
    }
    colors = palette(len(_MEDICATION_ROWS))
    specs = []
    for i, (drug, cat, unit) in enumerate(_MEDICATION_ROWS):
        specs.append(
            MedicationSpec(
                drug_name=drug,
                category=cat,
                unit=unit,
                color=colors[i],
                category_cell=cat_cell[cat],
            )
        )
    return specs


def variable_index(catalog: list[VariableSpec]) -> dict[str, VariableSpec]:
    return {s.variable_id: s for s in catalog}


def medication_index(catalog: list[MedicationSpec]) -> dict[str, MedicationSpec]:
    return {s.drug_name: s for s in catalog}


def save_catalogs(path: str | Path, variables: list[VariableSpec], medications: list[MedicationSpec]) -> None:
    payload = {
        "variables": [asdict(s) for s in variables],
        "medications": [asdict(s) for s in medications],
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def load_catalogs(path: str | Path) -> tuple[list[VariableSpec], list[MedicationSpec]]:
    payload = json.loads(Path(path).read_text())
    variables = [
        VariableSpec(
            variable_id=d["variable_id"],
            display_name=d["display_name"],
            unit=d["unit"],
            pop_mean=d["pop_mean"],
            pop_std=d["pop_std"],
            normal_lower=d["normal_lower"],
            normal_upper=d["normal_upper"],
            grid_cell=tuple(d["grid_cell"]),
            color=tuple(d["color"]),
        )
        for d in payload["variables"]
    ]
    medications = [
        MedicationSpec(
            drug_name=d["drug_name"],
            category=d["category"],
            unit=d["unit"],
            color=tuple(d["color"]),
            category_cell=tuple(d["category_cell"]),
        )
        for d in payload["medications"]
    ]
    return variables, medications
