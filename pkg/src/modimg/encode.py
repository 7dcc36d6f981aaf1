"""Deterministic rendering of each modality into fixed-size RGB images.

Conventions shared by all renderers:
  * fixed square canvas (default 384), white background
  * one grid cell per variable / medication category, 2 px margin
  * clinical values standardized and clipped to z in [-3, 3]
  * normalized cumulative doses clipped to [0, 1]
  * 1-px Bresenham lines, 5x5 plus markers, no axes or labels
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import raster
from .catalog import MedicationSpec, VariableSpec, layout_grid, palette
from .ingest import CohortInstance, EcgRecord, EventSeries, MedicationEvent, parse_ecg

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

MODALITIES = ("clinical", "meds", "ecg", "cxr")


@dataclass(frozen=True)
class RenderConfig:
    canvas_size: int = 384
    window_h: float = 48.0
    margin: int = 2
    z_clip: float = 3.0
    draw_markers: bool = True
    draw_range_lines: bool = True
    range_lines_on_empty: bool = True


@dataclass
class NormalizedImage:
    data: np.ndarray  # (H, W, 3) float64
    mean: tuple[float, float, float]
    std: tuple[float, float, float]


def standardize(x: float, spec: VariableSpec) -> float:
    if not np.isfinite(x):
        raise ValueError(f"non-finite value for {spec.variable_id}")
    return (x - spec.pop_mean) / spec.pop_std


def _x_pixel(t: float, rect: raster.Rect, window_h: float) -> int:
    x0, _, x1, _ = rect
    frac = min(max(t / window_h, 0.0), 1.0)
    return x0 + round(frac * (x1 - x0))


def _y_pixel_z(z: float, rect: raster.Rect, z_clip: float) -> int:
    _, y0, _, y1 = rect
    z = min(max(z, -z_clip), z_clip)
    frac = (z + z_clip) / (2 * z_clip)  # 0 at -clip, 1 at +clip
    return y0 + round((1.0 - frac) * (y1 - y0))


def _y_pixel_unit(v: float, rect: raster.Rect) -> int:
    _, y0, _, y1 = rect
    v = min(max(v, 0.0), 1.0)
    return y0 + round((1.0 - v) * (y1 - y0))


def render_clinical(
    series: dict[str, EventSeries],
    catalog: list[VariableSpec],
    config: RenderConfig,
) -> np.ndarray:
    """36-panel line-graph image of the clinical variables.

    Red normal-range guides first, then the data polyline in the variable's
    color, then observation markers. Panels with no observations stay blank
    apart from the guides.
    """
    known = {s.variable_id for s in catalog}
    for vid in series:
        if vid not in known:
            raise KeyError(f"variable {vid!r} not in catalog")
    canvas = raster.new_canvas(config.canvas_size)
    rows, cols = layout_grid(len(catalog))
    for spec in catalog:
        rect = raster.panel_rect(config.canvas_size, rows, cols, spec.grid_cell, config.margin)
        s = series.get(spec.variable_id)
        empty = s is None or not s.observations
        if config.draw_range_lines and (not empty or config.range_lines_on_empty):
            for bound in (spec.normal_lower, spec.normal_upper):
                if bound is None:
                    continue
                z = standardize(bound, spec)
                if -config.z_clip <= z <= config.z_clip:
                    raster.draw_hline(canvas, _y_pixel_z(z, rect, config.z_clip), raster.RED, rect)
        if empty:
            continue
        points = [
            (
                _x_pixel(o.time_h, rect, config.window_h),
                _y_pixel_z(standardize(o.value, spec), rect, config.z_clip),
            )
            for o in s.observations
        ]
        raster.rasterize_polyline(canvas, points, spec.color, rect)
        if config.draw_markers:
            for p in points:
                raster.draw_marker(canvas, p, spec.color, rect)
    return canvas


def cumulative_dose_curve(
    events: list[MedicationEvent], window_h: float
) -> list[tuple[float, float]]:
    """Time-sorted cumulative dose steps; same-time doses aggregate by sum."""
    in_window = sorted((e for e in events if e.time_h <= window_h), key=lambda e: e.time_h)
    curve: list[tuple[float, float]] = []
    total = 0.0
    for e in in_window:
        total += e.dose
        if curve and curve[-1][0] == e.time_h:
            curve[-1] = (e.time_h, total)
        else:
            curve.append((e.time_h, total))
    return curve


def clip_and_normalize_doses(finals: list[float]) -> tuple[float, float]:
    """Per-drug clip (95th percentile, linear interpolation) and post-clip
    maximum over the training patients' final cumulative doses."""
    if not finals:
        raise ValueError("no administrations: drug is inactive")
    arr = np.asarray(finals, dtype=np.float64)
    clip_value = float(np.percentile(arr, 95.0))
    max_value = float(np.minimum(arr, clip_value).max())
    return clip_value, max_value


def compute_dose_stats(
    meds_per_stay: dict[str, list[MedicationEvent]],
    catalog: list[MedicationSpec],
    window_h: float = 48.0,
) -> dict[str, dict[str, float]]:
    """Training-split normalization statistics per drug.

    Drugs never administered in the training split are absent from the
    result and render as missing lines.
    """
    finals: dict[str, list[float]] = {}
    for events in meds_per_stay.values():
        per_drug: dict[str, list[MedicationEvent]] = {}
        for e in events:
            per_drug.setdefault(e.drug_name, []).append(e)
        for drug, evts in per_drug.items():
            curve = cumulative_dose_curve(evts, window_h)
            if curve:
                finals.setdefault(drug, []).append(curve[-1][1])
    stats = {}
    known = {s.drug_name for s in catalog}
    for drug, values in finals.items():
        if drug not in known:
            continue
        clip_value, max_value = clip_and_normalize_doses(values)
        stats[drug] = {"clip_value": clip_value, "max_value": max_value}
    return stats


def save_dose_stats(path: str | Path, stats: dict, seed: int | None = None) -> None:
    payload = {"stats": stats, "split_seed": seed}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def load_dose_stats(path: str | Path) -> dict[str, dict[str, float]]:
    return json.loads(Path(path).read_text())["stats"]


def render_medications(
    events: list[MedicationEvent],
    catalog: list[MedicationSpec],
    stats: dict[str, dict[str, float]],
    config: RenderConfig,
) -> np.ndarray:
    """Cumulative-dose step curves, one category per grid cell, one colored
    line per drug."""
    canvas = raster.new_canvas(config.canvas_size)
    rows, cols = layout_grid(10)
    by_drug: dict[str, list[MedicationEvent]] = {}
    for e in events:
        by_drug.setdefault(e.drug_name, []).append(e)
    spec_by_name = {s.drug_name: s for s in catalog}
    for drug in sorted(by_drug):
        spec = spec_by_name.get(drug)
        if spec is None or drug not in stats:
            continue
        curve = cumulative_dose_curve(by_drug[drug], config.window_h)
        if not curve:
            continue
        clip_value = stats[drug]["clip_value"]
        max_value = stats[drug]["max_value"]
        rect = raster.panel_rect(config.canvas_size, rows, cols, spec.category_cell, config.margin)

        def norm(v: float) -> float:
            if max_value <= 0:
                return 0.0
            return min(v, clip_value) / max_value

        # step polyline: flat from t=0, vertical rise at each dose time,
        # flat out to the window edge; the area under the curve is filled so
        # the dose level reads as a solid band rather than a 1-px line
        points = [(rect[0], _y_pixel_unit(0.0, rect))]
        prev = 0.0
        for t, total in curve:
            x = _x_pixel(t, rect, config.window_h)
            points.append((x, _y_pixel_unit(norm(prev), rect)))
            points.append((x, _y_pixel_unit(norm(total), rect)))
            prev = total
        points.append((rect[2], _y_pixel_unit(norm(prev), rect)))
        raster.rasterize_polyline(canvas, points, spec.color, rect)
        floor = _y_pixel_unit(0.0, rect)
        top: dict[int, int] = {}
        for (x0, y0), (x1, y1) in zip(points, points[1:]):
            for x in range(x0, x1 + 1):
                top[x] = min(top.get(x, floor), y0, y1)
        for x, y in top.items():
            for yy in range(y, floor + 1):
                raster.put_pixel(canvas, x, yy, spec.color, rect)
    return canvas


ECG_TARGET_HZ = 500
ECG_DURATION_S = 5
ECG_LEAD_COLORS = palette(12, saturation=0.9, value=0.75)


def preprocess_ecg(
    record: EcgRecord, target_hz: int = ECG_TARGET_HZ, duration_s: float = ECG_DURATION_S
) -> np.ndarray:
    """Linear resample to target_hz, keep the first duration_s seconds, and
    z-score each lead (constant leads become all-zero)."""
    n_in = record.leads.shape[1]
    duration_in = n_in / record.sample_rate_hz
    if duration_in < duration_s:
        raise ValueError(
            f"recording is {duration_in:.2f}s, need at least {duration_s}s"
        )
    n_keep = int(round(target_hz * duration_s))
    t_out = np.arange(n_keep) / target_hz
    t_in = np.arange(n_in) / record.sample_rate_hz
    out = np.empty((12, n_keep), dtype=np.float64)
    for i in range(12):
        out[i] = np.interp(t_out, t_in, record.leads[i])
        std = out[i].std()
        if std > 0:
            out[i] = (out[i] - out[i].mean()) / std
        else:
            out[i] = 0.0
    return out


def render_ecg(matrix: np.ndarray, config: RenderConfig) -> np.ndarray:
    """12 horizontal strips, one lead each, drawn as a per-pixel-column
    min-max envelope so QRS peaks survive the downsampling to canvas width."""
    if matrix.shape[0] != 12:
        raise ValueError("expected 12 leads")
    canvas = raster.new_canvas(config.canvas_size)
    size = config.canvas_size
    n = matrix.shape[1]
    cols = np.minimum((np.arange(n) * size) // n, size - 1).astype(int)
    for lead in range(12):
        y0 = lead * size // 12
        y1 = (lead + 1) * size // 12 - 1
        rect = (0, y0, size - 1, y1)
        color = ECG_LEAD_COLORS[lead]
        samples = matrix[lead]
        for col in range(size):
            in_col = samples[cols == col]
            if in_col.size == 0:
                continue
            y_hi = _y_pixel_z(float(in_col.max()), rect, config.z_clip)
            y_lo = _y_pixel_z(float(in_col.min()), rect, config.z_clip)
            raster.rasterize_polyline(canvas, [(col, y_hi), (col, y_lo)], color, rect)
            if y_hi == y_lo:
                raster.put_pixel(canvas, col, y_hi, color, rect)
    return canvas


def render_missing_modality(config: RenderConfig) -> np.ndarray:
    return raster.new_canvas(config.canvas_size)


def render_cxr(image_path: str | Path, config: RenderConfig) -> np.ndarray:
    img = Image.open(image_path).convert("RGB")
    img = img.resize((config.canvas_size, config.canvas_size), Image.NEAREST)
    return np.asarray(img, dtype=np.uint8).copy()


def normalize_image(
    canvas: np.ndarray,
    mean: tuple[float, float, float] = IMAGENET_MEAN,
    std: tuple[float, float, float] = IMAGENET_STD,
) -> NormalizedImage:
    if any(s == 0 for s in std):
        raise ValueError("std must be nonzero per channel")
    data = canvas.astype(np.float64) / 255.0
    data = (data - np.asarray(mean)) / np.asarray(std)
    return NormalizedImage(data=data, mean=tuple(mean), std=tuple(std))


def save_png(path: str | Path, canvas: np.ndarray) -> None:
    Image.fromarray(canvas, mode="RGB").save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def render_instance(
    inst: CohortInstance,
    variables: list[VariableSpec],
    medications: list[MedicationSpec],
    dose_stats: dict[str, dict[str, float]],
    config: RenderConfig,
    base_dir: str | Path = ".",
) -> dict[str, np.ndarray]:
    """Render all four modality images for one cohort instance."""
    series = {s.variable_id: s for s in inst.events}
    known = {v.variable_id for v in variables}
    series = {k: v for k, v in series.items() if k in known}
    images = {
        "clinical": render_clinical(series, variables, config),
        "meds": render_medications(inst.meds, medications, dose_stats, config),
    }
    if inst.ecg_header_path is not None:
        record = parse_ecg(
            Path(base_dir) / inst.ecg_header_path, Path(base_dir) / inst.ecg_data_path
        )
        images["ecg"] = render_ecg(preprocess_ecg(record), config)
    else:
        images["ecg"] = render_missing_modality(config)
    images["cxr"] = render_cxr(Path(base_dir) / inst.cxr_path, config)
    return images


def render_cohort(
    cohort: list[CohortInstance],
    variables: list[VariableSpec],
    medications: list[MedicationSpec],
    dose_stats: dict[str, dict[str, float]],
    config: RenderConfig,
    out_dir: str | Path,
    base_dir: str | Path = ".",
    threads: int | None = None,
) -> int:
    """Render every instance to {stay_id}.{modality}.png; returns the count.

    Renders are pure, so the thread fan-out cannot change any byte of the
    output.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if threads is None:
        threads = int(os.environ.get("MODIMG_THREADS", "0")) or (os.cpu_count() or 1)

    def work(inst: CohortInstance) -> None:
        images = render_instance(inst, variables, medications, dose_stats, config, base_dir)
        for modality, canvas in images.items():
            save_png(out_dir / f"{inst.stay_id}.{modality}.png", canvas)

    if threads <= 1:
        for inst in cohort:
            work(inst)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, cohort))
    return len(cohort)
