import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from modimg import encode, raster
from modimg.catalog import clinical_catalog, layout_grid, medication_catalog, variable_index
from modimg.encode import (
    RenderConfig,
    clip_and_normalize_doses,
    compute_dose_stats,
    cumulative_dose_curve,
    load_dose_stats,
    load_png,
    normalize_image,
    preprocess_ecg,
    render_clinical,
    render_ecg,
    render_medications,
    render_missing_modality,
    save_dose_stats,
    save_png,
    standardize,
)
from modimg.ingest import EcgRecord, EventSeries, MedicationEvent, Observation

VARIABLES = clinical_catalog()
MEDICATIONS = medication_catalog()
IDX = variable_index(VARIABLES)
SMALL = RenderConfig(canvas_size=96)


def series(vid, points):
    return EventSeries("s1", vid, [Observation(vid, t, v) for t, v in points])


class TestStandardize:
    def test_z_of_mean_is_zero(self):
        assert standardize(85.75, IDX["heart_rate"]) == 0.0

    def test_known_value(self):
        # [DERIVED] (103.02 - 85.75) / 17.27 = 1.0
        assert standardize(103.02, IDX["heart_rate"]) == pytest.approx(1.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            standardize(float("nan"), IDX["heart_rate"])


class TestRenderClinical:
    def test_blank_input_leaves_only_guides(self):
        canvas = render_clinical({}, VARIABLES, SMALL)
        colors = {tuple(c) for c in canvas.reshape(-1, 3)}
        assert colors <= {(255, 255, 255), (255, 0, 0)}
        assert (255, 0, 0) in colors  # normal-range guides still drawn

    def test_observation_draws_variable_color(self):
        s = {"heart_rate": series("heart_rate", [(1.0, 80.0), (10.0, 120.0)])}
        canvas = render_clinical(s, VARIABLES, SMALL)
        color = IDX["heart_rate"].color
        assert (canvas == color).all(axis=2).any()

    def test_pixels_confined_to_variable_panel(self):
        s = {"heart_rate": series("heart_rate", [(0.0, 40.0), (48.0, 160.0)])}
        canvas = render_clinical(s, VARIABLES, SMALL)
        rect = raster.panel_rect(96, 6, 6, IDX["heart_rate"].grid_cell)
        color = IDX["heart_rate"].color
        ys, xs = np.nonzero((canvas == color).all(axis=2))
        assert len(xs) > 0
        assert xs.min() >= rect[0] and xs.max() <= rect[2]
        assert ys.min() >= rect[1] and ys.max() <= rect[3]

    def test_z_clipping_keeps_extremes_inside(self):
        s = {"heart_rate": series("heart_rate", [(0.0, -1e6), (48.0, 1e6)])}
        canvas = render_clinical(s, VARIABLES, SMALL)  # must not raise
        assert canvas.shape == (96, 96, 3)

    def test_deterministic(self):
        s = {"potassium": series("potassium", [(t, 3.5 + 0.1 * t) for t in range(10)])}
        a = render_clinical(s, VARIABLES, SMALL)
        b = render_clinical(s, VARIABLES, SMALL)
        assert np.array_equal(a, b)

    def test_unknown_variable_rejected(self):
        with pytest.raises(KeyError):
            render_clinical({"bogus": series("bogus", [(1.0, 2.0)])}, VARIABLES, SMALL)

    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=0.0, max_value=48.0),
                st.floats(min_value=-1e5, max_value=1e5),
            ),
            min_size=1,
            max_size=6,
        )
    )
    def test_single_panel_never_leaks(self, points):
        # property: whatever the data, a lone variable's panel never writes
        # outside its own rectangle
        spec = dataclasses.replace(IDX["potassium"], grid_cell=(0, 0))
        s = {"potassium": series("potassium", sorted(points))}
        canvas = render_clinical(s, [spec], RenderConfig(canvas_size=48))
        rect = raster.panel_rect(48, *layout_grid(1), spec.grid_cell)
        outside = np.ones((48, 48), dtype=bool)
        outside[rect[1] : rect[3] + 1, rect[0] : rect[2] + 1] = False
        assert (canvas[outside] == 255).all()


class TestDoseCurve:
    def test_cumulative_and_sorted(self):
        events = [
            MedicationEvent("s1", "Propofol", 5.0, 10.0),
            MedicationEvent("s1", "Propofol", 1.0, 20.0),
        ]
        assert cumulative_dose_curve(events, 48.0) == [(1.0, 20.0), (5.0, 30.0)]

    def test_same_time_doses_aggregate(self):
        events = [
            MedicationEvent("s1", "Propofol", 2.0, 10.0),
            MedicationEvent("s1", "Propofol", 2.0, 5.0),
        ]
        assert cumulative_dose_curve(events, 48.0) == [(2.0, 15.0)]

    def test_out_of_window_dropped(self):
        events = [
            MedicationEvent("s1", "Propofol", 2.0, 10.0),
            MedicationEvent("s1", "Propofol", 49.0, 10.0),
        ]
        assert cumulative_dose_curve(events, 48.0) == [(2.0, 10.0)]

    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=0.0, max_value=48.0),
                st.floats(min_value=0.0, max_value=100.0),
            ),
            max_size=8,
        )
    )
    def test_monotone_non_decreasing(self, doses):
        events = [MedicationEvent("s1", "Propofol", t, d) for t, d in doses]
        curve = cumulative_dose_curve(events, 48.0)
        totals = [v for _, v in curve]
        assert totals == sorted(totals)
        times = [t for t, _ in curve]
        assert times == sorted(times)


class TestClipNormalize:
    def test_percentile_matches_linear_interpolation_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            finals = rng.exponential(scale=30.0, size=int(rng.integers(1, 40))).tolist()
            clip_value, max_value = clip_and_normalize_doses(finals)
            assert clip_value == pytest.approx(
                oracles.percentile_linear(finals, 95.0), abs=1e-9
            )
            assert max_value == pytest.approx(
                max(min(v, clip_value) for v in finals), abs=1e-12
            )

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            clip_and_normalize_doses([])


class TestComputeDoseStats:
    def test_training_only_statistics(self, tmp_path):
        meds = {
            "a": [MedicationEvent("a", "Propofol", 1.0, 10.0)],
            "b": [MedicationEvent("b", "Propofol", 2.0, 30.0)],
        }
        stats = compute_dose_stats(meds, MEDICATIONS)
        assert set(stats) == {"Propofol"}
        # [DERIVED] finals [10, 30]: p95 = 10 + 0.95*20 = 29, max(min(.,29)) = 29
        assert stats["Propofol"]["clip_value"] == pytest.approx(29.0)
        assert stats["Propofol"]["max_value"] == pytest.approx(29.0)
        path = tmp_path / "stats.json"
        save_dose_stats(path, stats, seed=7)
        assert load_dose_stats(path) == stats

    def test_unknown_drug_ignored(self):
        meds = {"a": [MedicationEvent("a", "NotADrug", 1.0, 10.0)]}
        assert compute_dose_stats(meds, MEDICATIONS) == {}


class TestRenderMedications:
    def stats(self):
        return {"Propofol": {"clip_value": 100.0, "max_value": 100.0}}

    def test_draws_in_category_cell_only(self):
        events = [
            MedicationEvent("s1", "Propofol", 5.0, 40.0),
            MedicationEvent("s1", "Propofol", 20.0, 40.0),
        ]
        canvas = render_medications(events, MEDICATIONS, self.stats(), SMALL)
        spec = next(m for m in MEDICATIONS if m.drug_name == "Propofol")
        rect = raster.panel_rect(96, 3, 4, spec.category_cell)
        ys, xs = np.nonzero((canvas != 255).any(axis=2))
        assert len(xs) > 0
        assert xs.min() >= rect[0] and xs.max() <= rect[2]
        assert ys.min() >= rect[1] and ys.max() <= rect[3]

    def test_drug_without_stats_not_drawn(self):
        events = [MedicationEvent("s1", "Fentanyl", 5.0, 40.0)]
        canvas = render_medications(events, MEDICATIONS, self.stats(), SMALL)
        assert (canvas == 255).all()

    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=0.0, max_value=48.0),
                st.floats(min_value=0.1, max_value=60.0),
            ),
            min_size=1,
            max_size=6,
        )
    )
    def test_pixel_curve_monotone_non_decreasing(self, doses):
        # property: the rendered step curve's upper edge never goes down as
        # time advances (cumulative dose is monotone)
        events = [MedicationEvent("s1", "Propofol", t, d) for t, d in doses]
        total = sum(d for _, d in doses)
        stats = {"Propofol": {"clip_value": total, "max_value": total}}
        canvas = render_medications(events, MEDICATIONS, stats, RenderConfig(canvas_size=64))
        colored = (canvas != 255).any(axis=2)
        tops = []
        for x in range(64):
            col = np.nonzero(colored[:, x])[0]
            if col.size:
                tops.append((x, col.min()))
        assert len(tops) > 0
        for (_, y_prev), (_, y_next) in zip(tops, tops[1:]):
            assert y_next <= y_prev  # smaller y = higher = larger dose


class TestEcg:
    def make_record(self, hz=125, seconds=6.0, constant_lead=None):
        n = int(hz * seconds)
        t = np.arange(n) / hz
        leads = np.stack([np.sin(2 * np.pi * (1 + i) * t) for i in range(12)])
        if constant_lead is not None:
            leads[constant_lead] = 3.14
        return EcgRecord("s1", hz, leads, [f"L{i}" for i in range(12)])

    def test_resample_shape_and_zscore(self):
        out = preprocess_ecg(self.make_record())
        assert out.shape == (12, 2500)  # 500 Hz x 5 s
        assert np.allclose(out.mean(axis=1), 0.0, atol=1e-9)
        assert np.allclose(out.std(axis=1), 1.0, atol=1e-9)

    def test_constant_lead_becomes_zero(self):
        out = preprocess_ecg(self.make_record(constant_lead=4))
        assert (out[4] == 0.0).all()

    def test_too_short_recording_rejected(self):
        with pytest.raises(ValueError, match="at least"):
            preprocess_ecg(self.make_record(seconds=3.0))

    def test_render_strips_do_not_overlap(self):
        matrix = preprocess_ecg(self.make_record())
        canvas = render_ecg(matrix, SMALL)
        # each lead's color stays within its horizontal strip
        for lead in range(12):
            color = encode.ECG_LEAD_COLORS[lead]
            ys, _ = np.nonzero((canvas == color).all(axis=2))
            assert ys.size > 0
            assert ys.min() >= lead * 96 // 12
            assert ys.max() <= (lead + 1) * 96 // 12 - 1

    def test_missing_modality_is_blank(self):
        canvas = render_missing_modality(SMALL)
        assert (canvas == 255).all()


class TestNormalize:
    def test_imagenet_stats(self):
        canvas = np.full((4, 4, 3), 255, dtype=np.uint8)
        out = normalize_image(canvas)
        # [DERIVED] white pixel channel 0: (1 - 0.485) / 0.229
        assert out.data[0, 0, 0] == pytest.approx((1 - 0.485) / 0.229)
        assert out.mean == encode.IMAGENET_MEAN

    def test_rejects_zero_std(self):
        with pytest.raises(ValueError):
            normalize_image(np.zeros((2, 2, 3), dtype=np.uint8), std=(0.0, 1.0, 1.0))


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    canvas = rng.integers(0, 256, size=(32, 32, 3)).astype(np.uint8)
    path = tmp_path / "x.png"
    save_png(path, canvas)
    assert np.array_equal(load_png(path), canvas)
