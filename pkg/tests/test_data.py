"""CSV ingestion, rescaling, windowing, splitting, and synthetic generation."""

import numpy as np
import pytest

from convens.data import (GeneratorConfig, LabeledSeries, load_series, make_windows,
                          save_series, split_train_validation, synth_generate,
                          zscore_apply, zscore_fit)
from convens.errors import DataError


def write(tmp_path, text, name="series.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadSeries:
    def test_labeled_csv(self, tmp_path):
        path = write(tmp_path, "a,b,label\n1,2,0\n3,4,1\n5,6,0\n")
        series = load_series(path)
        assert series.values.shape == (3, 2)
        np.testing.assert_array_equal(series.labels, [0, 1, 0])
        assert series.name == "series"

    def test_unlabeled_csv(self, tmp_path):
        path = write(tmp_path, "a,b\n1,2\n3,4\n")
        series = load_series(path)
        assert series.labels is None
        assert series.values.shape == (2, 2)

    def test_nan_row_reports_line(self, tmp_path):
        path = write(tmp_path, "a,b\n1,2\n3,NaN\n")
        with pytest.raises(DataError, match="line 3"):
            load_series(path)

    def test_non_numeric_reports_line(self, tmp_path):
        path = write(tmp_path, "a\n1\nhello\n")
        with pytest.raises(DataError, match="line 3"):
            load_series(path)

    def test_non_binary_label(self, tmp_path):
        path = write(tmp_path, "a,label\n1,0\n2,2\n")
        with pytest.raises(DataError, match="non-binary label"):
            load_series(path)

    def test_empty_file(self, tmp_path):
        path = write(tmp_path, "")
        with pytest.raises(DataError, match="empty"):
            load_series(path)

    def test_header_only(self, tmp_path):
        path = write(tmp_path, "a,b\n")
        with pytest.raises(DataError, match="no data rows"):
            load_series(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_series(tmp_path / "nope.csv")

    def test_ragged_row(self, tmp_path):
        path = write(tmp_path, "a,b\n1,2\n3\n")
        with pytest.raises(DataError, match="line 3"):
            load_series(path)

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        series = LabeledSeries(rng.normal(size=(20, 3)),
                               rng.integers(0, 2, size=20), name="r")
        path = tmp_path / "rt.csv"
        save_series(series, path)
        back = load_series(path)
        np.testing.assert_array_equal(back.values, series.values)
        np.testing.assert_array_equal(back.labels, series.labels)


class TestZScore:
    def test_two_point_column(self):
        series = LabeledSeries(np.array([[1.0], [3.0]]))
        scale = zscore_fit(series)
        assert scale.mean.tolist() == [2.0]
        # population convention: divide by C
        assert scale.std.tolist() == [1.0]

    def test_constant_column_fallback(self):
        series = LabeledSeries(np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]))
        with pytest.warns(UserWarning, match="constant"):
            scale = zscore_fit(series)
        assert scale.std[0] == 1.0
        transformed = zscore_apply(series, scale)
        np.testing.assert_array_equal(transformed.values[:, 0], np.zeros(3))

    def test_standardized_fixed_point(self):
        rng = np.random.default_rng(1)
        values = rng.normal(size=(200, 2))
        values = (values - values.mean(0)) / values.std(0)
        scale = zscore_fit(LabeledSeries(values))
        np.testing.assert_allclose(scale.mean, 0.0, atol=1e-9)
        np.testing.assert_allclose(scale.std, 1.0, atol=1e-9)

    def test_apply_arithmetic(self):
        from convens.data import ScaleParams
        series = LabeledSeries(np.array([[4.0]]))
        out = zscore_apply(series, ScaleParams(np.array([2.0]), np.array([2.0])))
        assert out.values.tolist() == [[1.0]]

    def test_identity_scale(self):
        from convens.data import ScaleParams
        values = np.random.default_rng(2).normal(size=(5, 2))
        out = zscore_apply(LabeledSeries(values),
                           ScaleParams(np.zeros(2), np.ones(2)))
        np.testing.assert_array_equal(out.values, values)

    def test_fit_then_apply_standardizes(self):
        rng = np.random.default_rng(3)
        series = LabeledSeries(rng.normal(3.0, 2.5, size=(150, 4)))
        out = zscore_apply(series, zscore_fit(series))
        np.testing.assert_allclose(out.values.mean(0), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.values.std(0), 1.0, atol=1e-9)

    def test_dimension_mismatch(self):
        from convens.data import ScaleParams
        with pytest.raises(DataError, match="mismatch"):
            zscore_apply(LabeledSeries(np.ones((3, 2))),
                         ScaleParams(np.zeros(3), np.ones(3)))

    def test_labels_pass_through(self):
        series = LabeledSeries(np.array([[1.0], [2.0]]), np.array([0, 1]))
        out = zscore_apply(series, zscore_fit(series))
        np.testing.assert_array_equal(out.labels, [0, 1])


class TestMakeWindows:
    def test_window_layout(self):
        series = LabeledSeries(np.arange(5.0).reshape(5, 1))
        batch = make_windows(series, 3)
        assert batch.count == 3
        np.testing.assert_array_equal(batch.windows[:, :, 0],
                                      [[0, 1, 2], [1, 2, 3], [2, 3, 4]])
        np.testing.assert_array_equal(batch.start_indices, [0, 1, 2])

    def test_single_window_boundary(self):
        series = LabeledSeries(np.arange(3.0).reshape(3, 1))
        assert make_windows(series, 3).count == 1

    def test_too_short_series(self):
        with pytest.raises(DataError):
            make_windows(LabeledSeries(np.ones((4, 1))), 5)

    def test_count_and_reconstruction(self):
        rng = np.random.default_rng(4)
        values = rng.normal(size=(23, 2))
        batch = make_windows(LabeledSeries(values), 6)
        assert batch.count == 23 - 6 + 1
        rebuilt = np.vstack([batch.windows[0]] +
                            [batch.windows[j, -1:] for j in range(1, batch.count)])
        np.testing.assert_array_equal(rebuilt, values)


class TestSplit:
    def test_thirty_percent(self):
        series = LabeledSeries(np.arange(100.0).reshape(100, 1))
        train, val = split_train_validation(series, 0.3)
        assert train.length == 70 and val.length == 30

    def test_half(self):
        series = LabeledSeries(np.arange(10.0).reshape(10, 1))
        train, val = split_train_validation(series, 0.5)
        assert train.length == 5 and val.length == 5

    def test_ceiling_rule(self):
        series = LabeledSeries(np.arange(10.0).reshape(10, 1))
        train, val = split_train_validation(series, 0.3)
        assert train.length == 7 and val.length == 3

    def test_temporal_order_and_totality(self):
        values = np.arange(40.0).reshape(40, 1)
        train, val = split_train_validation(LabeledSeries(values), 0.25)
        np.testing.assert_array_equal(np.vstack([train.values, val.values]), values)

    def test_labels_dropped(self):
        series = LabeledSeries(np.ones((10, 1)), np.ones(10, dtype=int))
        train, val = split_train_validation(series, 0.3)
        assert train.labels is None and val.labels is None

    def test_min_length_guard(self):
        series = LabeledSeries(np.ones((20, 1)))
        with pytest.raises(DataError):
            split_train_validation(series, 0.3, min_length=8)

    def test_invalid_ratio(self):
        with pytest.raises(DataError):
            split_train_validation(LabeledSeries(np.ones((10, 1))), 1.0)


class TestSynthGenerate:
    def test_zero_contamination(self):
        series = synth_generate(GeneratorConfig(seed=0, length=200, dims=2,
                                                contamination=0.0))
        assert int(series.labels.sum()) == 0

    def test_outlier_count_floor(self):
        series = synth_generate(GeneratorConfig(seed=0, length=1000, dims=2,
                                                contamination=0.01))
        assert int(series.labels.sum()) == 10

    def test_deterministic(self):
        config = GeneratorConfig(seed=9, length=300, dims=3, contamination=0.02)
        a, b = synth_generate(config), synth_generate(config)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.labels, b.labels)

    def test_invalid_contamination(self):
        with pytest.raises(DataError):
            synth_generate(GeneratorConfig(contamination=0.5))

    def test_spikes_visible(self):
        config = GeneratorConfig(seed=1, length=500, dims=2, contamination=0.02,
                                 spike_magnitude=8.0, noise_std=0.05)
        series = synth_generate(config)
        spiked = series.values[series.labels == 1]
        assert np.abs(spiked).max() > 5.0
