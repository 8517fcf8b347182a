"""Unit conversion, length fitting, and windowing."""

import numpy as np
import pytest

from eegadapt.core import (
    QuantizedRecording,
    Recording,
    extract_windows,
    fit_length,
    quantized_to_microvolts,
)
from eegadapt.errors import DimensionError, DomainError


def make_recording(data, fs=250.0, label=1, subject="s00"):
    data = np.asarray(data, dtype=np.float64)
    labels = [f"ch{i}" for i in range(data.shape[0])]
    return Recording(channel_labels=labels, sample_rate_hz=fs, data=data,
                     subject_id=subject, label=label)


class TestQuantizedToMicrovolts:
    def test_zero_counts_give_zero_volts(self):
        q = QuantizedRecording(
            channel_labels=["a", "b"], sample_rate_hz=100.0,
            data=np.zeros((2, 5), dtype=np.int64), resolution=[0.3, 2.0],
        )
        out = quantized_to_microvolts(q)
        assert np.all(out.data == 0.0)

    def test_direct_multiplication(self):
        q = QuantizedRecording(
            channel_labels=["a"], sample_rate_hz=100.0,
            data=np.array([[2, -4]]), resolution=[0.5],
        )
        out = quantized_to_microvolts(q)
        np.testing.assert_array_equal(out.data, [[1.0, -2.0]])

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(42)
        counts = rng.integers(-500, 500, size=(3, 8))
        resolution = rng.uniform(0.01, 2.0, size=3)
        q = QuantizedRecording(
            channel_labels=["x", "y", "z"], sample_rate_hz=128.0,
            data=counts, resolution=resolution, subject_id="s03", label=7,
        )
        out = quantized_to_microvolts(q)
        expected = np.empty((3, 8))
        for c in range(3):
            for t in range(8):
                expected[c, t] = resolution[c] * counts[c, t]
        np.testing.assert_allclose(out.data, expected, rtol=0, atol=0)

    def test_metadata_preserved(self):
        q = QuantizedRecording(
            channel_labels=["a"], sample_rate_hz=77.0, data=np.array([[1]]),
            resolution=[1.5], subject_id="s09", label=3,
        )
        out = quantized_to_microvolts(q)
        assert out.subject_id == "s09"
        assert out.label == 3
        assert out.sample_rate_hz == 77.0
        assert out.channel_labels == ["a"]

    def test_linearity_in_resolution(self):
        rng = np.random.default_rng(7)
        counts = rng.integers(-9, 9, size=(2, 6))
        res = rng.uniform(0.1, 1.0, size=2)
        base = quantized_to_microvolts(QuantizedRecording(
            channel_labels=["a", "b"], sample_rate_hz=10.0,
            data=counts, resolution=res))
        doubled = quantized_to_microvolts(QuantizedRecording(
            channel_labels=["a", "b"], sample_rate_hz=10.0,
            data=counts, resolution=2 * res))
        np.testing.assert_allclose(doubled.data, 2.0 * base.data)

    def test_resolution_length_mismatch(self):
        with pytest.raises(DimensionError):
            QuantizedRecording(channel_labels=["a", "b"], sample_rate_hz=10.0,
                               data=np.zeros((2, 3), dtype=int), resolution=[0.5])

    def test_nonpositive_resolution(self):
        with pytest.raises(DomainError):
            QuantizedRecording(channel_labels=["a"], sample_rate_hz=10.0,
                               data=np.zeros((1, 3), dtype=int), resolution=[0.0])


class TestFitLength:
    def test_identity_when_lengths_match(self):
        sig = np.array([3.0, 1.0, 4.0, 1.0])
        np.testing.assert_array_equal(fit_length(sig, 4), sig)

    def test_tiling(self):
        np.testing.assert_array_equal(
            fit_length(np.array([1.0, 2.0, 3.0]), 7),
            [1, 2, 3, 1, 2, 3, 1],
        )

    def test_head_trim(self):
        np.testing.assert_array_equal(
            fit_length(np.array([5.0, 6.0, 7.0, 8.0]), 2), [5, 6]
        )

    def test_empty_signal_rejected(self):
        with pytest.raises(DomainError):
            fit_length(np.array([]), 4)

    def test_idempotent_composition(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            t = int(rng.integers(1, 40))
            target = int(rng.integers(1, 40))
            sig = rng.normal(size=t)
            once = fit_length(sig, target)
            twice = fit_length(once, target)
            np.testing.assert_array_equal(once, twice)


class TestExtractWindows:
    def test_window_count_floor(self):
        rec = make_recording(np.random.default_rng(0).normal(size=(4, 1000)))
        assert len(extract_windows(rec, 128)) == 7

    def test_single_exact_window(self):
        rec = make_recording(np.arange(2 * 128, dtype=float).reshape(2, 128))
        windows = extract_windows(rec, 128)
        assert len(windows) == 1
        np.testing.assert_array_equal(windows[0].data, rec.data)

    def test_short_recording_gives_nothing(self):
        rec = make_recording(np.zeros((3, 127)))
        assert extract_windows(rec, 128) == []

    def test_windows_inherit_label_and_subject(self):
        rec = make_recording(np.zeros((2, 300)), label=5, subject="s11")
        for k, window in enumerate(extract_windows(rec, 100, source_index=7)):
            assert window.label == 5
            assert window.subject_id == "s11"
            assert window.window_index == k
            assert window.source_index == 7

    def test_concatenation_reproduces_prefix(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            e = int(rng.integers(1, 6))
            t = int(rng.integers(1, 400))
            w = int(rng.integers(1, 50))
            rec = make_recording(rng.normal(size=(e, t)))
            windows = extract_windows(rec, w)
            count = t // w
            assert len(windows) == count
            if count:
                joined = np.concatenate([win.data for win in windows], axis=1)
                np.testing.assert_array_equal(joined, rec.data[:, : count * w])


class TestRecordingInvariants:
    def test_row_label_mismatch(self):
        with pytest.raises(DimensionError):
            Recording(channel_labels=["a"], sample_rate_hz=10.0,
                      data=np.zeros((2, 3)))

    def test_nonfinite_rejected(self):
        with pytest.raises(DomainError):
            Recording(channel_labels=["a"], sample_rate_hz=10.0,
                      data=np.array([[np.nan, 0.0]]))

    def test_bad_sample_rate(self):
        with pytest.raises(DomainError):
            Recording(channel_labels=["a"], sample_rate_hz=0.0,
                      data=np.zeros((1, 3)))

    def test_labels_are_trimmed(self):
        rec = Recording(channel_labels=[" Fp1 "], sample_rate_hz=10.0,
                        data=np.zeros((1, 3)))
        assert rec.channel_labels == ["Fp1"]
