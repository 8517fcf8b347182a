"""Channel alignment against the built-in 23-target map and custom maps."""

import numpy as np
import pytest

from eegadapt.core import Recording, fit_length
from eegadapt.errors import AlignmentError, DomainError
from eegadapt.montage import (
    TARGET_ORDER,
    MontageMap,
    MontageTarget,
    builtin_montage,
    format_montage_text,
    mix_channels,
    nearest_channel_select,
    parse_montage_text,
)

# Independently typed copy of the expected source table, frozen for the test.
EXPECTED_SOURCES = {
    "FP1": ["Fp1", "Afp1", "AF3", "AF7", "AFF5h"],
    "FP2": ["Fp2", "Afp2", "AF4", "AF8", "AFF6h"],
    "F3": ["F3", "F5", "F1", "FFC5h", "FFC3h"],
    "F4": ["F4", "F2", "F6", "FFC4h", "FFC6h"],
    "C3": ["C3", "C5", "C1", "CCP5h", "CCP3h"],
    "C4": ["C4", "C6", "C2", "CCP4h", "CCP6h"],
    "P3": ["P3", "P1", "P5", "CPP5h", "CPP3h"],
    "P4": ["P4", "P2", "P6", "CPP4h", "CPP6h"],
    "O1": ["O1", "POO1", "PO3", "PO7", "POO9h"],
    "O2": ["O2", "POO2", "PO4", "PO8", "POO10h"],
    "F7": ["F7", "F5", "F9", "FFT9h", "FFT7h"],
    "F8": ["F8", "F6", "F10", "FFT8h", "FFT10h"],
    "T3": ["T7", "TTP7h", "C5", "FTT7h", "FTT9h"],
    "T4": ["T8", "TTP8h", "C6", "FTT8h", "FTT10h"],
    "T5": ["TP7", "TTP7h", "CP5", "TPP7h", "TPP9h"],
    "T6": ["TP8", "TTP8h", "CP6", "TPP8h", "TPP10h"],
    "A1": ["TP9", "TP7", "T7", "FTT9h", "FT9"],
    "A2": ["TP10", "TP8", "T8", "FTT10h", "FT10"],
    "FZ": ["Fz", "AFF1h", "AFF2h", "FFC1h", "FFC2h"],
    "CZ": ["Cz", "FCC1h", "FCC2h", "CCP1h", "CCP2h"],
    "PZ": ["Pz", "CPP1h", "CPP2h", "POO1h", "PPO2h"],
    "T1": ["TTP7h", "C5", "TP7", "CP5", "CCP5h"],
    "T2": ["TTP8h", "C6", "TP8", "CP6", "CCP6h"],
}


def all_source_labels():
    labels = []
    for sources in EXPECTED_SOURCES.values():
        for s in sources:
            if s not in labels:
                labels.append(s)
    return labels


def make_full_recording(t=64, seed=0):
    """A recording containing every electrode the built-in map references,
    each carrying a unique constant signature."""
    labels = all_source_labels()
    rng = np.random.default_rng(seed)
    data = np.empty((len(labels), t))
    for i in range(len(labels)):
        data[i] = float(i + 1) + 0.01 * rng.normal(size=t)
    return Recording(channel_labels=labels, sample_rate_hz=250.0, data=data,
                     subject_id="s00", label=2)


class TestBuiltinMap:
    def test_reproduces_expected_table(self):
        montage = builtin_montage()
        assert [t.target_label for t in montage.targets] == list(TARGET_ORDER)
        for target in montage.targets:
            assert list(target.sources) == EXPECTED_SOURCES[target.target_label]

    def test_fp1_selects_fp1_electrode(self):
        rec = make_full_recording()
        out = nearest_channel_select(rec, builtin_montage(), 64)
        fp1_row = rec.channel_labels.index("Fp1")
        np.testing.assert_array_equal(out.data[0], rec.data[fp1_row])

    def test_t3_selects_t7_electrode(self):
        rec = make_full_recording()
        out = nearest_channel_select(rec, builtin_montage(), 64)
        t3_index = list(TARGET_ORDER).index("T3")
        t7_row = rec.channel_labels.index("T7")
        np.testing.assert_array_equal(out.data[t3_index], rec.data[t7_row])

    def test_missing_electrode_named_in_error(self):
        rec = make_full_recording()
        kept = [i for i, lab in enumerate(rec.channel_labels) if lab != "Fp1"]
        broken = Recording(
            channel_labels=[rec.channel_labels[i] for i in kept],
            sample_rate_hz=250.0, data=rec.data[kept],
        )
        with pytest.raises(AlignmentError, match="Fp1"):
            nearest_channel_select(broken, builtin_montage(), 64)


class TestMixChannels:
    def test_even_split_lengths(self):
        rec = make_full_recording(t=200)
        out = mix_channels(rec, builtin_montage(), 200)
        # 200 / 5 sources = 40 samples each; check FP1's five segments.
        for j, src in enumerate(EXPECTED_SOURCES["FP1"]):
            row = rec.channel_labels.index(src)
            np.testing.assert_array_equal(
                out.data[0, j * 40 : (j + 1) * 40], rec.data[row, :40]
            )

    def test_single_source_identity(self):
        montage = MontageMap(targets=tuple(
            MontageTarget(lab, (EXPECTED_SOURCES[lab][0],)) for lab in TARGET_ORDER
        ))
        rec = make_full_recording(t=64)
        out = mix_channels(rec, montage, 64)
        fp1_row = rec.channel_labels.index("Fp1")
        np.testing.assert_array_equal(out.data[0], rec.data[fp1_row])

    def test_uneven_split_segment_oracle(self):
        # target_len 23 over 5 sources: lengths [5, 5, 5, 4, 4].
        rec = make_full_recording(t=17, seed=3)
        out = mix_channels(rec, builtin_montage(), 23)
        lengths = [5, 5, 5, 4, 4]
        for target_idx, target_label in enumerate(TARGET_ORDER):
            offset = 0
            for src, seg_len in zip(EXPECTED_SOURCES[target_label], lengths):
                row = rec.channel_labels.index(src)
                expected = fit_length(rec.data[row], seg_len)
                np.testing.assert_array_equal(
                    out.data[target_idx, offset : offset + seg_len], expected
                )
                offset += seg_len
            assert offset == 23

    def test_too_many_sources_for_target_len(self):
        rec = make_full_recording()
        with pytest.raises(DomainError):
            mix_channels(rec, builtin_montage(), 3)

    def test_select_equals_mix_with_first_source_only(self):
        first_only = MontageMap(targets=tuple(
            MontageTarget(lab, (EXPECTED_SOURCES[lab][0],)) for lab in TARGET_ORDER
        ))
        rec = make_full_recording(t=90, seed=9)
        selected = nearest_channel_select(rec, builtin_montage(), 128)
        mixed = mix_channels(rec, first_only, 128)
        np.testing.assert_array_equal(selected.data, mixed.data)


class TestShapeAndPermutation:
    def test_output_shape_contract(self):
        rec = make_full_recording(t=50)
        for target_len in (10, 50, 137):
            out = nearest_channel_select(rec, builtin_montage(), target_len)
            assert out.data.shape == (23, target_len)
            out = mix_channels(rec, builtin_montage(), target_len)
            assert out.data.shape == (23, target_len)
            assert out.channel_labels == list(TARGET_ORDER)

    def test_channel_storage_order_is_irrelevant(self):
        rec = make_full_recording(t=64, seed=4)
        rng = np.random.default_rng(12)
        perm = rng.permutation(rec.num_channels)
        shuffled = Recording(
            channel_labels=[rec.channel_labels[i] for i in perm],
            sample_rate_hz=rec.sample_rate_hz,
            data=rec.data[perm],
            subject_id=rec.subject_id,
            label=rec.label,
        )
        montage = builtin_montage()
        for fn in (nearest_channel_select, mix_channels):
            a = fn(rec, montage, 48)
            b = fn(shuffled, montage, 48)
            np.testing.assert_array_equal(a.data, b.data)


class TestMapFileFormat:
    def test_builtin_round_trips(self):
        montage = builtin_montage()
        text = format_montage_text(montage)
        parsed = parse_montage_text(text)
        assert parsed == montage
        assert format_montage_text(parsed) == text

    def test_wrong_target_set_rejected(self):
        text = "FP1: a,b\n"
        with pytest.raises(DomainError):
            parse_montage_text(text)

    def test_comments_and_blanks_ignored(self):
        montage = builtin_montage()
        text = "# a comment\n\n" + format_montage_text(montage)
        assert parse_montage_text(text) == montage
