import numpy as np
import pytest

from peot.data import Recording
from peot.errors import ConfigError, InvalidInputError
from peot.features import (
    BAND_POWER,
    DEFAULT_COST_TABLE,
    LINE_LENGTH,
    VARIANCE,
    FeatureEntry,
    FeatureSpec,
    band_power,
    default_feature_spec,
    design_bandpass,
    extract_features,
    feature_cost_vector,
    line_length,
    variance,
)

FS = 256.0


def _recording(windows, fs=FS):
    windows = np.asarray(windows, dtype=float)
    return Recording(windows=windows, fs=fs,
                     labels=np.zeros(windows.shape[0], dtype=np.int64))


class TestLineLength:
    def test_constant_signal(self):
        assert line_length([1, 1, 1, 1]) == 0.0

    def test_ramp(self):
        # (1/4) * (1 + 1 + 1)
        assert line_length([0, 1, 2, 3]) == pytest.approx(0.75, abs=0)

    def test_matches_direct_summation_oracle(self):
        x = np.random.default_rng(7).standard_normal(256)
        expected = sum(abs(x[n] - x[n - 1]) for n in range(1, 256)) / 256
        assert line_length(x) == pytest.approx(expected, abs=1e-12)

    def test_translation_invariant(self):
        x = np.random.default_rng(0).standard_normal(128)
        for k in (-3.5, 10.0, 1e6):
            assert line_length(x + k) == pytest.approx(line_length(x), rel=1e-9)

    def test_scales_with_abs_amplitude(self):
        x = np.random.default_rng(1).standard_normal(128)
        base = line_length(x)
        assert line_length(-2.5 * x) == pytest.approx(2.5 * base, rel=1e-12)

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            line_length([1.0])


class TestVariance:
    def test_constant(self):
        assert variance([5, 5, 5]) == 0.0

    def test_two_points(self):
        assert variance([0, 2]) == pytest.approx(1.0, abs=0)

    def test_matches_two_pass_oracle(self):
        x = np.random.default_rng(2).standard_normal(300)
        mean = sum(x) / len(x)
        expected = sum((v - mean) ** 2 for v in x) / len(x)
        assert variance(x) == pytest.approx(expected, abs=1e-12)

    def test_quadratic_scaling(self):
        x = np.random.default_rng(3).standard_normal(64)
        assert variance(3.0 * x) == pytest.approx(9.0 * variance(x), rel=1e-12)

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            variance([1.0])


class TestBandPower:
    def test_zero_signal(self):
        assert band_power(np.zeros(256), FS, 8.0, 12.0) == 0.0

    def test_in_band_vs_out_of_band_sinusoid(self):
        t = np.arange(256) / FS
        x = np.sin(2 * np.pi * 10.0 * t)
        in_band = band_power(x, FS, 8.0, 12.0)
        out_band = band_power(x, FS, 30.0, 40.0)
        assert in_band > 10.0 * out_band

    def test_wideband_passes_nearly_everything(self):
        x = np.random.default_rng(4).standard_normal(1024)
        wide = band_power(x, FS, 1.0, 127.9)
        assert wide == pytest.approx(np.mean(x * x), rel=0.20)

    def test_impulse_response_is_symmetric(self):
        taps = design_bandpass(8.0, 12.0, FS)
        assert taps.size == 65
        np.testing.assert_array_equal(taps, taps[::-1])

    def test_band_outside_nyquist(self):
        with pytest.raises(InvalidInputError):
            band_power(np.zeros(256), FS, 100.0, 140.0)
        with pytest.raises(InvalidInputError):
            design_bandpass(12.0, 8.0, FS)

    def test_window_too_short(self):
        with pytest.raises(InvalidInputError):
            band_power(np.zeros(64), FS, 8.0, 12.0)


class TestExtractFeatures:
    def test_shape_one_entry(self):
        rec = _recording(np.random.default_rng(0).standard_normal((3, 3, 128)))
        spec = FeatureSpec([FeatureEntry(1, LINE_LENGTH)])
        out = extract_features(rec, spec)
        assert out.shape == (3, 1)

    def test_duplicate_entries_identical_columns(self):
        rec = _recording(np.random.default_rng(1).standard_normal((4, 2, 128)))
        spec = FeatureSpec([FeatureEntry(0, VARIANCE), FeatureEntry(0, VARIANCE)])
        out = extract_features(rec, spec)
        np.testing.assert_array_equal(out[:, 0], out[:, 1])

    def test_permuting_entries_permutes_columns(self):
        rec = _recording(np.random.default_rng(2).standard_normal((5, 2, 128)))
        entries = [FeatureEntry(0, LINE_LENGTH), FeatureEntry(1, VARIANCE),
                   FeatureEntry(0, BAND_POWER, (8.0, 12.0))]
        a = extract_features(rec, FeatureSpec(entries))
        b = extract_features(rec, FeatureSpec(entries[::-1]))
        np.testing.assert_array_equal(a, b[:, ::-1])

    def test_deterministic(self):
        rec = _recording(np.random.default_rng(3).standard_normal((6, 3, 128)))
        spec = default_feature_spec(3, FS)
        np.testing.assert_array_equal(extract_features(rec, spec),
                                      extract_features(rec, spec))

    def test_channel_out_of_range(self):
        rec = _recording(np.zeros((2, 2, 128)))
        spec = FeatureSpec([FeatureEntry(5, LINE_LENGTH)])
        with pytest.raises(InvalidInputError):
            extract_features(rec, spec)


class TestCostVector:
    def test_default_normalization(self):
        spec = FeatureSpec([FeatureEntry(0, LINE_LENGTH)])
        np.testing.assert_array_equal(
            feature_cost_vector(spec, DEFAULT_COST_TABLE), [1.0])

    def test_mixed_kinds(self):
        spec = FeatureSpec([
            FeatureEntry(0, LINE_LENGTH),
            FeatureEntry(0, BAND_POWER, (8.0, 12.0)),
            FeatureEntry(0, VARIANCE),
        ])
        table = {LINE_LENGTH: 1.0, BAND_POWER: 25.0, VARIANCE: 3.0}
        np.testing.assert_array_equal(feature_cost_vector(spec, table),
                                      [1.0, 25.0, 3.0])

    def test_empty_spec(self):
        assert feature_cost_vector(FeatureSpec([]), DEFAULT_COST_TABLE).size == 0

    def test_unpriced_kind(self):
        spec = FeatureSpec([FeatureEntry(0, VARIANCE)])
        with pytest.raises(ConfigError):
            feature_cost_vector(spec, {LINE_LENGTH: 1.0})

    def test_nonpositive_cost_rejected(self):
        spec = FeatureSpec([FeatureEntry(0, LINE_LENGTH)])
        with pytest.raises(ConfigError):
            feature_cost_vector(spec, {LINE_LENGTH: 0.0})


class TestFeatureSpec:
    def test_band_required_for_band_power(self):
        with pytest.raises(InvalidInputError):
            FeatureEntry(0, BAND_POWER)

    def test_band_validated_against_fs(self):
        spec = FeatureSpec([FeatureEntry(0, BAND_POWER, (8.0, 200.0))])
        with pytest.raises(InvalidInputError):
            spec.validate_for(1, FS)

    def test_doc_round_trip(self):
        spec = default_feature_spec(2, FS)
        again = FeatureSpec.from_doc(spec.to_doc())
        assert again.entries == spec.entries
