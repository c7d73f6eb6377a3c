"""
Tests for cross-correlation and extractor strength analysis.
"""

import math

import numpy as np
import pytest

from app.analysis.correlation import (
    cross_correlation,
    cross_correlation_matrix,
    extractor_strength,
    independence_bound,
    streams_independent,
)
from app.core.errors import InputError, InsufficientDataError
from app.extractors.bits import units_to_bits
from app.extractors.two_source import pack_codes, parity
from app.source.adc import digitize_block
from app.source.model import sample_block


@pytest.fixture
def noise():
    rng = np.random.default_rng(99)
    return rng.standard_normal(100_000), rng.standard_normal(100_000)


class TestCrossCorrelation:
    """Tests for lagged cross-correlation."""

    def test_self_correlation(self, noise):
        a, _ = noise
        report = cross_correlation(a, a, max_lag=10)
        assert report.value_at(0) == pytest.approx(1.0)
        assert report.max_positive_at != 0
        assert report.max_abs < 0.1

    def test_detects_shift(self, noise):
        a, _ = noise
        shifted = np.roll(a, 5)
        report = cross_correlation(a, shifted, max_lag=10)
        assert report.max_positive_at == 5
        assert report.max_positive > 0.99

    def test_symmetric_in_arguments(self, noise):
        a, b = noise
        forward = cross_correlation(a, b, max_lag=20)
        backward = cross_correlation(b, a, max_lag=20)
        for lag in (-7, 0, 13):
            assert forward.value_at(lag) == pytest.approx(backward.value_at(-lag))

    def test_independent_streams(self, noise):
        a, b = noise
        report = cross_correlation(a, b, max_lag=100)
        assert report.reference == pytest.approx(1.0 / math.sqrt(100_000))
        assert report.max_abs < independence_bound(report.n)
        assert len(report.positions) == 201

    def test_constant_stream_gives_zero(self, noise):
        a, _ = noise
        report = cross_correlation(a, np.ones_like(a), max_lag=3)
        assert report.values == [0.0] * 7

    def test_length_mismatch(self, noise):
        a, b = noise
        with pytest.raises(InputError):
            cross_correlation(a, b[:-1])

    def test_minimum_length(self):
        with pytest.raises(InsufficientDataError):
            cross_correlation(np.zeros(9999), np.zeros(9999))

    def test_max_lag_range(self, noise):
        a, b = noise
        with pytest.raises(InputError):
            cross_correlation(a, b, max_lag=50_000)

    def test_plot_columns(self, noise):
        a, b = noise
        columns = cross_correlation(a, b, max_lag=2).to_columns().splitlines()
        assert columns[0] == "lag\tr"
        assert len(columns) == 6
        assert columns[1].startswith("-2\t")


class TestCorrelationMatrix:
    """Tests for pairwise channel correlation."""

    def test_seven_channels_give_21_pairs(self, seven_channels, adc):
        streams = {
            c.channel_id: digitize_block(sample_block(c, 100_000), adc).codes & 0xFF
            for c in seven_channels
        }
        reports = cross_correlation_matrix(streams, max_lag=10)
        assert len(reports) == 21
        assert "1-7" in reports
        assert streams_independent(list(reports.values()))


class TestExtractorStrength:
    """Tests for input-bit to output-bit correlation."""

    def test_copied_bit_is_fully_correlated(self):
        rng = np.random.default_rng(1)
        inputs = rng.integers(0, 2, size=(20_000, 8), dtype=np.uint8)
        report = extractor_strength(inputs, inputs[:, 3], label="x")
        assert report.value_at(3) == pytest.approx(1.0)
        assert report.max_positive_at == 3
        assert report.axis == "position"
        assert report.pair == "x->output"

    def test_constant_column_is_zero(self):
        rng = np.random.default_rng(2)
        inputs = rng.integers(0, 2, size=(20_000, 4), dtype=np.uint8)
        inputs[:, 0] = 1
        outputs = rng.integers(0, 2, size=20_000)
        assert extractor_strength(inputs, outputs).value_at(0) == 0.0

    def test_two_source_output_uncorrelated_with_inputs(self, seven_channels, adc):
        n = 200_000
        x = pack_codes(digitize_block(sample_block(seven_channels[0], 3 * n), adc).codes)
        y = pack_codes(digitize_block(sample_block(seven_channels[1], 3 * n), adc).codes)
        outputs = parity(x & y)
        assert abs(outputs.mean() - 0.5) < 3 / math.sqrt(n) * 1.5
        for values in (x, y):
            report = extractor_strength(units_to_bits(values, 36), outputs)
            assert report.max_abs < 5 * report.reference

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            extractor_strength(np.zeros((10, 4)), np.zeros(9))
        with pytest.raises(InputError):
            extractor_strength(np.zeros(10), np.zeros(10))


@pytest.mark.slow
class TestAcceptanceScale:
    """Acceptance-scale independence and strength checks."""

    def test_channel_independence(self, seven_channels, adc):
        n = 10_000_000
        streams = {
            c.channel_id: digitize_block(sample_block(c, n), adc).codes & 0xFF
            for c in seven_channels
        }
        reports = cross_correlation_matrix(streams, max_lag=0)
        assert len(reports) == 21
        assert max(r.max_abs for r in reports.values()) < independence_bound(n)

    def test_two_source_strength(self, seven_channels, adc):
        n = 4_300_000
        x = pack_codes(digitize_block(sample_block(seven_channels[0], 3 * n), adc).codes)
        y = pack_codes(digitize_block(sample_block(seven_channels[1], 3 * n), adc).codes)
        outputs = parity(x & y)
        assert abs(outputs.mean() - 0.5) < 3 / math.sqrt(n)
        for values in (x, y):
            report = extractor_strength(units_to_bits(values, 36), outputs)
            assert report.max_abs < 5 * 4.8e-4


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
