"""
Tests for entropy assessment: conditional min-entropy, MCV and IID battery.
"""

import math

import numpy as np
import pytest
from scipy.signal import lfilter
from scipy.special import ndtr

from app.analysis.entropy import (
    ConditionalModel,
    assess_stream,
    conditional_bin_prob,
    conditional_bin_probs,
    mcv_min_entropy,
    raw_byte_min_entropy,
    worst_case_min_entropy,
)
from app.analysis.iid import STATISTIC_NAMES, iid_permutation_test, statistic_values
from app.core.errors import DomainError, InputError, InsufficientDataError
from app.extractors.raw import RawExtractor
from app.source.adc import AdcConfig, digitize_block
from app.source.model import sample_block


def statistics_failing_in_most(datasets, **kwargs):
    """IID statistics that fail on a majority of the datasets."""
    failures = {}
    for data in datasets:
        for name in iid_permutation_test(data, **kwargs).failed_statistics:
            failures[name] = failures.get(name, 0) + 1
    return sorted(name for name, count in failures.items() if 2 * count > len(datasets))


def brute_force_min_entropy(sigma_q: float, sigma_e: float, full_scale: float, bits: int, points: int) -> float:
    """Dense e-grid evaluation over every bin."""
    levels = 1 << bits
    width = 2.0 * full_scale / levels
    edges = -full_scale + width * np.arange(1, levels)
    e = np.linspace(-5.0 * sigma_e, 5.0 * sigma_e, points)
    cdf = ndtr((edges[None, :] - e[:, None]) / sigma_q)
    ones = np.ones((e.size, 1))
    probs = np.diff(np.hstack([0.0 * ones, cdf, ones]), axis=1)
    return -math.log2(float(probs.max()))


class TestConditionalModel:
    """Tests for conditional bin probabilities."""

    def test_probabilities_sum_to_one(self, adc):
        model = ConditionalModel(10.0, 1.0, adc)
        for e in (-5.0, 0.0, 2.3):
            assert conditional_bin_probs(e, model).sum() == pytest.approx(1.0, abs=1e-12)

    def test_single_bin(self, adc):
        model = ConditionalModel(10.0, 1.0, adc)
        assert conditional_bin_prob(2048, 0.0, model) == pytest.approx(conditional_bin_probs(0.0, model)[2048])

    def test_bin_out_of_range(self, adc):
        with pytest.raises(InputError):
            conditional_bin_prob(4096, 0.0, ConditionalModel(10.0, 1.0, adc))

    def test_grid_size_validated(self, adc):
        with pytest.raises(DomainError):
            ConditionalModel(10.0, 1.0, adc, e_grid_points=1000)
        with pytest.raises(DomainError):
            ConditionalModel(10.0, 1.0, adc, e_grid_points=501)


class TestWorstCaseMinEntropy:
    """Tests for the worst-case conditional min-entropy."""

    def test_reduced_adc_matches_brute_force(self):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            sigma_q = float(rng.uniform(0.5, 2.0))
            sigma_e = float(rng.uniform(0.1, 1.5))
            sigma_m = math.sqrt(sigma_q ** 2 + sigma_e ** 2)
            full_scale = float(rng.uniform(1.0, 6.0)) * sigma_m
            model = ConditionalModel(sigma_q ** 2, sigma_e ** 2, AdcConfig(full_scale=full_scale, bits=4))
            expected = brute_force_min_entropy(sigma_q, sigma_e, full_scale, bits=4, points=400_001)
            assert worst_case_min_entropy(model) == pytest.approx(expected, abs=1e-6)

    def test_operating_point_floor(self, optimized_adc):
        model = ConditionalModel(10.0, 1.0, optimized_adc)
        assert worst_case_min_entropy(model) >= 9.201

    def test_without_classical_noise(self, adc):
        model = ConditionalModel(10.0, 0.0, adc)
        expected = -math.log2(float(conditional_bin_probs(0.0, model).max()))
        assert worst_case_min_entropy(model) == pytest.approx(expected)

    def test_more_classical_noise_lowers_entropy(self, adc):
        quiet = worst_case_min_entropy(ConditionalModel(10.0, 1.0, adc))
        noisy = worst_case_min_entropy(ConditionalModel(10.0, 2.0, adc))
        assert noisy <= quiet

    def test_bounded_by_adc_width(self, adc):
        assert 0.0 < worst_case_min_entropy(ConditionalModel(10.0, 1.0, adc)) <= 12.0

    def test_no_quantum_noise(self, adc):
        with pytest.raises(DomainError):
            worst_case_min_entropy(ConditionalModel(0.0, 1.0, adc))


class TestRawByteMinEntropy:
    """Tests for the per-byte min-entropy of the raw low-byte output."""

    def test_well_ranged_adc_is_nearly_flat(self, adc):
        assert 7.99 < raw_byte_min_entropy(11.0, adc) <= 8.0

    def test_wide_range_concentrates_codes(self):
        # sigma_M spans about 20.5 codes: p_max is one central bin
        adc = AdcConfig(full_scale=100 * math.sqrt(11.0))
        assert raw_byte_min_entropy(11.0, adc) == pytest.approx(5.68, abs=0.01)

    def test_narrow_range_saturates(self):
        adc = AdcConfig(full_scale=math.sqrt(11.0))
        assert raw_byte_min_entropy(11.0, adc) < 3.0

    def test_degenerate_variance(self, adc):
        with pytest.raises(DomainError):
            raw_byte_min_entropy(0.0, adc)


class TestMcv:
    """Tests for the most-common-value estimator."""

    def test_uniform_bytes(self, uniform_bytes):
        estimate = mcv_min_entropy(uniform_bytes, 256)
        assert 7.8 <= estimate.min_entropy <= 8.0

    def test_constant_sequence(self):
        assert mcv_min_entropy(np.zeros(20_000, dtype=np.uint8), 256).min_entropy == 0.0

    def test_exact_value(self):
        symbols = np.concatenate([np.zeros(5000, dtype=np.uint8), np.arange(1, 5001) % 255 + 1])
        n = symbols.size
        p_upper = 0.5 + 2.576 * math.sqrt(0.25 / (n - 1))
        assert mcv_min_entropy(symbols, 256).min_entropy == pytest.approx(-math.log2(p_upper))

    def test_minimum_length(self):
        with pytest.raises(InsufficientDataError) as excinfo:
            mcv_min_entropy(np.zeros(9999, dtype=np.uint8), 256)
        assert excinfo.value.required == 10_000

    def test_empty(self):
        with pytest.raises(InputError):
            mcv_min_entropy(np.zeros(0, dtype=np.uint8), 256)

    def test_symbols_outside_alphabet(self):
        with pytest.raises(InputError):
            mcv_min_entropy(np.full(20_000, 3, dtype=np.uint8), 2)


class TestIidPermutation:
    """Tests for the IID permutation battery."""

    def test_statistic_names(self):
        assert len(STATISTIC_NAMES) == 18
        values = statistic_values(np.arange(1000) % 7)
        assert set(values) == set(STATISTIC_NAMES)

    def test_uniform_data_passes(self, uniform_bytes):
        # A statistic of IID data fails by chance with probability ~0.4% at
        # 500 shuffles; a broken statistic fails on every dataset
        datasets = uniform_bytes[:300_000].reshape(3, -1)
        assert statistics_failing_in_most(datasets, num_shuffles=500, seed=1, workers=4) == []

    def test_autoregressive_data_fails(self):
        noise = np.random.default_rng(8).standard_normal(100_000)
        correlated = lfilter([1.0], [1.0, -0.5], noise)
        symbols = np.clip(np.floor(correlated * 40) + 128, 0, 255).astype(np.uint8)
        report = iid_permutation_test(symbols, num_shuffles=200, seed=1)
        assert not report.passed

    def test_ramp_fails(self):
        ramp = (np.arange(100_000) % 256).astype(np.uint8)
        report = iid_permutation_test(ramp, num_shuffles=200, seed=1)
        assert not report.passed

    def test_shuffles_are_seeded(self, uniform_bytes):
        first = iid_permutation_test(uniform_bytes[:100_000], num_shuffles=100, seed=9)
        second = iid_permutation_test(uniform_bytes[:100_000], num_shuffles=100, seed=9, workers=3)
        assert first == second

    def test_minimum_length(self):
        with pytest.raises(InsufficientDataError):
            iid_permutation_test(np.zeros(99_999, dtype=np.uint8))

    def test_minimum_shuffles(self, uniform_bytes):
        with pytest.raises(InputError):
            iid_permutation_test(uniform_bytes, num_shuffles=99)


class TestAssessStream:
    """Tests for the combined assessment."""

    def test_constant_stream_fails(self):
        report = assess_stream(np.full(100_000, 42, dtype=np.uint8), num_shuffles=100)
        assert report.h_mcv == 0.0
        assert not report.passed

    def test_report_fields(self, uniform_bytes, adc):
        report = assess_stream(
            uniform_bytes[:100_000],
            num_shuffles=100,
            conditional=ConditionalModel(10.0, 1.0, adc),
            min_entropy_fraction=0.9,
        )
        assert report.alphabet_size == 256
        assert report.h_mcv_per_8_bits == pytest.approx(report.h_mcv)
        assert report.h_mcv_per_bit == pytest.approx(report.h_mcv / 8)
        assert report.min_entropy_threshold == pytest.approx(7.2)
        assert report.h_min_conditional is not None
        assert "h_mcv=" in report.to_kv()

    def test_bit_stream(self):
        bits = np.random.default_rng(4).integers(0, 2, size=100_000, dtype=np.uint8)
        report = assess_stream(bits, alphabet_size=2, num_shuffles=100)
        assert report.h_mcv_per_8_bits == pytest.approx(8 * report.h_mcv)


@pytest.mark.slow
class TestSimulatedRawStream:
    """Raw 8-LSB output of a simulated channel."""

    def test_entropy_band_and_iid(self, channel, optimized_adc):
        codes = digitize_block(sample_block(channel, 1_000_000), optimized_adc).codes
        units, _ = RawExtractor().extract([codes], None)
        symbols = units.astype(np.uint8)
        assert 7.8 <= mcv_min_entropy(symbols, 256).min_entropy <= 8.0
        segments = symbols[:900_000].reshape(3, -1)
        assert statistics_failing_in_most(segments, num_shuffles=1000, seed=3, workers=4) == []


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
