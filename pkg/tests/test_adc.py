"""
Tests for the ADC model.
"""

import math

import numpy as np
import pytest

from app.core.errors import DomainError, InputError
from app.source.adc import AdcConfig, DigitizedBlock, digitize_block, lsb8, optimize_range, quantize
from app.source.model import ChannelModel, sample_block


@pytest.fixture
def unit_adc():
    """R = 1 V so bin edges are exact binary fractions."""
    return AdcConfig(full_scale=1.0)


class TestAdcConfig:
    """Tests for AdcConfig."""

    def test_geometry(self, unit_adc):
        assert unit_adc.levels == 4096
        assert unit_adc.max_code == 4095
        assert unit_adc.bin_width == pytest.approx(2.0 / 4096)

    def test_invalid_range(self):
        with pytest.raises(DomainError):
            AdcConfig(full_scale=0.0)
        with pytest.raises(DomainError):
            AdcConfig(full_scale=float("nan"))

    def test_invalid_width(self):
        with pytest.raises(DomainError):
            AdcConfig(full_scale=1.0, bits=0)

    def test_bin_edges(self, unit_adc):
        lower, upper = unit_adc.bin_edges(2048)
        assert lower == pytest.approx(0.0)
        assert upper == pytest.approx(1.0 / 2048)


class TestQuantize:
    """Tests for single-value quantization."""

    def test_zero_maps_to_midscale(self, unit_adc):
        assert quantize(0.0, unit_adc) == 2048

    def test_lower_edge(self, unit_adc):
        assert quantize(-1.0, unit_adc) == 0
        assert quantize(-1.0 + 1.0 / 2048, unit_adc) == 1

    def test_upper_edge_saturates(self, unit_adc):
        assert quantize(1.0, unit_adc) == 4095
        assert quantize(1.0 - 1e-9, unit_adc) == 4095

    def test_clamping(self, unit_adc):
        assert quantize(1e9, unit_adc) == 4095
        assert quantize(-1e9, unit_adc) == 0

    def test_non_finite_rejected(self, unit_adc):
        with pytest.raises(InputError):
            quantize(float("nan"), unit_adc)
        with pytest.raises(InputError):
            quantize(float("inf"), unit_adc)

    def test_monotone(self, unit_adc):
        values = np.linspace(-1.5, 1.5, 2001)
        codes = [quantize(float(v), unit_adc) for v in values]
        assert all(a <= b for a, b in zip(codes, codes[1:]))


class TestLsb8:
    """Tests for the 8-LSB reduction."""

    def test_keeps_low_byte(self):
        assert lsb8(0x0ABC) == 0xBC
        assert lsb8(0) == 0
        assert lsb8(4095) == 0xFF

    def test_out_of_range(self):
        with pytest.raises(InputError):
            lsb8(4096)
        with pytest.raises(InputError):
            lsb8(-1)


class TestDigitizeBlock:
    """Tests for block digitization."""

    def test_preserves_length_and_channel(self, channel, adc):
        block = sample_block(channel, 5000)
        digitized = digitize_block(block, adc)
        assert digitized.length == 5000
        assert digitized.channel_id == channel.channel_id
        assert digitized.codes.dtype == np.uint16
        assert int(digitized.codes.max()) <= 4095

    def test_matches_scalar_quantize(self, channel, adc):
        block = sample_block(channel, 200)
        digitized = digitize_block(block, adc)
        assert digitized.codes.tolist() == [quantize(float(v), adc) for v in block.samples]

    def test_to_bytes_little_endian(self, adc):
        digitized = DigitizedBlock(channel_id=1, codes=np.array([0x0102, 0x0FFF], dtype=np.uint16), adc=adc)
        assert digitized.to_bytes() == b"\x02\x01\xff\x0f"

    def test_rejects_wide_codes(self, adc):
        with pytest.raises(InputError):
            DigitizedBlock(channel_id=1, codes=np.array([4096], dtype=np.uint16), adc=adc)


class TestOptimizeRange:
    """Tests for digitization range optimization."""

    def test_operating_point_range(self, optimized_adc):
        sigma_m = math.sqrt(11.0)
        assert 3.0 * sigma_m < optimized_adc.full_scale < 7.0 * sigma_m

    def test_no_quantum_noise_rejected(self):
        with pytest.raises(DomainError):
            optimize_range(ChannelModel(channel_id=1, sigma_q2=0.0, sigma_e2=1.0))

    def test_reduced_width(self):
        model = ChannelModel(channel_id=1, sigma_q2=1.0, sigma_e2=0.25)
        full_scale = optimize_range(model, bits=4, scan_points=16)
        assert full_scale > 0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
