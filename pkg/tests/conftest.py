"""
Pytest configuration and fixtures for qrng_mux tests.

Fixtures build small, seeded channel sets and a fixed ADC range so most
tests avoid the range optimization.
"""

import math

import numpy as np
import pytest

from app.source.adc import AdcConfig, optimize_range
from app.source.model import ChannelModel, default_channels


# 10 dB operating point
SIGMA_Q2 = 10.0
SIGMA_E2 = 1.0

# Close to the optimized range for the operating point
FIXED_FULL_SCALE = 4.5 * math.sqrt(SIGMA_Q2 + SIGMA_E2)


@pytest.fixture
def channel():
    """A single channel at the 10 dB operating point."""
    return ChannelModel(channel_id=1, sigma_q2=SIGMA_Q2, sigma_e2=SIGMA_E2, seed=20190101)


@pytest.fixture
def seven_channels():
    """Seven identical channels with independent seeds."""
    return default_channels(7, master_seed=1234, sigma_q2=SIGMA_Q2, sigma_e2=SIGMA_E2)


@pytest.fixture
def adc():
    """12-bit ADC at a fixed range."""
    return AdcConfig(full_scale=FIXED_FULL_SCALE)


@pytest.fixture(scope="session")
def optimized_adc():
    """12-bit ADC at the optimized range for the 10 dB channel."""
    model = ChannelModel(channel_id=1, sigma_q2=SIGMA_Q2, sigma_e2=SIGMA_E2)
    return AdcConfig(full_scale=optimize_range(model))


@pytest.fixture
def uniform_bytes():
    """10^6 seeded uniform bytes."""
    return np.random.default_rng(7).integers(0, 256, size=1_000_000, dtype=np.uint8)


@pytest.fixture
def uniform_codes():
    """10^6 seeded uniform 12-bit codes."""
    return np.random.default_rng(11).integers(0, 4096, size=1_000_000, dtype=np.uint16)


def _exp_series(a: int, b: int):
    """(P, Q) with P/Q the sum over k in (a, b] of 1/((a+1)(a+2)...k)."""
    if b - a == 1:
        return 1, b
    mid = (a + b) // 2
    p_left, q_left = _exp_series(a, mid)
    p_right, q_right = _exp_series(mid, b)
    return p_left * q_right + p_right, q_left * q_right


@pytest.fixture(scope="session")
def e_bits():
    """
    First 10^6 binary digits of e ("10" then the fraction).

    The standard reference sequence for the statistical tests: it passes
    every test of the subset at alpha = 0.01.
    """
    n = 1_000_000
    # 80000! exceeds 2^(n + 64), so the truncated series is exact to n bits
    p, q = _exp_series(0, 80_000)
    scaled = ((p + q) << (n - 2 + 64)) // q
    digits = bin(scaled)[2:n + 2]
    return np.frombuffer(digits.encode("ascii"), dtype=np.uint8) - ord("0")


CHANNEL_CONFIG = f"""
# Test configuration: fixed ADC range, small blocks
[global]
seed = 4242
channels = 7
sigma_q2 = {SIGMA_Q2}
sigma_e2 = {SIGMA_E2}
full_scale = {FIXED_FULL_SCALE}
block_samples = 480
"""


@pytest.fixture
def config_file(tmp_path):
    """Seven-channel configuration file with a fixed ADC range."""
    path = tmp_path / "channels.conf"
    path.write_text(CHANNEL_CONFIG, encoding="utf-8")
    return path
