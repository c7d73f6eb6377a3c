"""
Statistical Test Suite (subset)

Frequency, block frequency, runs, longest run of ones, cumulative sums,
serial and approximate entropy tests in the style of SP 800-22. Every test
takes a 0/1 uint8 array and returns (statistic, p-value) pairs.
"""

import logging
import math
from typing import Callable, List, Tuple

import numpy as np
from scipy.special import erfc, gammaincc, ndtr

from app.core.errors import InputError, InsufficientDataError
from app.models.schemas import TestReport, TestResult


logger = logging.getLogger(__name__)

STS_MIN_BITS = 1_000_000
ALPHA = 0.01

BLOCK_FREQUENCY_M = 128
SERIAL_M = 16
APEN_M = 10

# Longest run of ones with M = 10^4: classes <=10, 11..15, >=16
LONGEST_RUN_M = 10_000
LONGEST_RUN_BOUNDS = (10, 16)
LONGEST_RUN_PI = np.array([0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727])


def _as_bits(bits) -> np.ndarray:
    data = np.asarray(bits, dtype=np.uint8)
    if data.ndim != 1:
        raise InputError("bit sequence must be one-dimensional")
    if data.size and data.max() > 1:
        raise InputError("bit sequence must contain only 0 and 1")
    return data


def _clip_p(p: float) -> float:
    if not math.isfinite(p):
        return 0.0
    return min(1.0, max(0.0, float(p)))


def monobit(bits: np.ndarray) -> Tuple[float, float]:
    n = bits.size
    s = 2 * int(np.count_nonzero(bits)) - n
    statistic = abs(s) / math.sqrt(n)
    return statistic, _clip_p(erfc(statistic / math.sqrt(2)))


def block_frequency(bits: np.ndarray, m: int = BLOCK_FREQUENCY_M) -> Tuple[float, float]:
    blocks = bits.size // m
    proportions = bits[: blocks * m].reshape(blocks, m).mean(axis=1)
    chi2 = 4.0 * m * float(np.sum((proportions - 0.5) ** 2))
    return chi2, _clip_p(gammaincc(blocks / 2.0, chi2 / 2.0))


def runs(bits: np.ndarray) -> Tuple[float, float]:
    n = bits.size
    pi = np.count_nonzero(bits) / n
    # Frequency prerequisite
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        return float("nan"), 0.0
    v_obs = int(np.count_nonzero(bits[1:] != bits[:-1])) + 1
    numerator = abs(v_obs - 2.0 * n * pi * (1.0 - pi))
    denominator = 2.0 * math.sqrt(2.0 * n) * pi * (1.0 - pi)
    return float(v_obs), _clip_p(erfc(numerator / denominator))


def _longest_runs_per_block(blocks: np.ndarray) -> np.ndarray:
    rows, m = blocks.shape
    padded = np.zeros((rows, m + 2), dtype=np.int8)
    padded[:, 1:-1] = blocks
    flat = np.diff(padded.ravel())
    starts = np.flatnonzero(flat == 1)
    ends = np.flatnonzero(flat == -1)
    longest = np.zeros(rows, dtype=np.int64)
    np.maximum.at(longest, starts // (m + 2), ends - starts)
    return longest


def longest_run(bits: np.ndarray) -> Tuple[float, float]:
    blocks = bits.size // LONGEST_RUN_M
    longest = _longest_runs_per_block(bits[: blocks * LONGEST_RUN_M].reshape(blocks, LONGEST_RUN_M))
    low, high = LONGEST_RUN_BOUNDS
    classes = np.clip(longest, low, high) - low
    observed = np.bincount(classes, minlength=high - low + 1)
    expected = blocks * LONGEST_RUN_PI
    chi2 = float(np.sum((observed - expected) ** 2 / expected))
    return chi2, _clip_p(gammaincc((high - low) / 2.0, chi2 / 2.0))


def _cusum_p(z: int, n: int) -> float:
    root_n = math.sqrt(n)
    k1 = np.arange(math.trunc((-n / z + 1) / 4), math.floor((n / z - 1) / 4) + 1)
    k2 = np.arange(math.trunc((-n / z - 3) / 4), math.floor((n / z - 1) / 4) + 1)
    sum1 = np.sum(ndtr((4 * k1 + 1) * z / root_n) - ndtr((4 * k1 - 1) * z / root_n))
    sum2 = np.sum(ndtr((4 * k2 + 3) * z / root_n) - ndtr((4 * k2 + 1) * z / root_n))
    return _clip_p(1.0 - sum1 + sum2)


def cumulative_sums(bits: np.ndarray, reverse: bool = False) -> Tuple[float, float]:
    steps = 2 * bits.astype(np.int64) - 1
    if reverse:
        steps = steps[::-1]
    z = int(np.max(np.abs(np.cumsum(steps))))
    if z == 0:
        return 0.0, 1.0
    return float(z), _cusum_p(z, bits.size)


def _pattern_counts(bits: np.ndarray, m: int) -> np.ndarray:
    """Overlapping m-bit pattern counts with wrap-around."""
    if m == 0:
        return np.array([bits.size])
    extended = np.concatenate([bits, bits[: m - 1]]).astype(np.int64)
    n = bits.size
    values = np.zeros(n, dtype=np.int64)
    for offset in range(m):
        values = (values << 1) | extended[offset: offset + n]
    return np.bincount(values, minlength=1 << m)


def _psi_squared(bits: np.ndarray, m: int) -> float:
    if m <= 0:
        return 0.0
    counts = _pattern_counts(bits, m).astype(np.float64)
    n = bits.size
    return (1 << m) / n * float(np.dot(counts, counts)) - n


def serial(bits: np.ndarray, m: int = SERIAL_M) -> List[Tuple[float, float]]:
    psi_m = _psi_squared(bits, m)
    psi_m1 = _psi_squared(bits, m - 1)
    psi_m2 = _psi_squared(bits, m - 2)
    delta1 = psi_m - psi_m1
    delta2 = psi_m - 2.0 * psi_m1 + psi_m2
    return [
        (delta1, _clip_p(gammaincc(2 ** (m - 2), delta1 / 2.0))),
        (delta2, _clip_p(gammaincc(2 ** (m - 3), delta2 / 2.0))),
    ]


def _phi(bits: np.ndarray, m: int) -> float:
    counts = _pattern_counts(bits, m)
    freq = counts[counts > 0] / bits.size
    return float(np.sum(freq * np.log(freq)))


def approximate_entropy(bits: np.ndarray, m: int = APEN_M) -> Tuple[float, float]:
    n = bits.size
    apen = _phi(bits, m) - _phi(bits, m + 1)
    chi2 = 2.0 * n * (math.log(2) - apen)
    return chi2, _clip_p(gammaincc(2 ** (m - 1), chi2 / 2.0))


def _suite() -> List[Tuple[str, Callable[[np.ndarray], List[Tuple[float, float]]]]]:
    return [
        ("monobit", lambda b: [monobit(b)]),
        ("block_frequency", lambda b: [block_frequency(b)]),
        ("runs", lambda b: [runs(b)]),
        ("longest_run", lambda b: [longest_run(b)]),
        ("cumulative_sums_forward", lambda b: [cumulative_sums(b)]),
        ("cumulative_sums_reverse", lambda b: [cumulative_sums(b, reverse=True)]),
        ("serial", serial),
        ("approximate_entropy", lambda b: [approximate_entropy(b)]),
    ]


def run_sts_subset(bits, alpha: float = ALPHA) -> TestReport:
    """
    Run the test subset over a bit sequence.

    Raises:
        InsufficientDataError: Fewer than 10^6 bits
    """
    data = _as_bits(bits)
    if data.size < STS_MIN_BITS:
        raise InsufficientDataError("statistical test subset", STS_MIN_BITS, int(data.size))

    results = []
    for name, test in _suite():
        outcomes = test(data)
        for index, (statistic, p_value) in enumerate(outcomes):
            label = name if len(outcomes) == 1 else f"{name}_{index + 1}"
            results.append(TestResult(
                name=label,
                statistic=float(statistic) if math.isfinite(statistic) else 0.0,
                p_value=p_value,
                passed=p_value >= alpha,
            ))
            logger.debug(f"{label}: p={p_value:.6f}")

    report = TestReport(
        bit_count=int(data.size),
        alpha=alpha,
        tests=results,
        passed=all(r.passed for r in results),
    )
    logger.info(f"Test subset on {data.size} bits: {'pass' if report.passed else 'fail'}")
    return report
