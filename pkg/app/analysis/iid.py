"""
IID Permutation Test

Permutation battery in the style of SP 800-90B: each statistic is computed
on the original sequence and on seeded shuffles; a statistic fails when the
original ranks in the extreme 0.05% of either tail. The noise source is
assumed IID only if no statistic fails.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List

import numpy as np

from app.core.errors import InputError, InsufficientDataError
from app.models.schemas import IidReport, IidStatistic


logger = logging.getLogger(__name__)

IID_MIN_SAMPLES = 100_000
IID_MIN_SHUFFLES = 100

# Two-sided rejection mass: 0.05% per tail
TAIL_FRACTION = 0.0005

LAGS = (1, 2, 8, 16, 32)

STATISTIC_NAMES = (
    ["excursion", "directional_runs", "longest_directional_run", "increases_decreases",
     "median_runs", "longest_median_run", "average_collision", "maximum_collision"]
    + [f"periodicity_{p}" for p in LAGS]
    + [f"covariance_{p}" for p in LAGS]
)


def _run_lengths(signs: np.ndarray) -> np.ndarray:
    if signs.size == 0:
        return np.zeros(0, dtype=np.int64)
    boundaries = np.flatnonzero(signs[1:] != signs[:-1]) + 1
    edges = np.concatenate(([0], boundaries, [signs.size]))
    return np.diff(edges)


def _collision_counts(x: np.ndarray) -> List[int]:
    """
    Sample counts until the first repeated value, restarting after each repeat.

    next_same[i] is the next index holding x[i]; the first repeat at or
    after a start s is the suffix minimum of next_same from s.
    """
    n = x.size
    order = np.argsort(x, kind="stable")
    ordered = x[order]
    next_same = np.full(n, n, dtype=np.int64)
    same = ordered[1:] == ordered[:-1]
    next_same[order[:-1][same]] = order[1:][same]
    first_repeat = np.minimum.accumulate(next_same[::-1])[::-1].tolist()

    counts = []
    start = 0
    while start < n:
        j = first_repeat[start]
        if j >= n:
            break
        counts.append(j - start + 1)
        start = j + 1
    return counts


def _statistics(x: np.ndarray, median: float, collision_source: np.ndarray) -> np.ndarray:
    values = x.astype(np.float64)

    excursion = float(np.max(np.abs(np.cumsum(values - values.mean()))))

    directions = np.where(x[1:] >= x[:-1], 1, -1).astype(np.int8)
    directional_runs = _run_lengths(directions)
    increases = int(np.count_nonzero(directions > 0))
    increases_decreases = max(increases, directions.size - increases)

    above = np.where(values >= median, 1, -1).astype(np.int8)
    median_runs = _run_lengths(above)

    collisions = _collision_counts(collision_source)
    average_collision = float(np.mean(collisions)) if collisions else 0.0
    maximum_collision = float(max(collisions)) if collisions else 0.0

    stats = [
        excursion,
        float(directional_runs.size),
        float(directional_runs.max()) if directional_runs.size else 0.0,
        float(increases_decreases),
        float(median_runs.size),
        float(median_runs.max()) if median_runs.size else 0.0,
        average_collision,
        maximum_collision,
    ]
    wide = x.astype(np.int64)
    stats.extend(float(np.count_nonzero(x[:-p] == x[p:])) for p in LAGS)
    stats.extend(float(np.dot(wide[:-p], wide[p:])) for p in LAGS)
    return np.asarray(stats)


def _collision_view(x: np.ndarray, is_binary: bool) -> np.ndarray:
    # Binary data is grouped into bytes before searching for collisions
    if is_binary:
        usable = (x.size // 8) * 8
        return np.packbits(x[:usable].astype(np.uint8))
    return x


def iid_permutation_test(symbols, num_shuffles: int = 1000, seed: int = 0, workers: int = 1) -> IidReport:
    """
    Run the permutation battery.

    Args:
        symbols: Integer symbol sequence (at least 10^5 samples)
        num_shuffles: Number of seeded shuffles (at least 100)
        seed: Master seed; shuffle i uses the i-th child seed
        workers: Threads used to evaluate shuffles

    Returns:
        IidReport with one entry per statistic

    Raises:
        InsufficientDataError: Fewer than 10^5 samples
        InputError: Too few shuffles or non-integer input
    """
    x = np.asarray(symbols)
    if x.size < IID_MIN_SAMPLES:
        raise InsufficientDataError("IID permutation test", IID_MIN_SAMPLES, int(x.size))
    if num_shuffles < IID_MIN_SHUFFLES:
        raise InputError(f"IID permutation test needs at least {IID_MIN_SHUFFLES} shuffles, got {num_shuffles}")
    if not np.issubdtype(x.dtype, np.integer):
        raise InputError("IID permutation test needs integer symbols")

    is_binary = bool(x.min() >= 0 and x.max() <= 1)
    # Small alphabets get a narrow dtype so stable sorting stays a radix sort
    if x.min() >= 0 and x.max() < 2 ** 16:
        x = x.astype(np.uint16 if x.max() >= 256 else np.uint8)
    median = 0.5 if is_binary else float(np.median(x))

    original = _statistics(x, median, _collision_view(x, is_binary))
    children = np.random.SeedSequence(seed).spawn(num_shuffles)

    def shuffled(index: int) -> np.ndarray:
        permuted = np.random.default_rng(children[index]).permutation(x)
        return _statistics(permuted, median, _collision_view(permuted, is_binary))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(shuffled, range(num_shuffles)))
    else:
        rows = [shuffled(i) for i in range(num_shuffles)]
    table = np.vstack(rows)

    tail = int(np.floor(TAIL_FRACTION * num_shuffles))
    statistics = []
    for column, name in enumerate(STATISTIC_NAMES):
        greater = int(np.count_nonzero(table[:, column] > original[column]))
        equal = int(np.count_nonzero(table[:, column] == original[column]))
        passed = not (greater + equal <= tail or greater >= num_shuffles - tail)
        statistics.append(IidStatistic(
            name=name,
            value=float(original[column]),
            count_greater=greater,
            count_equal=equal,
            passed=passed,
        ))

    report = IidReport(
        passed=all(s.passed for s in statistics),
        sample_count=int(x.size),
        num_shuffles=num_shuffles,
        statistics=statistics,
    )
    if not report.passed:
        logger.info(f"IID battery failed on: {', '.join(report.failed_statistics)}")
    return report


def statistic_values(symbols) -> Dict[str, float]:
    """Battery statistics of a sequence without shuffling."""
    x = np.asarray(symbols)
    is_binary = bool(x.size and x.min() >= 0 and x.max() <= 1)
    median = 0.5 if is_binary else float(np.median(x))
    values = _statistics(x, median, _collision_view(x, is_binary))
    return dict(zip(STATISTIC_NAMES, values.tolist()))
