"""
Correlation Analysis

Lagged cross-correlation between channel byte streams and input/output
correlation of an extractor (its strength), each reported against the
1/sqrt(n) scale of ideal random data.
"""

import logging
import math
from itertools import combinations
from typing import Dict, Sequence

import numpy as np

from app.core.errors import InputError, InsufficientDataError
from app.models.schemas import CorrelationReport


logger = logging.getLogger(__name__)

CORRELATION_MIN_LENGTH = 10_000


def _clip_r(r: float) -> float:
    return min(1.0, max(-1.0, r))


def _extremes(positions: np.ndarray, values: np.ndarray, skip=None):
    mask = np.ones(values.size, dtype=bool)
    if skip is not None:
        mask &= positions != skip
    if not mask.any():
        return 0.0, 0, 0.0, 0
    pos, val = positions[mask], values[mask]
    hi, lo = int(np.argmax(val)), int(np.argmin(val))
    return float(val[hi]), int(pos[hi]), float(val[lo]), int(pos[lo])


def cross_correlation(a, b, max_lag: int = 100, pair: str = "a,b") -> CorrelationReport:
    """
    Pearson correlation of mean-centred sequences at lags -max_lag..max_lag.

    r(l) pairs a[i] with b[i + l] over the overlap, normalised by the full
    sequence variances. When a and b are the same sequence the lag-0 value
    (exactly 1) stays in the profile but is excluded from the extremes.

    Raises:
        InputError: On length mismatch or a lag range that is too large
        InsufficientDataError: Below 10^4 samples
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.size != y.size:
        raise InputError(f"length mismatch: {x.size} vs {y.size}")
    n = int(x.size)
    if n < CORRELATION_MIN_LENGTH:
        raise InsufficientDataError("cross-correlation", CORRELATION_MIN_LENGTH, n)
    if not 0 <= max_lag < n // 2:
        raise InputError(f"max_lag must be in [0, {n // 2}), got {max_lag}")

    self_pair = a is b or np.array_equal(x, y)
    x = x - x.mean()
    y = y - y.mean()
    norm = math.sqrt(float(np.dot(x, x)) * float(np.dot(y, y)))

    lags = np.arange(-max_lag, max_lag + 1)
    values = np.zeros(lags.size)
    if norm > 0:
        for index, lag in enumerate(lags):
            if lag >= 0:
                dot = float(np.dot(x[: n - lag], y[lag:]))
            else:
                dot = float(np.dot(y[: n + lag], x[-lag:]))
            values[index] = _clip_r(dot / norm)

    max_pos, max_pos_at, max_neg, max_neg_at = _extremes(lags, values, skip=0 if self_pair else None)
    return CorrelationReport(
        pair=pair,
        n=n,
        reference=1.0 / math.sqrt(n),
        max_positive=max_pos,
        max_positive_at=max_pos_at,
        max_negative=max_neg,
        max_negative_at=max_neg_at,
        axis="lag",
        positions=lags.tolist(),
        values=values.tolist(),
    )


def cross_correlation_matrix(streams: Dict[int, np.ndarray], max_lag: int = 100) -> Dict[str, CorrelationReport]:
    """All pairings of the given channel streams, keyed 'i-j'."""
    reports = {}
    for i, j in combinations(sorted(streams), 2):
        key = f"{i}-{j}"
        reports[key] = cross_correlation(streams[i], streams[j], max_lag=max_lag, pair=key)
    if reports:
        worst = max(reports.values(), key=lambda r: r.max_abs)
        logger.info(f"Cross-correlation over {len(reports)} pairs: max |r|={worst.max_abs:.3e} ({worst.pair})")
    return reports


def extractor_strength(inputs, outputs, label: str = "input") -> CorrelationReport:
    """
    Correlation between each input bit position and the output bit.

    Args:
        inputs: (n, width) 0/1 matrix, one row per extractor invocation
        outputs: n output bits
        label: Name recorded in the report

    Raises:
        InputError: On dimension mismatch
    """
    matrix = np.asarray(inputs)
    out = np.asarray(outputs, dtype=np.float64)
    if matrix.ndim != 2:
        raise InputError("inputs must be a two-dimensional bit matrix")
    if out.ndim != 1 or out.size != matrix.shape[0]:
        raise InputError(f"need one output bit per input row: {matrix.shape[0]} rows, {out.size} outputs")
    n = int(out.size)
    if n < 2:
        raise InsufficientDataError("extractor strength", 2, n)

    out_centred = out - out.mean()
    out_norm = float(np.dot(out_centred, out_centred))
    values = np.zeros(matrix.shape[1])
    # One column at a time keeps memory at O(n) beyond the input matrix
    for column in range(matrix.shape[1]):
        centred = matrix[:, column].astype(np.float64)
        centred -= centred.mean()
        denominator = math.sqrt(float(np.dot(centred, centred)) * out_norm)
        # Constant columns carry no correlation
        if denominator > 0:
            values[column] = _clip_r(float(np.dot(centred, out_centred)) / denominator)

    positions = np.arange(matrix.shape[1])
    max_pos, max_pos_at, max_neg, max_neg_at = _extremes(positions, values)
    return CorrelationReport(
        pair=f"{label}->output",
        n=n,
        reference=1.0 / math.sqrt(n),
        max_positive=max_pos,
        max_positive_at=max_pos_at,
        max_negative=max_neg,
        max_negative_at=max_neg_at,
        axis="position",
        positions=positions.tolist(),
        values=values.tolist(),
    )


def independence_bound(n: int, sigmas: float = 4.5) -> float:
    """Correlation magnitude below which independent streams are accepted."""
    return sigmas / math.sqrt(n)


def streams_independent(reports: Sequence[CorrelationReport], sigmas: float = 4.5) -> bool:
    return all(r.max_abs < independence_bound(r.n, sigmas) for r in reports)
