"""
Entropy Assessment

Worst-case conditional min-entropy of the digitized measurement given the
classical noise, plus the most-common-value estimator for measured streams.

The classical noise e is treated as side information: conditioned on e the
measurement is N(e, sigma_q2), binned by the ADC. The worst case maximizes
the largest bin probability over e in [-5 sigma_E, +5 sigma_E].
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from app.core.config import config
from app.core.errors import DomainError, InputError, InsufficientDataError
from app.source.adc import AdcConfig
from app.analysis.iid import iid_permutation_test
from app.models.schemas import EntropyReport


logger = logging.getLogger(__name__)

# Classical noise spread taken as worst case, in units of sigma_E
E_MAX_SIGMAS = 5.0

# One-sided 99% normal quantile used by the MCV upper bound
MCV_Z = 2.576

MCV_MIN_SAMPLES = 10_000


@dataclass(frozen=True)
class ConditionalModel:
    """
    Source/ADC model for the conditional min-entropy.

    Attributes:
        sigma_q2: Quantum noise variance
        sigma_e2: Classical noise variance (0 collapses the grid to e = 0)
        adc: Digitizer
        e_grid_points: Odd number of points on [-e_max, e_max]
    """
    sigma_q2: float
    sigma_e2: float
    adc: AdcConfig
    e_grid_points: int = 1001

    def __post_init__(self):
        if self.sigma_e2 < 0:
            raise DomainError(f"sigma_e2 must be >= 0, got {self.sigma_e2}")
        if self.e_grid_points < 1001 or self.e_grid_points % 2 == 0:
            raise DomainError(f"e_grid_points must be odd and >= 1001, got {self.e_grid_points}")

    @property
    def e_max(self) -> float:
        return E_MAX_SIGMAS * math.sqrt(self.sigma_e2)

    @property
    def sigma_q(self) -> float:
        return math.sqrt(self.sigma_q2)


def _interval_mass(lower, upper, mean, sigma: float) -> np.ndarray:
    """P(lower <= X < upper) for X ~ N(mean, sigma^2), accurate in both tails."""
    z_lo = (np.asarray(lower, dtype=float) - mean) / sigma
    z_hi = (np.asarray(upper, dtype=float) - mean) / sigma
    # Upper tail: subtract survival functions instead of CDFs near 1
    upper_tail = z_lo > 0
    mass = np.where(upper_tail, ndtr(-z_lo) - ndtr(-z_hi), ndtr(z_hi) - ndtr(z_lo))
    return np.maximum(mass, 0.0)


def _bin_bounds(codes: np.ndarray, adc: AdcConfig):
    lower, upper = adc.bin_edges(codes)
    lower = np.where(codes == 0, -np.inf, lower)
    upper = np.where(codes == adc.max_code, np.inf, upper)
    return lower, upper


def conditional_bin_prob(bin: int, e: float, model: ConditionalModel) -> float:
    """
    Probability that N(e, sigma_q2) quantizes to a given code.

    Codes 0 and max absorb the tails below -R and at or above +R.
    """
    if not 0 <= bin <= model.adc.max_code:
        raise InputError(f"bin {bin} outside [0, {model.adc.max_code}]")
    if model.sigma_q2 <= 0:
        raise DomainError("conditional distribution is degenerate for sigma_q2 = 0")
    lower, upper = _bin_bounds(np.asarray([bin]), model.adc)
    return float(_interval_mass(lower, upper, e, model.sigma_q)[0])


def conditional_bin_probs(e: float, model: ConditionalModel) -> np.ndarray:
    """Probabilities of all codes for one value of e."""
    if model.sigma_q2 <= 0:
        raise DomainError("conditional distribution is degenerate for sigma_q2 = 0")
    codes = np.arange(model.adc.levels)
    lower, upper = _bin_bounds(codes, model.adc)
    return _interval_mass(lower, upper, e, model.sigma_q)


def _max_bin_prob(e_values: np.ndarray, model: ConditionalModel) -> np.ndarray:
    """
    Largest bin probability for each e.

    For a symmetric unimodal kernel the largest interior bin is the one
    containing e, so only that bin, its neighbours and the two saturation
    bins are candidates.
    """
    adc = model.adc
    e = np.atleast_1d(np.asarray(e_values, dtype=float))
    half = adc.levels // 2
    containing = np.clip(np.floor(e / adc.bin_width) + half, 0, adc.max_code).astype(np.int64)
    candidates = np.stack([
        np.clip(containing - 1, 0, adc.max_code),
        containing,
        np.clip(containing + 1, 0, adc.max_code),
        np.zeros_like(containing),
        np.full_like(containing, adc.max_code),
    ], axis=1)
    lower, upper = _bin_bounds(candidates, adc)
    mass = _interval_mass(lower, upper, e[:, None], model.sigma_q)
    return mass.max(axis=1)


def worst_case_min_entropy(model: ConditionalModel, tolerance: float = 1e-4) -> float:
    """
    H_min(M_dis | E) = -log2 max_e max_i P(m_i | e), e in [-e_max, e_max].

    The e-grid is augmented with every bin centre inside the range (where
    interior bin probabilities peak) and then refined around the argmax
    until the entropy moves by less than the tolerance.

    Raises:
        DomainError: If sigma_q2 is not positive
    """
    if model.sigma_q2 <= 0:
        raise DomainError("worst-case min-entropy undefined for sigma_q2 = 0")

    e_max = model.e_max
    if e_max == 0:
        p_max = float(_max_bin_prob(np.zeros(1), model)[0])
        return -math.log2(p_max)

    adc = model.adc
    grid = np.linspace(-e_max, e_max, model.e_grid_points)
    lower, upper = adc.bin_edges(np.arange(1, adc.max_code))
    centres = (lower + upper) / 2.0
    centres = centres[np.abs(centres) <= e_max]
    candidates = np.concatenate([grid, centres])

    probs = _max_bin_prob(candidates, model)
    best = int(np.argmax(probs))
    e_best, p_max = float(candidates[best]), float(probs[best])
    entropy = -math.log2(p_max)

    step = 2.0 * e_max / (model.e_grid_points - 1)
    while True:
        lo, hi = max(-e_max, e_best - step), min(e_max, e_best + step)
        result = minimize_scalar(
            lambda x: -float(_max_bin_prob(np.asarray([x]), model)[0]),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": step * 1e-6},
        )
        refined = -float(result.fun)
        if refined > p_max:
            e_best, p_max = float(result.x), refined
        new_entropy = -math.log2(p_max)
        change = entropy - new_entropy
        entropy = new_entropy
        step /= 16.0
        if change < tolerance:
            break

    logger.debug(f"Worst-case min-entropy {entropy:.6f} bits at e={e_best:.6g}")
    return entropy


def raw_byte_min_entropy(sigma_m2: float, adc: AdcConfig) -> float:
    """
    Min-entropy per raw output byte of a channel.

    The measurement N(0, sigma_m2) is quantized and codes sharing their
    eight least significant bits are pooled, saturation codes included.

    Raises:
        DomainError: If sigma_m2 is not positive
    """
    if sigma_m2 <= 0:
        raise DomainError(f"sigma_m2 must be > 0, got {sigma_m2}")
    codes = np.arange(adc.levels)
    lower, upper = _bin_bounds(codes, adc)
    probs = _interval_mass(lower, upper, 0.0, math.sqrt(sigma_m2))
    pooled = np.bincount(codes & 0xFF, weights=probs, minlength=256)
    return -math.log2(float(pooled.max()))


@dataclass
class McvEstimate:
    """Most-common-value estimate."""
    min_entropy: float
    p_hat: float
    p_upper: float
    sample_count: int
    alphabet_size: int


def mcv_min_entropy(symbols, alphabet_size: int) -> McvEstimate:
    """
    Most-common-value min-entropy with a 99% upper confidence bound.

    p_u = min(1, p + 2.576 sqrt(p (1 - p) / (n - 1))); H = -log2(p_u).

    Raises:
        InputError: For empty input or symbols outside the alphabet
        InsufficientDataError: Below 10^4 samples
    """
    data = np.asarray(symbols)
    n = int(data.size)
    if n == 0:
        raise InputError("MCV estimate needs a non-empty sequence")
    if n < MCV_MIN_SAMPLES:
        raise InsufficientDataError("MCV estimate", MCV_MIN_SAMPLES, n)
    if alphabet_size < 2:
        raise InputError(f"alphabet size must be >= 2, got {alphabet_size}")
    if data.min() < 0 or data.max() >= alphabet_size:
        raise InputError(f"symbols outside alphabet [0, {alphabet_size})")

    counts = np.bincount(data.astype(np.int64), minlength=alphabet_size)
    p_hat = float(counts.max()) / n
    p_upper = min(1.0, p_hat + MCV_Z * math.sqrt(p_hat * (1.0 - p_hat) / (n - 1)))
    # -log2(1.0) is -0.0
    min_entropy = max(0.0, -math.log2(p_upper))
    return McvEstimate(min_entropy, p_hat, p_upper, n, alphabet_size)


def assess_stream(
    symbols,
    alphabet_size: int = 256,
    num_shuffles: Optional[int] = None,
    seed: int = 0,
    conditional: Optional[ConditionalModel] = None,
    min_entropy_fraction: Optional[float] = None,
    workers: int = 1,
) -> EntropyReport:
    """
    MCV estimate plus IID battery, optionally with the analytic worst case.

    The verdict passes when the stream survives the IID battery and its MCV
    entropy reaches min_entropy_fraction of the alphabet's full entropy.
    """
    num_shuffles = num_shuffles if num_shuffles is not None else config.IID_SHUFFLES
    fraction = min_entropy_fraction if min_entropy_fraction is not None else config.MIN_ENTROPY_FRACTION

    data = np.asarray(symbols)
    mcv = mcv_min_entropy(data, alphabet_size)
    iid = iid_permutation_test(data, num_shuffles=num_shuffles, seed=seed, workers=workers)

    bits_per_symbol = math.log2(alphabet_size)
    threshold = fraction * bits_per_symbol
    h_conditional = worst_case_min_entropy(conditional) if conditional is not None else None

    passed = iid.passed and mcv.min_entropy >= threshold
    logger.info(
        f"Assessed {mcv.sample_count} symbols: H_mcv={mcv.min_entropy:.4f} bits, "
        f"IID {'pass' if iid.passed else 'fail'}, verdict {'pass' if passed else 'fail'}"
    )
    return EntropyReport(
        sample_count=mcv.sample_count,
        alphabet_size=alphabet_size,
        h_mcv=mcv.min_entropy,
        h_mcv_per_bit=mcv.min_entropy / bits_per_symbol,
        h_mcv_per_8_bits=8.0 * mcv.min_entropy / bits_per_symbol,
        p_hat=mcv.p_hat,
        p_upper=mcv.p_upper,
        h_min_conditional=h_conditional,
        min_entropy_threshold=threshold,
        iid=iid,
        passed=passed,
    )
