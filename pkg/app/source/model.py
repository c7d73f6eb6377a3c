"""
Homodyne Vacuum-Noise Source Model

Simulates the analog output of a homodyne detector measuring vacuum: a
zero-mean Gaussian quantum signal plus additive classical electronic noise.
Blocks are addressed by (seed, block index) through a counter-based
generator, so any block can be computed independently of the others.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from app.core.errors import DomainError, InputError


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChannelModel:
    """
    Per-channel noise parameters.

    Attributes:
        channel_id: Channel number (1-based in configuration files)
        sigma_q2: Quantum noise variance in volts^2 at lo_power_ref
        sigma_e2: Classical electronic noise variance in volts^2
        lo_power_ref: Local-oscillator power (mW) at which sigma_q2 holds
        seed: 64-bit reproducibility seed
    """
    channel_id: int
    sigma_q2: float
    sigma_e2: float
    lo_power_ref: float = 1.0
    seed: int = 0

    def __post_init__(self):
        # sigma_q2 = 0 is the LO-off trace produced by scale_with_power(model, 0)
        if not (math.isfinite(self.sigma_q2) and self.sigma_q2 >= 0):
            raise DomainError(f"sigma_q2 must be finite and >= 0, got {self.sigma_q2}")
        if not (math.isfinite(self.sigma_e2) and self.sigma_e2 >= 0):
            raise DomainError(f"sigma_e2 must be finite and >= 0, got {self.sigma_e2}")
        if not self.lo_power_ref > 0:
            raise DomainError(f"lo_power_ref must be > 0, got {self.lo_power_ref}")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError(f"seed must fit in 64 bits, got {self.seed}")

    @property
    def sigma_m2(self) -> float:
        """Total measured variance."""
        return self.sigma_q2 + self.sigma_e2

    @property
    def qcnr_db(self) -> float:
        """Configured quantum-to-classical noise ratio in dB."""
        return qcnr_db(self.sigma_q2, self.sigma_e2)


@dataclass
class AnalogBlock:
    """
    A block of simulated detector voltages.

    Attributes:
        channel_id: Channel that produced the block
        samples: Voltages as float64
        block_index: Position of the block in the channel's stream
    """
    channel_id: int
    samples: np.ndarray
    block_index: int = 0

    @property
    def length(self) -> int:
        return int(self.samples.size)

    def to_bytes(self) -> bytes:
        """Little-endian float64 export."""
        return np.ascontiguousarray(self.samples, dtype="<f8").tobytes()


def qcnr_db(sigma_q2: float, sigma_e2: float) -> float:
    """
    Quantum-to-classical noise ratio, 10*log10(sigma_q2/sigma_e2).

    Raises:
        DomainError: If either variance is not positive
    """
    if not (sigma_q2 > 0 and sigma_e2 > 0):
        raise DomainError(f"QCNR needs positive variances, got sigma_q2={sigma_q2}, sigma_e2={sigma_e2}")
    return 10.0 * math.log10(sigma_q2 / sigma_e2)


def quantum_variance(sigma_m2: float, sigma_e2: float) -> float:
    """
    Quantum variance recovered from a measured and a classical variance.

    Raises:
        DomainError: If sigma_m2 <= sigma_e2 or sigma_e2 < 0
    """
    if sigma_e2 < 0:
        raise DomainError(f"sigma_e2 must be >= 0, got {sigma_e2}")
    if not sigma_m2 > sigma_e2:
        raise DomainError(
            f"no quantum signal measurable: sigma_m2={sigma_m2} <= sigma_e2={sigma_e2}"
        )
    return sigma_m2 - sigma_e2


def block_generator(seed: int, block_index: int) -> np.random.Generator:
    """Counter-addressed Philox generator for one (seed, block) pair."""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(block_index,))
    return np.random.Generator(np.random.Philox(sequence))


def sample_block(model: ChannelModel, n: int, block_index: int = 0) -> AnalogBlock:
    """
    Draw n samples q + e with q ~ N(0, sigma_q2) and e ~ N(0, sigma_e2).

    The result depends only on (model, n, block_index).
    """
    if n < 0:
        raise InputError(f"sample count must be >= 0, got {n}")
    rng = block_generator(model.seed, block_index)
    q = rng.standard_normal(n)
    e = rng.standard_normal(n)
    q *= math.sqrt(model.sigma_q2)
    q += math.sqrt(model.sigma_e2) * e
    return AnalogBlock(channel_id=model.channel_id, samples=q, block_index=block_index)


def scale_with_power(model: ChannelModel, power: float) -> ChannelModel:
    """
    Rescale the quantum variance linearly with local-oscillator power.

    Args:
        model: Channel at its reference power
        power: New LO power in mW (0 means LO off)

    Returns:
        A new ChannelModel with sigma_q2 * power / lo_power_ref
    """
    if not power >= 0:
        raise DomainError(f"LO power must be >= 0, got {power}")
    if power == model.lo_power_ref:
        return model
    return replace(model, sigma_q2=model.sigma_q2 * power / model.lo_power_ref)


class ChannelSampler:
    """Sequential reader over a channel's block stream."""

    def __init__(self, model: ChannelModel, start_block: int = 0):
        self._model = model
        self._next_index = start_block

    @property
    def model(self) -> ChannelModel:
        return self._model

    def next_block(self, n: int) -> AnalogBlock:
        block = sample_block(self._model, n, self._next_index)
        self._next_index += 1
        return block

    def seek(self, block_index: int) -> None:
        self._next_index = block_index


def estimate_qcnr(model: ChannelModel, n: int, block_index: int = 0) -> float:
    """
    Empirical QCNR from an LO-on and an LO-off run.

    The LO-off run uses the next block index so the two runs are independent.
    """
    on = sample_block(model, n, block_index).samples
    off = sample_block(scale_with_power(model, 0.0), n, block_index + 1).samples
    sigma_m2 = float(np.var(on))
    sigma_e2 = float(np.var(off))
    return qcnr_db(quantum_variance(sigma_m2, sigma_e2), sigma_e2)


@dataclass
class PowerSweepResult:
    """Linear fit of measured variance against LO power."""
    powers: List[float]
    variances: List[float]
    slope: float
    intercept: float
    r_squared: float


def power_sweep(model: ChannelModel, powers: Sequence[float], n: int) -> PowerSweepResult:
    """
    Measure total variance at each LO power and fit a straight line.

    A linear response with intercept near sigma_e2 is the signature of
    shot-noise-limited homodyne detection.
    """
    if len(powers) < 2:
        raise InputError("power sweep needs at least two power settings")
    variances = []
    for index, power in enumerate(powers):
        block = sample_block(scale_with_power(model, power), n, block_index=index)
        variances.append(float(np.var(block.samples)))

    x = np.asarray(powers, dtype=float)
    y = np.asarray(variances)
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    total = y - y.mean()
    ss_tot = float(np.dot(total, total))
    r_squared = 1.0 - float(np.dot(residual, residual)) / ss_tot if ss_tot > 0 else 1.0
    logger.debug(f"Power sweep ch{model.channel_id}: slope={slope:.4g}, intercept={intercept:.4g}")
    return PowerSweepResult(list(x), variances, float(slope), float(intercept), r_squared)


def channel_seeds(master_seed: int, count: int) -> List[int]:
    """Derive independent 64-bit channel seeds from a master seed."""
    states = np.random.SeedSequence(master_seed).generate_state(count, dtype=np.uint64)
    return [int(s) for s in states]


def default_channels(
    count: int,
    master_seed: int,
    sigma_q2: float = 10.0,
    sigma_e2: float = 1.0,
    lo_power_ref: float = 1.0,
    seeds: Optional[Sequence[int]] = None,
) -> List[ChannelModel]:
    """Identical channels with distinct seeds, numbered from 1."""
    if count < 1:
        raise InputError(f"channel count must be >= 1, got {count}")
    seeds = list(seeds) if seeds is not None else channel_seeds(master_seed, count)
    return [
        ChannelModel(
            channel_id=i + 1,
            sigma_q2=sigma_q2,
            sigma_e2=sigma_e2,
            lo_power_ref=lo_power_ref,
            seed=seeds[i],
        )
        for i in range(count)
    ]
