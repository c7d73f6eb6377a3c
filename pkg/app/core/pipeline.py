"""
Multiplexed Generation Pipeline

This module drives N channels end-to-end (simulate, digitize, extract) and
merges their extractor outputs into one stream.

A lane is one extractor instance: a single channel for raw and cmac, a
channel pair for two_source. Each lane is owned by exactly one worker
thread, which carries the lane state (e.g. the CMAC key) from round to
round and hands finished blocks to the lane's bounded queue. A single
interleaver drains the queues in fixed lane order, so the output never
depends on how many workers ran.
"""

import logging
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.analysis.entropy import raw_byte_min_entropy
from app.core.config import config
from app.core.errors import ConfigurationError, InputError
from app.core.rates import RateModel, theoretical_rate
from app.extractors.base import Extractor
from app.extractors.bits import Bitstream, BitWriter
from app.extractors.cmac import BLOCK_BYTES, CmacExtractor
from app.extractors.factory import get_extractor
from app.models.schemas import ThroughputReport
from app.source.adc import AdcConfig, digitize_block
from app.source.model import ChannelModel, channel_seeds, default_channels, sample_block


logger = logging.getLogger(__name__)

# Seconds between stop checks while a producer waits on a full queue
_POLL = 0.1

CodeReader = Callable[[int], Optional[List[np.ndarray]]]


@dataclass
class PipelineConfig:
    """
    Pipeline configuration.

    Attributes:
        channels: Channel models, identified by channel_id
        adc: Digitizer shared by all channels
        extractor: Extractor name or alias
        block_samples: Samples per channel per round
        pairing: Channel pairs for two_source; consecutive ids when None
        keys: Explicit initial CMAC keys by channel id
    """
    channels: List[ChannelModel]
    adc: AdcConfig
    extractor: str = "raw"
    block_samples: int = field(default_factory=lambda: config.BLOCK_SAMPLES)
    pairing: Optional[List[Tuple[int, int]]] = None
    keys: Dict[int, bytes] = field(default_factory=dict)

    def validate(self) -> Extractor:
        """
        Check the configuration and resolve its extractor.

        Raises:
            ConfigurationError: On any invariant violation
        """
        if not self.channels:
            raise ConfigurationError("pipeline needs at least one channel")
        ids = [c.channel_id for c in self.channels]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"channel ids must be unique, got {ids}")

        extractor = get_extractor(self.extractor)
        extractor.validate_block(self.block_samples)
        if isinstance(extractor, CmacExtractor):
            extractor = self._cmac_extractor(extractor.unit_bits)

        if extractor.sources == 1 and self.pairing:
            raise ConfigurationError(f"pairing applies only to two_source, not {extractor.name}")
        if extractor.sources == 2:
            self._check_pairs(self.pairs(), set(ids))

        for channel_id, key in self.keys.items():
            if channel_id not in ids:
                raise ConfigurationError(f"key given for unknown channel {channel_id}")
            if len(key) != 16:
                raise ConfigurationError(f"key for channel {channel_id} must be 16 bytes, got {len(key)}")
        if self.keys and extractor.name != "cmac":
            logger.warning(f"Initial keys are ignored by the {extractor.name} extractor")
        return extractor

    def _cmac_extractor(self, out_bits: int) -> CmacExtractor:
        """CMAC extractor whose input entropy k comes from the weakest channel."""
        entropies = {c.channel_id: raw_byte_min_entropy(c.sigma_m2, self.adc) for c in self.channels}
        weakest = min(entropies, key=entropies.get)
        byte_entropy = entropies[weakest]
        logger.debug(f"CMAC input: {byte_entropy:.4f} bits per raw byte (channel {weakest})")
        try:
            return CmacExtractor(out_bits=out_bits, input_entropy_k=BLOCK_BYTES * byte_entropy)
        except ConfigurationError as e:
            raise ConfigurationError(
                f"channel {weakest} gives {byte_entropy:.3f} bits per raw byte at "
                f"full_scale={self.adc.full_scale:.4g}: {e}"
            ) from e

    def pairs(self) -> List[Tuple[int, int]]:
        """Channel pairs in ascending order; an odd channel out is left idle."""
        if self.pairing is not None:
            return sorted(tuple(p) for p in self.pairing)
        ids = sorted(c.channel_id for c in self.channels)
        return [(ids[i], ids[i + 1]) for i in range(0, len(ids) - 1, 2)]

    @staticmethod
    def _check_pairs(pairs: List[Tuple[int, int]], known: set) -> None:
        if not pairs:
            raise ConfigurationError("two_source needs at least one channel pair")
        used: List[int] = []
        for pair in pairs:
            if len(pair) != 2:
                raise ConfigurationError(f"pair {pair} must name exactly two channels")
            first, second = pair
            if first == second:
                raise ConfigurationError(f"channel {first} cannot be paired with itself")
            for channel_id in pair:
                if channel_id not in known:
                    raise ConfigurationError(f"pair {pair} names unknown channel {channel_id}")
            used.extend(pair)
        if len(set(used)) != len(used):
            raise ConfigurationError(f"pairs must be disjoint, got {pairs}")

    def lane_channels(self) -> List[Tuple[ChannelModel, ...]]:
        """Channels of every lane in interleaving order."""
        by_id = {c.channel_id: c for c in self.channels}
        if get_extractor(self.extractor).sources == 2:
            return [(by_id[a], by_id[b]) for a, b in self.pairs()]
        return [(by_id[i],) for i in sorted(by_id)]


@dataclass
class Lane:
    """
    One extractor instance with its private state.

    Attributes:
        index: Position in interleaving order
        channel_ids: Channels feeding the lane
        read: Returns the code blocks for a round, or None when exhausted
        extractor: Extractor applied to each block
        state: Extractor state carried between rounds
    """
    index: int
    channel_ids: Tuple[int, ...]
    read: CodeReader
    extractor: Extractor
    state: Any = None

    @property
    def label(self) -> str:
        return "+".join(f"ch{i}" for i in self.channel_ids)

    def produce(self, round_index: int) -> Optional[Tuple[np.ndarray, int]]:
        """Extract one round; returns (units, samples consumed)."""
        codes = self.read(round_index)
        if codes is None:
            return None
        units, self.state = self.extractor.extract(codes, self.state)
        return units, sum(len(c) for c in codes)


def simulated_reader(channels: Sequence[ChannelModel], adc: AdcConfig, block_samples: int) -> CodeReader:
    """Reader that simulates and digitizes one block per channel per round."""

    def read(round_index: int) -> List[np.ndarray]:
        return [
            digitize_block(sample_block(channel, block_samples, block_index=round_index), adc).codes
            for channel in channels
        ]

    return read


def stream_reader(sources: Sequence[Iterable[np.ndarray]], samples_per_unit: int) -> CodeReader:
    """
    Reader over already-digitized code blocks.

    Blocks of the lane's sources are read together and cut to whole
    extractor units; samples past the last whole unit carry over into the
    next round. The lane ends with its shortest source.
    """
    iterators = [iter(s) for s in sources]
    pending = [np.zeros(0, dtype=np.uint16) for _ in iterators]
    exhausted = False

    def read(round_index: int) -> Optional[List[np.ndarray]]:
        nonlocal exhausted
        while True:
            usable = min(len(p) for p in pending)
            usable -= usable % samples_per_unit
            if usable or exhausted:
                break
            for i, it in enumerate(iterators):
                block = next(it, None)
                if block is None:
                    exhausted = True
                else:
                    pending[i] = np.concatenate([pending[i], np.asarray(block, dtype=np.uint16)])
        if usable == 0:
            return None
        codes = [p[:usable] for p in pending]
        pending[:] = [p[usable:] for p in pending]
        return codes

    return read


def interleave(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """
    Round-robin merge of per-lane unit blocks.

    Unit i of lane 0 is followed by unit i of lane 1 and so on; units past
    the shortest block follow in lane order.
    """
    if len(blocks) == 1:
        return np.asarray(blocks[0], dtype=np.uint64)
    common = min(len(b) for b in blocks)
    head = np.stack([np.asarray(b[:common], dtype=np.uint64) for b in blocks], axis=1).ravel()
    tails = [np.asarray(b[common:], dtype=np.uint64) for b in blocks if len(b) > common]
    return np.concatenate([head, *tails]) if tails else head


class _Failure:
    def __init__(self, error: BaseException):
        self.error = error


_END = object()


def _put(q: queue.Queue, item: Any, stop: threading.Event) -> bool:
    while not stop.is_set():
        try:
            q.put(item, timeout=_POLL)
            return True
        except queue.Full:
            continue
    return False


@dataclass
class MuxStats:
    """Accounting of one multiplexer run."""
    rounds: int = 0
    output_bits: int = 0
    samples_consumed: int = 0
    per_lane_bits: Dict[str, int] = field(default_factory=dict)


class Multiplexer:
    """
    Runs lanes on worker threads and interleaves their output.

    With one worker the lanes run inline on the calling thread; this is the
    reference execution every threaded run must reproduce.
    """

    def __init__(self, lanes: List[Lane], workers: int = 1, queue_depth: int = config.QUEUE_DEPTH):
        """
        Initialize the multiplexer.

        Args:
            lanes: Lanes in interleaving order
            workers: Worker threads, at most one per lane
            queue_depth: Finished blocks buffered per lane
        """
        if not lanes:
            raise ConfigurationError("multiplexer needs at least one lane")
        if queue_depth < 1:
            raise ConfigurationError(f"queue_depth must be >= 1, got {queue_depth}")
        self._lanes = lanes
        self._workers = max(1, min(workers, len(lanes)))
        self._queue_depth = queue_depth

    @property
    def workers(self) -> int:
        return self._workers

    def _serial_rounds(self, limit: Optional[int]) -> Iterator[List[Tuple[Lane, Tuple[np.ndarray, int]]]]:
        active = list(self._lanes)
        round_index = 0
        while active and (limit is None or round_index < limit):
            outputs = []
            for lane in list(active):
                item = lane.produce(round_index)
                if item is None:
                    active.remove(lane)
                    continue
                outputs.append((lane, item))
            if outputs:
                yield outputs
            round_index += 1

    def _threaded_rounds(self, limit: Optional[int]) -> Iterator[List[Tuple[Lane, Tuple[np.ndarray, int]]]]:
        stop = threading.Event()
        queues = [queue.Queue(maxsize=self._queue_depth) for _ in self._lanes]

        def work(assigned: List[Lane]) -> None:
            active = list(assigned)
            round_index = 0
            while active and not stop.is_set() and (limit is None or round_index < limit):
                for lane in list(active):
                    try:
                        item = lane.produce(round_index)
                    except Exception as e:
                        logger.error(f"Lane {lane.label} failed in round {round_index}: {e}")
                        _put(queues[lane.index], _Failure(e), stop)
                        return
                    if item is None:
                        active.remove(lane)
                        item = _END
                    if not _put(queues[lane.index], item, stop):
                        return
                round_index += 1

        k = self._workers
        with ThreadPoolExecutor(max_workers=k, thread_name_prefix="qrng-lane") as pool:
            for w in range(k):
                pool.submit(work, self._lanes[w::k])
            try:
                active = list(self._lanes)
                round_index = 0
                while active and (limit is None or round_index < limit):
                    outputs = []
                    for lane in list(active):
                        item = queues[lane.index].get()
                        if isinstance(item, _Failure):
                            raise item.error
                        if item is _END:
                            active.remove(lane)
                            continue
                        outputs.append((lane, item))
                    if outputs:
                        yield outputs
                    round_index += 1
            finally:
                stop.set()

    def run(
        self,
        writer: BitWriter,
        limit: Optional[int] = None,
        deadline: Optional[float] = None,
    ) -> MuxStats:
        """
        Drive the lanes and write the interleaved units.

        Args:
            writer: Destination of the merged stream
            limit: Maximum rounds, or None to run until the lanes end
            deadline: time.monotonic() value after which no round starts

        Returns:
            Accounting of the consumed rounds
        """
        stats = MuxStats(per_lane_bits={lane.label: 0 for lane in self._lanes})
        rounds = self._serial_rounds(limit) if self._workers == 1 else self._threaded_rounds(limit)
        try:
            for outputs in rounds:
                unit_bits = outputs[0][0].extractor.unit_bits
                merged = interleave([units for _, (units, _) in outputs])
                writer.write_units(merged, unit_bits)
                for lane, (units, samples) in outputs:
                    stats.per_lane_bits[lane.label] += len(units) * unit_bits
                    stats.samples_consumed += samples
                stats.output_bits += len(merged) * unit_bits
                stats.rounds += 1
                logger.debug(f"Round {stats.rounds}: {len(merged)} units from {len(outputs)} lanes")
                if deadline is not None and time.monotonic() >= deadline:
                    break
        finally:
            rounds.close()
        return stats


def resolve_workers(workers: Optional[int], lanes: int) -> int:
    """Worker count for a run: 0 means one per lane, None reads the config."""
    if workers is None:
        workers = config.WORKERS
    if workers < 0:
        raise ConfigurationError(f"workers must be >= 0, got {workers}")
    if workers == 0:
        return lanes
    return min(workers, lanes)


class MuxPipeline:
    """
    Simulated multi-channel generator.

    Every run starts from fresh lane state, so its output is a pure function
    of the configuration and the number of rounds.
    """

    def __init__(self, cfg: PipelineConfig, workers: Optional[int] = None, queue_depth: Optional[int] = None):
        """
        Initialize the pipeline.

        Args:
            cfg: Validated on construction
            workers: Worker threads (0 = one per lane, None = config default)
            queue_depth: Blocks buffered per lane (None = config default)
        """
        self._cfg = cfg
        self._extractor = cfg.validate()
        self._groups = cfg.lane_channels()
        self._workers = resolve_workers(workers, len(self._groups))
        self._queue_depth = queue_depth or config.QUEUE_DEPTH

    @property
    def extractor(self) -> Extractor:
        return self._extractor

    @property
    def lane_count(self) -> int:
        return len(self._groups)

    def rate_model(self) -> RateModel:
        """Sampling-limited rate model of this configuration."""
        return RateModel(self._cfg.adc.sample_rate, self.lane_count, self._extractor.bits_per_sample)

    def _lanes(self) -> List[Lane]:
        lanes = []
        for index, channels in enumerate(self._groups):
            ids = tuple(c.channel_id for c in channels)
            state = self._extractor.new_state(ids, seed=channels[0].seed, key=self._cfg.keys.get(ids[0]))
            reader = simulated_reader(channels, self._cfg.adc, self._cfg.block_samples)
            lanes.append(Lane(index, ids, reader, self._extractor, state))
        return lanes

    def _report(self, stats: MuxStats, wall_time: float) -> ThroughputReport:
        return ThroughputReport(
            extractor=self._extractor.name,
            lanes=self.lane_count,
            workers=self._workers,
            rounds=stats.rounds,
            wall_time=wall_time,
            total_output_bits=stats.output_bits,
            measured_bps=stats.output_bits / wall_time if wall_time > 0 else 0.0,
            theoretical_bps=theoretical_rate(self.rate_model()),
            samples_consumed=stats.samples_consumed,
            per_lane_bits=stats.per_lane_bits,
        )

    def _drive(
        self,
        rounds: Optional[int],
        sink: Optional[BinaryIO],
        duration: Optional[float],
    ) -> Tuple[Optional[Bitstream], ThroughputReport]:
        writer = BitWriter(sink)
        mux = Multiplexer(self._lanes(), self._workers, self._queue_depth)
        logger.info(
            f"Pipeline start: extractor={self._extractor.name}, lanes={self.lane_count}, "
            f"workers={mux.workers}, block_samples={self._cfg.block_samples}"
        )
        start = time.monotonic()
        deadline = start + duration if duration is not None else None
        stats = mux.run(writer, limit=rounds, deadline=deadline)
        stream = writer.close()
        wall_time = time.monotonic() - start
        report = self._report(stats, wall_time)
        logger.info(
            f"Pipeline finished: {report.rounds} rounds, {report.total_output_bits} bits "
            f"in {wall_time:.3f}s ({report.measured_bps:.4g} bps)"
        )
        return stream, report

    def run(self, rounds: int, sink: Optional[BinaryIO] = None) -> Tuple[Optional[Bitstream], ThroughputReport]:
        """
        Run a fixed number of rounds.

        Args:
            rounds: Rounds to run; each channel produces block_samples per round
            sink: Optional byte sink; the bitstream is returned only without one

        Returns:
            Tuple of (interleaved bitstream or None, throughput report)
        """
        if rounds < 0:
            raise InputError(f"rounds must be >= 0, got {rounds}")
        return self._drive(rounds, sink, None)

    def benchmark(self, duration: float, sink: Optional[BinaryIO] = None) -> ThroughputReport:
        """Run at full speed for about duration seconds, discarding output unless a sink is given."""
        if duration < 1.0:
            raise InputError(f"benchmark duration must be >= 1 s, got {duration}")
        discard = sink if sink is not None else _NullSink()
        _, report = self._drive(None, discard, duration)
        return report


class _NullSink:
    def write(self, data: bytes) -> int:
        return len(data)


def run_pipeline(
    cfg: PipelineConfig,
    rounds: int,
    workers: Optional[int] = None,
    sink: Optional[BinaryIO] = None,
) -> Tuple[Optional[Bitstream], ThroughputReport]:
    """Run the pipeline for a number of rounds; see MuxPipeline.run."""
    return MuxPipeline(cfg, workers=workers).run(rounds, sink=sink)


def benchmark_throughput(
    cfg: PipelineConfig,
    duration: float,
    workers: Optional[int] = None,
    sink: Optional[BinaryIO] = None,
) -> ThroughputReport:
    """Measure throughput over a wall-clock duration; see MuxPipeline.benchmark."""
    return MuxPipeline(cfg, workers=workers).benchmark(duration, sink=sink)


def extract_streams(
    code_sources: Sequence[Tuple[int, Iterable[np.ndarray]]],
    extractor_name: str,
    writer: BitWriter,
    seed: Optional[int] = None,
    keys: Optional[Dict[int, bytes]] = None,
    workers: int = 1,
) -> MuxStats:
    """
    Extract and interleave already-digitized channels.

    Args:
        code_sources: (channel id, iterable of uint16 code blocks) in lane order;
            consecutive sources form the pairs of a two_source run
        extractor_name: Extractor name or alias
        writer: Destination of the merged stream
        seed: Master seed for CMAC keys not given explicitly
        keys: Explicit initial CMAC keys by channel id
        workers: Worker threads

    Returns:
        Accounting of the run

    Raises:
        ConfigurationError: If the sources cannot form the extractor's lanes
    """
    extractor = get_extractor(extractor_name)
    keys = keys or {}
    if not code_sources:
        raise ConfigurationError("no input streams given")
    if extractor.sources == 2 and len(code_sources) % 2:
        raise ConfigurationError(
            f"two_source needs inputs in channel pairs, got {len(code_sources)} unpaired stream(s)"
        )

    groups = [code_sources[i:i + extractor.sources] for i in range(0, len(code_sources), extractor.sources)]
    lane_seeds = channel_seeds(seed, len(groups)) if seed is not None else [None] * len(groups)
    lanes = []
    for index, group in enumerate(groups):
        ids = tuple(channel_id for channel_id, _ in group)
        state = extractor.new_state(ids, seed=lane_seeds[index], key=keys.get(ids[0]))
        reader = stream_reader([blocks for _, blocks in group], extractor.samples_per_unit)
        lanes.append(Lane(index, ids, reader, extractor, state))

    stats = Multiplexer(lanes, workers=workers).run(writer)
    logger.info(f"Extracted {stats.output_bits} bits from {stats.samples_consumed} samples with {extractor.name}")
    return stats


def build_config(
    extractor: str = "raw",
    channels: Optional[int] = None,
    seed: Optional[int] = None,
    block_samples: Optional[int] = None,
    full_scale: Optional[float] = None,
) -> PipelineConfig:
    """
    Pipeline configuration from the environment defaults.

    Seven identical channels for raw and cmac, six for two_source. The ADC
    range is optimized for the channel model unless full_scale is given.
    """
    if channels is None:
        channels = 6 if get_extractor(extractor).sources == 2 else config.CHANNELS
    models = default_channels(
        channels,
        config.SEED if seed is None else seed,
        sigma_q2=config.SIGMA_Q2,
        sigma_e2=config.SIGMA_E2,
        lo_power_ref=config.LO_POWER_REF,
    )
    if full_scale is None:
        adc = AdcConfig.for_model(models[0], sample_rate=config.SAMPLE_RATE)
    else:
        adc = AdcConfig(full_scale=full_scale, sample_rate=config.SAMPLE_RATE)
    return PipelineConfig(
        channels=models,
        adc=adc,
        extractor=extractor,
        block_samples=block_samples or config.BLOCK_SAMPLES,
    )
