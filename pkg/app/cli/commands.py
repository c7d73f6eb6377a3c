"""
Command-line commands.

Each ``cmd_*`` takes parsed arguments and returns an exit code:
0 when the verdict passes, 1 when it fails, 2 on any error. Commands that
write files also write a manifest from which ``replay`` re-runs them.
"""

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.analysis.correlation import (
    cross_correlation_matrix,
    extractor_strength,
    independence_bound,
    streams_independent,
)
from app.analysis.entropy import ConditionalModel, assess_stream
from app.analysis.sts import run_sts_subset
from app.core.channel_config import ChannelConfig, load_channel_config, snapshot
from app.core.config import config
from app.core.errors import ConfigurationError, InputError, QrngError
from app.core.pipeline import PipelineConfig, build_config, benchmark_throughput, extract_streams, run_pipeline
from app.core.rates import REFERENCE_RATE_MODELS, RateModel, exact_rate, reference_rows
from app.extractors.bits import BitWriter, units_to_bits
from app.extractors.factory import ExtractorFactory, get_extractor
from app.extractors.two_source import pack_codes, parity
from app.models.schemas import ReportModel, RunManifest
from app.source.adc import digitize_block
from app.source.model import sample_block
from app.utils.formats import (
    AsciiBitWriter,
    BitstreamFileWriter,
    iter_codes,
    load_bits,
    manifest_path,
    read_codes,
    read_manifest,
    sha256_file,
    write_array,
    write_manifest,
)


logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_ERROR = 2

# Bias and per-bit correlation limits for the two-source strength check
STRENGTH_BIAS_SIGMAS = 3.0
STRENGTH_R_SIGMAS = 5.0


class _BitOutput:
    """Byte sink for a bitstream destination: file (bin/ascii) or '-' for stdout."""

    def __init__(self, out: str, fmt: str):
        self.path = None if out == "-" else Path(out)
        self._text = None
        if fmt == "bin":
            self._sink = sys.stdout.buffer if self.path is None else BitstreamFileWriter(self.path)
        elif fmt == "ascii":
            self._text = sys.stdout if self.path is None else open(self.path, "w", encoding="ascii", newline="\n")
            self._sink = AsciiBitWriter(self._text)
        else:
            raise InputError(f"unknown output format '{fmt}'")

    def write(self, data: bytes) -> int:
        return self._sink.write(data)

    def finish(self, bit_count: int) -> None:
        if isinstance(self._sink, (BitstreamFileWriter, AsciiBitWriter)):
            self._sink.close(bit_count)
        if self._text is not None and self._text is not sys.stdout:
            self._text.close()
        elif self.path is None:
            (sys.stdout.buffer if self._text is None else sys.stdout).flush()

    def abort(self) -> None:
        if isinstance(self._sink, BitstreamFileWriter):
            self._sink.abort()
        if self._text is not None and self._text is not sys.stdout:
            self._text.close()
            self.path.unlink(missing_ok=True)


def _replay_argv(args: argparse.Namespace) -> List[str]:
    argv = list(args.argv)
    if getattr(args, "redact_keys", False) and "--key" in argv[:-1]:
        argv[argv.index("--key") + 1] = "redacted"
    return argv


def _manifest(args: argparse.Namespace, **fields) -> RunManifest:
    return RunManifest(
        format_version=config.FORMAT_VERSION,
        service=config.SERVICE_NAME,
        version=config.VERSION,
        command=args.command,
        argv=_replay_argv(args),
        environment=config.output_settings(),
        **fields,
    )


def _digests(paths: Sequence[Path]) -> Dict[str, str]:
    return {str(p): sha256_file(p) for p in paths}


def _write_report(report: ReportModel, out: Optional[str]) -> None:
    """Structured text on stdout; key-value (or JSON for .json) to --out."""
    print(report.to_text(), end="")
    if out:
        path = Path(out)
        text = report.model_dump_json(indent=2) + "\n" if path.suffix == ".json" else report.to_kv()
        path.write_text(text, encoding="utf-8")
        logger.info(f"Wrote report {path}")


def _load_config(args: argparse.Namespace) -> Optional[ChannelConfig]:
    return load_channel_config(args.config) if getattr(args, "config", None) else None


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    channel_config = _load_config(args)
    if channel_config is not None:
        if args.channels is not None:
            logger.warning("--channels is ignored when --config is given")
        return channel_config.to_pipeline_config(extractor=args.extractor)
    return build_config(extractor=args.extractor or "raw", channels=args.channels, seed=args.seed)


def _config_snapshot(cfg: PipelineConfig) -> Dict[str, object]:
    return {
        "extractor": get_extractor(cfg.extractor).name,
        "block_samples": cfg.block_samples,
        "full_scale": cfg.adc.full_scale,
        "sample_rate": cfg.adc.sample_rate,
        "pairing": [list(p) for p in cfg.pairs()] if get_extractor(cfg.extractor).sources == 2 else [],
        "channels": {
            str(c.channel_id): {"sigma_q2": c.sigma_q2, "sigma_e2": c.sigma_e2, "lo_power_ref": c.lo_power_ref}
            for c in cfg.channels
        },
    }


def _key_entry(key: bytes, redact: bool) -> str:
    return "redacted" if redact else key.hex()


def _initial_keys(cfg: PipelineConfig, redact: bool) -> Dict[str, str]:
    if get_extractor(cfg.extractor).name != "cmac":
        return {}
    # Derived keys follow from the recorded seeds
    return {
        str(c.channel_id): _key_entry(cfg.keys[c.channel_id], redact) if c.channel_id in cfg.keys
        else "derived-from-seed"
        for c in cfg.channels
    }


def cmd_simulate(args: argparse.Namespace) -> int:
    """Write per-channel analog (.f64) and code (.u16) files."""
    if args.samples < 0:
        raise InputError(f"--samples must be >= 0, got {args.samples}")
    channel_config = _load_config(args)
    if channel_config is not None:
        channels, adc = channel_config.channels, channel_config.adc()
        block = channel_config.settings.block_samples
    else:
        cfg = build_config(extractor="raw", channels=args.channels, seed=args.seed)
        channels, adc, block = cfg.channels, cfg.adc, cfg.block_samples

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rounds = math.ceil(args.samples / block)
    written: List[Path] = []
    for channel in channels:
        analog_path = out_dir / f"ch{channel.channel_id}.f64"
        code_path = out_dir / f"ch{channel.channel_id}.u16"
        with open(analog_path, "wb") as analog, open(code_path, "wb") as codes:
            for round_index in range(rounds):
                n = min(block, args.samples - round_index * block)
                samples = sample_block(channel, n, block_index=round_index)
                write_array(analog, samples.samples, "<f8")
                write_array(codes, digitize_block(samples, adc).codes, "<u2")
        written.extend([analog_path, code_path])
        logger.info(f"Simulated {args.samples} samples for channel {channel.channel_id}")

    manifest = _manifest(
        args,
        seeds={str(c.channel_id): str(c.seed) for c in channels},
        counts={"channels": len(channels), "samples_per_channel": args.samples},
        config={
            "full_scale": adc.full_scale,
            "sample_rate": adc.sample_rate,
            "block_samples": block,
            **({"file": snapshot(channel_config)} if channel_config is not None else {}),
        },
        digests=_digests(written),
    )
    write_manifest(manifest_path(out_dir), manifest)
    print(f"wrote {len(channels)} channels x {args.samples} samples to {out_dir}")
    return EXIT_PASS


def cmd_generate(args: argparse.Namespace) -> int:
    """Run the multiplexed pipeline and write the interleaved stream."""
    if args.samples < 0:
        raise InputError(f"--samples must be >= 0, got {args.samples}")
    cfg = _pipeline_config(args)
    rounds = math.ceil(args.samples / cfg.block_samples)
    output = _BitOutput(args.out, args.format)
    try:
        stream, report = run_pipeline(cfg, rounds, workers=args.workers, sink=output)
    except Exception:
        output.abort()
        raise
    output.finish(report.total_output_bits)
    logger.info(report.to_text().rstrip())

    if output.path is not None:
        manifest = _manifest(
            args,
            extractor=report.extractor,
            seeds={str(c.channel_id): str(c.seed) for c in cfg.channels},
            initial_keys=_initial_keys(cfg, args.redact_keys),
            counts={
                "rounds": report.rounds,
                "samples_consumed": report.samples_consumed,
                "output_bits": report.total_output_bits,
            },
            config=_config_snapshot(cfg),
            digests=_digests([output.path]),
        )
        write_manifest(manifest_path(output.path), manifest)
    return EXIT_PASS


def cmd_extract(args: argparse.Namespace) -> int:
    """Apply an extractor to code files, streaming block by block."""
    extractor = get_extractor(args.extractor or "raw")
    keys: Dict[int, bytes] = {}
    if args.key:
        try:
            key = bytes.fromhex(args.key)
        except ValueError as e:
            raise ConfigurationError(f"--key must be hex: {e}") from e
        keys = {index + 1: key for index in range(len(args.inputs))}
    seed = config.SEED if args.seed is None else args.seed

    sources = [(index + 1, iter_codes(path, config.BLOCK_SAMPLES)) for index, path in enumerate(args.inputs)]
    output = _BitOutput(args.out, args.format)
    writer = BitWriter(output)
    try:
        stats = extract_streams(sources, extractor.name, writer, seed=seed, keys=keys, workers=args.workers or 1)
        writer.close()
    except Exception:
        output.abort()
        raise
    output.finish(writer.bit_count)

    if output.path is not None:
        manifest = _manifest(
            args,
            extractor=extractor.name,
            seeds={"master": str(seed)} if extractor.name == "cmac" and not keys else {},
            initial_keys={str(i): _key_entry(k, args.redact_keys) for i, k in keys.items()},
            counts={"input_samples": stats.samples_consumed, "output_bits": stats.output_bits},
            digests={
                **_digests([Path(p) for p in args.inputs]),
                **_digests([output.path]),
            },
        )
        write_manifest(manifest_path(output.path), manifest)
    print(f"{extractor.name}: {stats.samples_consumed} samples -> {stats.output_bits} bits")
    return EXIT_PASS


def cmd_assess(args: argparse.Namespace) -> int:
    """Min-entropy assessment: MCV estimate plus IID battery."""
    stream = load_bits(args.input)
    if args.symbols == "bit":
        symbols, alphabet = stream.bits(), 2
    else:
        symbols, alphabet = stream.byte_symbols(), 256

    conditional = None
    channel_config = _load_config(args)
    if channel_config is not None:
        channel = channel_config.channels[0]
        conditional = ConditionalModel(channel.sigma_q2, channel.sigma_e2, channel_config.adc())

    report = assess_stream(
        symbols,
        alphabet_size=alphabet,
        num_shuffles=args.shuffles,
        seed=config.SEED if args.seed is None else args.seed,
        conditional=conditional,
        workers=args.workers or 1,
    )
    _write_report(report, args.out)
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_test(args: argparse.Namespace) -> int:
    """Statistical test subset over a bitstream."""
    stream = load_bits(args.input)
    report = run_sts_subset(stream.bits(), alpha=args.alpha)
    _write_report(report, args.out)
    return EXIT_PASS if report.passed else EXIT_FAIL


def _load_values(path: str) -> np.ndarray:
    if Path(path).suffix == ".u16":
        return read_codes(path)
    return load_bits(path).byte_symbols()


def _write_columns(out_dir: Path, name: str, columns: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.tsv").write_text(columns, encoding="utf-8")


def _strength(args: argparse.Namespace) -> int:
    if len(args.inputs) != 2:
        raise ConfigurationError("--strength needs exactly two code files, one per channel")
    first, second = (read_codes(p) for p in args.inputs)
    n = (min(first.size, second.size) // 3) * 3
    x = pack_codes(first[:n])
    y = pack_codes(second[:n])
    outputs = parity(x & y)
    invocations = int(outputs.size)

    reports = [
        extractor_strength(units_to_bits(x, 36), outputs, label="x"),
        extractor_strength(units_to_bits(y, 36), outputs, label="y"),
    ]
    bias = abs(float(outputs.mean()) - 0.5)
    bias_limit = STRENGTH_BIAS_SIGMAS / math.sqrt(invocations)
    passed = bias < bias_limit and all(r.max_abs < STRENGTH_R_SIGMAS * r.reference for r in reports)

    print(f"invocations\t{invocations}")
    print(f"bias\t{bias:.3e}\t(limit {bias_limit:.3e})")
    for report in reports:
        print(f"{report.pair}\tmax|r|={report.max_abs:.3e}\t1/sqrt(n)={report.reference:.3e}")
        if args.out:
            _write_columns(Path(args.out), report.pair.replace("->", "_to_"), report.to_columns())
    print(f"verdict\t{'pass' if passed else 'fail'}")
    return EXIT_PASS if passed else EXIT_FAIL


def cmd_correlate(args: argparse.Namespace) -> int:
    """Pairwise cross-correlation of channel streams, or two-source strength."""
    if args.strength:
        return _strength(args)
    if len(args.inputs) < 2:
        raise ConfigurationError("correlate needs at least two input streams")
    streams = {index + 1: _load_values(path) for index, path in enumerate(args.inputs)}
    length = min(s.size for s in streams.values())
    if any(s.size != length for s in streams.values()):
        logger.warning(f"Streams differ in length; truncating all to {length}")
        streams = {k: s[:length] for k, s in streams.items()}

    reports = cross_correlation_matrix(streams, max_lag=args.max_lag)
    bound = independence_bound(length)
    for key, report in reports.items():
        print(
            f"{key}\tr(0)={report.value_at(0):+.3e}\tmax={report.max_positive:+.3e}@{report.max_positive_at}"
            f"\tmin={report.max_negative:+.3e}@{report.max_negative_at}"
        )
        if args.out:
            _write_columns(Path(args.out), key, report.to_columns())
    passed = streams_independent(list(reports.values()))
    print(f"reference 1/sqrt(n)\t{1.0 / math.sqrt(length):.3e}")
    print(f"bound\t{bound:.3e}")
    print(f"verdict\t{'pass' if passed else 'fail'}")
    return EXIT_PASS if passed else EXIT_FAIL


def cmd_bench(args: argparse.Namespace) -> int:
    """Measure pipeline throughput against the sampling-limited rate."""
    cfg = _pipeline_config(args)
    report = benchmark_throughput(cfg, args.duration, workers=args.workers)
    _write_report(report, args.out)
    return EXIT_PASS


def cmd_rates(args: argparse.Namespace) -> int:
    """Rate accounting: the reference table, or one configuration."""
    if args.extractor is None:
        print(f"{'extractor':<12}{'MSPS':>8}{'N':>4}{'bits/sample':>14}{'Gbps':>14}")
        for row in reference_rows():
            print(
                f"{row['extractor']:<12}{row['sampling_rate_msps']:>8g}{row['extractors']:>4}"
                f"{row['bits_per_sample']:>14}{row['rate_gbps']:>14.9g}"
            )
        return EXIT_PASS

    extractor = get_extractor(args.extractor)
    reference = REFERENCE_RATE_MODELS[extractor.name]
    model = RateModel(
        args.sample_rate if args.sample_rate is not None else reference.sampling_rate,
        args.lanes if args.lanes is not None else reference.n_extractors,
        extractor.bits_per_sample,
    )
    rate = exact_rate(model)
    for key, value in extractor.get_status().items():
        print(f"{key}\t{value}")
    print(f"sampling_rate\t{float(model.sampling_rate):g}")
    print(f"extractors\t{model.n_extractors}")
    print(f"rate_bps\t{float(rate):.10g}")
    return EXIT_PASS


def cmd_replay(args: argparse.Namespace) -> int:
    """Re-run a manifest's command under its recorded settings and compare output digests."""
    manifest = read_manifest(args.manifest)
    if manifest.command == "replay" or not manifest.argv:
        raise InputError(f"{args.manifest}: manifest has no replayable command")
    if manifest.format_version != config.FORMAT_VERSION:
        raise InputError(f"{args.manifest}: unsupported format version {manifest.format_version}")

    unknown = sorted(set(manifest.environment) - set(config.OUTPUT_SETTINGS))
    if unknown:
        raise InputError(f"{args.manifest}: unknown settings {', '.join(unknown)}")

    with config.overridden(manifest.environment):
        code = run(manifest.argv)
    if code == EXIT_ERROR:
        return EXIT_ERROR
    mismatched = [
        path for path, digest in manifest.digests.items()
        if not Path(path).exists() or sha256_file(path) != digest
    ]
    for path in mismatched:
        print(f"mismatch\t{path}")
    print(f"replayed {len(manifest.digests)} file(s), {len(mismatched)} mismatch(es)")
    return EXIT_FAIL if mismatched else EXIT_PASS


def _add_source_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Channel configuration file")
    parser.add_argument("--channels", type=int, help="Channel count without --config")
    parser.add_argument("--seed", type=int, help="Master seed")


def _add_extractor_flag(parser: argparse.ArgumentParser, required: bool = False) -> None:
    names = sorted(ExtractorFactory.get_all())
    parser.add_argument(
        "--extractor",
        required=required,
        help=f"Extractor: {', '.join(names)} (aliases: two-source, aes)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qrng_mux",
        description="Multiplexed vacuum-noise QRNG toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Simulate per-channel analog and code files")
    _add_source_flags(p)
    p.add_argument("--samples", type=int, required=True, help="Samples per channel")
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("generate", help="Run the multiplexed pipeline")
    _add_source_flags(p)
    _add_extractor_flag(p)
    p.add_argument("--samples", type=int, required=True, help="Samples per channel (rounded up to whole blocks)")
    p.add_argument("--out", required=True, help="Output file, or - for stdout")
    p.add_argument("--format", choices=("bin", "ascii"), default="bin")
    p.add_argument("--redact-keys", action="store_true", help="Leave initial CMAC keys out of the manifest")
    p.add_argument("--workers", type=int, help="Worker threads (0 = one per lane)")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("extract", help="Apply an extractor to code files")
    p.add_argument("inputs", nargs="+", help="Code files (.u16), pairs in order for two-source")
    _add_extractor_flag(p, required=True)
    p.add_argument("--seed", type=int, help="Seed for CMAC keys")
    p.add_argument("--key", help="Initial CMAC key for every lane (32 hex digits)")
    p.add_argument("--out", required=True, help="Output file, or - for stdout")
    p.add_argument("--format", choices=("bin", "ascii"), default="bin")
    p.add_argument("--redact-keys", action="store_true", help="Leave the key out of the manifest (disables replay)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_extract)

    p = sub.add_parser("assess", help="Min-entropy assessment")
    p.add_argument("input", help="Bitstream file (binary, ASCII or raw bytes)")
    p.add_argument("--symbols", choices=("byte", "bit"), default="byte")
    p.add_argument("--shuffles", type=int, default=config.IID_SHUFFLES)
    p.add_argument("--seed", type=int, help="Shuffle seed")
    p.add_argument("--config", help="Channel configuration for the analytic worst case")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="Report file (.json for JSON, key-value otherwise)")
    p.set_defaults(handler=cmd_assess)

    p = sub.add_parser("test", help="Statistical test subset")
    p.add_argument("input", help="Bitstream file (binary, ASCII or raw bytes)")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--out", help="Report file (.json for JSON, key-value otherwise)")
    p.set_defaults(handler=cmd_test)

    p = sub.add_parser("correlate", help="Cross-correlation or extractor strength")
    p.add_argument("inputs", nargs="+", help="Code files (.u16) or bitstream files")
    p.add_argument("--max-lag", type=int, default=config.MAX_LAG)
    p.add_argument("--strength", action="store_true", help="Two-source input/output correlation")
    p.add_argument("--out", help="Directory for plot-ready columns")
    p.set_defaults(handler=cmd_correlate)

    p = sub.add_parser("bench", help="Throughput benchmark")
    _add_source_flags(p)
    _add_extractor_flag(p)
    p.add_argument("--duration", type=float, default=10.0, help="Seconds (>= 1)")
    p.add_argument("--workers", type=int, help="Worker threads (0 = one per lane)")
    p.add_argument("--out", help="Report file")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("rates", help="Generation rate accounting")
    _add_extractor_flag(p)
    p.add_argument("--sample-rate", type=float, help="Samples per second")
    p.add_argument("--lanes", type=int, help="Extractors in parallel")
    p.set_defaults(handler=cmd_rates)

    p = sub.add_parser("replay", help="Re-run a manifest and compare digests")
    p.add_argument("manifest", help="Manifest file")
    p.set_defaults(handler=cmd_replay)

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments and run one command.

    Returns:
        Exit code
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    try:
        return args.handler(args)
    except (QrngError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
