"""
Tests for the command-line interface.

Commands run in-process through run(); exit codes are 0 (pass),
1 (fail) and 2 (error).
"""

import json

import numpy as np
import pytest

from app.cli.commands import EXIT_ERROR, EXIT_FAIL, EXIT_PASS, run
from app.core.config import config
from app.extractors.bits import pack_bits
from app.utils.formats import manifest_path, read_bitstream, read_codes, read_manifest, sha256_file, write_bitstream


@pytest.fixture
def simulated(tmp_path, config_file):
    """Seven channels of 30000 simulated samples."""
    out = tmp_path / "sim"
    assert run(["simulate", "--config", str(config_file), "--samples", "30000", "--out", str(out)]) == EXIT_PASS
    return out


def write_codes(path, codes):
    path.write_bytes(np.asarray(codes, dtype="<u2").tobytes())
    return path


class TestSimulate:
    """Tests for the simulate command."""

    def test_empty_run(self, tmp_path, config_file):
        out = tmp_path / "empty"
        assert run(["simulate", "--config", str(config_file), "--samples", "0", "--out", str(out)]) == EXIT_PASS
        for i in range(1, 8):
            assert (out / f"ch{i}.u16").read_bytes() == b""
            assert (out / f"ch{i}.f64").read_bytes() == b""
        manifest = read_manifest(out / "manifest.json")
        assert manifest.command == "simulate"
        assert len(manifest.seeds) == 7
        assert len(manifest.digests) == 14

    def test_files(self, simulated):
        codes = read_codes(simulated / "ch1.u16")
        assert codes.size == 30000
        assert int(codes.max()) <= 4095
        assert (simulated / "ch7.f64").stat().st_size == 30000 * 8

    def test_rerun_is_identical(self, simulated, tmp_path, config_file):
        again = tmp_path / "again"
        run(["simulate", "--config", str(config_file), "--samples", "30000", "--out", str(again)])
        for i in range(1, 8):
            assert sha256_file(again / f"ch{i}.u16") == sha256_file(simulated / f"ch{i}.u16")

    def test_negative_samples(self, tmp_path):
        assert run(["simulate", "--samples", "-1", "--out", str(tmp_path / "x")]) == EXIT_ERROR


class TestExtract:
    """Tests for the extract command."""

    def test_raw(self, tmp_path, uniform_codes):
        source = write_codes(tmp_path / "ch1.u16", uniform_codes)
        out = tmp_path / "raw.bin"
        assert run(["extract", str(source), "--extractor", "raw", "--out", str(out)]) == EXIT_PASS
        stream = read_bitstream(out)
        assert stream.bit_count == 8_000_000
        assert stream.data == (uniform_codes & 0xFF).astype(np.uint8).tobytes()

    def test_cmac(self, tmp_path, uniform_codes):
        source = write_codes(tmp_path / "ch1.u16", uniform_codes)
        out = tmp_path / "cmac.bin"
        assert run(["extract", str(source), "--extractor", "cmac", "--seed", "1", "--out", str(out)]) == EXIT_PASS
        assert read_bitstream(out).bit_count == 62_500 * 63
        manifest = read_manifest(manifest_path(out))
        assert manifest.extractor == "cmac"
        assert manifest.counts["output_bits"] == 62_500 * 63

    def test_explicit_key_recorded(self, tmp_path):
        source = write_codes(tmp_path / "ch1.u16", np.arange(64))
        out = tmp_path / "cmac.bin"
        key = "2b7e151628aed2a6abf7158809cf4f3c"
        assert run(["extract", str(source), "--extractor", "aes", "--key", key, "--out", str(out)]) == EXIT_PASS
        assert read_manifest(manifest_path(out)).initial_keys == {"1": key}
        assert run(["replay", str(manifest_path(out))]) == EXIT_PASS

    def test_explicit_key_redacted(self, tmp_path):
        source = write_codes(tmp_path / "ch1.u16", np.arange(64))
        out = tmp_path / "cmac.bin"
        key = "2b7e151628aed2a6abf7158809cf4f3c"
        args = ["extract", str(source), "--extractor", "aes", "--key", key, "--redact-keys", "--out", str(out)]
        assert run(args) == EXIT_PASS
        assert read_manifest(manifest_path(out)).initial_keys == {"1": "redacted"}
        assert key not in manifest_path(out).read_text()

    def test_block_size_does_not_drop_samples(self, tmp_path, monkeypatch):
        source = write_codes(tmp_path / "ch1.u16", np.random.default_rng(4).integers(0, 4096, size=1000))
        digests = []
        for block in (100, 4608):
            monkeypatch.setattr(config, "BLOCK_SAMPLES", block)
            out = tmp_path / f"b{block}.bin"
            assert run(["extract", str(source), "--extractor", "cmac", "--seed", "1", "--out", str(out)]) == EXIT_PASS
            assert read_bitstream(out).bit_count == 62 * 63
            digests.append(sha256_file(out))
        assert digests[0] == digests[1]

    def test_two_source(self, tmp_path):
        rng = np.random.default_rng(0)
        x = write_codes(tmp_path / "ch1.u16", rng.integers(0, 4096, size=300))
        y = write_codes(tmp_path / "ch2.u16", rng.integers(0, 4096, size=300))
        out = tmp_path / "ts.txt"
        args = ["extract", str(x), str(y), "--extractor", "two-source", "--format", "ascii", "--out", str(out)]
        assert run(args) == EXIT_PASS
        assert len("".join(out.read_text().split())) == 100

    def test_two_source_needs_pairs(self, tmp_path):
        source = write_codes(tmp_path / "ch1.u16", np.arange(30))
        out = tmp_path / "ts.bin"
        assert run(["extract", str(source), "--extractor", "two_source", "--out", str(out)]) == EXIT_ERROR
        assert not out.exists()

    def test_unknown_extractor(self, tmp_path):
        source = write_codes(tmp_path / "ch1.u16", np.arange(30))
        assert run(["extract", str(source), "--extractor", "xor", "--out", str(tmp_path / "o.bin")]) == EXIT_ERROR

    def test_wide_codes_rejected(self, tmp_path):
        source = write_codes(tmp_path / "ch1.u16", [1, 2, 5000])
        assert run(["extract", str(source), "--extractor", "raw", "--out", str(tmp_path / "o.bin")]) == EXIT_ERROR

    def test_missing_input(self, tmp_path):
        args = ["extract", str(tmp_path / "absent.u16"), "--extractor", "raw", "--out", str(tmp_path / "o.bin")]
        assert run(args) == EXIT_ERROR


class TestGenerate:
    """Tests for the generate command."""

    def test_bitstream_and_manifest(self, tmp_path, config_file):
        out = tmp_path / "bits.bin"
        args = ["generate", "--config", str(config_file), "--extractor", "cmac",
                "--samples", "960", "--out", str(out)]
        assert run(args) == EXIT_PASS
        # 2 rounds x 7 channels x 480/16 units x 63 bits
        assert read_bitstream(out).bit_count == 2 * 7 * 30 * 63
        manifest = read_manifest(manifest_path(out))
        assert manifest.initial_keys == {str(i): "derived-from-seed" for i in range(1, 8)}
        assert manifest.counts["samples_consumed"] == 2 * 7 * 480

    def test_ascii_to_stdout(self, config_file, capsys):
        args = ["generate", "--config", str(config_file), "--samples", "8", "--format", "ascii", "--out", "-"]
        assert run(args) == EXIT_PASS
        text = "".join(capsys.readouterr().out.split())
        # 480 samples per round, 7 channels, 8 bits each
        assert len(text) == 480 * 7 * 8
        assert set(text) <= {"0", "1"}

    def test_workers_do_not_change_output(self, tmp_path, config_file):
        digests = []
        for workers in ("1", "3"):
            out = tmp_path / f"w{workers}.bin"
            run(["generate", "--config", str(config_file), "--samples", "480",
                 "--workers", workers, "--out", str(out)])
            digests.append(sha256_file(out))
        assert digests[0] == digests[1]


class TestAssess:
    """Tests for the assess command."""

    def test_constant_bytes_fail(self, tmp_path):
        path = tmp_path / "zeros.raw"
        path.write_bytes(bytes(100_000))
        assert run(["assess", str(path), "--shuffles", "100"]) == EXIT_FAIL

    def test_json_report(self, tmp_path, uniform_bytes, config_file, capsys):
        path = tmp_path / "u.raw"
        path.write_bytes(uniform_bytes[:100_000].tobytes())
        out = tmp_path / "report.json"
        run(["assess", str(path), "--shuffles", "100", "--config", str(config_file), "--out", str(out)])
        report = json.loads(out.read_text())
        assert report["alphabet_size"] == 256
        assert report["h_min_conditional"] > 9
        assert "EntropyReport" in capsys.readouterr().out

    def test_too_short(self, tmp_path):
        path = tmp_path / "short.raw"
        path.write_bytes(bytes(1000))
        assert run(["assess", str(path)]) == EXIT_ERROR


class TestStatisticalTests:
    """Tests for the test command."""

    def test_expansion_of_e_passes(self, tmp_path, e_bits):
        path = tmp_path / "e.bin"
        write_bitstream(path, pack_bits(e_bits))
        out = tmp_path / "report.kv"
        assert run(["test", str(path), "--out", str(out)]) == EXIT_PASS
        text = out.read_text()
        assert "tests.monobit.p_value=" in text
        assert "alpha=0.01" in text

    def test_constant_bits_fail(self, tmp_path):
        path = tmp_path / "zeros.raw"
        path.write_bytes(bytes(125_000))
        assert run(["test", str(path)]) == EXIT_FAIL

    def test_too_short(self, tmp_path):
        path = tmp_path / "short.raw"
        path.write_bytes(bytes(1000))
        assert run(["test", str(path)]) == EXIT_ERROR


class TestCorrelate:
    """Tests for the correlate command."""

    def test_channels(self, simulated, tmp_path, capsys):
        inputs = [str(simulated / f"ch{i}.u16") for i in (1, 2, 3)]
        out = tmp_path / "columns"
        assert run(["correlate", *inputs, "--max-lag", "5", "--out", str(out)]) == EXIT_PASS
        assert sorted(p.name for p in out.iterdir()) == ["1-2.tsv", "1-3.tsv", "2-3.tsv"]
        assert "verdict\tpass" in capsys.readouterr().out

    def test_strength(self, simulated, capsys):
        inputs = [str(simulated / "ch1.u16"), str(simulated / "ch2.u16")]
        assert run(["correlate", *inputs, "--strength"]) == EXIT_PASS
        assert "invocations\t10000" in capsys.readouterr().out

    def test_single_input(self, simulated):
        assert run(["correlate", str(simulated / "ch1.u16")]) == EXIT_ERROR


class TestRates:
    """Tests for the rates command."""

    def test_table(self, capsys):
        assert run(["rates"]) == EXIT_PASS
        out = capsys.readouterr().out
        assert "3.08" in out
        assert "1.378125" in out
        assert "0.026" in out

    def test_single_configuration(self, capsys):
        assert run(["rates", "--extractor", "raw", "--sample-rate", "50e6", "--lanes", "2"]) == EXIT_PASS
        assert "rate_bps\t800000000" in capsys.readouterr().out

    def test_extractor_geometry(self, capsys):
        assert run(["rates", "--extractor", "aes"]) == EXIT_PASS
        out = capsys.readouterr().out
        assert "extractor\tcmac" in out
        assert "samples_per_unit\t16" in out
        assert "bits_per_sample\t63/16" in out
        assert "rate_bps\t1378125000" in out


class TestBench:
    """Tests for the bench command."""

    def test_short_duration(self, config_file):
        assert run(["bench", "--config", str(config_file), "--duration", "0.5"]) == EXIT_ERROR

    def test_report(self, tmp_path, config_file):
        out = tmp_path / "bench.json"
        assert run(["bench", "--config", str(config_file), "--duration", "1", "--out", str(out)]) == EXIT_PASS
        report = json.loads(out.read_text())
        assert report["total_output_bits"] == 8 * report["samples_consumed"]


class TestReplay:
    """Tests for manifest replay."""

    def test_simulate(self, simulated):
        assert run(["replay", str(simulated / "manifest.json")]) == EXIT_PASS

    def test_generate(self, tmp_path, config_file):
        out = tmp_path / "bits.bin"
        run(["generate", "--config", str(config_file), "--extractor", "cmac", "--samples", "480", "--out", str(out)])
        assert run(["replay", str(manifest_path(out))]) == EXIT_PASS

    def test_detects_changed_output(self, tmp_path, config_file):
        out = tmp_path / "bits.bin"
        run(["generate", "--config", str(config_file), "--samples", "480", "--out", str(out)])
        path = manifest_path(out)
        manifest = read_manifest(path)
        manifest.digests[str(out)] = "0" * 64
        path.write_text(manifest.model_dump_json())
        assert run(["replay", str(path)]) == EXIT_FAIL

    def test_recorded_settings_are_replayed(self, tmp_path, monkeypatch):
        out = tmp_path / "bits.bin"
        monkeypatch.setattr(config, "BLOCK_SAMPLES", 96)
        args = ["generate", "--extractor", "cmac", "--channels", "2", "--samples", "96", "--out", str(out)]
        assert run(args) == EXIT_PASS
        assert read_manifest(manifest_path(out)).environment["BLOCK_SAMPLES"] == 96
        monkeypatch.setattr(config, "BLOCK_SAMPLES", 4608)
        assert run(["replay", str(manifest_path(out))]) == EXIT_PASS
        assert config.BLOCK_SAMPLES == 4608

    def test_unknown_setting(self, simulated):
        path = simulated / "manifest.json"
        manifest = read_manifest(path)
        manifest.environment["LOG_LEVEL"] = "DEBUG"
        path.write_text(manifest.model_dump_json())
        assert run(["replay", str(path)]) == EXIT_ERROR

    def test_invalid_manifest(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("not json")
        assert run(["replay", str(path)]) == EXIT_ERROR


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
