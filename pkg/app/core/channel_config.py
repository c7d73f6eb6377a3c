"""
Channel configuration files.

Flat ``key = value`` text with ``#`` comments, a ``[global]`` section and
one ``[channel N]`` section per channel::

    [global]
    seed = 20190101
    extractor = cmac
    sample_rate = 55e6

    [channel 1]
    sigma_q2 = 10.0
    sigma_e2 = 1.0

Channels without an explicit seed get one derived from the global seed.
Without any channel section, ``channels`` identical channels are built from
the global values.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.core.config import config
from app.core.errors import ConfigurationError, QrngError
from app.core.pipeline import PipelineConfig
from app.source.adc import AdcConfig
from app.source.model import ChannelModel, channel_seeds


logger = logging.getLogger(__name__)


def _parse_pairs(value: str) -> List[Tuple[int, int]]:
    pairs = []
    for item in value.split(","):
        item = item.strip()
        if not item:
            continue
        left, sep, right = item.partition("-")
        if not sep:
            raise ValueError(f"pair '{item}' must look like 1-2")
        pairs.append((int(left), int(right)))
    return pairs


class GlobalSection(BaseModel):
    """Settings shared by every channel."""
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default_factory=lambda: config.SEED, ge=0, description="Master seed")
    channels: int = Field(default_factory=lambda: config.CHANNELS, ge=1, description="Channel count when no channel sections exist")
    sigma_q2: float = Field(default_factory=lambda: config.SIGMA_Q2, ge=0.0, description="Quantum variance (V^2)")
    sigma_e2: float = Field(default_factory=lambda: config.SIGMA_E2, ge=0.0, description="Classical variance (V^2)")
    lo_power_ref: float = Field(default_factory=lambda: config.LO_POWER_REF, gt=0.0, description="Reference LO power (mW)")
    sample_rate: float = Field(default_factory=lambda: config.SAMPLE_RATE, gt=0.0, description="ADC samples per second")
    full_scale: Optional[float] = Field(None, gt=0.0, description="ADC range R; optimized when absent")
    extractor: str = Field("raw", description="raw, cmac or two_source")
    block_samples: int = Field(default_factory=lambda: config.BLOCK_SAMPLES, ge=1, description="Samples per channel per round")
    pairs: Optional[List[Tuple[int, int]]] = Field(None, description="two_source channel pairs, e.g. 1-2, 3-4")

    @field_validator("pairs", mode="before")
    @classmethod
    def _split_pairs(cls, value):
        if isinstance(value, str):
            return _parse_pairs(value)
        return value


class ChannelSection(BaseModel):
    """Per-channel overrides."""
    model_config = ConfigDict(extra="forbid")

    sigma_q2: Optional[float] = Field(None, ge=0.0)
    sigma_e2: Optional[float] = Field(None, ge=0.0)
    lo_power_ref: Optional[float] = Field(None, gt=0.0)
    seed: Optional[int] = Field(None, ge=0)
    key: Optional[str] = Field(None, description="Initial CMAC key, 32 hex digits")

    @field_validator("key")
    @classmethod
    def _check_key(cls, value):
        if value is not None and len(bytes.fromhex(value)) != 16:
            raise ValueError("key must be 16 bytes (32 hex digits)")
        return value


@dataclass
class _Section:
    name: str
    line: int
    values: Dict[str, str] = field(default_factory=dict)
    lines: Dict[str, int] = field(default_factory=dict)


@dataclass
class ChannelConfig:
    """Parsed configuration file."""
    settings: GlobalSection
    channels: List[ChannelModel]
    keys: Dict[int, bytes] = field(default_factory=dict)
    source: str = "<config>"

    def adc(self, full_scale: Optional[float] = None) -> AdcConfig:
        """Digitizer for these channels; the range is optimized for the first channel unless set."""
        scale = full_scale or self.settings.full_scale
        if scale is None:
            return AdcConfig.for_model(self.channels[0], sample_rate=self.settings.sample_rate)
        return AdcConfig(full_scale=scale, sample_rate=self.settings.sample_rate)

    def to_pipeline_config(
        self,
        extractor: Optional[str] = None,
        full_scale: Optional[float] = None,
    ) -> PipelineConfig:
        """
        Build a pipeline configuration, optionally overriding the extractor.

        Raises:
            ConfigurationError: If the resulting pipeline is invalid
        """
        cfg = PipelineConfig(
            channels=list(self.channels),
            adc=self.adc(full_scale),
            extractor=extractor or self.settings.extractor,
            block_samples=self.settings.block_samples,
            pairing=self.settings.pairs,
            keys=dict(self.keys),
        )
        try:
            cfg.validate()
        except ConfigurationError as e:
            raise ConfigurationError(str(e), source=self.source) from e
        return cfg


def _split_sections(text: str, source: str) -> List[_Section]:
    sections: List[_Section] = []
    current: Optional[_Section] = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigurationError(f"unterminated section header '{line}'", source, number)
            current = _Section(" ".join(line[1:-1].split()).lower(), number)
            sections.append(current)
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"expected 'key = value', got '{line}'", source, number)
        if current is None:
            raise ConfigurationError(f"'{key.strip()}' appears before any section", source, number)
        key = key.strip().lower()
        if key in current.values:
            raise ConfigurationError(f"duplicate key '{key}' (first on line {current.lines[key]})", source, number)
        current.values[key] = value.strip()
        current.lines[key] = number
    return sections


def _validate(model, section: _Section, source: str):
    try:
        return model(**section.values)
    except ValidationError as e:
        error = e.errors()[0]
        key = str(error["loc"][0]) if error["loc"] else ""
        line = section.lines.get(key, section.line)
        raise ConfigurationError(f"[{section.name}] {key}: {error['msg']}", source, line) from e


def parse_channel_config(text: str, source: str = "<config>") -> ChannelConfig:
    """
    Parse configuration text.

    Args:
        text: File contents
        source: Name used in diagnostics

    Returns:
        The parsed configuration

    Raises:
        ConfigurationError: With the offending line on any syntax or value error
    """
    sections = _split_sections(text, source)
    settings = GlobalSection()
    overrides: Dict[int, Tuple[ChannelSection, _Section]] = {}

    for section in sections:
        if section.name == "global":
            settings = _validate(GlobalSection, section, source)
            continue
        kind, _, number = section.name.partition(" ")
        if kind != "channel" or not number.isdigit() or int(number) < 1:
            raise ConfigurationError(f"unknown section [{section.name}]", source, section.line)
        channel_id = int(number)
        if channel_id in overrides:
            raise ConfigurationError(f"channel {channel_id} defined twice", source, section.line)
        overrides[channel_id] = (_validate(ChannelSection, section, source), section)

    ids = sorted(overrides) if overrides else list(range(1, settings.channels + 1))
    derived = channel_seeds(settings.seed, max(ids))
    channels: List[ChannelModel] = []
    keys: Dict[int, bytes] = {}
    for channel_id in ids:
        values, section = overrides.get(channel_id, (ChannelSection(), None))
        try:
            channels.append(ChannelModel(
                channel_id=channel_id,
                sigma_q2=settings.sigma_q2 if values.sigma_q2 is None else values.sigma_q2,
                sigma_e2=settings.sigma_e2 if values.sigma_e2 is None else values.sigma_e2,
                lo_power_ref=settings.lo_power_ref if values.lo_power_ref is None else values.lo_power_ref,
                seed=derived[channel_id - 1] if values.seed is None else values.seed,
            ))
        except QrngError as e:
            raise ConfigurationError(str(e), source, section.line if section else None) from e
        if values.key is not None:
            keys[channel_id] = bytes.fromhex(values.key)

    logger.debug(f"Parsed {source}: {len(channels)} channels, extractor={settings.extractor}")
    return ChannelConfig(settings=settings, channels=channels, keys=keys, source=source)


def load_channel_config(path: Union[str, Path]) -> ChannelConfig:
    """Read and parse a configuration file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config: {e}", str(path)) from e
    return parse_channel_config(text, source=str(path))


def snapshot(cfg: ChannelConfig) -> Dict[str, object]:
    """Plain-data view of a configuration for manifests; keys are not included."""
    return {
        "global": cfg.settings.model_dump(),
        "channels": {
            str(c.channel_id): {
                "sigma_q2": c.sigma_q2,
                "sigma_e2": c.sigma_e2,
                "lo_power_ref": c.lo_power_ref,
                "seed": str(c.seed),
            }
            for c in cfg.channels
        },
    }
