"""
Data schemas for QRNG reports.

This module defines the report and manifest models emitted by the toolkit.
Each report renders as structured text, as a flat key-value file, or as
JSON through pydantic.
"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


def _flatten(prefix: str, value: Any, out: Dict[str, Any]) -> None:
    if isinstance(value, dict):
        for key, item in value.items():
            _flatten(f"{prefix}.{key}" if prefix else str(key), item, out)
    elif isinstance(value, list) and value and isinstance(value[0], dict):
        for index, item in enumerate(value):
            name = item.get("name", index)
            _flatten(f"{prefix}.{name}", item, out)
    elif isinstance(value, list):
        out[prefix] = ",".join(str(v) for v in value)
    else:
        out[prefix] = value


class ReportModel(BaseModel):
    """Base class adding text and key-value renderings."""

    def to_kv(self, exclude: Optional[set] = None) -> str:
        flat: Dict[str, Any] = {}
        _flatten("", self.model_dump(exclude=exclude), flat)
        return "".join(f"{key}={value}\n" for key, value in flat.items())

    def to_text(self) -> str:
        lines = [self.__class__.__name__]
        for line in self.to_kv().splitlines():
            key, value = line.split("=", 1)
            lines.append(f"  {key:<40} {value}")
        return "\n".join(lines) + "\n"


class IidStatistic(BaseModel):
    """One permutation-test statistic."""
    name: str = Field(..., description="Statistic name")
    value: float = Field(..., description="Value on the original sequence")
    count_greater: int = Field(..., ge=0, description="Shuffles with a strictly larger value")
    count_equal: int = Field(..., ge=0, description="Shuffles with an equal value")
    passed: bool = Field(..., description="Original rank outside the extreme tails")


class IidReport(ReportModel):
    """IID permutation-test battery result."""
    passed: bool = Field(..., description="True when no statistic failed")
    sample_count: int = Field(..., ge=0)
    num_shuffles: int = Field(..., ge=1)
    statistics: List[IidStatistic] = Field(default_factory=list)

    @property
    def failed_statistics(self) -> List[str]:
        return [s.name for s in self.statistics if not s.passed]


class EntropyReport(ReportModel):
    """Min-entropy assessment of a stream."""
    sample_count: int = Field(..., ge=0)
    alphabet_size: int = Field(..., ge=2)
    h_mcv: float = Field(..., ge=0.0, description="MCV min-entropy per symbol (bits)")
    h_mcv_per_bit: float = Field(..., ge=0.0, description="MCV min-entropy per bit")
    h_mcv_per_8_bits: float = Field(..., ge=0.0, description="MCV min-entropy per 8 bits")
    p_hat: float = Field(..., ge=0.0, le=1.0, description="Most common symbol frequency")
    p_upper: float = Field(..., ge=0.0, le=1.0, description="Upper confidence bound on p_hat")
    h_min_conditional: Optional[float] = Field(None, description="Worst-case conditional min-entropy per sample")
    min_entropy_threshold: float = Field(..., description="MCV entropy required for a pass")
    iid: IidReport
    passed: bool


class TestResult(BaseModel):
    """One statistical test outcome."""
    name: str
    statistic: float
    p_value: float = Field(..., ge=0.0, le=1.0)
    passed: bool


class TestReport(ReportModel):
    """Statistical test-suite outcome."""
    bit_count: int = Field(..., ge=0)
    alpha: float = Field(0.01, description="Pass threshold on p-values")
    tests: List[TestResult] = Field(default_factory=list)
    passed: bool

    def p_values(self) -> Dict[str, float]:
        return {t.name: t.p_value for t in self.tests}


class CorrelationReport(ReportModel):
    """Extremal correlations against the 1/sqrt(n) reference."""
    pair: str = Field(..., description="Identifiers of the compared sequences")
    n: int = Field(..., ge=1)
    reference: float = Field(..., description="Ideal correlation scale 1/sqrt(n)")
    max_positive: float = Field(..., ge=-1.0, le=1.0)
    max_positive_at: int
    max_negative: float = Field(..., ge=-1.0, le=1.0)
    max_negative_at: int
    axis: str = Field("lag", description="Column name of positions: lag or position")
    positions: List[int] = Field(default_factory=list)
    values: List[float] = Field(default_factory=list)

    @property
    def max_abs(self) -> float:
        return max(abs(self.max_positive), abs(self.max_negative))

    def value_at(self, position: int) -> float:
        return self.values[self.positions.index(position)]

    def to_columns(self) -> str:
        """Plot-ready two-column table."""
        rows = [f"{self.axis}\tr"]
        rows.extend(f"{p}\t{v:.9e}" for p, v in zip(self.positions, self.values))
        return "\n".join(rows) + "\n"


class ThroughputReport(ReportModel):
    """Measured pipeline throughput against the theoretical rate."""
    extractor: str
    lanes: int = Field(..., ge=1)
    workers: int = Field(..., ge=1)
    rounds: int = Field(..., ge=0)
    wall_time: float = Field(..., ge=0.0, description="Seconds")
    total_output_bits: int = Field(..., ge=0)
    measured_bps: float = Field(..., ge=0.0)
    theoretical_bps: float = Field(..., ge=0.0, description="Sampling-limited rate for the configured ADC")
    samples_consumed: int = Field(..., ge=0)
    per_lane_bits: Dict[str, int] = Field(default_factory=dict)


class RunManifest(ReportModel):
    """Everything needed to reproduce a command's output files."""
    format_version: int
    service: str
    version: str
    command: str
    argv: List[str] = Field(default_factory=list, description="Arguments to replay the command")
    extractor: Optional[str] = None
    seeds: Dict[str, str] = Field(default_factory=dict, description="Seeds by channel id")
    initial_keys: Dict[str, str] = Field(default_factory=dict, description="Initial CMAC keys (hex) or 'redacted'")
    counts: Dict[str, int] = Field(default_factory=dict)
    config: Dict[str, Any] = Field(default_factory=dict, description="Configuration snapshot")
    environment: Dict[str, Any] = Field(default_factory=dict, description="Output-affecting QRNG_* settings")
    digests: Dict[str, str] = Field(default_factory=dict, description="sha256 of each output file")
