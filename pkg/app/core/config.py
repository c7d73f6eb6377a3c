"""
Configuration management for the QRNG toolkit.

This module handles environment-based configuration.
"""

import os
from contextlib import contextmanager
from typing import Any, Dict, Iterator

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Config:
    """Application configuration."""

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # Source model defaults (10 dB operating point)
    CHANNELS: int = int(os.getenv("QRNG_CHANNELS", "7"))
    SEED: int = int(os.getenv("QRNG_SEED", "20190101"))
    SIGMA_Q2: float = float(os.getenv("QRNG_SIGMA_Q2", "10.0"))
    SIGMA_E2: float = float(os.getenv("QRNG_SIGMA_E2", "1.0"))
    LO_POWER_REF: float = float(os.getenv("QRNG_LO_POWER_REF", "1.0"))

    # Digitization and pipeline
    SAMPLE_RATE: float = float(os.getenv("QRNG_SAMPLE_RATE", "55e6"))
    BLOCK_SAMPLES: int = int(os.getenv("QRNG_BLOCK_SAMPLES", "4608"))
    WORKERS: int = int(os.getenv("QRNG_WORKERS", "0"))
    QUEUE_DEPTH: int = int(os.getenv("QRNG_QUEUE_DEPTH", "4"))

    # Evaluation
    IID_SHUFFLES: int = int(os.getenv("QRNG_IID_SHUFFLES", "1000"))
    MAX_LAG: int = int(os.getenv("QRNG_MAX_LAG", "100"))
    MIN_ENTROPY_FRACTION: float = float(os.getenv("QRNG_MIN_ENTROPY_FRACTION", "0.975"))

    # Service info
    SERVICE_NAME: str = "qrng_mux"
    VERSION: str = "1.0.0"
    FORMAT_VERSION: int = 1

    # Settings that change generated files; manifests record them
    OUTPUT_SETTINGS = (
        "CHANNELS", "SEED", "SIGMA_Q2", "SIGMA_E2", "LO_POWER_REF", "SAMPLE_RATE", "BLOCK_SAMPLES",
    )

    def output_settings(self) -> Dict[str, Any]:
        """Current values of the settings that change generated files."""
        return {name: getattr(self, name) for name in self.OUTPUT_SETTINGS}

    @contextmanager
    def overridden(self, values: Dict[str, Any]) -> Iterator["Config"]:
        """
        Temporarily replace output settings, e.g. with a manifest's values.

        Raises:
            KeyError: If a name is not an output setting
        """
        unknown = sorted(set(values) - set(self.OUTPUT_SETTINGS))
        if unknown:
            raise KeyError(f"not output settings: {', '.join(unknown)}")
        saved = self.output_settings()
        try:
            for name, value in values.items():
                setattr(self, name, type(saved[name])(value))
            yield self
        finally:
            for name, value in saved.items():
                setattr(self, name, value)


# Global config instance
config = Config()
