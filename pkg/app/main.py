"""
qrng_mux - Main Application Entry Point

Command-line toolkit for a simulated multi-channel vacuum-noise QRNG:
simulation, extraction, multiplexing, entropy assessment and statistical
testing.

Usage:
    python -m app.main <command> [options]
"""

import logging
import sys
from typing import Optional, Sequence

from app.core.config import config
from app.cli.commands import EXIT_ERROR, run


# Configure logging; stderr keeps stdout free for bitstreams and reports
logging.basicConfig(
    level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(sys.stderr)
    ]
)

logger = logging.getLogger(__name__)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    logger.debug(f"Starting {config.SERVICE_NAME} v{config.VERSION}")
    try:
        return run(argv)
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
