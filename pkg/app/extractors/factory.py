"""
Extractor Factory

This module provides a registry for creating and looking up extractors.
"""

import logging
from typing import Dict, Optional

from app.core.errors import ConfigurationError
from app.extractors.base import Extractor


logger = logging.getLogger(__name__)


# Command-line and configuration spellings
ALIASES = {
    "a": "raw",
    "raw8": "raw",
    "b": "cmac",
    "aes": "cmac",
    "aes-cmac": "cmac",
    "c": "two_source",
    "two-source": "two_source",
    "twosource": "two_source",
}


def normalize_name(name: str) -> str:
    """Map an extractor alias to its registered name."""
    key = name.strip().lower()
    return ALIASES.get(key, key)


class ExtractorFactory:
    """
    Registry of extractor instances.

    Extractors themselves are stateless; per-channel state lives in the
    pipeline lanes.
    """

    _extractors: Dict[str, Extractor] = {}

    @classmethod
    def register(cls, extractor: Extractor) -> None:
        """
        Register an extractor.

        Args:
            extractor: The extractor instance to register
        """
        cls._extractors[extractor.name] = extractor
        logger.debug(f"Registered extractor: {extractor.name}")

    @classmethod
    def get(cls, name: str) -> Optional[Extractor]:
        """
        Get a registered extractor by name or alias.

        Args:
            name: The extractor name

        Returns:
            The extractor instance, or None if not found
        """
        cls._ensure_defaults()
        return cls._extractors.get(normalize_name(name))

    @classmethod
    def get_all(cls) -> Dict[str, Extractor]:
        """
        Get all registered extractors.

        Returns:
            Dictionary of extractor name to instance
        """
        cls._ensure_defaults()
        return cls._extractors.copy()

    @classmethod
    def _ensure_defaults(cls) -> None:
        if cls._extractors:
            return
        from app.extractors.cmac import CmacExtractor
        from app.extractors.raw import RawExtractor
        from app.extractors.two_source import TwoSourceExtractor

        for extractor in (RawExtractor(), CmacExtractor(), TwoSourceExtractor()):
            cls.register(extractor)


def get_extractor(name: str) -> Extractor:
    """
    Look up an extractor, failing loudly.

    Raises:
        ConfigurationError: If no extractor has that name
    """
    extractor = ExtractorFactory.get(name)
    if extractor is None:
        known = ", ".join(sorted(ExtractorFactory.get_all()))
        raise ConfigurationError(f"unknown extractor '{name}' (known: {known})")
    return extractor
