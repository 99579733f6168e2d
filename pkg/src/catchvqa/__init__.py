"""Domain-routed adapters over a frozen miniature vision-language model."""

__version__ = "0.1.0"
