"""Lexicon-based multilingual sentiment modeling."""

__version__ = "0.1.0"
