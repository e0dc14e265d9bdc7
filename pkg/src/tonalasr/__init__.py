"""Desk-scale tonal-syllable ASR experiment toolkit."""

__version__ = "0.1.0"
