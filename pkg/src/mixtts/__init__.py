"""Multilingual flow-matching TTS with pluggable sequence mixers."""

__version__ = "0.1.0"
