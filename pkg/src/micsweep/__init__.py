"""Automotive microphone frequency-response emulation and speech-metric sweeps."""

__version__ = "0.1.0"
