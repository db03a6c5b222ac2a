"""Spectrogram pipeline for participant-level voice-clip classification."""

from .errors import SpecpipeError

__version__ = "0.1.0"

__all__ = ["SpecpipeError", "__version__"]
