"""Scene mesh to binaural impulse response toolkit."""

__version__ = "0.1.0"
