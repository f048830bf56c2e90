"""GPS + GSM vehicle location tracking, fully simulated."""

__version__ = "0.1.0"
