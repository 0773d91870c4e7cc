"""Two-stream pain-indicator estimation from dog video clips."""

__version__ = "0.1.0"
