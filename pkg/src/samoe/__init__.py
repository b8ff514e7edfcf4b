"""Scene-adaptive mixture of experts for continual CSI activity recognition."""

__version__ = "0.1.0"
