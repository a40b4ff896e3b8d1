"""Training and serving sidecar for the repair-pipeline wire protocol."""

__version__ = "0.1.0"
