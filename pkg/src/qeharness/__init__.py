"""Reference-less machine-translation quality-estimation harness."""

__version__ = "0.1.0"
