"""Random-feature and small-network laboratory for sample-wise triple descent."""

__version__ = "0.1.0"
