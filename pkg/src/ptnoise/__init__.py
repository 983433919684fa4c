"""Label-noise robustness of prompt tuning on a synthetic frozen-encoder world."""

__version__ = "0.1.0"
