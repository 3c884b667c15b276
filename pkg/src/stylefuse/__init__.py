"""Style-conditioned motion generation with a zero-parameter cross-normalization hook."""

__version__ = "0.1.0"
