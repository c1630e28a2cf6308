"""Sequential recommendation with a mixture of temporally-specialized attention heads."""

__version__ = "0.1.0"
