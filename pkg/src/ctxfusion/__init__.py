"""Context-aware fusion of review text and tabular features for rating prediction."""

__version__ = "0.1.0"
