"""Price-display A/B experiment toolkit."""

__version__ = "0.1.0"
