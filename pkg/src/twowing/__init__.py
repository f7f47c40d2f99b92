"""Joint evidence identification and claim verification (two-wing model)."""

__version__ = "0.1.0"
