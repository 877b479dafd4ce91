"""Causal impact of extreme shocks on daily visit-count panels."""

__version__ = "0.1.0"
