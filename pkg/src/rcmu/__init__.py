"""Evaluation metrics and dataset tooling for region-level context-aware multimodal understanding."""

__version__ = "0.1.0"
