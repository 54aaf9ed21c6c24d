"""Introspective distillation on synthetic biased QA data."""
__version__ = "0.1.0"
