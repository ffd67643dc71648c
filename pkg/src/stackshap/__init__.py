"""Stacked binary classifiers with Shapley-value explanations for tabular survey extracts."""

__version__ = "0.1.0"
