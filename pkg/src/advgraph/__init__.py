"""Adversarial-graph defense for character-level text classifiers."""

__version__ = "0.1.0"
