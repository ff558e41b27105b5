"""Model-update auditing toolkit for continual retraining of CGM risk classifiers."""

__version__ = "0.1.0"
