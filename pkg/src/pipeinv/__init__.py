"""Multi-view training paradigms and view-invariance measurements for image classifiers."""

__version__ = "0.1.0"
