"""Misspecification-aware linear regression with pointwise-optimal parameter posteriors."""

__version__ = "0.1.0"
