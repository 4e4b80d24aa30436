"""Personalized reference-guided blind face restoration toolkit."""

__version__ = "0.1.0"
