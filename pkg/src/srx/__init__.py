"""Semantic-role-aware text-to-video retrieval on a small numpy autodiff engine."""

__version__ = "0.1.0"
