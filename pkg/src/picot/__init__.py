"""Prompt-based fine-grained entity typing with constrained hierarchical contrast."""

__version__ = "0.1.0"

from picot.kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
