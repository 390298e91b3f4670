"""A typechecker, interpreter and invariant monitor for a session-typed
functional language with futures and a delay modality."""

from ._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
