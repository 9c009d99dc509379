"""Backend selection for the pairwise contrastive kernel.

The compiled extension ``kmcl._contrastive`` is used when it was built;
otherwise, or when the environment variable ``KMCL_PURE_PYTHON`` is set to a
non-empty value, the numpy implementation is used. Both are importable
directly (``python_impl`` / ``compiled_impl``) for cross-checking.
"""
from __future__ import annotations

import os

from . import _contrastive_py

python_impl = _contrastive_py.contrastive_terms

try:
    from ._contrastive import contrastive_terms as compiled_impl
except ImportError:  # extension not built
    compiled_impl = None

if compiled_impl is not None and not os.environ.get("KMCL_PURE_PYTHON"):
    contrastive_terms = compiled_impl
    BACKEND = "cython"
else:
    contrastive_terms = python_impl
    BACKEND = "python"

__all__ = ["contrastive_terms", "python_impl", "compiled_impl", "BACKEND"]
