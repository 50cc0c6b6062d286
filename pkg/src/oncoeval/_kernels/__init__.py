"""Kernel selection: compiled extension when built, pure Python otherwise.

``python3 setup.py build_ext --inplace`` drops the compiled module next to
this file; without it the pure fallback keeps every result bit-identical,
just slower.
"""

try:
    from oncoeval._kernels._speedups import lcs_len

    BACKEND = "compiled"
except ImportError:
    from oncoeval._kernels.pure import lcs_len

    BACKEND = "pure"

__all__ = ["BACKEND", "lcs_len"]
