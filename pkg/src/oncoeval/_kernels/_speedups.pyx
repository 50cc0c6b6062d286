# cython: boundscheck=False, wraparound=False
"""Compiled scoring kernels. Must stay result-identical to pure.py."""

from cpython.mem cimport PyMem_Free, PyMem_Malloc


def lcs_len(a, b):
    """Length of the longest common subsequence of two int sequences."""
    if len(a) < len(b):
        a, b = b, a
    cdef Py_ssize_t la = len(a)
    cdef Py_ssize_t lb = len(b)
    if lb == 0:
        return 0

    cdef long *xa = <long *> PyMem_Malloc(la * sizeof(long))
    cdef long *xb = <long *> PyMem_Malloc(lb * sizeof(long))
    cdef long *prev = <long *> PyMem_Malloc((lb + 1) * sizeof(long))
    cdef long *curr = <long *> PyMem_Malloc((lb + 1) * sizeof(long))
    if xa == NULL or xb == NULL or prev == NULL or curr == NULL:
        PyMem_Free(xa)
        PyMem_Free(xb)
        PyMem_Free(prev)
        PyMem_Free(curr)
        raise MemoryError()

    cdef Py_ssize_t i, j
    cdef long x, best
    cdef long *tmp
    try:
        for i in range(la):
            xa[i] = a[i]
        for j in range(lb):
            xb[j] = b[j]
        for j in range(lb + 1):
            prev[j] = 0
            curr[j] = 0
        for i in range(la):
            x = xa[i]
            for j in range(1, lb + 1):
                if x == xb[j - 1]:
                    curr[j] = prev[j - 1] + 1
                else:
                    best = curr[j - 1]
                    if prev[j] > best:
                        best = prev[j]
                    curr[j] = best
            tmp = prev
            prev = curr
            curr = tmp
        return prev[lb]
    finally:
        PyMem_Free(xa)
        PyMem_Free(xb)
        PyMem_Free(prev)
        PyMem_Free(curr)
