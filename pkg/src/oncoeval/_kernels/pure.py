"""Pure-Python fallback for the compiled scoring kernels."""

from __future__ import annotations


def lcs_len(a: list[int], b: list[int]) -> int:
    """Length of the longest common subsequence of two int sequences.

    Two-row dynamic program: O(len(a) * len(b)) time, O(min(len)) space.
    """
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return 0
    prev = [0] * (len(b) + 1)
    curr = [0] * (len(b) + 1)
    for x in a:
        for j, y in enumerate(b, start=1):
            if x == y:
                curr[j] = prev[j - 1] + 1
            elif curr[j - 1] >= prev[j]:
                curr[j] = curr[j - 1]
            else:
                curr[j] = prev[j]
        prev, curr = curr, prev
    return prev[len(b)]
