"""Pure-Python/numpy versions of the compiled trace-compression kernels."""
import numpy as np


def best_repeat(s):
    """Most-repeated consecutive unit as ``(count, unit_len, start)``; count 0 if none.

    Ties go to the longer unit, then the earlier start.
    """
    s = np.asarray(s, dtype=np.int64)
    n = len(s)
    best = (0, 0, 0)
    for L in range(1, n // 2 + 1):
        m = s[:-L] == s[L:]
        # distance from each i to the next mismatch is the run of matches starting at i
        idx = np.where(m, n, np.arange(n - L))
        next_mismatch = np.minimum.accumulate(idx[::-1])[::-1]
        next_mismatch = np.minimum(next_mismatch, n - L)
        runs = next_mismatch - np.arange(n - L)
        starts = n - 2 * L + 1
        counts = 1 + runs[:starts] // L
        i = int(np.argmax(counts))
        c = int(counts[i])
        if c >= 2 and (c > best[0] or (c == best[0] and L > best[1])):
            best = (c, L, i)
    return best


def longest_odd_palindrome(s):
    """Longest odd-length palindromic run as ``(start, length)``; ties go to the earliest.

    Manacher's algorithm restricted to odd centres.
    """
    s = [int(v) for v in s]
    n = len(s)
    if n == 0:
        return -1, 0
    radius = [0] * n
    left, right = 0, -1
    for i in range(n):
        k = 0 if i > right else min(radius[left + right - i], right - i)
        while i - k - 1 >= 0 and i + k + 1 < n and s[i - k - 1] == s[i + k + 1]:
            k += 1
        radius[i] = k
        if i + k > right:
            left, right = i - k, i + k
    best_start, best_len = 0, 0
    for i, k in enumerate(radius):
        if 2 * k + 1 > best_len:
            best_len = 2 * k + 1
            best_start = i - k
    return best_start, best_len
