# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled search kernels for trace compression."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def best_repeat(const long long[::1] s):
    """Most-repeated consecutive unit as ``(count, unit_len, start)``; count 0 if none.

    Ties go to the longer unit, then the earlier start.
    """
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t L, i, run
    cdef long long count
    cdef long long best_count = 0
    cdef Py_ssize_t best_len = 0, best_start = 0
    cdef cnp.ndarray[cnp.int64_t, ndim=1] runs_arr = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] runs = runs_arr
    for L in range(1, n // 2 + 1):
        runs[n - L] = 0
        i = n - L - 1
        while i >= 0:
            if s[i] == s[i + L]:
                runs[i] = runs[i + 1] + 1
            else:
                runs[i] = 0
            i -= 1
        for i in range(0, n - 2 * L + 1):
            count = 1 + runs[i] // L
            if count >= 2 and (count > best_count or (count == best_count and L > best_len)):
                best_count = count
                best_len = L
                best_start = i
    return int(best_count), int(best_len), int(best_start)


def longest_odd_palindrome(const long long[::1] s):
    """Longest odd-length palindromic run as ``(start, length)``; ties go to the earliest."""
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t c, r, best_start = 0, best_len = 0
    if n == 0:
        return -1, 0
    for c in range(n):
        r = 0
        while c - r - 1 >= 0 and c + r + 1 < n and s[c - r - 1] == s[c + r + 1]:
            r += 1
        if 2 * r + 1 > best_len:
            best_len = 2 * r + 1
            best_start = c - r
    return int(best_start), int(best_len)
