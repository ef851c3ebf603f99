# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: Gaussian splatting, radius suppression, greedy matching.

Semantics must stay in lockstep with the pure-python twin `_kernels_py.py`;
`tests/test_kernels.py` checks the two backends against each other.
"""

import numpy as np

from libc.math cimport exp, floor


def splat_gaussians(double[:, ::1] out, double[:, ::1] points, double sigma,
                    double amplitude, double cutoff):
    """Add an isotropic Gaussian bump of peak `amplitude` at each (row, col) point.

    Evaluation is restricted to a disc of radius cutoff*sigma around each
    center. `out` is modified in place.
    """
    cdef Py_ssize_t h = out.shape[0]
    cdef Py_ssize_t w = out.shape[1]
    cdef Py_ssize_t n = points.shape[0]
    cdef double rad = cutoff * sigma
    cdef double rad2 = rad * rad
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)
    cdef Py_ssize_t k, r, c, r0, r1, c0, c1
    cdef double pr, pc, dr, dc, d2

    for k in range(n):
        pr = points[k, 0]
        pc = points[k, 1]
        r0 = <Py_ssize_t>floor(pr - rad)
        r1 = <Py_ssize_t>floor(pr + rad) + 1
        c0 = <Py_ssize_t>floor(pc - rad)
        c1 = <Py_ssize_t>floor(pc + rad) + 1
        if r0 < 0:
            r0 = 0
        if c0 < 0:
            c0 = 0
        if r1 > h:
            r1 = h
        if c1 > w:
            c1 = w
        for r in range(r0, r1):
            dr = r - pr
            for c in range(c0, c1):
                dc = c - pc
                d2 = dr * dr + dc * dc
                if d2 <= rad2:
                    out[r, c] += amplitude * exp(-d2 * inv2s2)


def suppress_sorted(double[:, ::1] coords, double radius):
    """Greedy radius suppression over candidates already sorted by priority.

    A candidate is kept iff no previously kept candidate lies within
    `radius` (inclusive). Returns a uint8 keep mask aligned with `coords`.
    """
    cdef Py_ssize_t n = coords.shape[0]
    keep_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] keep = keep_arr
    cdef double r2 = radius * radius
    cdef Py_ssize_t i, j
    cdef double dr, dc
    cdef int ok

    for i in range(n):
        ok = 1
        for j in range(i):
            if keep[j]:
                dr = coords[i, 0] - coords[j, 0]
                dc = coords[i, 1] - coords[j, 1]
                if dr * dr + dc * dc <= r2:
                    ok = 0
                    break
        keep[i] = ok
    return keep_arr


def match_scan(long long[::1] pair_i, long long[::1] pair_j, Py_ssize_t n_a,
               Py_ssize_t n_b):
    """One-to-one greedy assignment over a pre-sorted candidate pair list.

    Pairs must arrive sorted by ascending cost (ties already broken).
    Returns an int64 array `assign` of length n_a with assign[i] = matched
    index into b, or -1.
    """
    assign_arr = np.full(n_a, -1, dtype=np.int64)
    used_b_arr = np.zeros(n_b, dtype=np.uint8)
    cdef long long[::1] assign = assign_arr
    cdef unsigned char[::1] used_b = used_b_arr
    cdef Py_ssize_t k, i, j

    for k in range(pair_i.shape[0]):
        i = pair_i[k]
        j = pair_j[k]
        if assign[i] == -1 and used_b[j] == 0:
            assign[i] = j
            used_b[j] = 1
    return assign_arr
