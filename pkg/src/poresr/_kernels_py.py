"""Pure-numpy twin of the compiled kernels in `_kernels.pyx`.

Used when the extension is not built (or PORESR_PURE_PYTHON is set).
Candidate sets, orderings and comparisons are kept identical to the
compiled versions so both backends return the same results.
"""

import numpy as np


def splat_gaussians(out, points, sigma, amplitude, cutoff):
    """Add a Gaussian bump of peak `amplitude` at each (row, col) point, in place."""
    h, w = out.shape
    rad = cutoff * sigma
    rad2 = rad * rad
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    for pr, pc in points:
        r0 = max(int(np.floor(pr - rad)), 0)
        r1 = min(int(np.floor(pr + rad)) + 1, h)
        c0 = max(int(np.floor(pc - rad)), 0)
        c1 = min(int(np.floor(pc + rad)) + 1, w)
        if r0 >= r1 or c0 >= c1:
            continue
        dr = np.arange(r0, r1, dtype=np.float64)[:, None] - pr
        dc = np.arange(c0, c1, dtype=np.float64)[None, :] - pc
        d2 = dr * dr + dc * dc
        mask = d2 <= rad2
        window = out[r0:r1, c0:c1]
        window[mask] += amplitude * np.exp(-d2[mask] * inv2s2)


def suppress_sorted(coords, radius):
    """Greedy radius suppression over priority-sorted candidates; uint8 keep mask."""
    n = len(coords)
    keep = np.zeros(n, dtype=np.uint8)
    r2 = radius * radius
    kept = []
    for i in range(n):
        ri, ci = coords[i]
        ok = True
        for rj, cj in kept:
            dr = ri - rj
            dc = ci - cj
            if dr * dr + dc * dc <= r2:
                ok = False
                break
        if ok:
            keep[i] = 1
            kept.append((ri, ci))
    return keep


def match_scan(pair_i, pair_j, n_a, n_b):
    """One-to-one greedy assignment over a cost-sorted pair list; -1 = unmatched."""
    assign = np.full(n_a, -1, dtype=np.int64)
    used_b = np.zeros(n_b, dtype=bool)
    for i, j in zip(pair_i, pair_j):
        if assign[i] == -1 and not used_b[j]:
            assign[i] = j
            used_b[j] = True
    return assign
