"""Optimal one-to-one assignment by the Hungarian method.

The solver maximizes total similarity over rectangular matrices.  The matrix
is padded to square with zero-value dummy cells, negated, and solved with the
classic O(n^3) potential-based shortest-augmenting-path formulation.  Scans
run in index order, so among equal-total assignments the one reached first by
low row and column indices wins; results are fully deterministic.
"""

from __future__ import annotations

import numpy as np


def max_similarity_assignment(similarity: np.ndarray) -> list[tuple[int, int]]:
    """Assignment of rows to columns maximizing the total similarity.

    Parameters
    ----------
    similarity : np.ndarray
        Matrix of shape (n_rows, n_cols), finite.  May be empty in either
        dimension.

    Returns
    -------
    list of tuple
        Pairs ``(row, col)`` sorted by row.  Every row and column appears at
        most once; with a rectangular matrix the smaller side is fully
        assigned.

    Raises
    ------
    ValueError
        If the matrix contains non-finite entries.
    """
    similarity = np.asarray(similarity, dtype=float)
    if similarity.ndim != 2:
        raise ValueError(f"similarity must be 2-D, got shape {similarity.shape}")
    n_rows, n_cols = similarity.shape
    if n_rows == 0 or n_cols == 0:
        return []
    if not np.all(np.isfinite(similarity)):
        raise ValueError("similarity matrix must be finite")

    n = max(n_rows, n_cols)
    cost = np.zeros((n, n))
    cost[:n_rows, :n_cols] = -similarity

    # Potentials u, v and the column-to-row matching p, 1-based with a
    # sentinel at index 0.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    pairs = [
        (p[j] - 1, j - 1)
        for j in range(1, n + 1)
        if p[j] - 1 < n_rows and j - 1 < n_cols
    ]
    pairs.sort()
    return pairs
