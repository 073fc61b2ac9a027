"""Small dense simplex solver (Bland's rule) for LPs with a feasible origin."""

from __future__ import annotations

import numpy as np

EPS = 1e-10


class UnboundedError(ValueError):
    pass


def maximize(c, A, b, max_iter: int = 100_000):
    """Solve ``max c.x  s.t.  A x <= b, x >= 0`` with ``b >= 0``.

    Returns ``(value, x)``. The origin is feasible, so no phase one is needed.
    Bland's smallest-index rule guarantees termination on degenerate problems.
    """
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if np.any(b < -EPS):
        raise ValueError("right-hand side must be nonnegative")
    tab = np.zeros((m + 1, n + m + 1))
    tab[:m, :n] = A
    tab[:m, n:n + m] = np.eye(m)
    tab[:m, -1] = np.maximum(b, 0.0)
    tab[m, :n] = -c
    basis = list(range(n, n + m))

    for _ in range(max_iter):
        reduced = tab[m, :-1]
        candidates = np.nonzero(reduced < -EPS)[0]
        if candidates.size == 0:
            break
        col = int(candidates[0])
        column = tab[:m, col]
        rows = np.nonzero(column > EPS)[0]
        if rows.size == 0:
            raise UnboundedError("objective is unbounded")
        ratios = tab[rows, -1] / column[rows]
        best = ratios.min()
        tied = rows[ratios <= best + EPS * max(1.0, abs(best))]
        row = int(min(tied, key=lambda r: basis[r]))
        tab[row] /= tab[row, col]
        for r in range(m + 1):
            if r != row and tab[r, col] != 0.0:
                tab[r] -= tab[r, col] * tab[row]
        basis[row] = col
    else:
        raise RuntimeError("simplex iteration limit reached")

    x = np.zeros(n + m)
    for r, var in enumerate(basis):
        x[var] = tab[r, -1]
    return float(tab[m, -1]), x[:n]
