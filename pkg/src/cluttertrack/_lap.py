"""Dense rectangular linear assignment kernel (shortest augmenting path)."""

from __future__ import annotations

from typing import List, Sequence

_INF = float("inf")


def solve_lap(cost: Sequence[Sequence[float]]) -> List[int]:
    """Minimum-cost assignment of every row to a distinct column.

    Classic O(rows^2 * cols) potentials/augmenting-path formulation for a
    dense matrix with rows <= cols. All entries must be finite. Deterministic:
    when several columns tie, the lowest column index is explored first.

    Returns the assigned column index for each row.
    """
    n = len(cost)
    if n == 0:
        return []
    m = len(cost[0])
    if n > m:
        raise ValueError(f"need rows <= cols, got {n} rows x {m} cols")

    # 1-based arrays; p[j] holds the row matched to column j (0 = free).
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [_INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = _INF
            j1 = 0
            row = cost[i0 - 1]
            u_i0 = u[i0]
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u_i0 - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    result = [0] * n
    for j in range(1, m + 1):
        if p[j]:
            result[p[j] - 1] = j - 1
    return result
