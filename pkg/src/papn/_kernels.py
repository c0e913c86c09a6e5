"""Loop-heavy numeric kernels: numba-compiled with a pure-numpy fallback.

Set ``PAPN_DISABLE_NUMBA=1`` (or run without numba installed) to use the numpy
path. Both paths are exported under explicit names so tests and the benchmark
can compare them directly; the unsuffixed names point at the active path.
"""

from __future__ import annotations

import os

import numpy as np

EARTH_RADIUS_KM = 6371.0088

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("PAPN_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def _njit(f):
    if numba is None:
        return f
    return numba.njit(cache=True)(f)


# -- haversine ----------------------------------------------------------------
def haversine_matrix_np(coords: np.ndarray) -> np.ndarray:
    """Pairwise great-circle distance in km for ``coords`` of (lon, lat) degrees."""
    rad = np.radians(np.asarray(coords, dtype=np.float64))
    lon, lat = rad[:, 0], rad[:, 1]
    dlat = lat[None, :] - lat[:, None]
    dlon = lon[None, :] - lon[:, None]
    a = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@_njit
def haversine_matrix_nb(coords):
    n = coords.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        lon1 = np.radians(coords[i, 0])
        lat1 = np.radians(coords[i, 1])
        for j in range(i + 1, n):
            lon2 = np.radians(coords[j, 0])
            lat2 = np.radians(coords[j, 1])
            a = (np.sin((lat2 - lat1) / 2) ** 2
                 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
            a = min(max(a, 0.0), 1.0)
            d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(a))
            out[i, j] = d
            out[j, i] = d
    return out


# -- Kendall pair counts ------------------------------------------------------
def kendall_counts_np(x: np.ndarray, y: np.ndarray) -> tuple[int, int]:
    """Concordant and discordant pair counts between two rank vectors."""
    x = np.asarray(x)
    y = np.asarray(y)
    iu = np.triu_indices(len(x), k=1)
    s = (np.sign(x[:, None] - x[None, :]) * np.sign(y[:, None] - y[None, :]))[iu]
    return int(np.count_nonzero(s > 0)), int(np.count_nonzero(s < 0))


@_njit
def kendall_counts_nb(x, y):
    nc = 0
    nd = 0
    n = x.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            s = (x[i] - x[j]) * (y[i] - y[j])
            if s > 0:
                nc += 1
            elif s < 0:
                nd += 1
    return nc, nd


# -- Levenshtein --------------------------------------------------------------
def levenshtein_np(a: np.ndarray, b: np.ndarray) -> int:
    """Unit-cost edit distance; row DP with the insertion pass as a running min."""
    a = np.asarray(a)
    b = np.asarray(b)
    m = len(b)
    ar = np.arange(m + 1)
    prev = ar.astype(np.int64)
    for i in range(1, len(a) + 1):
        cost = (b != a[i - 1]).astype(np.int64)
        tmp = np.empty(m + 1, dtype=np.int64)
        tmp[0] = i
        tmp[1:] = np.minimum(prev[1:] + 1, prev[:-1] + cost)
        prev = np.minimum.accumulate(tmp - ar) + ar
    return int(prev[m])


@_njit
def levenshtein_nb(a, b):
    m = b.shape[0]
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=prev.dtype)
    for i in range(1, a.shape[0] + 1):
        cur[0] = i
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
            best = min(prev[j] + 1, cur[j - 1] + 1)
            cur[j] = min(best, sub)
        prev, cur = cur, prev
    return prev[m]


# -- greedy route construction ------------------------------------------------
def greedy_route_np(priority: np.ndarray, first_cost: np.ndarray, step_cost: np.ndarray,
                    masks: np.ndarray, length: int) -> np.ndarray:
    """Repeatedly take the best available unvisited node.

    Candidates are ranked by ``priority[j]`` first, then by travel cost:
    ``first_cost[j]`` for the first pick, ``step_cost[i, j]`` when moving on
    from i. ``masks[s]`` is the availability row for pick s (the last row
    repeats). Remaining ties go to the lowest index.
    """
    n = len(first_cost)
    visited = np.zeros(n, dtype=bool)
    route = np.empty(length, dtype=np.int64)
    cur = -1
    for s in range(length):
        row = masks[min(s, len(masks) - 1)].astype(bool) & ~visited
        if not row.any():
            raise ValueError(f"no available node at step {s}")
        cost = first_cost if cur < 0 else step_cost[cur]
        top = row & (priority == priority[row].min())
        cand = np.where(top, cost, np.inf)
        nxt = int(np.argmin(cand))
        if not top[nxt]:
            nxt = int(np.flatnonzero(top)[0])
        route[s] = nxt
        visited[nxt] = True
        cur = nxt
    return route


@_njit
def greedy_route_nb(priority, first_cost, step_cost, masks, length):
    n = first_cost.shape[0]
    visited = np.zeros(n, dtype=np.bool_)
    route = np.empty(length, dtype=np.int64)
    cur = -1
    for s in range(length):
        r = min(s, masks.shape[0] - 1)
        best = -1
        best_pri = np.inf
        best_cost = np.inf
        for j in range(n):
            if visited[j] or masks[r, j] == 0:
                continue
            c = first_cost[j] if cur < 0 else step_cost[cur, j]
            if (best < 0 or priority[j] < best_pri
                    or (priority[j] == best_pri and c < best_cost)):
                best = j
                best_pri = priority[j]
                best_cost = c
        if best < 0:
            raise ValueError("no available node at this step")
        route[s] = best
        visited[best] = True
        cur = best
    return route


if USE_NUMBA:
    haversine_matrix = haversine_matrix_nb
    kendall_counts = kendall_counts_nb
    levenshtein = levenshtein_nb
    greedy_route = greedy_route_nb
else:
    haversine_matrix = haversine_matrix_np
    kendall_counts = kendall_counts_np
    levenshtein = levenshtein_np
    greedy_route = greedy_route_np

BACKEND = "numba" if USE_NUMBA else "numpy"
