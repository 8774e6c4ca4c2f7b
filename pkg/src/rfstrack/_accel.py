"""Numba-accelerated numeric kernels with a pure-NumPy fallback path.

The hot inner loops of the filters live here: elementary symmetric
function (ESF) recurrences and the dense rectangular assignment solver.
Each kernel exists in two flavours that perform the same floating-point
operations in the same order, so results are identical across paths:

* ``*_nb`` -- compiled with ``numba.njit`` (used when available),
* ``*_np`` -- vectorized / plain NumPy.

Set ``RFSTRACK_NUMBA=0`` in the environment to force the NumPy path
(also used automatically when numba is not installed).  The selection
happens at import time; ``benchmarks/bench_kernels.py`` imports both
flavours directly to compare them.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


def numba_requested() -> bool:
    flag = os.environ.get("RFSTRACK_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


NUMBA_ENABLED = HAVE_NUMBA and numba_requested()


# ---------------------------------------------------------------------------
# Elementary symmetric functions (Vieta / polynomial-coefficient recurrence)
# ---------------------------------------------------------------------------

def esf_np(values: np.ndarray) -> np.ndarray:
    """e_0..e_n of `values` by incremental polynomial multiplication."""
    n = values.shape[0]
    coeffs = np.zeros(n + 1)
    coeffs[0] = 1.0
    for k in range(n):
        # multiply the running polynomial by (1 + x_k t)
        coeffs[1:k + 2] = coeffs[1:k + 2] + values[k] * coeffs[0:k + 1]
    return coeffs


@njit(cache=True)
def esf_nb(values: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    coeffs = np.zeros(n + 1)
    coeffs[0] = 1.0
    for k in range(n):
        # descending j so each update reads pre-update coefficients
        for j in range(k + 1, 0, -1):
            coeffs[j] = coeffs[j] + values[k] * coeffs[j - 1]
    return coeffs


def esf_loo_np(values: np.ndarray) -> np.ndarray:
    """Leave-one-out ESF table: row i holds e_0..e_{n-1} of values without i.

    All rows are grown simultaneously; row k is saved before element k is
    multiplied in and restored afterwards, so it never sees its own element.
    """
    n = values.shape[0]
    table = np.zeros((n, n))
    table[:, 0] = 1.0
    for k in range(n):
        saved = table[k].copy()
        table[:, 1:] = table[:, 1:] + values[k] * table[:, :-1]
        table[k] = saved
    return table


@njit(cache=True)
def esf_loo_nb(values: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    table = np.zeros((n, n))
    for i in range(n):
        table[i, 0] = 1.0
    for k in range(n):
        for i in range(n):
            if i == k:
                continue
            for j in range(n - 1, 0, -1):
                table[i, j] = table[i, j] + values[k] * table[i, j - 1]
    return table


# ---------------------------------------------------------------------------
# Rectangular minimum-cost assignment (shortest augmenting path, O(n^3))
# ---------------------------------------------------------------------------

def lap_np(cost: np.ndarray) -> np.ndarray:
    """Column index assigned to each row of an m x n cost matrix, m <= n.

    Dual-variable shortest-augmenting-path method; one Dijkstra-style
    search per row.  Returns col4row with one distinct column per row.
    """
    m, n = cost.shape
    u = np.zeros(m)
    v = np.zeros(n)
    col4row = np.full(m, -1, dtype=np.int64)
    row4col = np.full(n, -1, dtype=np.int64)
    for cur_row in range(m):
        shortest = np.full(n, np.inf)
        path = np.full(n, -1, dtype=np.int64)
        done_cols = np.zeros(n, dtype=np.bool_)
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            reduced = min_val + cost[i] - u[i] - v
            better = ~done_cols & (reduced < shortest)
            shortest[better] = reduced[better]
            path[better] = i
            masked = np.where(done_cols, np.inf, shortest)
            j = int(np.argmin(masked))
            min_val = masked[j]
            done_cols[j] = True
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
        u[cur_row] += min_val
        for ii in range(m):
            jj = col4row[ii]
            if jj >= 0 and done_cols[jj] and jj != sink:
                u[ii] += min_val - shortest[jj]
        adjust = done_cols.copy()
        adjust[sink] = False
        v[adjust] -= min_val - shortest[adjust]
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur_row:
                break
    return col4row


@njit(cache=True)
def lap_nb(cost: np.ndarray) -> np.ndarray:
    m, n = cost.shape
    u = np.zeros(m)
    v = np.zeros(n)
    col4row = np.full(m, -1, dtype=np.int64)
    row4col = np.full(n, -1, dtype=np.int64)
    shortest = np.empty(n)
    path = np.empty(n, dtype=np.int64)
    done_cols = np.empty(n, dtype=np.bool_)
    for cur_row in range(m):
        for j in range(n):
            shortest[j] = np.inf
            path[j] = -1
            done_cols[j] = False
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            for j in range(n):
                if done_cols[j]:
                    continue
                reduced = min_val + cost[i, j] - u[i] - v[j]
                if reduced < shortest[j]:
                    shortest[j] = reduced
                    path[j] = i
            jmin = -1
            lowest = np.inf
            for j in range(n):
                if not done_cols[j] and shortest[j] < lowest:
                    lowest = shortest[j]
                    jmin = j
            j = jmin
            min_val = lowest
            done_cols[j] = True
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
        u[cur_row] += min_val
        for ii in range(m):
            jj = col4row[ii]
            if jj >= 0 and done_cols[jj] and jj != sink:
                u[ii] += min_val - shortest[jj]
        for j in range(n):
            if done_cols[j] and j != sink:
                v[j] -= min_val - shortest[j]
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            tmp = col4row[i]
            col4row[i] = j
            j = tmp
            if i == cur_row:
                break
    return col4row


if NUMBA_ENABLED:
    esf_kernel = esf_nb
    esf_loo_kernel = esf_loo_nb
    lap_kernel = lap_nb
else:
    esf_kernel = esf_np
    esf_loo_kernel = esf_loo_np
    lap_kernel = lap_np
