"""Pure-numpy implementations of the hot kernels.

Same signatures and semantics as the compiled extension ``_kernels``;
selected automatically at import time when the extension is unavailable
(or when REPMATCH_PURE is set).  These are the reference implementations:
the compiled versions must agree with them to floating-point tolerance.
"""

from __future__ import annotations

import numpy as np


def _lse_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def _lse_cols(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=0)
    return m + np.log(np.exp(z - m[None, :]).sum(axis=0))


def sinkhorn_iterate(cost, loga, logb, eps, iters):
    """Run `iters` alternating log-domain Sinkhorn updates.

    cost: (nt, nc) ground-cost matrix; loga/logb: log marginal weights.
    Returns the full potential history (f_hist (iters, nt), g_hist
    (iters, nc)); the last rows are the final dual potentials.  The g
    update runs second, so column marginals of the implied plan are exact.
    """
    nt, nc = cost.shape
    f_hist = np.empty((iters, nt))
    g_hist = np.empty((iters, nc))
    g = np.zeros(nc)
    mb = (-cost) / eps + logb[None, :]
    ma = (-cost) / eps + loga[:, None]
    for k in range(iters):
        f = -eps * _lse_rows(g[None, :] / eps + mb)
        g = -eps * _lse_cols(f[:, None] / eps + ma)
        f_hist[k] = f
        g_hist[k] = g
    return f_hist, g_hist


def sinkhorn_backward(cost, loga, logb, eps, f_hist, g_hist, df, dg):
    """Backpropagate (df, dg) through the unrolled Sinkhorn updates.

    df/dg are gradients with respect to the final potentials.  Returns the
    accumulated gradient with respect to the cost matrix.  Exact reverse
    pass of `sinkhorn_iterate`: each update is a logsumexp whose Jacobian
    is a softmax recomputed here from the stored potentials.
    """
    iters, nt = f_hist.shape
    nc = g_hist.shape[1]
    dcost = np.zeros_like(cost)
    df = df.astype(float).copy()
    dg = dg.astype(float).copy()
    for k in range(iters - 1, -1, -1):
        f = f_hist[k]
        g = g_hist[k]
        gprev = g_hist[k - 1] if k > 0 else np.zeros(nc)
        # g update consumed f and cost; B is column-normalized
        b = np.exp((f[:, None] + g[None, :] - cost) / eps + loga[:, None])
        df -= b @ dg
        dcost += b * dg[None, :]
        # f update consumed gprev and cost; A is row-normalized
        a = np.exp((f[:, None] + gprev[None, :] - cost) / eps + logb[None, :])
        dcost += a * df[:, None]
        dg = -(a.T @ df)
        df = np.zeros(nt)
    return dcost


def solve_assignment(cost):
    """Min-cost one-to-one assignment by shortest augmenting paths.

    cost: (nr, nc) with nr <= nc, finite entries.  Returns col4row, the
    assigned column for each row.  Ties are broken by the lowest column
    index, which makes the pairing deterministic.
    """
    cost = np.ascontiguousarray(cost, dtype=float)
    nr, nc = cost.shape
    if nr > nc:
        raise ValueError("solve_assignment expects nr <= nc")
    u = np.zeros(nr)
    v = np.zeros(nc)
    col4row = np.full(nr, -1, dtype=np.int64)
    row4col = np.full(nc, -1, dtype=np.int64)
    for cur_row in range(nr):
        shortest = np.full(nc, np.inf)
        path = np.full(nc, -1, dtype=np.int64)
        done = np.zeros(nc, dtype=bool)
        scanned_rows = []
        i = cur_row
        minval = 0.0
        sink = -1
        while sink == -1:
            scanned_rows.append(i)
            rem = np.flatnonzero(~done)
            d = minval + cost[i, rem] - u[i] - v[rem]
            better = d < shortest[rem]
            upd = rem[better]
            shortest[upd] = d[better]
            path[upd] = i
            kk = int(np.argmin(shortest[rem]))
            j = int(rem[kk])
            minval = shortest[j]
            done[j] = True
            if row4col[j] == -1:
                sink = j
            else:
                i = int(row4col[j])
        u[cur_row] += minval
        for r in scanned_rows:
            if r != cur_row:
                u[r] += minval - shortest[col4row[r]]
        sc = np.flatnonzero(done)
        v[sc] -= minval - shortest[sc]
        j = sink
        while True:
            i = int(path[j])
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur_row:
                break
    return col4row
