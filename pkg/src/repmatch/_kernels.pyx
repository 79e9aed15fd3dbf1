# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: log-domain Sinkhorn iterations (forward and the
reverse pass through the unrolled updates) and the shortest augmenting
path assignment solver.  Semantics mirror _kernels_py exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, log

cnp.import_array()


def sinkhorn_iterate(cost, loga, logb, double eps, int iters):
    """Run `iters` alternating log-domain Sinkhorn updates.

    Returns the potential history (f_hist, g_hist); see _kernels_py."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] m = np.ascontiguousarray(cost, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] la = np.ascontiguousarray(loga, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lb = np.ascontiguousarray(logb, dtype=np.float64)
    cdef Py_ssize_t nt = m.shape[0], nc = m.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] f_hist = np.empty((iters, nt))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g_hist = np.empty((iters, nc))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] f = np.zeros(nt)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.zeros(nc)
    cdef double inv_eps = 1.0 / eps
    cdef Py_ssize_t k, i, j
    cdef double z, top, acc
    for k in range(iters):
        for i in range(nt):
            top = -INFINITY
            for j in range(nc):
                z = (g[j] - m[i, j]) * inv_eps + lb[j]
                if z > top:
                    top = z
            acc = 0.0
            for j in range(nc):
                acc += exp((g[j] - m[i, j]) * inv_eps + lb[j] - top)
            f[i] = -eps * (top + log(acc))
        for j in range(nc):
            top = -INFINITY
            for i in range(nt):
                z = (f[i] - m[i, j]) * inv_eps + la[i]
                if z > top:
                    top = z
            acc = 0.0
            for i in range(nt):
                acc += exp((f[i] - m[i, j]) * inv_eps + la[i] - top)
            g[j] = -eps * (top + log(acc))
        f_hist[k, :] = f
        g_hist[k, :] = g
    return f_hist, g_hist


def sinkhorn_backward(cost, loga, logb, double eps, f_hist, g_hist, df0, dg0):
    """Backpropagate (df, dg) through the unrolled updates; returns dcost."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] m = np.ascontiguousarray(cost, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] la = np.ascontiguousarray(loga, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lb = np.ascontiguousarray(logb, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] fh = np.ascontiguousarray(f_hist, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gh = np.ascontiguousarray(g_hist, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] df = np.array(df0, dtype=np.float64, copy=True)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dg = np.array(dg0, dtype=np.float64, copy=True)
    cdef Py_ssize_t iters = fh.shape[0], nt = fh.shape[1], nc = gh.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dcost = np.zeros((nt, nc))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dgnew = np.empty(nc)
    cdef double inv_eps = 1.0 / eps
    cdef Py_ssize_t k, i, j
    cdef double fi, gj, gp, w, acc
    for k in range(iters - 1, -1, -1):
        # g update consumed f and cost (column-normalized softmax)
        for i in range(nt):
            acc = 0.0
            fi = fh[k, i]
            for j in range(nc):
                w = exp((fi + gh[k, j] - m[i, j]) * inv_eps + la[i]) * dg[j]
                acc += w
                dcost[i, j] += w
            df[i] -= acc
        # f update consumed gprev and cost (row-normalized softmax)
        for j in range(nc):
            dgnew[j] = 0.0
        for i in range(nt):
            fi = fh[k, i]
            for j in range(nc):
                gp = gh[k - 1, j] if k > 0 else 0.0
                w = exp((fi + gp - m[i, j]) * inv_eps + lb[j]) * df[i]
                dcost[i, j] += w
                dgnew[j] -= w
        for j in range(nc):
            dg[j] = dgnew[j]
        for i in range(nt):
            df[i] = 0.0
    return dcost


def solve_assignment(cost):
    """Min-cost one-to-one assignment; cost is (nr, nc) with nr <= nc.

    Returns col4row.  Same augmenting-path algorithm and tie-breaking as
    the pure version: the first minimal column wins."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t nr = c.shape[0], nc = c.shape[1]
    if nr > nc:
        raise ValueError("solve_assignment expects nr <= nc")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u = np.zeros(nr)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v = np.zeros(nc)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] col4row = np.full(nr, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] row4col = np.full(nc, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] shortest = np.empty(nc)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] path = np.empty(nc, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] done = np.zeros(nc, dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] in_sr = np.zeros(nr, dtype=np.uint8)
    cdef Py_ssize_t cur_row, i, j, jj, sink, temp
    cdef double minval, lowest, r
    for cur_row in range(nr):
        for j in range(nc):
            shortest[j] = INFINITY
            path[j] = -1
            done[j] = 0
        for i in range(nr):
            in_sr[i] = 0
        i = cur_row
        minval = 0.0
        sink = -1
        while sink == -1:
            in_sr[i] = 1
            lowest = INFINITY
            jj = -1
            for j in range(nc):
                if done[j]:
                    continue
                r = minval + c[i, j] - u[i] - v[j]
                if r < shortest[j]:
                    shortest[j] = r
                    path[j] = i
                if shortest[j] < lowest:
                    lowest = shortest[j]
                    jj = j
            j = jj
            minval = lowest
            done[j] = 1
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
        u[cur_row] += minval
        for i in range(nr):
            if in_sr[i] and i != cur_row:
                u[i] += minval - shortest[col4row[i]]
        for j in range(nc):
            if done[j]:
                v[j] -= minval - shortest[j]
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            temp = col4row[i]
            col4row[i] = j
            j = temp
            if i == cur_row:
                break
    return col4row
