# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: node2vec walk stepping and the SGNS update sweep.

Both functions mirror ``advgraph._fallback`` operation for operation; random
draws are made by the caller so the two paths consume identical streams.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


cdef inline bint _has_edge(const long[:] indptr, const long[:] indices,
                           long a, long b) nogil:
    cdef long lo = indptr[a], hi = indptr[a + 1], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if indices[mid] < b:
            lo = mid + 1
        elif indices[mid] > b:
            hi = mid
        else:
            return True
    return False


def node2vec_walks(const long[:] indptr, const long[:] indices,
                   const long[:] starts, const double[:, :] uniforms,
                   double p, double q):
    """Walk every start node; row ``i`` of ``uniforms`` drives walk ``i``.

    Returns (walks, lengths); unused tail cells of ``walks`` hold -1.
    """
    cdef long n_walks = starts.shape[0]
    cdef long steps = uniforms.shape[1]
    cdef cnp.ndarray[long, ndim=2] walks_arr = np.full((n_walks, steps + 1), -1, dtype=np.int_)
    cdef cnp.ndarray[long, ndim=1] lengths_arr = np.zeros(n_walks, dtype=np.int_)
    cdef long[:, :] walks = walks_arr
    cdef long[:] lengths = lengths_arr
    cdef long i, t, k, cur, prev, nb, lo, hi, deg, chosen
    cdef double inv_p = 1.0 / p, inv_q = 1.0 / q
    cdef double total, acc, target, w
    with nogil:
        for i in range(n_walks):
            cur = starts[i]
            walks[i, 0] = cur
            prev = -1
            t = 0
            while t < steps:
                lo = indptr[cur]
                hi = indptr[cur + 1]
                deg = hi - lo
                if deg == 0:
                    break
                total = 0.0
                for k in range(lo, hi):
                    nb = indices[k]
                    if prev < 0:
                        w = 1.0
                    elif nb == prev:
                        w = inv_p
                    elif _has_edge(indptr, indices, nb, prev):
                        w = 1.0
                    else:
                        w = inv_q
                    total = total + w
                target = uniforms[i, t] * total
                acc = 0.0
                chosen = indices[hi - 1]
                for k in range(lo, hi):
                    nb = indices[k]
                    if prev < 0:
                        w = 1.0
                    elif nb == prev:
                        w = inv_p
                    elif _has_edge(indptr, indices, nb, prev):
                        w = 1.0
                    else:
                        w = inv_q
                    acc = acc + w
                    if target < acc:
                        chosen = nb
                        break
                prev = cur
                cur = chosen
                t = t + 1
                walks[i, t] = cur
            lengths[i] = t + 1
    return walks_arr, lengths_arr


cdef inline double _sigmoid(double x) nogil:
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


def sgns_sweep(double[:, :] w_in, double[:, :] w_out,
               const long[:] centers, const long[:] contexts,
               const long[:, :] negatives, const double[:] lrs):
    """Sequential SGNS updates over all (center, context) pairs.

    Returns the summed negative-sampling objective evaluated before each update.
    """
    cdef long n_pairs = centers.shape[0]
    cdef long n_neg = negatives.shape[1]
    cdef long dim = w_in.shape[1]
    cdef cnp.ndarray[double, ndim=1] grad_arr = np.zeros(dim)
    cdef double[:] grad = grad_arr
    cdef long i, j, k, c, o, ng
    cdef double dot, g, lr, objective = 0.0
    with nogil:
        for i in range(n_pairs):
            c = centers[i]
            o = contexts[i]
            lr = lrs[i]
            for k in range(dim):
                grad[k] = 0.0
            dot = 0.0
            for k in range(dim):
                dot = dot + w_in[c, k] * w_out[o, k]
            objective = objective + log(_sigmoid(dot))
            g = 1.0 - _sigmoid(dot)
            for k in range(dim):
                grad[k] = grad[k] + g * w_out[o, k]
                w_out[o, k] = w_out[o, k] + lr * g * w_in[c, k]
            for j in range(n_neg):
                ng = negatives[i, j]
                dot = 0.0
                for k in range(dim):
                    dot = dot + w_in[c, k] * w_out[ng, k]
                objective = objective + log(_sigmoid(-dot))
                g = -_sigmoid(dot)
                for k in range(dim):
                    grad[k] = grad[k] + g * w_out[ng, k]
                    w_out[ng, k] = w_out[ng, k] + lr * g * w_in[c, k]
            for k in range(dim):
                w_in[c, k] = w_in[c, k] + lr * grad[k]
    return objective
