"""Pure-Python versions of the kernels in ``_core.pyx``.

Walks are bit-identical to the compiled path (same scalar arithmetic in the
same order). The SGNS sweep uses numpy dot products, so it agrees with the
compiled sweep to rounding but not bitwise.
"""
import math

import numpy as np


def _has_edge(indptr, indices, a, b):
    lo, hi = indptr[a], indptr[a + 1]
    k = np.searchsorted(indices[lo:hi], b)
    return k < hi - lo and indices[lo + k] == b


def node2vec_walks(indptr, indices, starts, uniforms, p, q):
    indptr = np.asarray(indptr).tolist()
    indices_np = np.asarray(indices)
    indices = indices_np.tolist()
    n_walks, steps = uniforms.shape
    walks = np.full((n_walks, steps + 1), -1, dtype=np.int_)
    lengths = np.zeros(n_walks, dtype=np.int_)
    inv_p, inv_q = 1.0 / p, 1.0 / q
    adj = [set(indices[indptr[v]:indptr[v + 1]]) for v in range(len(indptr) - 1)]
    for i in range(n_walks):
        cur = int(starts[i])
        prev = -1
        walks[i, 0] = cur
        row = uniforms[i].tolist()
        t = 0
        while t < steps:
            nbrs = indices[indptr[cur]:indptr[cur + 1]]
            if not nbrs:
                break
            if prev < 0:
                weights = [1.0] * len(nbrs)
            else:
                prev_adj = adj[prev]
                weights = [inv_p if nb == prev else (1.0 if nb in prev_adj else inv_q)
                           for nb in nbrs]
            total = 0.0
            for w in weights:
                total = total + w
            target = row[t] * total
            acc = 0.0
            chosen = nbrs[-1]
            for nb, w in zip(nbrs, weights):
                acc = acc + w
                if target < acc:
                    chosen = nb
                    break
            prev, cur = cur, chosen
            t += 1
            walks[i, t] = cur
        lengths[i] = t + 1
    return walks, lengths


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def sgns_sweep(w_in, w_out, centers, contexts, negatives, lrs):
    objective = 0.0
    for c, o, negs, lr in zip(centers.tolist(), contexts.tolist(),
                              negatives.tolist(), lrs.tolist()):
        v = w_in[c].copy()
        u = w_out[o]
        s = _sigmoid(float(v @ u))
        objective += math.log(s)
        g = 1.0 - s
        grad = g * u
        u += (lr * g) * v
        for ng in negs:
            u = w_out[ng]
            s = _sigmoid(float(v @ u))
            objective += math.log(_sigmoid(-float(v @ u)))
            g = -s
            grad += g * u
            u += (lr * g) * v
        w_in[c] += lr * grad
    return objective
