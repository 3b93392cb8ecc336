"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--nodes 300] [--repeat 3]
"""
import argparse
import time

import numpy as np

from advgraph import _fallback
from advgraph.graph import AdversarialGraph, GLYPH

try:
    from advgraph import _core
except ImportError:
    _core = None


def random_graph(n, degree, seed):
    rng = np.random.default_rng(seed)
    nodes = [chr(0x4E00 + i) for i in range(n)]
    g = AdversarialGraph(nodes)
    for i in range(n):
        for j in rng.choice(n, size=degree, replace=False):
            if i != j:
                g.add_edge(nodes[i], nodes[int(j)], {GLYPH})
    return g


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def walk_case(g, walks_per_node, length, seed):
    indptr, indices = g.csr()
    n = len(g.nodes)
    starts = np.tile(np.arange(n, dtype=np.int_), walks_per_node)
    uniforms = np.random.default_rng(seed).random((len(starts), length - 1))
    return indptr, indices, starts, uniforms, 1.0, 0.5


def sgns_case(vocab, dim, pairs, negatives, seed):
    rng = np.random.default_rng(seed)
    w_in = rng.uniform(-0.5 / dim, 0.5 / dim, (vocab, dim))
    w_out = rng.uniform(-0.5 / dim, 0.5 / dim, (vocab, dim))
    centers = rng.integers(vocab, size=pairs)
    contexts = rng.integers(vocab, size=pairs)
    negs = rng.integers(vocab, size=(pairs, negatives))
    lrs = np.linspace(0.025, 0.0001, pairs)
    return w_in, w_out, centers, contexts, negs, lrs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=300)
    ap.add_argument("--degree", type=int, default=10)
    ap.add_argument("--walks", type=int, default=10)
    ap.add_argument("--length", type=int, default=40)
    ap.add_argument("--pairs", type=int, default=50_000)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    g = random_graph(args.nodes, args.degree, 0)
    wargs = walk_case(g, args.walks, args.length, 1)
    sargs = sgns_case(args.nodes, args.dim, args.pairs, 5, 2)

    rows = []
    impls = [("python", _fallback)] + ([("compiled", _core)] if _core is not None else [])
    for name, mod in impls:
        tw = best_of(lambda: mod.node2vec_walks(*wargs), args.repeat)
        ts = best_of(lambda: mod.sgns_sweep(*(a.copy() if i < 2 else a for i, a in enumerate(sargs))),
                     args.repeat)
        rows.append((name, tw, ts))

    n_walks = len(wargs[2])
    print(f"walks: {n_walks} x {args.length} on {args.nodes} nodes; sgns: {args.pairs} pairs, d={args.dim}")
    print(f"{'backend':>9} {'walks s':>9} {'sgns s':>9}")
    for name, tw, ts in rows:
        print(f"{name:>9} {tw:9.4f} {ts:9.4f}")
    if len(rows) == 2:
        print(f"{'speedup':>9} {rows[0][1] / rows[1][1]:8.1f}x {rows[0][2] / rows[1][2]:8.1f}x")
        w_py, _ = _fallback.node2vec_walks(*wargs)
        w_c, _ = _core.node2vec_walks(*wargs)
        print("walks identical:", bool(np.array_equal(w_py, w_c)))
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
