"""node2vec walks and the skip-gram negative-sampling (SGNS) trainer.

The same trainer embeds graph walks (adversarial representation) and
character sequences from a text corpus (semantic representation).
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging
import math

import numpy as np

from . import kernels

log = logging.getLogger(__name__)


class EmbeddingError(ValueError):
    pass


# -- node2vec -----------------------------------------------------------------

class TransitionModel:
    """Second-order walk bias: weight 1/p back to ``prev``, 1 to nodes adjacent
    to ``prev``, 1/q to everything else. Distributions are built lazily."""

    def __init__(self, graph, p=1.0, q=1.0):
        if p <= 0 or q <= 0:
            raise ValueError("p and q must be positive")
        self.graph = graph
        self.p = p
        self.q = q
        self._cache = {}

    def weights(self, prev, cur):
        nbrs = self.graph.neighbors(cur)
        if prev is None:
            return nbrs, [1.0] * len(nbrs)
        out = []
        for x in nbrs:
            if x == prev:
                out.append(1.0 / self.p)
            elif self.graph.relation(x, prev) is not None:
                out.append(1.0)
            else:
                out.append(1.0 / self.q)
        return nbrs, out

    def distribution(self, prev, cur):
        key = (prev, cur)
        if key not in self._cache:
            if prev is not None and self.graph.relation(prev, cur) is None:
                raise EmbeddingError(f"{prev!r} is not adjacent to {cur!r}")
            nbrs, w = self.weights(prev, cur)
            if not nbrs:
                raise EmbeddingError(f"node {cur!r} has no neighbors")
            total = math.fsum(w)
            self._cache[key] = {x: wi / total for x, wi in zip(nbrs, w)}
        return dict(self._cache[key])


def transition_distribution(tm, prev, cur):
    return tm.distribution(prev, cur)


@dataclass
class WalkSet:
    sequences: list
    walk_length: int
    walks_per_node: int

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for w in self.sequences:
                f.write(" ".join(w) + "\n")


def _walk_uniforms(seed, node_idx, walk_idx, steps):
    return np.random.default_rng([seed, node_idx, walk_idx]).random(steps)


def generate_walks(graph, r=10, l=40, p=1.0, q=1.0, seed=0, workers=1):
    """``r`` walks of up to ``l`` nodes from every node, grouped by repetition.

    Each walk draws from its own stream seeded by (seed, node, walk index), so
    the result does not depend on ``workers``.
    """
    if r < 1 or l < 2:
        raise ValueError("need r >= 1 and l >= 2")
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be positive")
    indptr, indices = graph.csr()
    n = len(graph.nodes)
    starts = np.tile(np.arange(n, dtype=np.int_), r)
    walk_idx = np.repeat(np.arange(r), n)
    uniforms = np.empty((len(starts), l - 1))
    for i, (s, w) in enumerate(zip(starts, walk_idx)):
        uniforms[i] = _walk_uniforms(seed, int(s), int(w), l - 1)

    def run(lo, hi):
        return kernels.node2vec_walks(indptr, indices, starts[lo:hi],
                                      np.ascontiguousarray(uniforms[lo:hi]), float(p), float(q))

    if workers > 1 and len(starts) > 1:
        bounds = np.linspace(0, len(starts), workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda b: run(*b), zip(bounds[:-1], bounds[1:])))
        walks = np.concatenate([w for w, _ in parts])
        lengths = np.concatenate([ln for _, ln in parts])
    else:
        walks, lengths = run(0, len(starts))
    nodes = graph.nodes
    seqs = [[nodes[j] for j in row[:ln]] for row, ln in zip(walks.tolist(), lengths.tolist())]
    return WalkSet(seqs, l, r)


# -- SGNS -----------------------------------------------------------------------

def _escape(tok):
    if tok.isspace() or tok == "\\":
        return f"\\u{ord(tok):04x}"
    return tok


def _unescape(tok):
    if tok.startswith("\\u") and len(tok) > 2:
        return chr(int(tok[2:], 16))
    return tok


class EmbeddingTable:
    def __init__(self, vocab, w_in, w_out=None):
        vocab = list(vocab)
        if len(set(vocab)) != len(vocab):
            raise EmbeddingError("duplicate tokens in vocabulary")
        self.vocab = vocab
        self.index = {t: i for i, t in enumerate(vocab)}
        self.w_in = np.asarray(w_in, dtype=np.float64)
        self.w_out = np.zeros_like(self.w_in) if w_out is None else np.asarray(w_out, dtype=np.float64)
        if self.w_in.ndim != 2 or self.w_in.shape[0] != len(vocab):
            raise EmbeddingError(f"input matrix shape {self.w_in.shape} does not match vocab")
        if self.w_out.shape != self.w_in.shape:
            raise EmbeddingError("input and output matrices differ in shape")

    @property
    def dim(self):
        return self.w_in.shape[1]

    def __len__(self):
        return len(self.vocab)

    def __contains__(self, tok):
        return tok in self.index

    def vector(self, tok):
        try:
            return self.w_in[self.index[tok]]
        except KeyError:
            raise EmbeddingError(f"token {tok!r} not in vocabulary") from None

    def copy(self):
        return EmbeddingTable(self.vocab, self.w_in.copy(), self.w_out.copy())

    def to_bytes(self):
        return "".join(self._lines()).encode("utf-8")

    def _lines(self):
        yield f"{len(self.vocab)} {self.dim}\n"
        for tok, row in zip(self.vocab, self.w_in.tolist()):
            yield _escape(tok) + " " + " ".join(repr(v) for v in row) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.writelines(self._lines())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
        try:
            size, dim = (int(v) for v in lines[0].split())
        except ValueError:
            raise EmbeddingError("line 1: expected '<vocab_size> <dim>'") from None
        vocab, rows = [], []
        for lineno, line in enumerate(lines[1:], 2):
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != dim + 1:
                raise EmbeddingError(f"line {lineno}: expected {dim} values")
            vocab.append(_unescape(parts[0]))
            rows.append([float(v) for v in parts[1:]])
        if len(vocab) != size:
            raise EmbeddingError(f"header declares {size} tokens, found {len(vocab)}")
        return cls(vocab, np.array(rows, dtype=np.float64).reshape(size, dim))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sgns_pair_objective_and_grad(center, context, negatives=()):
    """log s(c.x) + sum_k log s(-n_k.x) and its gradients.

    Returns (objective, d_center, d_context, d_negatives).
    """
    x = np.asarray(center, dtype=np.float64)
    c = np.asarray(context, dtype=np.float64)
    negs = np.asarray(negatives, dtype=np.float64)
    if negs.size == 0:
        negs = np.zeros((0, x.shape[0]))
    if c.shape != x.shape or negs.ndim != 2 or negs.shape[1] != x.shape[0]:
        raise ValueError("center, context and negative vectors must share a dimension")
    pos = float(c @ x)
    neg = negs @ x
    obj = float(_log_sigmoid(pos) + np.sum(_log_sigmoid(-neg)))
    g_pos = 1.0 - _sigmoid(pos)
    g_neg = -_sigmoid(neg)
    d_center = g_pos * c + g_neg @ negs
    d_context = g_pos * x
    d_negs = g_neg[:, None] * x[None, :]
    return obj, d_center, d_context, d_negs


def skipgram_pairs(seqs, window):
    """Fixed-window (center, context) id pairs, in sequence order."""
    centers, contexts = [], []
    for s in seqs:
        n = len(s)
        for i in range(n):
            for j in range(max(0, i - window), min(n, i + window + 1)):
                if j != i:
                    centers.append(s[i])
                    contexts.append(s[j])
    return np.array(centers, dtype=np.int_), np.array(contexts, dtype=np.int_)


def init_table(vocab, d, seed):
    rng = np.random.default_rng([seed, 0])
    w_in = rng.uniform(-0.5 / d, 0.5 / d, (len(vocab), d))
    w_out = rng.uniform(-0.5 / d, 0.5 / d, (len(vocab), d))
    return EmbeddingTable(vocab, w_in, w_out)


def sgns_train(sequences, d=64, window=5, negatives=5, epochs=5, lr=0.025, seed=0,
               min_lr_frac=1e-4, return_history=False):
    """Train an :class:`EmbeddingTable` on token ``sequences``.

    Vocabulary is every token seen, ordered by code point. Pairs are shuffled
    each epoch; the learning rate decays linearly to ``lr * min_lr_frac``.
    """
    seqs = [list(s) for s in sequences]
    if not seqs or not any(seqs):
        raise EmbeddingError("no training sequences")
    if d < 1 or window < 1 or negatives < 1:
        raise ValueError("need d >= 1, window >= 1, negatives >= 1")
    vocab = sorted({t for s in seqs for t in s}, key=lambda t: [ord(ch) for ch in t])
    table = init_table(vocab, d, seed)
    index = table.index
    id_seqs = [[index[t] for t in s] for s in seqs]
    centers, contexts = skipgram_pairs(id_seqs, window)
    counts = np.bincount(np.concatenate([np.array(s, dtype=np.int_) for s in id_seqs]),
                         minlength=len(vocab)).astype(np.float64)
    noise = counts ** 0.75
    noise /= noise.sum()
    rng = np.random.default_rng([seed, 1])
    history = []
    n_pairs = len(centers)
    total = max(1, n_pairs * epochs)
    for epoch in range(epochs):
        if n_pairs == 0:
            break
        order = rng.permutation(n_pairs)
        negs = rng.choice(len(vocab), size=(n_pairs, negatives), p=noise).astype(np.int_)
        done = np.arange(epoch * n_pairs, (epoch + 1) * n_pairs, dtype=np.float64)
        lrs = lr * np.maximum(min_lr_frac, 1.0 - done / total)
        obj = kernels.sgns_sweep(table.w_in, table.w_out,
                                 np.ascontiguousarray(centers[order]),
                                 np.ascontiguousarray(contexts[order]), negs, lrs)
        history.append(obj / n_pairs)
        log.info("sgns epoch %d: mean pair objective %.5f", epoch + 1, history[-1])
    if not (np.all(np.isfinite(table.w_in)) and np.all(np.isfinite(table.w_out))):
        raise EmbeddingError("training diverged (non-finite embeddings)")
    return (table, history) if return_history else table


def full_softmax_objective(table, sequences, window):
    """Exact neighbourhood log-likelihood sum_pairs log softmax(U v_c)[o]."""
    id_seqs = [[table.index[t] for t in s] for s in sequences]
    centers, contexts = skipgram_pairs(id_seqs, window)
    logits = table.w_in[centers] @ table.w_out.T
    m = logits.max(axis=1, keepdims=True)
    logz = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))[:, 0]
    return float(np.sum(logits[np.arange(len(centers)), contexts] - logz))


def node2vec_embed(graph, d=64, r=10, l=40, window=5, p=1.0, q=1.0, negatives=5,
                   epochs=1, lr=0.025, seed=0, workers=1):
    walks = generate_walks(graph, r, l, p, q, seed, workers)
    return sgns_train(walks.sequences, d, window, negatives, epochs, lr, seed), walks


def corpus_to_sequences(corpus):
    return [list(t.chars) for t in corpus]


def cosine(u, v):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(u @ v / (nu * nv))


def nearest_embedding_neighbors(table, token, k):
    v = table.vector(token)
    norms = np.linalg.norm(table.w_in, axis=1)
    nv = np.linalg.norm(v)
    denom = norms * nv
    sims = np.divide(table.w_in @ v, denom, out=np.zeros(len(table)), where=denom > 0)
    ranked = sorted((-float(s), [ord(ch) for ch in t], t)
                    for t, s in zip(table.vocab, sims) if t != token)
    return [(t, -neg) for neg, _, t in ranked[:k]]
