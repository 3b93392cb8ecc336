"""Two-branch convolutional text classifier with concatenation fusion.

Each branch embeds characters through a frozen :class:`EmbeddingTable`,
applies 1-D convolutions of several widths with ReLU and max-over-time
pooling, and the pooled graph and semantic features are concatenated and fed
to a softmax head.
"""
from dataclasses import dataclass, field
import hashlib
import json
import logging
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .embedding import EmbeddingTable

log = logging.getLogger(__name__)

PARAMS_MAGIC = "CLFPARAMS 1"


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledText:
    chars: str
    label: int

    def __post_init__(self):
        if len(self.chars) < 1:
            raise ClassifierError("text must contain at least one character")
        if self.label < 0:
            raise ClassifierError(f"negative label {self.label}")


def load_corpus(path):
    texts = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            label, sep, text = line.partition("\t")
            if not sep or not label.isdigit() or not text:
                raise ClassifierError(f"line {lineno}: expected '<label>\\t<text>'")
            texts.append(LabeledText(text, int(label)))
    if not texts:
        raise ClassifierError(f"{path}: empty corpus")
    return texts


def save_corpus(corpus, path):
    with open(path, "w", encoding="utf-8") as f:
        for t in corpus:
            f.write(f"{t.label}\t{t.chars}\n")


@dataclass
class Prediction:
    label: int
    confidence: float
    distribution: np.ndarray


# -- parameters ---------------------------------------------------------------

@dataclass
class EncoderParams:
    """Filters ``w{width}`` of shape (width, dim, n_filters) and biases ``b{width}``."""
    widths: tuple
    tensors: dict

    @property
    def out_dim(self):
        return sum(self.tensors[f"b{w}"].shape[0] for w in self.widths)

    @property
    def in_dim(self):
        return self.tensors[f"w{self.widths[0]}"].shape[1]


@dataclass
class ClassifierParams:
    graph_enc: EncoderParams | None
    sem_enc: EncoderParams | None
    head_w: np.ndarray
    head_b: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_classes(self):
        return self.head_b.shape[0]

    def named(self):
        """Flat name -> tensor view used by optimizers, gradients and I/O."""
        out = {"head.w": self.head_w, "head.b": self.head_b}
        for prefix, enc in (("graph", self.graph_enc), ("sem", self.sem_enc)):
            if enc is not None:
                for k, v in enc.tensors.items():
                    out[f"{prefix}.{k}"] = v
        return out

    def copy(self):
        def cp(enc):
            return None if enc is None else EncoderParams(enc.widths, {k: v.copy() for k, v in enc.tensors.items()})
        return ClassifierParams(cp(self.graph_enc), cp(self.sem_enc), self.head_w.copy(),
                                self.head_b.copy(), dict(self.meta))

    def check_finite(self):
        for name, t in self.named().items():
            if not np.all(np.isfinite(t)):
                raise ClassifierError(f"non-finite classifier parameter {name}")

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(PARAMS_MAGIC + "\n")
            for prefix, enc in (("graph", self.graph_enc), ("sem", self.sem_enc)):
                widths = "-" if enc is None else " ".join(map(str, enc.widths))
                f.write(f"branch {prefix} {widths}\n")
            for name, t in sorted(self.named().items()):
                f.write(f"tensor {name} {' '.join(map(str, t.shape))}\n")
                f.write(" ".join(float(v).hex() for v in t.ravel()) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
        if lines[0] != PARAMS_MAGIC:
            raise ClassifierError(f"{path}: not a classifier parameter file")
        widths = {}
        i = 1
        while lines[i].startswith("branch "):
            _, prefix, *ws = lines[i].split()
            widths[prefix] = None if ws == ["-"] else tuple(int(w) for w in ws)
            i += 1
        tensors = {}
        while i < len(lines) and lines[i]:
            _, name, *shape = lines[i].split()
            vals = [float.fromhex(v) for v in lines[i + 1].split()]
            tensors[name] = np.array(vals, dtype=np.float64).reshape([int(s) for s in shape])
            i += 2

        def enc(prefix):
            if widths.get(prefix) is None:
                return None
            return EncoderParams(widths[prefix], {k.split(".", 1)[1]: v for k, v in tensors.items()
                                                  if k.startswith(prefix + ".")})
        return cls(enc("graph"), enc("sem"), tensors["head.w"], tensors["head.b"])


def init_encoder(rng, dim, widths=(2, 3, 4), n_filters=32):
    tensors = {}
    for w in widths:
        tensors[f"w{w}"] = rng.normal(0.0, np.sqrt(2.0 / (w * dim)), (w, dim, n_filters))
        tensors[f"b{w}"] = np.zeros(n_filters)
    return EncoderParams(tuple(widths), tensors)


def init_classifier(graph_table, sem_table, n_classes, seed, widths=(2, 3, 4), n_filters=32):
    """Seeded initialization; pass ``None`` for a table to drop that branch."""
    if graph_table is None and sem_table is None:
        raise ClassifierError("at least one branch is required")
    rng = np.random.default_rng([seed, 7])
    genc = None if graph_table is None else init_encoder(rng, graph_table.dim, widths, n_filters)
    senc = None if sem_table is None else init_encoder(rng, sem_table.dim, widths, n_filters)
    fused = sum(e.out_dim for e in (genc, senc) if e is not None)
    head_w = rng.normal(0.0, np.sqrt(1.0 / fused), (n_classes, fused))
    return ClassifierParams(genc, senc, head_w, np.zeros(n_classes))


# -- forward / backward -------------------------------------------------------

def lookup_ids(table, texts):
    """(B, L) ids into ``table`` with OOV and padding mapped to row ``len(table)``."""
    oov = len(table)
    lengths = np.array([len(t) for t in texts], dtype=np.int_)
    ids = np.full((len(texts), max(lengths.max(), 1)), oov, dtype=np.int_)
    index = table.index
    for i, t in enumerate(texts):
        ids[i, :len(t)] = [index.get(c, oov) for c in t]
    return ids, lengths


def _padded_matrix(table):
    return np.vstack([table.w_in, np.zeros((1, table.dim))])


def encode_batch(ids, lengths, matrix, enc, keep_cache=False):
    """Max-over-time conv features for a padded id batch -> (B, out_dim)."""
    max_w = max(enc.widths)
    if ids.shape[1] < max_w:
        pad = np.full((ids.shape[0], max_w - ids.shape[1]), matrix.shape[0] - 1, dtype=np.int_)
        ids = np.hstack([ids, pad])
    x = matrix[ids]  # (B, L, d)
    feats, cache = [], []
    for w in enc.widths:
        W, b = enc.tensors[f"w{w}"], enc.tensors[f"b{w}"]
        cols = sliding_window_view(x, w, axis=1)  # (B, T, d, w)
        cols = cols.transpose(0, 1, 3, 2).reshape(x.shape[0], -1, w * x.shape[2])
        z = cols @ W.reshape(w * x.shape[2], -1) + b  # (B, T, F)
        a = np.maximum(z, 0.0)
        # a window is valid if it starts inside max(N, w) - w + 1 positions
        n_valid = np.maximum(lengths, w) - w + 1
        valid = np.arange(z.shape[1])[None, :] < n_valid[:, None]
        masked = np.where(valid[:, :, None], a, -np.inf)
        t_star = masked.argmax(axis=1)  # (B, F)
        pooled = np.take_along_axis(a, t_star[:, None, :], 1)[:, 0, :]
        feats.append(pooled)
        if keep_cache:
            cache.append((w, cols, z, t_star))
    out = np.concatenate(feats, axis=1)
    return (out, cache) if keep_cache else out


def encode_backward(dout, enc, cache):
    grads = {}
    col = 0
    for w, cols, z, t_star in cache:
        F = enc.tensors[f"b{w}"].shape[0]
        g = dout[:, col:col + F]
        col += F
        b_idx = np.arange(cols.shape[0])[:, None]
        z_sel = z[b_idx, t_star, np.arange(F)[None, :]]
        g = g * (z_sel > 0)
        sel = cols[b_idx, t_star]  # (B, F, w*d)
        dW = np.einsum("bfk,bf->kf", sel, g)
        grads[f"w{w}"] = dW.reshape(enc.tensors[f"w{w}"].shape)
        grads[f"b{w}"] = g.sum(axis=0)
    return grads


def encode(chars, table, enc):
    if len(chars) == 0:
        raise ClassifierError("cannot encode an empty sequence")
    if enc.in_dim != table.dim:
        raise ClassifierError(f"encoder expects dim {enc.in_dim}, table has {table.dim}")
    ids, lengths = lookup_ids(table, [chars])
    return encode_batch(ids, lengths, _padded_matrix(table), enc)[0]


def fuse(eg, es):
    """Concatenate graph-branch and semantic-branch features, graph first."""
    return np.concatenate([np.asarray(eg, dtype=np.float64).ravel(),
                           np.asarray(es, dtype=np.float64).ravel()])


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _prediction(dist):
    label = int(np.argmax(dist))  # first maximum = lowest class id
    return Prediction(label, float(dist[label]), dist)


def classify(fused, params):
    fused = np.asarray(fused, dtype=np.float64)
    if fused.shape != (params.head_w.shape[1],):
        raise ClassifierError(f"fused dim {fused.shape} does not match head {params.head_w.shape}")
    logits = params.head_w @ fused + params.head_b
    if not np.all(np.isfinite(logits)):
        raise ClassifierError("non-finite logits")
    return _prediction(softmax(logits))


class ModelBundle:
    """Frozen embedding tables plus classifier parameters; ``predict`` is read-only."""

    def __init__(self, graph_table, sem_table, params):
        if (graph_table is None) != (params.graph_enc is None) or \
                (sem_table is None) != (params.sem_enc is None):
            raise ClassifierError("bundle tables do not match the classifier branches")
        self.graph_table = graph_table
        self.sem_table = sem_table
        self.params = params
        self._gmat = None if graph_table is None else _padded_matrix(graph_table)
        self._smat = None if sem_table is None else _padded_matrix(sem_table)

    def features(self, texts, keep_cache=False):
        parts, caches = [], []
        for table, mat, enc in ((self.graph_table, self._gmat, self.params.graph_enc),
                                (self.sem_table, self._smat, self.params.sem_enc)):
            if table is None:
                caches.append(None)
                continue
            ids, lengths = lookup_ids(table, texts)
            res = encode_batch(ids, lengths, mat, enc, keep_cache)
            if keep_cache:
                parts.append(res[0])
                caches.append(res[1])
            else:
                parts.append(res)
        fused = np.concatenate(parts, axis=1)
        return (fused, caches) if keep_cache else fused

    def predict_proba(self, texts):
        if any(len(t) == 0 for t in texts):
            raise ClassifierError("cannot classify an empty text")
        logits = self.features(texts) @ self.params.head_w.T + self.params.head_b
        if not np.all(np.isfinite(logits)):
            raise ClassifierError("non-finite logits")
        return softmax(logits)

    def predict(self, text):
        return _prediction(self.predict_proba([text])[0])

    def predict_many(self, texts):
        return [_prediction(d) for d in self.predict_proba(texts)]

    def save(self, directory, manifest_extra=None):
        os.makedirs(directory, exist_ok=True)
        files = {}
        if self.graph_table is not None:
            self.graph_table.save(os.path.join(directory, "graph.emb"))
            files["graph_embedding"] = "graph.emb"
        if self.sem_table is not None:
            self.sem_table.save(os.path.join(directory, "semantic.emb"))
            files["semantic_embedding"] = "semantic.emb"
        self.params.save(os.path.join(directory, "classifier.params"))
        files["classifier"] = "classifier.params"
        hashes = {}
        for key, name in files.items():
            with open(os.path.join(directory, name), "rb") as f:
                hashes[name] = hashlib.sha256(f.read()).hexdigest()
        manifest = {
            "format": "advgraph-bundle/1",
            "files": files,
            "sha256": hashes,
            "graph_dim": None if self.graph_table is None else self.graph_table.dim,
            "semantic_dim": None if self.sem_table is None else self.sem_table.dim,
            "encoder_out_dim": {k: (None if e is None else e.out_dim) for k, e in
                                (("graph", self.params.graph_enc), ("semantic", self.params.sem_enc))},
            "n_classes": self.params.n_classes,
        }
        manifest.update(manifest_extra or {})
        with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, directory):
        path = os.path.join(directory, "manifest.json")
        if not os.path.exists(path):
            raise ClassifierError(f"missing model bundle: {directory}")
        with open(path, encoding="utf-8") as f:
            manifest = json.load(f)
        files = manifest["files"]
        g = EmbeddingTable.load(os.path.join(directory, files["graph_embedding"])) \
            if "graph_embedding" in files else None
        s = EmbeddingTable.load(os.path.join(directory, files["semantic_embedding"])) \
            if "semantic_embedding" in files else None
        params = ClassifierParams.load(os.path.join(directory, files["classifier"]))
        return cls(g, s, params)


def predict(text, bundle):
    return bundle.predict(text)


# -- training -----------------------------------------------------------------

def loss_and_grads(bundle, texts, labels):
    """Mean cross-entropy over a batch and gradients for every classifier parameter."""
    params = bundle.params
    fused, caches = bundle.features(texts, keep_cache=True)
    logits = fused @ params.head_w.T + params.head_b
    probs = softmax(logits)
    labels = np.asarray(labels)
    m = len(texts)
    loss = float(-np.mean(np.log(probs[np.arange(m), labels])))
    dlogits = probs.copy()
    dlogits[np.arange(m), labels] -= 1.0
    dlogits /= m
    grads = {"head.w": dlogits.T @ fused, "head.b": dlogits.sum(axis=0)}
    dfused = dlogits @ params.head_w
    col = 0
    for prefix, enc, cache in (("graph", params.graph_enc, caches[0]),
                               ("sem", params.sem_enc, caches[1])):
        if enc is None:
            continue
        width = enc.out_dim
        for k, g in encode_backward(dfused[:, col:col + width], enc, cache).items():
            grads[f"{prefix}.{k}"] = g
        col += width
    return loss, grads


def dataset_loss(bundle, corpus, batch=256):
    total = 0.0
    for i in range(0, len(corpus), batch):
        chunk = corpus[i:i + batch]
        probs = bundle.predict_proba([t.chars for t in chunk])
        total -= float(np.sum(np.log(probs[np.arange(len(chunk)), [t.label for t in chunk]])))
    return total / len(corpus)


@dataclass
class ClassifierTrainConfig:
    lr: float = 0.002
    epochs: int = 10
    batch: int = 32
    seed: int = 0
    n_classes: int = 2
    widths: tuple = (2, 3, 4)
    n_filters: int = 32
    weight_decay: float = 0.0


def train_classifier(corpus, graph_table, sem_table, config=None):
    """Adam on mean cross-entropy with both embedding tables frozen.

    Returns (bundle, losses) where ``losses[0]`` is the initial training loss
    and ``losses[e]`` the loss after epoch ``e``.
    """
    cfg = config or ClassifierTrainConfig()
    corpus = list(corpus)
    if not corpus:
        raise ClassifierError("empty training corpus")
    bad = [t for t in corpus if not 0 <= t.label < cfg.n_classes]
    if bad:
        raise ClassifierError(f"label {bad[0].label} out of range for {cfg.n_classes} classes")
    params = init_classifier(graph_table, sem_table, cfg.n_classes, cfg.seed, cfg.widths, cfg.n_filters)
    bundle = ModelBundle(graph_table, sem_table, params)
    losses = [dataset_loss(bundle, corpus)]
    if cfg.epochs == 0:
        return bundle, losses
    rng = np.random.default_rng([cfg.seed, 8])
    named = params.named()
    m1 = {k: np.zeros_like(v) for k, v in named.items()}
    m2 = {k: np.zeros_like(v) for k, v in named.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(corpus))
        for start in range(0, len(order), cfg.batch):
            chunk = [corpus[i] for i in order[start:start + cfg.batch]]
            _, grads = loss_and_grads(bundle, [t.chars for t in chunk], [t.label for t in chunk])
            step += 1
            for k, g in grads.items():
                if cfg.weight_decay and not k.split(".")[-1].startswith("b"):
                    g = g + cfg.weight_decay * named[k]
                m1[k] = b1 * m1[k] + (1 - b1) * g
                m2[k] = b2 * m2[k] + (1 - b2) * g * g
                mhat = m1[k] / (1 - b1 ** step)
                vhat = m2[k] / (1 - b2 ** step)
                named[k] -= cfg.lr * mhat / (np.sqrt(vhat) + eps)
        params.check_finite()
        losses.append(dataset_loss(bundle, corpus))
        log.info("classifier epoch %d: train loss %.5f", epoch + 1, losses[-1])
    return bundle, losses
