"""Glyph bitmaps and the small conv-net that embeds them.

The network is conv(3x3) -> ReLU -> maxpool(2) repeated once per entry of
``channels``, then a bias-free dense projection to ``dim``. Forward and
backward passes are hand-written numpy so training is bit-reproducible.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

GLYPH_SIZE = 24
N_PIXELS = GLYPH_SIZE * GLYPH_SIZE
PARAMS_MAGIC = "GLYPHPARAMS 1"


class GlyphError(ValueError):
    pass


@dataclass(frozen=True)
class GlyphBitmap:
    char: str
    pixels: np.ndarray  # (24, 24) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.size != N_PIXELS:
            raise GlyphError(f"{self.char!r}: expected {N_PIXELS} pixels, got {px.size}")
        if px.min(initial=0) < 0 or px.max(initial=0) > 255:
            raise GlyphError(f"{self.char!r}: pixel values must lie in [0, 255]")
        object.__setattr__(self, "pixels", px.astype(np.uint8).reshape(GLYPH_SIZE, GLYPH_SIZE))


class GlyphAtlas:
    def __init__(self, bitmaps=()):
        self.entries = {}
        for bm in bitmaps:
            if bm.char in self.entries:
                raise GlyphError(f"duplicate character {bm.char!r}")
            self.entries[bm.char] = bm

    @property
    def charset_size(self):
        return len(self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, ch):
        return ch in self.entries

    def __getitem__(self, ch):
        try:
            return self.entries[ch]
        except KeyError:
            raise GlyphError(f"character {ch!r} not in glyph atlas") from None

    def chars(self):
        return list(self.entries)

    def stack(self, chars):
        """Pixels of ``chars`` as a float (n, 24, 24) array scaled to [0, 1]."""
        return np.stack([self[c].pixels for c in chars]).astype(np.float64) / 255.0

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"GLYPH24 {len(self.entries)}\n")
            for ch, bm in self.entries.items():
                f.write(ch + "\t" + " ".join(map(str, bm.pixels.ravel().tolist())) + "\n")


def load_glyph_atlas(path):
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    header = lines[0].split() if lines else []
    if len(header) != 2 or header[0] != "GLYPH24" or not header[1].isdigit():
        raise GlyphError("line 1: malformed header, expected 'GLYPH24 <count>'")
    count = int(header[1])
    records = [ln for ln in lines[1:] if ln.strip()]
    if len(records) != count:
        raise GlyphError(f"header declares {count} records, found {len(records)}")
    atlas = GlyphAtlas()
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        ch, sep, body = line.partition("\t")
        if not sep or len(ch) != 1:
            raise GlyphError(f"line {lineno}: expected '<char>\\t<576 ints>'")
        try:
            values = [int(v) for v in body.split()]
        except ValueError:
            raise GlyphError(f"line {lineno} ({ch!r}): non-integer pixel") from None
        if len(values) != N_PIXELS:
            raise GlyphError(f"line {lineno} ({ch!r}): expected {N_PIXELS} pixels, got {len(values)}")
        if ch in atlas.entries:
            raise GlyphError(f"line {lineno}: duplicate character {ch!r}")
        try:
            atlas.entries[ch] = GlyphBitmap(ch, np.array(values))
        except GlyphError as exc:
            raise GlyphError(f"line {lineno}: {exc}") from None
    return atlas


@dataclass(frozen=True)
class GlyphTriplet:
    anchor: str
    positive: str
    negative: str

    def __post_init__(self):
        if self.anchor == self.negative:
            raise GlyphError(f"anchor equals negative in triplet {self}")


def load_triplets(path):
    triplets = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or any(len(p) != 1 for p in parts):
                raise GlyphError(f"line {lineno}: expected three tab-separated characters")
            try:
                triplets.append(GlyphTriplet(*parts))
            except GlyphError as exc:
                raise GlyphError(f"line {lineno}: {exc}") from None
    return triplets


def save_triplets(triplets, path):
    with open(path, "w", encoding="utf-8") as f:
        for t in triplets:
            f.write(f"{t.anchor}\t{t.positive}\t{t.negative}\n")


# -- model -------------------------------------------------------------------

@dataclass
class GlyphModelParams:
    """Named float64 tensors: ``conv{i}.w`` (3, 3, cin, cout), ``conv{i}.b``, ``dense.w``."""
    tensors: dict = field(default_factory=dict)
    channels: tuple = (16, 32)
    dim: int = 64

    @property
    def n_conv(self):
        return len(self.channels)

    def copy(self):
        return GlyphModelParams({k: v.copy() for k, v in self.tensors.items()},
                                tuple(self.channels), self.dim)

    def check_finite(self):
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t)):
                raise GlyphError(f"non-finite values in glyph parameter {name}")

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{PARAMS_MAGIC}\n")
            f.write(f"channels {' '.join(map(str, self.channels))}\n")
            f.write(f"dim {self.dim}\n")
            for name in sorted(self.tensors):
                t = self.tensors[name]
                f.write(f"tensor {name} {' '.join(map(str, t.shape))}\n")
                # float.hex round-trips exactly
                f.write(" ".join(float(v).hex() for v in t.ravel()) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
        if lines[0] != PARAMS_MAGIC:
            raise GlyphError("not a glyph parameter file")
        channels = tuple(int(v) for v in lines[1].split()[1:])
        dim = int(lines[2].split()[1])
        tensors = {}
        i = 3
        while i < len(lines) and lines[i]:
            _, name, *shape = lines[i].split()
            values = [float.fromhex(v) for v in lines[i + 1].split()]
            tensors[name] = np.array(values, dtype=np.float64).reshape([int(s) for s in shape])
            i += 2
        return cls(tensors, channels, dim)


def _flat_size(channels):
    side = GLYPH_SIZE
    for _ in channels:
        side = (side - 2) // 2
    return side * side * channels[-1]


def init_glyph_params(seed, channels=(16, 32), dim=64):
    rng = np.random.default_rng(seed)
    tensors = {}
    cin = 1
    for i, cout in enumerate(channels):
        fan_in = 9 * cin
        tensors[f"conv{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (3, 3, cin, cout))
        tensors[f"conv{i}.b"] = np.zeros(cout)
        cin = cout
    flat = _flat_size(channels)
    tensors["dense.w"] = rng.normal(0.0, np.sqrt(1.0 / flat), (flat, dim))
    return GlyphModelParams(tensors, tuple(channels), dim)


def _conv_forward(x, w, b):
    # x (B, H, W, Cin) -> (B, H-2, W-2, Cout)
    patches = sliding_window_view(x, (3, 3), axis=(1, 2))  # (B, H-2, W-2, Cin, 3, 3)
    patches = patches.transpose(0, 1, 2, 4, 5, 3)
    cols = patches.reshape(*patches.shape[:3], -1)
    return cols @ w.reshape(-1, w.shape[-1]) + b, cols


def _conv_backward(dout, cols, w, x_shape):
    cout = w.shape[-1]
    dw = cols.reshape(-1, cols.shape[-1]).T @ dout.reshape(-1, cout)
    db = dout.sum(axis=(0, 1, 2))
    dcols = (dout @ w.reshape(-1, cout).T).reshape(*dout.shape[:3], 3, 3, x_shape[-1])
    dx = np.zeros(x_shape)
    h, wd = dout.shape[1], dout.shape[2]
    for di in range(3):
        for dj in range(3):
            dx[:, di:di + h, dj:dj + wd, :] += dcols[:, :, :, di, dj, :]
    return dx, dw.reshape(w.shape), db


def _pool_forward(x):
    b, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    blocks = x[:, :2 * h2, :2 * w2, :].reshape(b, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(b, h2, w2, c, 4)
    idx = blocks.argmax(axis=-1)
    return np.take_along_axis(blocks, idx[..., None], -1)[..., 0], idx


def _pool_backward(dout, idx, x_shape):
    b, h, w, c = x_shape
    h2, w2 = h // 2, w // 2
    blocks = np.zeros((b, h2, w2, c, 4))
    np.put_along_axis(blocks, idx[..., None], dout[..., None], -1)
    blocks = blocks.reshape(b, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros(x_shape)
    dx[:, :2 * h2, :2 * w2, :] = blocks.reshape(b, 2 * h2, 2 * w2, c)
    return dx


def glyph_forward_batch(images, params, keep_cache=False):
    """Embed a (B, 24, 24) float batch; returns (B, dim) [and a backward cache]."""
    x = np.asarray(images, dtype=np.float64)[..., None]
    cache = []
    for i in range(params.n_conv):
        w, b = params.tensors[f"conv{i}.w"], params.tensors[f"conv{i}.b"]
        z, cols = _conv_forward(x, w, b)
        a = np.maximum(z, 0.0)
        pooled, idx = _pool_forward(a)
        cache.append((x.shape, cols, z, a.shape, idx))
        x = pooled
    flat = x.reshape(x.shape[0], -1)
    out = flat @ params.tensors["dense.w"]
    if keep_cache:
        return out, (cache, flat, x.shape)
    return out


def glyph_backward(dout, params, cache):
    conv_cache, flat, pooled_shape = cache
    grads = {"dense.w": flat.T @ dout}
    dx = (dout @ params.tensors["dense.w"].T).reshape(pooled_shape)
    for i in reversed(range(params.n_conv)):
        x_shape, cols, z, a_shape, idx = conv_cache[i]
        da = _pool_backward(dx, idx, a_shape)
        dz = da * (z > 0)
        dx, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = _conv_backward(
            dz, cols, params.tensors[f"conv{i}.w"], x_shape)
    return grads


def glyph_forward(bitmap, params):
    params.check_finite()
    img = np.asarray(bitmap.pixels, dtype=np.float64)[None] / 255.0
    return glyph_forward_batch(img, params)[0]


def triplet_loss(a, p, n, alpha):
    a, p, n = (np.asarray(v, dtype=np.float64) for v in (a, p, n))
    if not (a.shape == p.shape == n.shape):
        raise ValueError(f"vector shapes differ: {a.shape}, {p.shape}, {n.shape}")
    if alpha < 0:
        raise ValueError("margin alpha must be >= 0")
    return max(0.0, float(np.sum((a - p) ** 2) - np.sum((a - n) ** 2) + alpha))


def triplet_loss_grad(a, p, n, alpha):
    """Loss and gradients w.r.t. (a, p, n); zero gradient on the flat side of the hinge."""
    a, p, n = (np.asarray(v, dtype=np.float64) for v in (a, p, n))
    pre = float(np.sum((a - p) ** 2) - np.sum((a - n) ** 2) + alpha)
    if pre <= 0:
        z = np.zeros_like(a)
        return 0.0, z, z.copy(), z.copy()
    return pre, 2 * (n - p), -2 * (a - p), 2 * (a - n)


def batch_triplet_loss(params, atlas, triplets, alpha, with_grad=False):
    """Mean triplet loss over ``triplets`` (and parameter gradients)."""
    chars = sorted({c for t in triplets for c in (t.anchor, t.positive, t.negative)})
    pos = {c: i for i, c in enumerate(chars)}
    emb, cache = glyph_forward_batch(atlas.stack(chars), params, keep_cache=True)
    ia = np.array([pos[t.anchor] for t in triplets])
    ip = np.array([pos[t.positive] for t in triplets])
    ineg = np.array([pos[t.negative] for t in triplets])
    a, p, n = emb[ia], emb[ip], emb[ineg]
    pre = np.sum((a - p) ** 2, axis=1) - np.sum((a - n) ** 2, axis=1) + alpha
    active = pre > 0
    loss = float(np.where(active, pre, 0.0).mean())
    if not with_grad:
        return loss
    m = len(triplets)
    act = active[:, None] / m
    demb = np.zeros_like(emb)
    np.add.at(demb, ia, act * 2 * (n - p))
    np.add.at(demb, ip, act * -2 * (a - p))
    np.add.at(demb, ineg, act * 2 * (a - n))
    return loss, glyph_backward(demb, params, cache)


@dataclass
class GlyphTrainConfig:
    alpha: float = 0.2
    lr: float = 0.05
    epochs: int = 10
    batch: int = 32
    seed: int = 0
    channels: tuple = (16, 32)
    dim: int = 64


def train_glyph_model(atlas, triplets, config=None, init=None):
    """Mini-batch SGD on the mean triplet loss; returns (params, per-epoch losses).

    ``losses[0]`` is the loss at initialization, ``losses[e]`` after epoch ``e``.
    """
    cfg = config or GlyphTrainConfig()
    if cfg.lr <= 0 or cfg.epochs < 0 or cfg.batch <= 0 or cfg.alpha < 0:
        raise GlyphError("lr and batch must be positive, epochs and alpha non-negative")
    for t in triplets:
        for c in (t.anchor, t.positive, t.negative):
            if c not in atlas:
                raise GlyphError(f"triplet {t} references unknown character {c!r}")
    params = init.copy() if init is not None else init_glyph_params(cfg.seed, cfg.channels, cfg.dim)
    triplets = list(triplets)
    if not triplets:
        return params, []
    rng = np.random.default_rng([cfg.seed, 1])
    losses = [batch_triplet_loss(params, atlas, triplets, cfg.alpha)]
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(triplets))
        for start in range(0, len(order), cfg.batch):
            batch = [triplets[i] for i in order[start:start + cfg.batch]]
            _, grads = batch_triplet_loss(params, atlas, batch, cfg.alpha, with_grad=True)
            for name, g in grads.items():
                params.tensors[name] -= cfg.lr * g
        params.check_finite()
        losses.append(batch_triplet_loss(params, atlas, triplets, cfg.alpha))
        log.info("glyph epoch %d: mean triplet loss %.5f", epoch + 1, losses[-1])
    return params, losses


# -- similarity queries ---------------------------------------------------------

class GlyphIndex:
    """Frozen glyph vectors of every atlas character, for similarity queries."""

    def __init__(self, atlas, params=None, vectors=None):
        self.chars = atlas.chars()
        self._pos = {c: i for i, c in enumerate(self.chars)}
        if vectors is None:
            params.check_finite()
            vectors = glyph_forward_batch(atlas.stack(self.chars), params)
        self.vectors = np.asarray(vectors, dtype=np.float64)
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        self.unit = np.divide(self.vectors, norms, out=np.zeros_like(self.vectors), where=norms > 0)

    def _index(self, ch):
        try:
            return self._pos[ch]
        except KeyError:
            raise GlyphError(f"character {ch!r} not in glyph atlas") from None

    def similarity(self, x, y):
        i, j = self._index(x), self._index(y)
        if i == j:
            return 1.0
        cos = float(np.clip(self.unit[i] @ self.unit[j], -1.0, 1.0))
        return (1.0 + cos) / 2.0

    def scores(self, x, candidates=None):
        """Similarity of ``x`` to each character of ``candidates`` (default: all)."""
        i = self._index(x)
        idx = np.arange(len(self.chars)) if candidates is None else \
            np.array([self._index(c) for c in candidates], dtype=np.int_)
        s = (1.0 + np.clip(self.unit[idx] @ self.unit[i], -1.0, 1.0)) / 2.0
        s[idx == i] = 1.0
        return s

    def top_k(self, x, k, candidates=None):
        if k < 1:
            raise ValueError("k must be >= 1")
        pool = self.chars if candidates is None else list(candidates)
        s = self.scores(x, pool)
        ranked = sorted(((-float(sc), ord(c), c) for c, sc in zip(pool, s) if c != x))
        return [(c, -neg) for neg, _, c in ranked[:k]]


def glyph_similarity(x, y, model, atlas):
    """(1 + cos) / 2 between glyph vectors; ``model`` is params or a GlyphIndex."""
    if isinstance(model, GlyphIndex):
        return model.similarity(x, y)
    bx, by = atlas[x], atlas[y]
    if x == y:
        return 1.0
    hx, hy = glyph_forward(bx, model), glyph_forward(by, model)
    nx, ny = np.linalg.norm(hx), np.linalg.norm(hy)
    if nx == 0 or ny == 0:
        return 0.5
    return (1.0 + float(np.clip(hx @ hy / (nx * ny), -1.0, 1.0))) / 2.0


def top_k_glyph_neighbors(x, k, model, atlas):
    index = model if isinstance(model, GlyphIndex) else GlyphIndex(atlas, model)
    return index.top_k(x, k)
