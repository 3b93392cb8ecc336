"""Synthetic stand-ins for the data this toolkit normally consumes.

* glyph atlases whose shape families follow homophone groups,
* self-supervised glyph triplets (positives are pixel-flipped copies),
* keyword classification corpora with an obfuscated test split.
"""
from dataclasses import dataclass, field

import numpy as np

from .classifier import LabeledText
from .glyph import GLYPH_SIZE, GlyphAtlas, GlyphBitmap, GlyphTriplet

PUA_START = 0xE000


class SynthError(ValueError):
    pass


def _draw_stroke(img, rng, thickness=2):
    r0, c0 = rng.integers(2, GLYPH_SIZE - 2, 2)
    horizontal = rng.random() < 0.5
    length = int(rng.integers(5, 16))
    for t in range(length):
        r, c = (r0, c0 + t) if horizontal else (r0 + t, c0)
        if 0 <= r < GLYPH_SIZE and 0 <= c < GLYPH_SIZE:
            img[r:r + thickness, c:c + thickness] = 255


def _base_shape(rng):
    img = np.zeros((GLYPH_SIZE, GLYPH_SIZE), dtype=np.uint8)
    for _ in range(int(rng.integers(4, 7))):
        _draw_stroke(img, rng)
    return img


def homophone_charset(lex, size, seed=0, min_group=3, max_group=8):
    """Draw ``size`` characters as whole groups sharing a first-listed syllable.

    Returns (charset sorted by code point, groups).
    """
    groups = {}
    for ch in lex:
        groups.setdefault(lex.syllables(ch)[0], []).append(ch)
    pool = sorted((sorted(g, key=ord) for g in groups.values() if len(g) >= min_group),
                  key=lambda g: ord(g[0]))
    rng = np.random.default_rng([seed, 20])
    chosen, total = [], 0
    for i in rng.permutation(len(pool)):
        g = pool[i]
        if len(g) > max_group:
            g = [g[j] for j in sorted(rng.choice(len(g), max_group, replace=False))]
        if total + len(g) > size:
            g = g[:size - total]
        if len(g) >= 2 or (g and total + len(g) == size):
            chosen.append(g)
            total += len(g)
        if total == size:
            break
    if total < size:
        raise SynthError(f"lexicon too small for a {size}-character homophone charset")
    return sorted((c for g in chosen for c in g), key=ord), chosen


def grouped_glyph_atlas(groups, seed=0, aligned=1.0):
    """Atlas whose shape families follow ``groups`` (phonetic-component style).

    A fraction ``aligned`` of the groups keep their own shape family; the
    remaining characters are pooled and re-dealt into random families of the
    same sizes. Returns (atlas, families).
    """
    rng = np.random.default_rng([seed, 26])
    keep = rng.random(len(groups)) < aligned
    families = [list(g) for g, k in zip(groups, keep) if k]
    loose = [c for g, k in zip(groups, keep) if not k for c in g]
    loose = [loose[i] for i in rng.permutation(len(loose))]
    sizes = [len(g) for g, k in zip(groups, keep) if not k]
    at = 0
    for n in sizes:
        families.append(loose[at:at + n])
        at += n
    bitmaps = []
    for fam in families:
        bitmaps.extend(_family_bitmaps(fam, rng))
    bitmaps.sort(key=lambda b: ord(b.char))
    return GlyphAtlas(bitmaps), families


def _family_bitmaps(fam, rng):
    base = _base_shape(rng)
    out = []
    for ch in fam:
        img = base.copy()
        r, c = rng.integers(1, GLYPH_SIZE - 5, 2)
        if rng.random() < 0.5:
            img[r, c:c + 4] = 255
        else:
            img[r:r + 4, c] = 255
        out.append(GlyphBitmap(ch, img))
    return out


def flip_pixels(pixels, rate, rng):
    """Invert a ``rate`` fraction of pixels (at least one)."""
    flat = pixels.ravel().copy()
    n = max(1, int(round(rate * flat.size)))
    idx = rng.choice(flat.size, size=n, replace=False)
    flat[idx] = 255 - flat[idx]
    return flat.reshape(pixels.shape)


def synthetic_triplets(atlas, count, seed=0, flip_rate=0.05):
    """Self-supervised triplets over ``atlas``.

    Each positive is a fresh copy of the anchor with at most ``flip_rate`` of
    its pixels inverted, registered under a private-use code point; negatives
    are other atlas characters. Returns (augmented atlas, triplets).
    """
    if not 0 < flip_rate <= 0.05:
        raise SynthError("flip_rate must lie in (0, 0.05]")
    chars = atlas.chars()
    if len(chars) < 2:
        raise SynthError("need at least two characters")
    if count > 0x1900:
        raise SynthError("too many triplets for the private-use block")
    rng = np.random.default_rng([seed, 22])
    augmented = GlyphAtlas(atlas.entries.values())
    triplets = []
    for i in range(count):
        a = chars[int(rng.integers(len(chars)))]
        n = a
        while n == a:
            n = chars[int(rng.integers(len(chars)))]
        pos = chr(PUA_START + i)
        augmented.entries[pos] = GlyphBitmap(pos, flip_pixels(atlas[a].pixels, flip_rate, rng))
        triplets.append(GlyphTriplet(a, pos, n))
    return augmented, triplets


# -- corpora ---------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    n_classes: int = 2
    keywords: list = field(default_factory=list)  # per class, list of characters
    fillers: list = field(default_factory=list)
    texts_per_class: int = 1000
    test_per_class: int = 100
    length_range: tuple = (12, 20)
    keywords_per_text: tuple = (1, 3)
    obfuscation_rate: float = 0.5

    def validate(self):
        if len(self.keywords) != self.n_classes:
            raise SynthError("need one keyword set per class")
        seen = set()
        for ks in self.keywords:
            if not ks:
                raise SynthError("empty keyword set")
            if seen & set(ks):
                raise SynthError("keyword sets must be disjoint across classes")
            seen |= set(ks)
        if not self.fillers:
            raise SynthError("empty filler pool")
        lo, hi = self.length_range
        if lo < 1 or hi < lo:
            raise SynthError("bad length range")
        if self.keywords_per_text[0] < 1 or self.keywords_per_text[1] < self.keywords_per_text[0]:
            raise SynthError("texts need at least one keyword")
        if not 0 < self.obfuscation_rate <= 1:
            raise SynthError("obfuscation rate must lie in (0, 1] (each obfuscated text needs a variant)")


def choose_keywords(graph, n_classes, per_class, seed=0, min_degree=3, filler_distance=2):
    """Pick disjoint keyword sets, one per class.

    Keywords of different classes share no neighbours (graph distance >= 3),
    so no single substitution turns one class's keyword into a variant of
    another's. Fillers are the nodes at graph distance >= ``filler_distance``
    from every keyword (the default 2 excludes keywords and their variants).
    """
    rng = np.random.default_rng([seed, 24])
    nodes = [n for n in graph.nodes if graph.degree(n) >= min_degree]
    order = [nodes[i] for i in rng.permutation(len(nodes))]
    keywords = [[] for _ in range(n_classes)]
    reach = [set() for _ in range(n_classes)]  # nodes within 2 hops of class keywords
    for n in order:
        if all(len(k) == per_class for k in keywords):
            break
        c = min(range(n_classes), key=lambda i: len(keywords[i]))
        if any(n in reach[o] for o in range(n_classes) if o != c):
            continue
        one_hop = set(graph.neighbors(n)) | {n}
        two_hop = set(one_hop)
        for m in one_hop:
            two_hop.update(graph.neighbors(m))
        if any(one_hop & {k for k in keywords[o]} or two_hop & set(keywords[o])
               for o in range(n_classes) if o != c):
            continue
        keywords[c].append(n)
        reach[c] |= two_hop
    if not all(len(k) == per_class for k in keywords):
        raise SynthError("graph too dense to separate keyword sets")
    blocked = set()
    for ks in keywords:
        for k in ks:
            ring = {k} | set(graph.neighbors(k))
            for _ in range(filler_distance - 2):
                ring |= {m for r in ring for m in graph.neighbors(r)}
            blocked |= ring
    fillers = sorted((n for n in graph.nodes if n not in blocked), key=ord)
    return keywords, fillers


def _make_text(rng, keywords, fillers, length_range, kw_range):
    n = int(rng.integers(length_range[0], length_range[1] + 1))
    k = min(n, int(rng.integers(kw_range[0], kw_range[1] + 1)))
    chars = [fillers[int(i)] for i in rng.integers(len(fillers), size=n)]
    slots = rng.choice(n, size=k, replace=False)
    for s in slots:
        chars[int(s)] = keywords[int(rng.integers(len(keywords)))]
    return "".join(chars)


def obfuscate(text, keyword_set, graph, rate, rng):
    """Replace keyword occurrences by uniformly drawn graph variants (at least one)."""
    positions = [i for i, c in enumerate(text) if c in keyword_set]
    if not positions:
        raise SynthError(f"text {text!r} has no keyword to obfuscate")
    chars = list(text)
    chosen = [p for p in positions if rng.random() < rate]
    if not chosen:
        chosen = [positions[int(rng.integers(len(positions)))]]
    for p in chosen:
        pool = graph.neighbors(chars[p])
        chars[p] = pool[int(rng.integers(len(pool)))]
    return "".join(chars)


def synth_corpus(spec, graph, seed=0):
    """(train, clean test, obfuscated test) corpora; the obfuscated split mirrors clean test."""
    spec.validate()
    for ks in spec.keywords:
        for k in ks:
            if k not in graph or not graph.neighbors(k):
                raise SynthError(f"keyword {k!r} has no graph variants")
    rng = np.random.default_rng([seed, 25])
    train, test, obf = [], [], []
    for split, n in ((train, spec.texts_per_class), (test, spec.test_per_class)):
        for i in range(n):
            for y in range(spec.n_classes):
                split.append(LabeledText(_make_text(rng, spec.keywords[y], spec.fillers,
                                                    spec.length_range, spec.keywords_per_text), y))
    for t in test:
        obf.append(LabeledText(obfuscate(t.chars, set(spec.keywords[t.label]), graph,
                                         spec.obfuscation_rate, rng), t.label))
    return train, test, obf
