"""The undirected adversarial character graph with P (phonetic) / G (glyph) edges."""
import numpy as np

from .glyph import GlyphError, GlyphIndex
from .phonetics import restricted_edit_distance_leq1

PHONETIC = "P"
GLYPH = "G"
_TOKENS = {"P": frozenset("P"), "G": frozenset("G"), "PG": frozenset("PG"), "GP": frozenset("PG")}


class GraphError(ValueError):
    pass


def relation_token(rel):
    return "".join(r for r in "PG" if r in rel)


class AdversarialGraph:
    def __init__(self, nodes=()):
        self.nodes = []
        self._adj = {}
        for n in nodes:
            self.add_node(n)

    def add_node(self, n):
        if n not in self._adj:
            self.nodes.append(n)
            self._adj[n] = {}

    def add_edge(self, a, b, relations):
        """Add (or union into) the undirected edge {a, b}."""
        if a == b:
            raise GraphError(f"self-loop on {a!r}")
        for n in (a, b):
            if n not in self._adj:
                raise GraphError(f"edge endpoint {n!r} is not a node")
        rel = frozenset(relations)
        if not rel or not rel <= {PHONETIC, GLYPH}:
            raise GraphError(f"bad relation set {set(rel)!r}")
        merged = self._adj[a].get(b, frozenset()) | rel
        self._adj[a][b] = merged
        self._adj[b][a] = merged

    def __contains__(self, n):
        return n in self._adj

    def __len__(self):
        return len(self.nodes)

    def relation(self, a, b):
        return self._adj.get(a, {}).get(b)

    def edges(self):
        """Each undirected edge once as (a, b, relations), a before b in node order."""
        order = {n: i for i, n in enumerate(self.nodes)}
        out = []
        for a in self.nodes:
            for b, rel in self._adj[a].items():
                if order[a] < order[b]:
                    out.append((a, b, rel))
        return out

    def edge_set(self):
        return {(frozenset((a, b)), rel) for a, b, rel in self.edges()}

    def n_edges(self):
        return sum(len(v) for v in self._adj.values()) // 2

    def degree(self, n):
        return len(self._adj[n])

    def neighbors(self, x, filter="any"):
        if x not in self._adj:
            raise GraphError(f"unknown node {x!r}")
        if filter == "any":
            keep = self._adj[x]
        elif filter in (PHONETIC, GLYPH):
            keep = [b for b, rel in self._adj[x].items() if filter in rel]
        else:
            raise ValueError(f"filter must be 'P', 'G' or 'any', not {filter!r}")
        return sorted(keep, key=ord)

    def csr(self):
        """(indptr, indices) over node positions, neighbors sorted by position."""
        pos = {n: i for i, n in enumerate(self.nodes)}
        indptr = np.zeros(len(self.nodes) + 1, dtype=np.int_)
        indices = []
        for i, n in enumerate(self.nodes):
            nb = sorted(pos[b] for b in self._adj[n])
            indices.extend(nb)
            indptr[i + 1] = indptr[i] + len(nb)
        return indptr, np.array(indices, dtype=np.int_)

    def __eq__(self, other):
        return isinstance(other, AdversarialGraph) and self.nodes == other.nodes \
            and self.edge_set() == other.edge_set()

    def save(self, path):
        save_graph(self, path)


def phonetic_pairs(charset, lex):
    """All unordered pairs whose syllables match exactly or by one deletion."""
    by_syl = {}
    for c in charset:
        for s in lex.syllables(c):
            by_syl.setdefault(s, []).append(c)
    # deletion key -> longer syllables producing it
    longer = {}
    for s in by_syl:
        for i in range(len(s)):
            longer.setdefault(s[:i] + s[i + 1:], set()).add(s)
    pairs = set()
    for s, chars in by_syl.items():
        partners = [s] + [t for t in longer.get(s, ()) if restricted_edit_distance_leq1(s, t)]
        for t in partners:
            for a in chars:
                for b in by_syl[t]:
                    if a != b:
                        pairs.add(frozenset((a, b)))
    return pairs


def build_graph(charset, lex, glyph_index, k=10):
    """Phonetic edges for every qualifying pair plus symmetrized top-k glyph edges.

    ``glyph_index`` is a :class:`GlyphIndex` (or anything with ``top_k``).
    """
    charset = list(charset)
    if not charset:
        raise GraphError("empty charset")
    if len(set(charset)) != len(charset):
        raise GraphError("charset contains duplicates")
    if isinstance(glyph_index, GlyphIndex):
        missing = [c for c in charset if c not in glyph_index._pos]
        if missing:
            raise GlyphError(f"characters missing from glyph atlas: {''.join(missing[:10])}")
    g = AdversarialGraph(charset)
    for pair in sorted(phonetic_pairs(charset, lex), key=lambda p: sorted(map(ord, p))):
        a, b = sorted(pair, key=ord)
        g.add_edge(a, b, {PHONETIC})
    if k > 0 and len(charset) > 1:
        for c in charset:
            for nb, _ in glyph_index.top_k(c, k, candidates=charset):
                g.add_edge(c, nb, {GLYPH})
    return g


def save_graph(g, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("ADVGRAPH 1\n")
        for n in g.nodes:
            f.write(f"N {n}\n")
        for a, b, rel in g.edges():
            f.write(f"E {a} {b} {relation_token(rel)}\n")


def load_graph(path):
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if not lines or lines[0].strip() != "ADVGRAPH 1":
        raise GraphError("line 1: expected header 'ADVGRAPH 1'")
    g = AdversarialGraph()
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        parts = line.split(" ")
        if parts[0] == "N" and len(parts) == 2 and len(parts[1]) == 1:
            g.add_node(parts[1])
        elif parts[0] == "E" and len(parts) == 4:
            a, b, tok = parts[1:]
            if tok not in _TOKENS:
                raise GraphError(f"line {lineno}: unknown relation token {tok!r}")
            try:
                g.add_edge(a, b, _TOKENS[tok])
            except GraphError as exc:
                raise GraphError(f"line {lineno}: {exc}") from None
        else:
            raise GraphError(f"line {lineno}: malformed record {line!r}")
    return g
