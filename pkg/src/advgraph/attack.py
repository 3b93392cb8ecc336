"""Greedy black-box substitution attack driven only by predicted confidences.

Characters are ranked by how much deleting them lowers the true-class
confidence; each ranked position is then replaced by whichever candidate
variant lowers the confidence most, until the label flips or the budget runs
out.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
import json

import numpy as np

from .graph import GLYPH, PHONETIC


class AttackError(ValueError):
    pass


_SOURCES = {"graph-P": (PHONETIC,), "graph-G": (GLYPH,), "both": (PHONETIC, GLYPH), "none": ()}


@dataclass
class AttackConfig:
    budget: int = 4
    source: str = "both"
    external: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.budget < 0:
            raise AttackError("budget must be >= 0")
        if self.source not in _SOURCES:
            raise AttackError(f"candidate source must be one of {sorted(_SOURCES)}")


def load_variant_file(path):
    variants = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            ch, sep, body = line.partition("\t")
            if not sep or len(ch) != 1:
                raise AttackError(f"line {lineno}: expected '<char>\\t<v1>,<v2>,...'")
            vs = [v.strip() for v in body.split(",") if v.strip()]
            if any(len(v) != 1 for v in vs):
                raise AttackError(f"line {lineno}: variants must be single characters")
            variants.setdefault(ch, []).extend(vs)
    return variants


class QueryCounter:
    """Wraps a batch probability function and counts every text it scores."""

    def __init__(self, predict_proba):
        self._fn = predict_proba
        self.count = 0

    def __call__(self, texts):
        self.count += len(texts)
        return self._fn(texts)


def as_proba_fn(model):
    """Accept a ModelBundle-like object or a plain ``texts -> (B, C)`` callable."""
    return model.predict_proba if hasattr(model, "predict_proba") else model


@dataclass
class AttackResult:
    original: str
    label: int
    adversarial: str
    success: bool
    perturbed_positions: list  # (index, original char, replacement)
    confidence_trace: list
    query_count: int
    initial_confidence: float
    final_label: int

    def to_record(self):
        rec = asdict(self)
        rec["perturbed_positions"] = [list(p) for p in self.perturbed_positions]
        return rec

    @classmethod
    def from_record(cls, rec):
        rec = dict(rec)
        rec["perturbed_positions"] = [tuple(p) for p in rec["perturbed_positions"]]
        return cls(**rec)


@dataclass
class AttackReport:
    results: list
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.results)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for r in self.results:
                f.write(json.dumps(r.to_record(), ensure_ascii=False, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls([AttackResult.from_record(json.loads(ln)) for ln in f if ln.strip()])


def _importance(text, label, fn):
    n = len(text)
    if n < 1:
        raise AttackError("cannot rank an empty text")
    if n == 1:
        probs = fn([text])
        scores = [(0, float(probs[0, label]))]
    else:
        probs = fn([text] + [text[:i] + text[i + 1:] for i in range(n)])
        conf = probs[:, label]
        scores = [(i, float(conf[0] - conf[i + 1])) for i in range(n)]
    return sorted(scores, key=lambda s: (-s[1], s[0])), probs[0]


def char_importance(text, label, model):
    """(position, drop in true-class confidence when deleted), most important first.

    Costs ``len(text) + 1`` queries. The empty text is never queried: a
    one-character text costs one query and its position gets the full
    confidence as importance.
    """
    return _importance(text, label, as_proba_fn(model))[0]


def candidate_variants(ch, graph, config):
    """Graph neighbours of the configured relations plus external variants, sorted by code point."""
    out = set()
    rels = _SOURCES[config.source]
    if graph is not None and ch in graph and rels:
        for nb in graph.neighbors(ch):
            if set(graph.relation(ch, nb)) & set(rels):
                out.add(nb)
    out.update(config.external.get(ch, ()))
    out.discard(ch)
    return sorted(out, key=ord)


def attack(text, model, graph, config):
    """Greedy substitution attack on one correctly classified ``LabeledText``."""
    fn = QueryCounter(as_proba_fn(model))
    label = text.label
    chars = list(text.chars)
    ranking, probs0 = _importance(text.chars, label, fn)
    conf = float(probs0[label])
    initial = conf
    pred = int(np.argmax(probs0))
    perturbed, trace = [], []
    for pos, _ in ranking:
        if len(perturbed) >= config.budget or pred != label:
            break
        cands = candidate_variants(chars[pos], graph, config)
        if not cands:
            continue
        trials = ["".join(chars[:pos] + [c] + chars[pos + 1:]) for c in cands]
        probs = fn(trials)
        best = int(np.argmin(probs[:, label]))  # first minimum = lowest code point
        if probs[best, label] < conf:
            perturbed.append((pos, chars[pos], cands[best]))
            chars[pos] = cands[best]
            conf = float(probs[best, label])
            trace.append(conf)
            pred = int(np.argmax(probs[best]))
    adversarial = "".join(chars)
    return AttackResult(text.chars, label, adversarial, pred != label, perturbed, trace,
                        fn.count, initial, pred)


def attackable(corpus, model):
    fn = as_proba_fn(model)
    out = []
    for i in range(0, len(corpus), 256):
        chunk = corpus[i:i + 256]
        pred = fn([t.chars for t in chunk]).argmax(axis=1)
        out.extend(t for t, p in zip(chunk, pred) if p == t.label)
    return out


def attack_corpus(corpus, model, graph, config, workers=1, limit=None):
    """Attack every correctly classified text (optionally a seeded sample of ``limit``)."""
    targets = attackable(list(corpus), model)
    if not targets:
        raise AttackError("nothing attackable: no correctly classified texts")
    if limit is not None and len(targets) > limit:
        rng = np.random.default_rng([config.seed, 11])
        keep = np.sort(rng.choice(len(targets), size=limit, replace=False))
        targets = [targets[i] for i in keep]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(lambda t: attack(t, model, graph, config), targets))
    else:
        results = [attack(t, model, graph, config) for t in targets]
    cfg = {"budget": config.budget, "source": config.source, "seed": config.seed}
    return AttackReport(results, cfg)
