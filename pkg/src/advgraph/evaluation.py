"""Clean and adversarial metrics over predictions and attack reports."""
from bisect import bisect_right
from dataclasses import dataclass, asdict
import json

import numpy as np

from .attack import AttackConfig, as_proba_fn, attack_corpus
from .phonetics import phonetic_score


class EvaluationError(ValueError):
    pass


@dataclass
class CleanReport:
    accuracy: float
    avg_conf: float | None
    n: int


def clean_eval(model, corpus):
    if not corpus:
        raise EvaluationError("empty corpus")
    fn = as_proba_fn(model)
    probs = np.vstack([fn([t.chars for t in corpus[i:i + 256]]) for i in range(0, len(corpus), 256)])
    labels = np.array([t.label for t in corpus])
    pred = probs.argmax(axis=1)
    correct = pred == labels
    conf = probs[np.arange(len(corpus)), pred]
    avg = float(conf[correct].mean()) if correct.any() else None
    return CleanReport(float(correct.mean()), avg, len(corpus))


def clean_report_from_predictions(predictions, labels):
    """Same as :func:`clean_eval` for precomputed (label, confidence) pairs."""
    if not predictions:
        raise EvaluationError("no predictions")
    correct = [c for (p, c), y in zip(predictions, labels) if p == y]
    acc = len(correct) / len(predictions)
    return CleanReport(acc, sum(correct) / len(correct) if correct else None, len(predictions))


def asr(report):
    if not len(report):
        raise EvaluationError("empty attack report")
    return sum(r.success for r in report.results) / len(report)


def avg_perturbation(report, population="successes-only"):
    if population == "successes-only":
        pop = [r for r in report.results if r.success]
    elif population == "all":
        pop = list(report.results)
    else:
        raise ValueError("population must be 'successes-only' or 'all'")
    if not pop:
        raise EvaluationError(f"no texts in population {population!r}")
    return sum(len(r.perturbed_positions) for r in pop) / len(pop)


def adversarial_similarity(original, adversarial, glyph_index, lex):
    """Mean over changed positions of max(phonetic score, glyph similarity)."""
    if len(original) != len(adversarial):
        raise EvaluationError("texts differ in length")
    scores = []
    for a, b in zip(original, adversarial):
        if a == b:
            continue
        try:
            g = glyph_index.similarity(a, b)
        except ValueError:  # character outside the glyph atlas
            g = 0.0
        scores.append(max(phonetic_score(a, b, lex), g))
    return float(np.mean(scores)) if scores else 1.0


def semantic_similarity_proxy(original, adversarial, table):
    """Cosine of mean in-vocabulary semantic vectors; ``None`` if either side is all OOV.

    Stand-in for an external sentence-similarity service.
    """
    if not original or not adversarial:
        raise EvaluationError("texts must be non-empty")
    vecs = []
    for text in (original, adversarial):
        rows = [table.w_in[table.index[c]] for c in text if c in table.index]
        if not rows:
            return None
        vecs.append(np.mean(rows, axis=0))
    nu, nv = np.linalg.norm(vecs[0]), np.linalg.norm(vecs[1])
    if nu == 0 or nv == 0:
        return None
    return float(np.clip(vecs[0] @ vecs[1] / (nu * nv), -1.0, 1.0))


@dataclass
class RobustnessReport:
    asr: float
    avg_perturbation: float | None
    adversarial_similarity: float | None
    semantic_similarity_proxy: float | None
    mean_queries: float
    n_attacked: int
    population: str = "successes-only"


def robustness_report(report, glyph_index=None, lex=None, sem_table=None,
                      population="successes-only"):
    pop = [r for r in report.results if r.success] if population == "successes-only" \
        else list(report.results)
    avg_pert = avg_perturbation(report, population) if pop else None
    adv_sim = sem_sim = None
    if pop and glyph_index is not None and lex is not None:
        adv_sim = float(np.mean([adversarial_similarity(r.original, r.adversarial, glyph_index, lex)
                                 for r in pop]))
    if pop and sem_table is not None:
        sims = [semantic_similarity_proxy(r.original, r.adversarial, sem_table) for r in pop]
        sims = [s for s in sims if s is not None]
        sem_sim = float(np.mean(sims)) if sims else None
    return RobustnessReport(asr(report), avg_pert, adv_sim, sem_sim,
                            float(np.mean([r.query_count for r in report.results])),
                            len(report), population)


def budget_sweep(corpus, model, graph, budgets, config=None, limit=None, workers=1):
    """ASR at each budget with a shared seed and candidate source."""
    budgets = list(budgets)
    if budgets != sorted(budgets):
        raise EvaluationError("budgets must be sorted ascending")
    base = config or AttackConfig()
    rows = []
    for b in budgets:
        cfg = AttackConfig(b, base.source, base.external, base.seed)
        rows.append((b, asr(attack_corpus(corpus, model, graph, cfg, workers, limit))))
    return rows


class EmpiricalCDF:
    def __init__(self, samples):
        self.samples = sorted(float(s) for s in samples)

    def __call__(self, x):
        return bisect_right(self.samples, x) / len(self.samples)

    def quantile(self, q):
        return float(np.quantile(self.samples, q))

    @property
    def median(self):
        return float(np.median(self.samples))


def sensitivity_distribution(report):
    """Per accepted perturbation, the drop in true-class confidence it caused."""
    drops = []
    for r in report.results:
        before = r.initial_confidence
        for after in r.confidence_trace:
            drops.append(before - after)
            before = after
    if not drops:
        raise EvaluationError("report contains no accepted perturbations")
    return EmpiricalCDF(drops)


# -- emission -------------------------------------------------------------------

def format_table(headers, rows):
    cells = [[str(h) for h in headers]] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(v):
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def write_records(records, path):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            if hasattr(rec, "__dataclass_fields__"):
                rec = asdict(rec)
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def write_xy(pairs, path, header=("x", "y")):
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {header[0]} {header[1]}\n")
        for x, y in pairs:
            f.write(f"{x!r} {y!r}\n")
