import numpy as np
import pytest

from advgraph.attack import AttackConfig, AttackReport, AttackResult, attack_corpus
from advgraph.classifier import LabeledText
from advgraph.embedding import EmbeddingTable
from advgraph.evaluation import (EvaluationError, adversarial_similarity, asr, avg_perturbation,
                                 budget_sweep, clean_eval, clean_report_from_predictions,
                                 format_table, robustness_report, semantic_similarity_proxy,
                                 sensitivity_distribution, write_records, write_xy)
from advgraph.glyph import GlyphAtlas, GlyphBitmap, GlyphIndex
from advgraph.graph import AdversarialGraph
from advgraph.phonetics import PinyinLexicon, PinyinReading

from oracles import KeywordModel


def result(n_pert=0, success=False, trace=None, initial=0.9):
    pos = [(i, "A", "B") for i in range(n_pert)]
    return AttackResult("A" * max(n_pert, 1), 1, "B" * n_pert or "A", success, pos,
                        trace or [], 5, initial, 0 if success else 1)


class Oracle:
    """Returns the true label with confidence 1, or always the wrong one."""

    def __init__(self, labels, right=True):
        self.labels, self.right = labels, right

    def predict_proba(self, texts):
        out = np.zeros((len(texts), 2))
        for i, t in enumerate(texts):
            y = self.labels[t]
            out[i, y if self.right else 1 - y] = 1.0
        return out


def test_clean_eval_examples():
    corpus = [LabeledText("a", 0), LabeledText("b", 1)]
    labels = {"a": 0, "b": 1}
    r = clean_eval(Oracle(labels), corpus)
    assert (r.accuracy, r.avg_conf) == (1.0, 1.0)
    r = clean_eval(Oracle(labels, right=False), corpus)
    assert r.accuracy == 0.0 and r.avg_conf is None
    with pytest.raises(EvaluationError):
        clean_eval(Oracle(labels), [])


def test_clean_report_hand_tally():
    confs = [0.9, 0.8, 0.7, 0.6, 1.0, 0.8, 0.8]
    preds = [(1, c) for c in confs] + [(0, 0.5)] * 3
    r = clean_report_from_predictions(preds, [1] * 10)
    assert r.accuracy == pytest.approx(0.7)
    assert r.avg_conf == pytest.approx(0.8)


def test_asr_examples():
    assert asr(AttackReport([result()] * 4)) == 0.0
    assert asr(AttackReport([result(1, True)] * 4)) == 1.0
    assert asr(AttackReport([result(1, True)] * 3 + [result()] * 5)) == 0.375
    with pytest.raises(EvaluationError):
        asr(AttackReport([]))


def test_avg_perturbation_examples():
    assert avg_perturbation(AttackReport([result(2, True)])) == 2.0
    rep = AttackReport([result(k, True) for k in (1, 2, 3)])
    assert avg_perturbation(rep) == 2.0
    rep = AttackReport([result(0), result(2, True)])
    assert avg_perturbation(rep, "all") == 1.0
    with pytest.raises(EvaluationError):
        avg_perturbation(AttackReport([result()]))
    with pytest.raises(ValueError):
        avg_perturbation(rep, "some")


def toy_similarity_inputs():
    lex = PinyinLexicon({"A": [PinyinReading("ma", 1)], "B": [PinyinReading("ma", 4)],
                         "C": [PinyinReading("zhi", 1)], "D": [PinyinReading("xu", 1)],
                         "E": [PinyinReading("bo", 2)]})
    atlas = GlyphAtlas(GlyphBitmap(c, np.zeros((24, 24))) for c in "ABCDE")
    # cosine(C, D) = 0.6 -> 0.8, cosine(C, E) = 0.2 -> 0.6
    v = np.array([[1, 0], [-1, 0], [1, 0], [0.6, 0.8], [0.2, np.sqrt(0.96)]])
    return GlyphIndex(atlas, vectors=v), lex


def test_adversarial_similarity_examples():
    idx, lex = toy_similarity_inputs()
    assert adversarial_similarity("AC", "AC", idx, lex) == 1.0
    assert adversarial_similarity("A", "B", idx, lex) == 1.0  # same pinyin, opposite glyphs
    assert adversarial_similarity("CC", "DE", idx, lex) == pytest.approx(0.7)
    assert adversarial_similarity("CC", "DE", idx, lex) == pytest.approx(adversarial_similarity("DE", "CC", idx, lex))
    with pytest.raises(EvaluationError):
        adversarial_similarity("A", "AB", idx, lex)


def test_semantic_proxy_examples():
    t = EmbeddingTable(list("ab"), [[1.0, 0.0], [0.0, 1.0]])
    assert semantic_similarity_proxy("ab", "ab", t) == pytest.approx(1.0)
    assert semantic_similarity_proxy("a", "b", t) == pytest.approx(0.0)
    assert semantic_similarity_proxy("xy", "zz", t) is None
    with pytest.raises(EvaluationError):
        semantic_similarity_proxy("", "a", t)


def keyword_fixture():
    g = AdversarialGraph("ABCD")
    g.add_edge("A", "B", {"P"})
    corpus = [LabeledText("CAD", 1), LabeledText("ACD", 1), LabeledText("DD", 0), LabeledText("CC", 0)]
    return corpus, KeywordModel("A"), g


def test_budget_sweep_examples():
    corpus, m, g = keyword_fixture()
    rows = budget_sweep(corpus, m, g, [0, 1, 4])
    assert rows[0] == (0, 0.0)
    assert rows[1][1] == rows[2][1] == 0.5
    with pytest.raises(EvaluationError):
        budget_sweep(corpus, m, g, [4, 1])


def test_sweep_is_non_decreasing_on_a_random_model():
    rng = np.random.default_rng(0)
    alpha = [chr(0x4E00 + i) for i in range(12)]
    g = AdversarialGraph(alpha)
    for _ in range(30):
        a, b = rng.choice(12, 2, replace=False)
        g.add_edge(alpha[a], alpha[b], {"G"})
    w = {c: rng.normal() for c in alpha}

    def proba(texts):
        s = np.array([sum(w[c] for c in t) / len(t) for t in texts])
        p = 1 / (1 + np.exp(-3 * s))
        return np.stack([1 - p, p], axis=1)

    corpus = [LabeledText(t, int(proba([t])[0].argmax()))
              for t in ("".join(rng.choice(alpha, 8)) for _ in range(60))]
    rates = [r for _, r in budget_sweep(corpus, proba, g, [0, 1, 2, 3, 4, 6])]
    assert all(b >= a for a, b in zip(rates, rates[1:]))
    assert rates[0] == 0.0 and rates[-1] > 0.0


def test_sensitivity_examples():
    cdf = sensitivity_distribution(AttackReport([result(1, True, [0.6], 0.9)]))
    assert cdf(0.29) == 0.0 and cdf(0.31) == 1.0
    rep = AttackReport([result(3, True, [0.8, 0.6, 0.3], 0.9)])
    cdf = sensitivity_distribution(rep)
    assert cdf.median == pytest.approx(0.2)
    assert all(0 < s <= 1 for s in cdf.samples)
    with pytest.raises(EvaluationError):
        sensitivity_distribution(AttackReport([result()]))


def test_robustness_report_is_consistent():
    corpus, m, g = keyword_fixture()
    rep = attack_corpus(corpus, m, g, AttackConfig())
    idx = GlyphIndex(GlyphAtlas(GlyphBitmap(c, np.zeros((24, 24))) for c in "ABCD"),
                     vectors=np.eye(4))
    lex = PinyinLexicon({c: [PinyinReading("ma", 1)] for c in "AB"})
    r = robustness_report(rep, idx, lex)
    assert r.asr + sum(not x.success for x in rep.results) / len(rep) == 1.0
    assert r.avg_perturbation == 1.0 and r.adversarial_similarity == 1.0
    assert r.n_attacked == 4 and r.semantic_similarity_proxy is None
    assert robustness_report(rep, idx, lex) == r


def test_emitters(tmp_path):
    out = format_table(["name", "value"], [["a", 0.5], ["long-name", None]])
    lines = out.splitlines()
    assert len({len(ln) for ln in lines}) == 1
    assert "n/a" in out and "0.5000" in out
    write_xy([(1, 0.5), (2, 0.75)], tmp_path / "s.xy", ("budget", "asr"))
    assert (tmp_path / "s.xy").read_text().splitlines() == ["# budget asr", "1 0.5", "2 0.75"]
    write_records([result(1, True)], tmp_path / "r.jsonl")
    assert '"success": true' in (tmp_path / "r.jsonl").read_text()
