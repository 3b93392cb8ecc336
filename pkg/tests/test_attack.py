import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advgraph.attack import (AttackConfig, AttackError, AttackReport, QueryCounter, attack,
                             attack_corpus, candidate_variants, char_importance, load_variant_file)
from advgraph.classifier import LabeledText
from advgraph.graph import AdversarialGraph

from oracles import ConstantModel, KeywordModel, brute_importance

ALPHA = [chr(0x4E00 + i) for i in range(10)]


class HashModel:
    """Deterministic but irregular: class-1 score from per-character weights."""

    def __init__(self, seed):
        rng = np.random.default_rng(seed)
        self.w = {c: rng.normal() for c in ALPHA}
        self.bias = rng.normal(0, 0.5)

    def predict_proba(self, texts):
        s = np.array([self.bias + sum(self.w.get(c, 0.0) * (1 + i % 3) for i, c in enumerate(t)) / len(t)
                      for t in texts])
        p1 = 1 / (1 + np.exp(-4 * s))
        return np.stack([1 - p1, p1], axis=1)


def random_graph(rng):
    g = AdversarialGraph(ALPHA)
    for _ in range(int(rng.integers(0, 25))):
        a, b = rng.choice(10, 2, replace=False)
        g.add_edge(ALPHA[a], ALPHA[b], [{"P"}, {"G"}, {"P", "G"}][int(rng.integers(3))])
    return g


def labeled(text, model):
    return LabeledText(text, int(model.predict_proba([text])[0].argmax()))


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet=ALPHA, min_size=1, max_size=8), st.integers(0, 50))
def test_importance_matches_brute_force(text, seed):
    m = HashModel(seed)
    label = int(m.predict_proba([text])[0].argmax())
    got = char_importance(text, label, m)
    want = brute_importance(text, label, m.predict_proba)
    assert [i for i, _ in got] == [i for i, _ in want]
    np.testing.assert_allclose([s for _, s in got], [s for _, s in want], atol=1e-12)


def test_importance_query_cost():
    m = QueryCounter(HashModel(0).predict_proba)
    char_importance("一二三四", 0, m)
    assert m.count == 5
    m.count = 0
    char_importance("一", 0, m)
    assert m.count == 1


def check_invariants(r, text, model, graph, cfg):
    assert len(r.perturbed_positions) <= cfg.budget
    positions = [p for p, _, _ in r.perturbed_positions]
    assert len(set(positions)) == len(positions)
    assert len(r.adversarial) == len(r.original)
    changed = {i for i, (a, b) in enumerate(zip(r.original, r.adversarial)) if a != b}
    assert changed == set(positions)
    for p, old, new in r.perturbed_positions:
        assert r.original[p] == old and r.adversarial[p] == new
        assert new in candidate_variants(old, graph, cfg)
    trace = [r.initial_confidence] + r.confidence_trace
    assert all(b < a for a, b in zip(trace, trace[1:]))
    assert len(r.confidence_trace) == len(r.perturbed_positions)
    probs = model.predict_proba([r.adversarial])[0]
    assert r.final_label == int(probs.argmax())
    if r.confidence_trace:
        assert probs[text.label] == pytest.approx(r.confidence_trace[-1], abs=1e-12)
    assert r.success == (r.final_label != text.label)
    assert r.query_count >= len(text.chars) + (1 if len(text.chars) > 1 else 0)


def test_invariants_over_seeded_attacks():
    rng = np.random.default_rng(0)
    for i in range(500):
        model = HashModel(i)
        graph = random_graph(rng)
        text = labeled("".join(rng.choice(ALPHA, int(rng.integers(1, 12)))), model)
        cfg = AttackConfig(budget=int(rng.integers(0, 6)),
                           source=["both", "graph-P", "graph-G", "none"][i % 4], seed=i)
        r = attack(text, model, graph, cfg)
        check_invariants(r, text, model, graph, cfg)


def test_budget_prefix_property():
    rng = np.random.default_rng(1)
    for i in range(60):
        model, graph = HashModel(i), random_graph(rng)
        text = labeled("".join(rng.choice(ALPHA, 10)), model)
        prev = None
        for b in range(6):
            r = attack(text, model, graph, AttackConfig(budget=b))
            if prev is not None:
                assert r.perturbed_positions[:len(prev.perturbed_positions)] == prev.perturbed_positions
                assert r.success >= prev.success
            prev = r


def test_keyword_model_flips_with_one_substitution():
    g = AdversarialGraph("ABCD")
    g.add_edge("A", "B", {"P"})
    m = KeywordModel("A")
    r = attack(LabeledText("CAD", 1), m, g, AttackConfig(budget=4))
    assert r.success and r.adversarial == "CBD"
    assert r.perturbed_positions == [(1, "A", "B")]
    assert r.query_count == 4 + 1


def test_constant_model_cannot_be_attacked():
    g = AdversarialGraph("AB")
    g.add_edge("A", "B", {"G"})
    r = attack(LabeledText("AB", 1), ConstantModel(), g, AttackConfig())
    assert not r.success and r.adversarial == "AB" and r.perturbed_positions == []
    assert r.query_count == 3 + 2  # ranking plus one probe per position


def test_zero_budget_only_ranks():
    g = AdversarialGraph("AB")
    g.add_edge("A", "B", {"G"})
    r = attack(LabeledText("AA", 1), KeywordModel("A"), g, AttackConfig(budget=0))
    assert r.query_count == 3 and not r.perturbed_positions


def test_candidate_sources_and_external_union():
    g = AdversarialGraph("ABCD")
    g.add_edge("A", "B", {"P"})
    g.add_edge("A", "C", {"G"})
    g.add_edge("A", "D", {"P", "G"})
    assert candidate_variants("A", g, AttackConfig(source="graph-P")) == ["B", "D"]
    assert candidate_variants("A", g, AttackConfig(source="graph-G")) == ["C", "D"]
    assert candidate_variants("A", g, AttackConfig(source="none")) == []
    cfg = AttackConfig(source="graph-P", external={"A": ["Z", "B", "A"]})
    assert candidate_variants("A", g, cfg) == ["B", "D", "Z"]
    assert candidate_variants("Q", g, cfg) == []
    with pytest.raises(AttackError):
        AttackConfig(source="phonetic")
    with pytest.raises(AttackError):
        AttackConfig(budget=-1)


def test_variant_file(tmp_path):
    p = tmp_path / "v.tsv"
    p.write_text("A\tB, C\nA\tD\n\n", encoding="utf-8")
    assert load_variant_file(p) == {"A": ["B", "C", "D"]}
    p.write_text("A\tBC\n", encoding="utf-8")
    with pytest.raises(AttackError, match="line 1"):
        load_variant_file(p)
    p.write_text("AB\tC\n", encoding="utf-8")
    with pytest.raises(AttackError, match="line 1"):
        load_variant_file(p)


def test_corpus_attack_skips_misclassified_and_round_trips(tmp_path):
    g = AdversarialGraph("ABCD")
    g.add_edge("A", "B", {"P"})
    m = KeywordModel("A")
    corpus = [LabeledText("CAD", 1), LabeledText("CCD", 1), LabeledText("DD", 0)]
    rep = attack_corpus(corpus, m, g, AttackConfig())
    assert [r.original for r in rep.results] == ["CAD", "DD"]
    rep.save(tmp_path / "a.jsonl")
    again = AttackReport.load(tmp_path / "a.jsonl")
    assert again.results == rep.results


def test_nothing_attackable():
    with pytest.raises(AttackError, match="nothing attackable"):
        attack_corpus([LabeledText("CC", 1)], KeywordModel("A"), AdversarialGraph("C"), AttackConfig())


def test_limit_and_workers_are_deterministic():
    rng = np.random.default_rng(3)
    model, graph = HashModel(3), random_graph(rng)
    corpus = [labeled("".join(rng.choice(ALPHA, 8)), model) for _ in range(40)]
    a = attack_corpus(corpus, model, graph, AttackConfig(seed=5), limit=10)
    b = attack_corpus(corpus, model, graph, AttackConfig(seed=5), workers=3, limit=10)
    assert len(a) == 10 and a.results == b.results
