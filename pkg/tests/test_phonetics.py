import itertools

import pytest
from hypothesis import given, strategies as st

from advgraph.phonetics import (LexiconError, PinyinLexicon, PinyinReading, bundled_lexicon,
                                load_pinyin_lexicon, parse_lexicon_lines, phonetic_score,
                                phonetically_similar, restricted_edit_distance_leq1, to_pinyin)

from oracles import deletion_rule, similar_by_readings

syllable = st.text(alphabet="abcdeghilnouz", min_size=1, max_size=7)


def lex_of(mapping):
    return PinyinLexicon({c: [PinyinReading.parse(r) for r in rs] for c, rs in mapping.items()})


def test_single_record(tmp_path):
    p = tmp_path / "lex.tsv"
    p.write_text("X\tzhi4\n", encoding="utf-8")
    lex = load_pinyin_lexicon(p)
    assert len(lex) == 1
    assert to_pinyin("X", lex) == [PinyinReading("zhi", 4)]


def test_duplicate_readings_stored_once():
    lex = parse_lexicon_lines(["A\tma1,ma1,ma3"])
    assert to_pinyin("A", lex) == [PinyinReading("ma", 1), PinyinReading("ma", 3)]


def test_thousand_line_file_counts_distinct(tmp_path):
    chars = [chr(0x4E00 + i % 700) for i in range(1000)]
    p = tmp_path / "lex.tsv"
    p.write_text("".join(f"{c}\tba{1 + i % 4}\n" for i, c in enumerate(chars)), encoding="utf-8")
    assert len(load_pinyin_lexicon(p)) == len(set(chars))


@pytest.mark.parametrize("line", ["A\t", "A\tzhi4,", "AB\tzhi", "A zhi", "A\tZHI", "A\tzh6"])
def test_malformed_lines_report_line_number(line):
    with pytest.raises(LexiconError, match="line 2"):
        parse_lexicon_lines(["B\tba1", line])


def test_to_pinyin_absent_and_polyphonic():
    lex = lex_of({"A": ["xing2", "hang2"]})
    assert to_pinyin("Z", lex) == []
    assert [r.syllable for r in to_pinyin("A", lex)] == ["xing", "hang"]


@pytest.mark.parametrize("a,b,expected", [
    ("zhi", "zhi", True), ("liang", "lang", True), ("zhi", "chi", False),
    ("wei", "ei", True), ("wei", "wai", False), ("an", "ang", True), ("a", "ang", False),
])
def test_restricted_edit_distance_examples(a, b, expected):
    assert restricted_edit_distance_leq1(a, b) is expected
    assert restricted_edit_distance_leq1(b, a) is expected


def test_empty_syllable_rejected():
    with pytest.raises(ValueError):
        restricted_edit_distance_leq1("", "a")


@given(syllable, syllable)
def test_rule_matches_deletion_enumeration(a, b):
    assert restricted_edit_distance_leq1(a, b) == deletion_rule(a, b)


@given(syllable)
def test_single_deletions_always_match(s):
    for i in range(len(s)):
        if s[:i] + s[i + 1:]:
            assert restricted_edit_distance_leq1(s, s[:i] + s[i + 1:])


def test_phonetically_similar_examples():
    lex = lex_of({"A": ["wei4"], "B": ["wai4"], "C": ["ei1"], "D": ["xing2", "hang2"], "E": ["han4"]})
    assert phonetically_similar("A", "A", lex)
    assert not phonetically_similar("A", "B", lex)
    assert phonetically_similar("A", "C", lex)
    assert phonetically_similar("D", "E", lex)  # via the second reading
    assert not phonetically_similar("A", "Z", lex)


def test_tones_ignored():
    lex = lex_of({"A": ["ma1"], "B": ["ma4"]})
    assert phonetic_score("A", "B", lex) == 1.0


def test_phonetic_score_levels():
    lex = lex_of({"A": ["liang2"], "B": ["lang2"], "C": ["zhi1"], "D": ["liang4"]})
    assert phonetic_score("A", "D", lex) == 1.0
    assert phonetic_score("A", "B", lex) == 0.8
    assert phonetic_score("A", "C", lex) == 0.0


def test_bundled_lexicon_symmetry_and_reflexivity():
    lex = bundled_lexicon()
    chars = list(lex)[:120]
    for x, y in itertools.combinations(chars, 2):
        assert phonetically_similar(x, y, lex) == phonetically_similar(y, x, lex)
        assert phonetically_similar(x, y, lex) == similar_by_readings(lex.syllables(x), lex.syllables(y))
    assert all(phonetically_similar(x, x, lex) for x in chars)


def test_save_round_trip(tmp_path):
    lex = bundled_lexicon().subset(list(bundled_lexicon())[:50])
    lex.save(tmp_path / "l.tsv")
    again = load_pinyin_lexicon(tmp_path / "l.tsv")
    assert list(again) == list(lex)
    assert all(again.readings(c) == lex.readings(c) for c in lex)
