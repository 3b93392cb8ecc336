"""Pinyin lexicon and the deletion-only phonetic similarity rule."""
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
import re

_READING_RE = re.compile(r"^([a-z]{1,7})([1-5])?$")


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class PinyinReading:
    syllable: str
    tone: int | None = None

    def __post_init__(self):
        if not self.syllable or len(self.syllable) > 7 or not self.syllable.isascii() \
                or not self.syllable.isalpha() or not self.syllable.islower():
            raise LexiconError(f"invalid syllable {self.syllable!r}")
        if self.tone is not None and not 1 <= self.tone <= 5:
            raise LexiconError(f"invalid tone {self.tone!r}")

    @classmethod
    def parse(cls, token):
        m = _READING_RE.match(token)
        if m is None:
            raise LexiconError(f"malformed reading {token!r}")
        return cls(m.group(1), int(m.group(2)) if m.group(2) else None)

    def __str__(self):
        return self.syllable if self.tone is None else f"{self.syllable}{self.tone}"


class PinyinLexicon:
    """Immutable character -> readings map; readings keep file order."""

    def __init__(self, entries):
        self._entries = {}
        for ch, readings in entries.items():
            deduped = []
            for r in readings:
                if r not in deduped:
                    deduped.append(r)
            if not deduped:
                raise LexiconError(f"character {ch!r} has no readings")
            self._entries[ch] = tuple(deduped)

    def __len__(self):
        return len(self._entries)

    def __contains__(self, ch):
        return ch in self._entries

    def __iter__(self):
        return iter(self._entries)

    def readings(self, ch):
        return list(self._entries.get(ch, ()))

    def syllables(self, ch):
        """Distinct toneless syllables of ``ch`` in first-seen order."""
        out = []
        for r in self._entries.get(ch, ()):
            if r.syllable not in out:
                out.append(r.syllable)
        return out

    def subset(self, chars):
        return PinyinLexicon({c: self._entries[c] for c in chars if c in self._entries})

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for ch, readings in self._entries.items():
                f.write(f"{ch}\t{','.join(str(r) for r in readings)}\n")


def parse_lexicon_lines(lines):
    entries = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or len(parts[0]) != 1:
            raise LexiconError(f"line {lineno}: expected '<char>\\t<readings>'")
        ch, body = parts
        tokens = [t.strip() for t in body.split(",")]
        if any(not t for t in tokens):
            raise LexiconError(f"line {lineno}: empty reading")
        try:
            readings = [PinyinReading.parse(t) for t in tokens]
        except LexiconError as exc:
            raise LexiconError(f"line {lineno}: {exc}") from None
        entries.setdefault(ch, []).extend(readings)
    return PinyinLexicon(entries)


def load_pinyin_lexicon(path):
    with open(path, encoding="utf-8") as f:
        return parse_lexicon_lines(f)


def bundled_lexicon():
    """Pinyin readings for the 3,755 GB2312 level-1 characters."""
    text = resources.files("advgraph").joinpath("data/lexicon_gb1.tsv").read_text("utf-8")
    return parse_lexicon_lines(text.splitlines())


def bundled_lexicon_path():
    return Path(str(resources.files("advgraph").joinpath("data/lexicon_gb1.tsv")))


def to_pinyin(ch, lex):
    return lex.readings(ch)


def restricted_edit_distance_leq1(a, b):
    """True iff ``a == b`` or one deletion from the longer string gives the shorter.

    Substitutions and insertions never count.
    """
    if not a or not b:
        raise ValueError("syllables must be non-empty")
    if a == b:
        return True
    if len(a) < len(b):
        a, b = b, a
    if len(a) - len(b) != 1:
        return False
    i = 0
    while i < len(b) and a[i] == b[i]:
        i += 1
    return a[i + 1:] == b[i:]


def syllable_distance(a, b):
    """0, 1, or None (further than one deletion)."""
    if a == b:
        return 0
    return 1 if restricted_edit_distance_leq1(a, b) else None


def phonetic_distance(x, y, lex):
    best = None
    for sx in lex.syllables(x):
        for sy in lex.syllables(y):
            d = syllable_distance(sx, sy)
            if d is not None and (best is None or d < best):
                best = d
                if best == 0:
                    return 0
    return best


def phonetically_similar(x, y, lex):
    return phonetic_distance(x, y, lex) is not None


def phonetic_score(x, y, lex):
    """1.0 for a shared syllable, 0.8 for a one-deletion match, else 0.0."""
    d = phonetic_distance(x, y, lex)
    return {0: 1.0, 1: 0.8}.get(d, 0.0)
