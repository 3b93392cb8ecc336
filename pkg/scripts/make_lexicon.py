"""Regenerate the bundled pinyin lexicon for GB2312 level-1 characters.

Needs ``pypinyin`` (dev-only, not a runtime dependency)::

    python3 scripts/make_lexicon.py src/advgraph/data/lexicon_gb1.tsv
"""
import sys

from pypinyin import Style, pinyin


def gb2312_level1():
    # rows 16-55 of GB2312 hold the 3755 level-1 hanzi
    for row in range(0xB0, 0xD8):
        for col in range(0xA1, 0xFF):
            try:
                ch = bytes([row, col]).decode("gb2312")
            except UnicodeDecodeError:
                continue
            yield ch


def main(out):
    with open(out, "w", encoding="utf-8") as f:
        for ch in gb2312_level1():
            readings = pinyin(ch, style=Style.TONE3, heteronym=True,
                              neutral_tone_with_five=True)[0]
            readings = [r for r in readings if r[:-1].isalpha() and r.isascii()]
            if not readings:
                continue
            seen = []
            for r in readings:
                if r not in seen:
                    seen.append(r)
            f.write(f"{ch}\t{','.join(seen)}\n")


if __name__ == "__main__":
    main(sys.argv[1])
