#!/usr/bin/env python3
"""Regenerates tests/data/pretok_cases.json: random strings split by the
`regex` package using the reference pre-tokenizer patterns. Characters are
drawn only from code points whose general category agrees between this
interpreter's unicodedata and the `regex` package's tables."""
import json
import random
import sys
import unicodedata

import regex

PATTERNS = {
    "gpt2": r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+""",
    "llama3": r"""(?i:'s|'t|'re|'ve|'m|'ll|'d)|[^\r\n\p{L}\p{N}]?\p{L}+|\p{N}{1,3}| ?[^\s\p{L}\p{N}]+[\r\n]*|\s*[\r\n]+|\s+(?!\S)|\s+""",
    "qwen2": r"""(?i:'s|'t|'re|'ve|'m|'ll|'d)|[^\r\n\p{L}\p{N}]?\p{L}+|\p{N}| ?[^\s\p{L}\p{N}]+[\r\n]*|\s*[\r\n]+|\s+(?!\S)|\s+""",
    "whitespace": r""" ?\S+|\s+""",
}

POOLS = [
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ",
    "0123456789",
    " " * 8 + "\n\r\t",
    "'.,;:!?-()\"/_@#",
    "".join(chr(c) for c in range(0x1200, 0x1380)),  # Ethiopic
    "".join(chr(c) for c in range(0x0980, 0x0A00)),  # Bengali, incl. digits and marks
    "".join(chr(c) for c in range(0x1000, 0x10A0)),  # Myanmar
    "".join(chr(c) for c in range(0x4E00, 0x4E40)),
    " 　 ",
    "\U0001F600\U0001F680éß½١٢",
]
WORDS = ["'s", "'T", "'re", "'LL", "'d", "'ve", "'m", " don't", "\r\n", "  \n", "1234567"]


def category_agrees(ch):
    cat = unicodedata.category(ch)
    if cat == "Cn":
        return False
    letter = regex.match(r"\p{L}", ch) is not None
    number = regex.match(r"\p{N}", ch) is not None
    return letter == cat.startswith("L") and number == cat.startswith("N")


def main(out_path):
    rng = random.Random(20240601)
    pools = [[c for c in p if category_agrees(c)] for p in POOLS]
    cases = []
    for _ in range(600):
        parts = []
        for _ in range(rng.randint(0, 24)):
            if rng.random() < 0.15:
                parts.append(rng.choice(WORDS))
            else:
                pool = rng.choice(pools)
                parts.append("".join(rng.choice(pool) for _ in range(rng.randint(1, 4))))
        text = "".join(parts)
        cases.append({"text": text, **{k: regex.findall(p, text) for k, p in PATTERNS.items()}})
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump({"unicode_version": unicodedata.unidata_version, "cases": cases}, f, ensure_ascii=False, indent=0)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/pretok_cases.json")
