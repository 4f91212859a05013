#!/usr/bin/env python3
"""Regenerates include/elchat/unicode_tables.hpp from Python's unicodedata."""
import sys
import unicodedata


def ranges(pred):
    out, start = [], None
    for cp in range(0x110000):
        hit = pred(cp)
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def emit(name, rs):
    lines = [f"inline constexpr CodepointRange {name}[] = {{"]
    row = []
    for a, b in rs:
        row.append(f"{{0x{a:X}, 0x{b:X}}}")
        if len(row) == 6:
            lines.append("    " + ", ".join(row) + ",")
            row = []
    if row:
        lines.append("    " + ", ".join(row) + ",")
    lines.append("};")
    return "\n".join(lines)


def cat(cp):
    return unicodedata.category(chr(cp))


letters = ranges(lambda cp: cat(cp).startswith("L"))
numbers = ranges(lambda cp: cat(cp).startswith("N"))

out = [
    "// Generated by scripts/gen_unicode_tables.py (Unicode %s). Do not edit." % unicodedata.unidata_version,
    "#pragma once",
    "",
    "#include <cstdint>",
    "",
    "namespace elchat::unicode {",
    "",
    "struct CodepointRange {",
    "  std::uint32_t first;",
    "  std::uint32_t last;",
    "};",
    "",
    "// General category L*",
    emit("kLetterRanges", letters),
    "",
    "// General category N*",
    emit("kNumberRanges", numbers),
    "",
    "}  // namespace elchat::unicode",
    "",
]
sys.stdout.write("\n".join(out))
