#!/usr/bin/env python3
"""Regenerate data/han_radicals.tsv from the Unicode Character Database.

Accepts either the plain-text Unihan file that carries kRSUnicode
(Unihan_IRGSources.txt in Unicode 15.1+) or the JSON conversion shipped by the
`ucd-full` npm package, plus CJKRadicals.txt / CJKRadicals.json for the radical
glyph blocks.

Only the first kRSUnicode value is used. Simplified-form markers (' and '')
are stripped so every entry is a canonical Kangxi index in 1..214.
"""

import argparse
import json
import re
import sys

RS = re.compile(r"^(\d+)'*\.")


def load_unihan(path):
    entries = {}
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        rows = next(iter(data.values()))
        for row in rows:
            if "kRSUnicode" in row:
                entries[int(row["codepoint"][2:], 16)] = row["kRSUnicode"]
    else:
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.startswith("#") or not line.strip():
                    continue
                cp, field, value = line.rstrip("\n").split("\t", 2)
                if field == "kRSUnicode":
                    entries[int(cp[2:], 16)] = value
    table = {}
    for cp, value in entries.items():
        m = RS.match(value.split()[0])
        if not m:
            sys.exit(f"unparsable kRSUnicode for U+{cp:04X}: {value!r}")
        table[cp] = int(m.group(1))
    return table


def load_radical_glyphs(path):
    glyphs = {}
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as f:
            rows = json.load(f)["CJKRadicals"]
        triples = [(r["radical"], r.get("character", ""), r["unified"]) for r in rows]
    else:
        triples = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.split("#", 1)[0].strip()
                if line:
                    triples.append(tuple(x.strip() for x in line.split(";")))
    for radical, character, _unified in triples:
        # Some simplified forms exist only as unified ideographs.
        if character:
            glyphs[int(character, 16)] = int(radical.rstrip("'"))
    return glyphs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--unihan", required=True)
    ap.add_argument("--radicals", required=True)
    ap.add_argument("--version", default="17.0.0")
    ap.add_argument("--output", required=True)
    args = ap.parse_args()

    table = load_unihan(args.unihan)
    for cp, radical in load_radical_glyphs(args.radicals).items():
        table.setdefault(cp, radical)

    with open(args.output, "w", encoding="utf-8", newline="\n") as out:
        out.write(f"# Kangxi radical index per codepoint, from Unihan kRSUnicode (Unicode {args.version}).\n")
        out.write("# First value only; simplified-radical markers folded to the canonical index.\n")
        out.write("# Also covers the Kangxi Radicals and CJK Radicals Supplement blocks (CJKRadicals.txt).\n")
        for cp in sorted(table):
            r = table[cp]
            assert 1 <= r <= 214, (cp, r)
            out.write(f"U+{cp:04X}\t{r}\n")


if __name__ == "__main__":
    main()
