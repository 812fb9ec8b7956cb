"""Regenerate src/opilex/data/lemmas.txt from lemminflect's inflection lookup.

Usage:
    python scripts/build_lemma_table.py path/to/infl_lu.csv.gz

The lookup ships inside the lemminflect wheel (MIT licensed) under
``lemminflect/resources/infl_lu.csv.gz``. Each row is ``lemma,pos,form1,form2,...``
where a form may hold ``/``-separated spellings.

Only lowercase ASCII entries are kept. A form that is itself a lemma of any part
of speech is never remapped, so "ground" and "shot" stay put; remaining
ambiguities resolve to the alphabetically first lemma.
"""
import gzip
import re
import sys
from collections import defaultdict
from pathlib import Path

WORD = re.compile(r"^[a-z]+$")
OUT = Path(__file__).resolve().parents[1] / "src" / "opilex" / "data" / "lemmas.txt"
VERSION = 1


def main(src):
    lemmas = set()
    forms = defaultdict(set)
    with gzip.open(src, "rt", encoding="utf-8") as fh:
        for row in fh:
            cells = row.rstrip("\n").split(",")
            lemma = cells[0]
            if not WORD.match(lemma):
                continue
            lemmas.add(lemma)
            for cell in cells[2:]:
                for form in cell.split("/"):
                    if WORD.match(form) and form != lemma:
                        forms[form].add(lemma)

    pairs = {}
    for form, cands in forms.items():
        if form in lemmas:
            continue
        pairs[form] = min(cands)

    with open(OUT, "w", encoding="utf-8", newline="\n") as out:
        out.write(f"# opilex-lemmas v{VERSION}\n")
        out.write("# form<TAB>lemma; derived from lemminflect infl_lu (MIT)\n")
        for form in sorted(pairs):
            out.write(f"{form}\t{pairs[form]}\n")
    print(f"wrote {len(pairs)} pairs to {OUT}")


if __name__ == "__main__":
    main(sys.argv[1])
