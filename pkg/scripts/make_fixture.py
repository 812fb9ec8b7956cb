"""Generate a synthetic pushshift-style dump.

    python scripts/make_fixture.py tests/data/fixture_500.ndjson --posts 500

Posts in the drug subreddits draw words from the shipped lexicons, so every
downstream stage (trends, odds ratios, discovery) has something to find. A
few malformed lines and deleted authors are mixed in on purpose.
"""
from __future__ import annotations

import argparse
import json
import random
from datetime import datetime, timezone

from opilex.lexicon import DOMAINS, load_fixture_lexicon

FILLER = (
    "today felt really long and i think the night was worse than expected but "
    "friends helped a lot after work with the dog we talked about money sleep "
    "music weather family plans doctor appointment tired anxious better good "
    "bad week month morning evening honestly maybe probably definitely"
).split()
COOKING = (
    "pasta garlic onion butter recipe oven bake simmer sauce salt pepper bread "
    "dough flour tomato basil roast chicken soup stock knife pan skillet"
).split()

SUBREDDITS = {"opiates": 0.44, "OpiatesRecovery": 0.28, "Cooking": 0.24, "tinysub": 0.04}
DRUG_SUBS = {"opiates", "OpiatesRecovery"}


def _terms():
    out = {}
    for d in DOMAINS:
        lex = load_fixture_lexicon(d)
        # single-word terms only, sorted for reproducibility
        out[d] = sorted(t for t in lex.terms() if " " not in t and "-" not in t)
    return out


def _sentence(rng: random.Random, sub: str, terms: dict) -> str:
    n = rng.randint(3, 9)
    pool = COOKING if sub.lower() == "cooking" else FILLER
    words = [rng.choice(pool) for _ in range(n)]
    if sub in DRUG_SUBS:
        for dom, p in (("substance", 0.45), ("roa", 0.3), ("tampering", 0.15)):
            if rng.random() < p:
                words.insert(rng.randrange(len(words) + 1), rng.choice(terms[dom]))
    if rng.random() < 0.1:
        words.append(str(rng.choice([5, 10, 30, 80])) + "mg")
    text = " ".join(words)
    return text[0].upper() + text[1:] + rng.choice([".", ".", "!", "?"])


def generate(n_posts: int = 500, seed: int = 20180101, years=(2018, 2019), n_authors: int = 60):
    rng = random.Random(seed)
    terms = _terms()
    authors = [f"user_{i:03d}" for i in range(n_authors)]
    lo = int(datetime(years[0], 1, 1, tzinfo=timezone.utc).timestamp())
    hi = int(datetime(years[1] + 1, 1, 1, tzinfo=timezone.utc).timestamp())
    subs, weights = zip(*SUBREDDITS.items())
    lines = []
    for i in range(n_posts):
        sub = rng.choices(subs, weights)[0]
        author = "[deleted]" if rng.random() < 0.03 else rng.choice(authors)
        sents = [_sentence(rng, sub, terms) for _ in range(rng.randint(1, 5))]
        rec = {"id": f"t{i:05d}", "author": author, "subreddit": sub, "created_utc": rng.randrange(lo, hi)}
        if rng.random() < 0.2:
            rec["title"] = sents[0]
            rec["selftext"] = " ".join(sents[1:])
        else:
            rec["body"] = ("\n\n" if rng.random() < 0.2 else " ").join(sents)
        lines.append(json.dumps(rec, sort_keys=True))
    # a handful of records the ingester must skip
    for bad in ('{"id": "broken", "subreddit": "opiates"', '[1, 2, 3]',
                json.dumps({"id": "x1", "subreddit": "opiates", "created_utc": lo + 5})):
        lines.insert(rng.randrange(len(lines)), bad)
    return lines


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--posts", type=int, default=500)
    ap.add_argument("--seed", type=int, default=20180101)
    ap.add_argument("--authors", type=int, default=60)
    args = ap.parse_args()
    lines = generate(args.posts, args.seed, n_authors=args.authors)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
