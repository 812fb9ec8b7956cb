"""Time ingest + normalization on a synthetic dump.

    python3 scripts/throughput.py --posts 100000 --workers 1
"""
from __future__ import annotations

import argparse
import time

from make_fixture import generate

from opilex.ingest import load_corpora
from opilex.textnorm import normalize_corpus


def measure(n_posts: int = 100_000, workers: int = 1, seed: int = 1) -> dict:
    lines = generate(n_posts, seed=seed, n_authors=5000)
    t0 = time.perf_counter()
    corpora = load_corpora(lines, [2018, 2019], "throughput-salt", workers=workers)
    t1 = time.perf_counter()
    n = sum(len(normalize_corpus(c, workers=workers)) for c in corpora.values())
    t2 = time.perf_counter()
    return {
        "posts": n,
        "ingest_s": t1 - t0,
        "normalize_s": t2 - t1,
        "posts_per_s": n / (t2 - t0),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--posts", type=int, default=100_000)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    r = measure(args.posts, args.workers)
    print(f"{r['posts']} posts: ingest {r['ingest_s']:.2f}s, normalize {r['normalize_s']:.2f}s, "
          f"{r['posts_per_s']:,.0f} posts/s")


if __name__ == "__main__":
    main()
