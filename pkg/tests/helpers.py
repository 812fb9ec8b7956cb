"""Small builders shared across test modules."""
import json

from opilex.analytics import ContingencyTable
from opilex.ingest import RawPost
from opilex.lexicon import Mention
from opilex.textnorm import NormalizedPost


def dump_line(pid, author="alice", sub="opiates", ts=1530000000, body="hello there", **extra):
    rec = {"id": pid, "author": author, "subreddit": sub, "created_utc": ts, "body": body}
    rec.update(extra)
    return json.dumps(rec)


def raw(pid, text, author="a1", sub="opiates", ts=1530000000, kind="comment"):
    return RawPost(pid, author, sub, ts, kind, text)


def npost(pid, sentences, author="a1", sub="opiates", ts=1530000000):
    return NormalizedPost(pid, author, sub, ts, tuple(tuple(s) for s in sentences))


def naive_table(posts_mentions, ca, cb, rho):
    """Every mention pair checked directly; far-apart pairs land in both b and c."""
    a = b = c = d = 0
    for ms in posts_mentions:
        has_a = any(m.category == ca for m in ms)
        has_b = any(m.category == cb for m in ms)
        close = any(
            abs(x.sentence_index - y.sentence_index) <= rho
            for x in ms
            for y in ms
            if x.category == ca and y.category == cb
        )
        if close:
            a += 1
        elif has_a and has_b:
            b += 1
            c += 1
        elif has_a:
            b += 1
        elif has_b:
            c += 1
        else:
            d += 1
    return ContingencyTable(a, b, c, d)


def random_corpus(rng, n_posts, cats=("A", "B", "C"), max_sent=8, max_mentions=6):
    out = []
    for _ in range(n_posts):
        n_s = rng.randint(1, max_sent)
        out.append([Mention("p", "t", rng.choice(cats), rng.randrange(n_s)) for _ in range(rng.randint(0, max_mentions))])
    return out
