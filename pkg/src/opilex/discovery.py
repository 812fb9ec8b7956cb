"""Iterative query expansion over subreddits, and Fleiss' kappa for the manual
validation step.

Each subreddit is treated as one document. Subreddits are ranked by the
length-normalized tf-idf mass of the current query terms. New terms are the
highest tf-idf terms of the top-ranked subreddits, taken together as one
document, scored against every other subreddit.
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .errors import EmptyCorpus, EmptyQuery, InvalidMatrix, ValidationError
from .textnorm import STOPWORDS, NormalizedPost

ReviewHook = Callable[[int, list], Iterable[str]]


@dataclass(frozen=True)
class TermStats:
    """Per-subreddit lemma counts, computed once and reused across rounds."""

    counts: Mapping[str, Counter]
    totals: Mapping[str, int]

    @classmethod
    def from_posts(cls, posts: Iterable[NormalizedPost]) -> "TermStats":
        counts: dict[str, Counter] = {}
        for p in posts:
            c = counts.setdefault(p.subreddit, Counter())
            for s in p.sentences:
                c.update(s)
        return cls(counts, {s: sum(c.values()) for s, c in counts.items()})

    def document_frequency(self) -> Counter:
        df = Counter()
        for c in self.counts.values():
            df.update(c.keys())
        return df


@dataclass(frozen=True)
class DiscoveryResult:
    query_terms: tuple
    subreddit_ranking: tuple
    rounds_run: int
    candidates: tuple = ()  # per round: tuple of (term, score)
    year: Optional[int] = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "year": self.year,
                "rounds_run": self.rounds_run,
                "query_terms": list(self.query_terms),
                "subreddit_ranking": [[s, score] for s, score in self.subreddit_ranking],
                "candidates": [[[t, sc] for t, sc in rnd] for rnd in self.candidates],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "DiscoveryResult":
        d = json.loads(text)
        return cls(
            tuple(d["query_terms"]),
            tuple((s, float(v)) for s, v in d["subreddit_ranking"]),
            int(d["rounds_run"]),
            tuple(tuple((t, float(v)) for t, v in rnd) for rnd in d.get("candidates", [])),
            d.get("year"),
        )


@dataclass(frozen=True)
class SeedQueryUnion:
    terms: frozenset

    @classmethod
    def of(cls, results: Iterable[DiscoveryResult]) -> "SeedQueryUnion":
        return cls(frozenset(t for r in results for t in r.query_terms))

    def __len__(self):
        return len(self.terms)


def _stats(corpus) -> TermStats:
    return corpus if isinstance(corpus, TermStats) else TermStats.from_posts(corpus)


def _ranked(scores: Mapping[str, float]) -> list[tuple[str, float]]:
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def score_subreddits(corpus, terms: Iterable[str]) -> list[tuple[str, float]]:
    terms = list(dict.fromkeys(terms))
    if not terms:
        raise EmptyQuery("no query terms")
    stats = _stats(corpus)
    if not stats.counts:
        raise EmptyCorpus("no subreddits to score")
    n_sub = len(stats.counts)
    df = stats.document_frequency()
    idf = {t: math.log(n_sub / df[t]) for t in terms if df[t]}
    scores = {}
    for sub, counts in stats.counts.items():
        total = stats.totals[sub]
        mass = sum(counts[t] * w for t, w in idf.items())
        scores[sub] = mass / total if total else 0.0
    return _ranked(scores)


def expand_query(
    corpus, top_subreddits: Sequence[str], k: int, query: Iterable[str] = ()
) -> list[tuple[str, float]]:
    """Up to ``k`` new terms with positive tf-idf in the merged top subreddits."""
    top = set(top_subreddits)
    if not top:
        raise ValidationError("top_subreddits is empty")
    if k <= 0:
        return []
    stats = _stats(corpus)
    merged = Counter()
    for s in top:
        merged.update(stats.counts.get(s, {}))
    size = sum(merged.values())
    if not size:
        return []
    others = [c for s, c in stats.counts.items() if s not in top]
    n_docs = 1 + len(others)
    exclude = set(query) | STOPWORDS
    scores = {}
    for t, n in merged.items():
        if t in exclude:
            continue
        df = 1 + sum(1 for c in others if t in c)
        w = (n / size) * math.log(n_docs / df)
        if w > 0:
            scores[t] = w
    return _ranked(scores)[:k]


def accept_all(round_index: int, candidates: list) -> list[str]:
    return [t for t, _ in candidates]


def run_discovery(
    corpus,
    seeds: Sequence[str],
    rounds: int = 1,
    top_m: int = 150,
    k: int = 10,
    review: ReviewHook = accept_all,
    year: Optional[int] = None,
) -> DiscoveryResult:
    """Alternate subreddit ranking and query expansion ``rounds`` times.

    After each round ``review(round_index, candidates)`` returns the accepted
    terms; the default accepts every candidate (batch mode). The final ranking
    uses the final query.
    """
    if rounds < 1:
        raise ValidationError("rounds must be >= 1")
    query = list(dict.fromkeys(seeds))
    if not query:
        raise EmptyQuery("no seed terms")
    stats = _stats(corpus)
    if not stats.counts:
        raise EmptyCorpus("no posts to search")

    per_round = []
    ranking = score_subreddits(stats, query)
    for r in range(rounds):
        top = [s for s, _ in ranking[:top_m]]
        cands = expand_query(stats, top, k, query)
        per_round.append(tuple(cands))
        offered = {t for t, _ in cands}
        accepted = [t for t in review(r, cands) if t in offered and t not in query]
        if accepted:
            query.extend(accepted)
            ranking = score_subreddits(stats, query)
    return DiscoveryResult(tuple(query), tuple(ranking), rounds, tuple(per_round), year)


def write_review_candidates(candidates: Sequence[tuple[str, float]], path, accept: int = 1) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "score", "accept"])
        for t, score in candidates:
            w.writerow([t, f"{score:.6g}", accept])


def read_review_candidates(path) -> list[str]:
    """Accepted terms from an edited candidate file."""
    from .errors import MalformedReviewFile

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"term", "accept"} <= set(reader.fieldnames):
            raise MalformedReviewFile(f"{path}: expected columns term,score,accept")
        out = []
        for i, row in enumerate(reader, start=2):
            acc = (row["accept"] or "").strip()
            if acc not in ("0", "1"):
                raise MalformedReviewFile(f"{path}:{i}: accept must be 0 or 1")
            if acc == "1":
                out.append(row["term"].strip())
        return out


# -- inter-rater agreement -------------------------------------------------


@dataclass(frozen=True)
class AnnotationMatrix:
    labels: tuple  # subjects x raters
    categories: tuple = ()

    def __post_init__(self):
        if not self.labels:
            raise InvalidMatrix("no subjects")
        widths = {len(row) for row in self.labels}
        if len(widths) != 1:
            raise InvalidMatrix(f"ragged rows: rater counts {sorted(widths)}")
        if widths.pop() < 2:
            raise InvalidMatrix("need at least 2 raters")
        for row in self.labels:
            if any(lab is None or lab == "" for lab in row):
                raise InvalidMatrix("empty cell")
        cats = tuple(sorted({lab for row in self.labels for lab in row}))
        if self.categories:
            extra = set(cats) - set(self.categories)
            if extra:
                raise InvalidMatrix(f"labels outside category set: {sorted(extra)}")
        else:
            object.__setattr__(self, "categories", cats)

    @classmethod
    def of(cls, rows: Iterable[Iterable]) -> "AnnotationMatrix":
        return cls(tuple(tuple(r) for r in rows))


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    p_bar: float
    p_e: float


def fleiss_kappa(matrix: AnnotationMatrix) -> KappaResult:
    n_raters = len(matrix.labels[0])
    n_subj = len(matrix.labels)
    totals = Counter()
    p_sum = 0.0
    for row in matrix.labels:
        counts = Counter(row)
        totals.update(counts)
        p_sum += (sum(c * c for c in counts.values()) - n_raters) / (n_raters * (n_raters - 1))
    p_bar = p_sum / n_subj
    n_ratings = n_subj * n_raters
    p_e = sum((c / n_ratings) ** 2 for c in totals.values())
    if p_e >= 1.0:
        # a single category used throughout: every row is unanimous
        return KappaResult(1.0, p_bar, p_e)
    return KappaResult((p_bar - p_e) / (1.0 - p_e), p_bar, p_e)


def read_annotations(path) -> AnnotationMatrix:
    """CSV with a header ``subject,<rater>,<rater>,...`` and one row per subject."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InvalidMatrix(f"{path}: no subject rows")
    width = len(rows[0])
    body = []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != width:
            raise InvalidMatrix(f"{path}:{i}: expected {width} cells, got {len(r)}")
        body.append(tuple(c.strip() for c in r[1:]))
    return AnnotationMatrix(tuple(body))
