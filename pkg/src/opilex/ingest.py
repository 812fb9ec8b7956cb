"""Streaming ingestion of pushshift-style ndjson dumps.

Records are parsed one line at a time, authors are replaced by a keyed hash
before a :class:`RawPost` is ever built, and posts are bucketed into yearly
:class:`CorpusSlice` objects. Decompression is the caller's business.
"""
from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from itertools import islice
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional

from .errors import CorruptCache, EmptyCorpus, MalformedRecord, ValidationError

log = logging.getLogger(__name__)

DELETED_AUTHOR = "__deleted__"
DELETED_NAMES = frozenset({"[deleted]", "[removed]", ""})
DELETED_BODIES = frozenset({"[deleted]", "[removed]"})
MIN_YEAR, MAX_YEAR = 2005, 2100

CACHE_FORMAT = "opilex-corpus"
CACHE_VERSION = 1

SUBMISSION = "submission"
COMMENT = "comment"


@dataclass(frozen=True, slots=True)
class RawPost:
    post_id: str
    author_id: str
    subreddit: str
    created_utc: int
    kind: str
    text: str

    def to_dict(self) -> dict:
        return {
            "id": self.post_id,
            "author_id": self.author_id,
            "subreddit": self.subreddit,
            "created_utc": self.created_utc,
            "kind": self.kind,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RawPost":
        return cls(
            post_id=d["id"],
            author_id=d["author_id"],
            subreddit=d["subreddit"],
            created_utc=int(d["created_utc"]),
            kind=d["kind"],
            text=d["text"],
        )


@dataclass(frozen=True)
class CorpusSlice:
    year: int
    posts: tuple
    subreddit_index: Mapping[str, int]
    n_malformed: int = 0

    def __len__(self):
        return len(self.posts)

    @classmethod
    def build(cls, year: int, posts: Iterable[RawPost], n_malformed: int = 0) -> "CorpusSlice":
        posts = tuple(sorted(posts, key=_post_order))
        index = Counter(p.subreddit for p in posts)
        return cls(year, posts, dict(sorted(index.items())), n_malformed)

    def merge(self, other: "CorpusSlice") -> "CorpusSlice":
        """Combine two partial slices of the same year (associative, commutative)."""
        if other.year != self.year:
            raise ValueError(f"cannot merge slices of {self.year} and {other.year}")
        return CorpusSlice.build(
            self.year, self.posts + other.posts, self.n_malformed + other.n_malformed
        )


@dataclass(frozen=True)
class DatasetStats:
    year: int
    n_posts: int
    n_comments: int
    n_authors: int
    n_subreddits: int
    author_prevalence: Optional[float] = None


def _post_order(p: RawPost):
    return (p.created_utc, p.post_id, p.subreddit, p.author_id, p.kind, p.text)


def anonymize_author(name: str, salt: bytes) -> str:
    """Keyed 64-bit BLAKE2b digest of an author name, as 16 hex chars."""
    if name in DELETED_NAMES:
        return DELETED_AUTHOR
    return hashlib.blake2b(name.encode("utf-8"), key=salt, digest_size=8).hexdigest()


def year_of(created_utc: int) -> int:
    return datetime.fromtimestamp(created_utc, tz=timezone.utc).year


def year_bounds(year: int) -> tuple[int, int]:
    """Half-open [start, end) epoch-second interval of a UTC calendar year."""
    start = int(datetime(year, 1, 1, tzinfo=timezone.utc).timestamp())
    end = int(datetime(year + 1, 1, 1, tzinfo=timezone.utc).timestamp())
    return start, end


def _check_salt(salt) -> bytes:
    if isinstance(salt, str):
        salt = salt.encode("utf-8")
    if len(salt) > hashlib.blake2b.MAX_KEY_SIZE:
        raise ValidationError(f"salt longer than {hashlib.blake2b.MAX_KEY_SIZE} bytes")
    return salt


def parse_dump_line(line: str, salt: bytes, _author_cache: Optional[dict] = None) -> RawPost:
    """Parse one dump record.

    Comments are recognised by a ``body`` field, submissions by ``title``; a
    record with both or neither is malformed. Submission text is
    ``title + "\\n" + selftext``.
    """
    try:
        rec = json.loads(line)
    except (ValueError, TypeError) as e:
        raise MalformedRecord(f"unparseable JSON: {e}") from None
    if not isinstance(rec, dict):
        raise MalformedRecord("record is not a JSON object")

    post_id = rec.get("id")
    subreddit = rec.get("subreddit")
    created = rec.get("created_utc")
    if not post_id or not isinstance(post_id, str):
        raise MalformedRecord("missing id")
    if not subreddit or not isinstance(subreddit, str):
        raise MalformedRecord("missing subreddit")
    if created is None or isinstance(created, bool):
        raise MalformedRecord("missing created_utc")
    try:
        created = int(float(created)) if isinstance(created, str) else int(created)
    except (ValueError, OverflowError):
        raise MalformedRecord(f"bad created_utc {created!r}") from None
    if created <= 0:
        raise MalformedRecord(f"non-positive created_utc {created}")

    has_body = "body" in rec
    has_title = "title" in rec
    if has_body == has_title:
        raise MalformedRecord("cannot tell comment from submission")
    if has_body:
        kind = COMMENT
        text = _text_field(rec.get("body"))
    else:
        kind = SUBMISSION
        text = _text_field(rec.get("title")) + "\n" + _text_field(rec.get("selftext"))

    author = rec.get("author")
    if not isinstance(author, str):
        author = ""
    if _author_cache is None:
        author_id = anonymize_author(author, salt)
    else:
        author_id = _author_cache.get(author)
        if author_id is None:
            author_id = _author_cache[author] = anonymize_author(author, salt)

    return RawPost(post_id, author_id, subreddit.lower(), created, kind, text)


def _text_field(value) -> str:
    if not isinstance(value, str) or value in DELETED_BODIES:
        return ""
    return value


def _check_year(year: int):
    if not MIN_YEAR <= year <= MAX_YEAR:
        raise ValidationError(f"year {year} outside supported range {MIN_YEAR}-{MAX_YEAR}")


def _parse_shard(lines, years, salt):
    bounds = {y: year_bounds(y) for y in years}
    buckets = {y: [] for y in years}
    bad = 0
    cache: dict = {}
    for line in lines:
        if not line.strip():
            continue
        try:
            post = parse_dump_line(line, salt, cache)
        except MalformedRecord:
            bad += 1
            continue
        for y, (lo, hi) in bounds.items():
            if lo <= post.created_utc < hi:
                buckets[y].append(post)
                break
    return buckets, bad


def _chunks(it: Iterable[str], size: int) -> Iterator[list]:
    it = iter(it)
    while chunk := list(islice(it, size)):
        yield chunk


def load_corpora(
    stream: Iterable[str],
    years: Iterable[int],
    salt,
    workers: int = 1,
    chunk_size: int = 50_000,
) -> dict[int, CorpusSlice]:
    """Single pass over ``stream`` producing one slice per requested year.

    Empty years are returned as empty slices; :func:`load_corpus` is the
    strict single-year entry point.
    """
    years = sorted(set(years))
    for y in years:
        _check_year(y)
    salt = _check_salt(salt)

    if workers <= 1:
        parts = [_parse_shard(stream, years, salt)]
    else:
        with ProcessPoolExecutor(workers) as pool:
            futs = [pool.submit(_parse_shard, c, years, salt) for c in _chunks(stream, chunk_size)]
            parts = [f.result() for f in futs]

    bad = sum(p[1] for p in parts)
    if bad:
        log.info("skipped %d malformed lines", bad)
    # malformed lines are not attributable to a year; every slice reports the total
    return {
        y: CorpusSlice.build(y, [post for p in parts for post in p[0][y]], bad) for y in years
    }


def load_corpus(stream: Iterable[str], year: int, salt, workers: int = 1) -> CorpusSlice:
    corpus = load_corpora(stream, [year], salt, workers)[year]
    if not corpus.posts:
        raise EmptyCorpus(f"no valid posts for {year} ({corpus.n_malformed} malformed lines)")
    return corpus


def filter_subreddits(corpus: CorpusSlice, min_comments: int = 100) -> CorpusSlice:
    """Drop subreddits with fewer than ``min_comments`` posts in the year."""
    if not corpus.posts:
        raise EmptyCorpus("cannot filter an empty corpus")
    keep = {s for s, n in corpus.subreddit_index.items() if n >= min_comments}
    if not keep:
        raise EmptyCorpus(f"no subreddit has {min_comments} or more posts in {corpus.year}")
    return CorpusSlice.build(
        corpus.year, (p for p in corpus.posts if p.subreddit in keep), corpus.n_malformed
    )


def restrict_to_subreddits(corpus: CorpusSlice, allowed: Iterable[str]) -> CorpusSlice:
    allowed = {s.lower() for s in allowed}
    if not allowed:
        raise ValidationError("allowed subreddit set is empty")
    posts = [p for p in corpus.posts if p.subreddit in allowed]
    if not posts:
        raise EmptyCorpus(f"none of {len(allowed)} allowed subreddits present in {corpus.year}")
    return CorpusSlice.build(corpus.year, posts, corpus.n_malformed)


def dataset_stats(corpus: CorpusSlice, background_authors: Optional[int] = None) -> DatasetStats:
    authors = {p.author_id for p in corpus.posts} - {DELETED_AUTHOR}
    prevalence = None
    if background_authors is not None:
        if background_authors <= 0:
            raise ValidationError("background author count must be positive")
        prevalence = len(authors) / background_authors
    return DatasetStats(
        year=corpus.year,
        n_posts=len(corpus.posts),
        n_comments=sum(1 for p in corpus.posts if p.kind == COMMENT),
        n_authors=len(authors),
        n_subreddits=len(corpus.subreddit_index),
        author_prevalence=prevalence,
    )


def write_corpus_cache(corpus: CorpusSlice, path) -> None:
    header = {
        "format": CACHE_FORMAT,
        "version": CACHE_VERSION,
        "year": corpus.year,
        "n_posts": len(corpus.posts),
        "n_malformed": corpus.n_malformed,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for p in corpus.posts:
            fh.write(json.dumps(p.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_corpus_cache(path) -> CorpusSlice:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except ValueError:
            raise CorruptCache(f"{path}: unreadable header") from None
        if header.get("format") != CACHE_FORMAT:
            raise CorruptCache(f"{path}: not a corpus cache")
        if header.get("version") != CACHE_VERSION:
            raise CorruptCache(f"{path}: cache version {header.get('version')}, expected {CACHE_VERSION}")
        try:
            posts = [RawPost.from_dict(json.loads(line)) for line in fh]
        except (ValueError, KeyError) as e:
            raise CorruptCache(f"{path}: bad post record ({e})") from None
    if len(posts) != header["n_posts"]:
        raise CorruptCache(f"{path}: expected {header['n_posts']} posts, found {len(posts)}")
    return CorpusSlice.build(header["year"], posts, header.get("n_malformed", 0))
