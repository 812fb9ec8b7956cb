"""Sentence segmentation, tokenization, stopword removal and lemmatization.

The lemmatizer is a lookup table (``data/lemmas.txt``) backed by a handful of
suffix rules. It is built to be idempotent: every table value is protected, and
a rule rewrite is only accepted when its result is itself a fixed point.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

from .errors import CorruptCache
from .ingest import CorpusSlice, RawPost

_BLANK_LINE = re.compile(r"\n[ \t\r\f\v]*\n")
_SENT_END = re.compile(r"(?<=[.!?])\s+")
_APOSTROPHES = re.compile("['‘’ʼ`]")
_TOKEN = re.compile(r"[^\W_]+")
_ASCII_WORD = re.compile(r"[a-z]+")
_VOWEL = re.compile(r"[aeiouy]")

NORMALIZED_FORMAT = "opilex-normalized"
NORMALIZED_VERSION = 1


def _read_list(name: str) -> list[str]:
    text = resources.files("opilex").joinpath("data").joinpath(name).read_text(encoding="utf-8")
    return [ln for ln in text.splitlines() if ln and not ln.startswith("#")]


STOPWORDS = frozenset(_read_list("stopwords.txt"))


def _load_lemmas() -> dict[str, str]:
    table = {}
    for ln in _read_list("lemmas.txt"):
        form, lemma = ln.split("\t")
        table[form] = lemma
    for lemma in set(table.values()):
        table.setdefault(lemma, lemma)
    # a value that is also a remapped key would break idempotence
    for form, lemma in table.items():
        if table[lemma] != lemma:
            table[form] = form
    return table


LEMMAS = _load_lemmas()


def data_fingerprint() -> str:
    """Hash of the shipped lemma and stopword files, used to key caches."""
    import hashlib

    h = hashlib.sha256()
    for name in ("stopwords.txt", "lemmas.txt"):
        h.update(resources.files("opilex").joinpath("data").joinpath(name).read_bytes())
    h.update(str(NORMALIZED_VERSION).encode())
    return h.hexdigest()


@dataclass(frozen=True, slots=True)
class NormalizedPost:
    post_id: str
    author_id: str
    subreddit: str
    created_utc: int
    sentences: tuple  # tuple of tuples of lemmas

    def lemmas(self):
        for s in self.sentences:
            yield from s

    def to_dict(self) -> dict:
        return {
            "id": self.post_id,
            "author_id": self.author_id,
            "subreddit": self.subreddit,
            "created_utc": self.created_utc,
            "sentences": [list(s) for s in self.sentences],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormalizedPost":
        return cls(
            d["id"],
            d["author_id"],
            d["subreddit"],
            int(d["created_utc"]),
            tuple(tuple(s) for s in d["sentences"]),
        )


@dataclass(frozen=True)
class Vocabulary:
    year: Optional[int]
    entries: Mapping[str, int]
    min_count: int

    def __contains__(self, lemma):
        return lemma in self.entries

    def __len__(self):
        return len(self.entries)


def segment_sentences(text: str) -> list[str]:
    """Split on blank lines and on '.', '!' or '?' followed by whitespace."""
    out = []
    for block in _BLANK_LINE.split(text):
        for s in _SENT_END.split(block):
            s = s.strip()
            if s:
                out.append(s)
    return out


def _undouble(stem: str) -> str:
    if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] not in "aeiouylsfz":
        return stem[:-1]
    return stem


def _suffix_rule(w: str) -> str:
    n = len(w)
    if n >= 5 and w.endswith("ies"):
        return w[:-3] + "y"
    if n >= 5 and w.endswith("sses"):
        return w[:-2]
    if n >= 5 and w.endswith(("ches", "shes", "xes", "zes")):
        return w[:-2]
    if n >= 4 and w.endswith("s") and not w.endswith(("ss", "us", "is", "os")):
        return w[:-1]
    if n >= 5 and w.endswith("ed") and _VOWEL.search(w[:-2]):
        return _undouble(w[:-2])
    if n >= 6 and w.endswith("ing") and _VOWEL.search(w[:-3]):
        return _undouble(w[:-3])
    return w


@lru_cache(maxsize=1 << 18)
def lemmatize(token: str) -> str:
    """Lemma of a lowercase token; tokens with digits are returned verbatim."""
    lemma = LEMMAS.get(token)
    if lemma is not None:
        return lemma
    if not _ASCII_WORD.fullmatch(token):
        return token
    cand = _suffix_rule(token)
    if cand != token and lemmatize(cand) == cand:
        return cand
    return token


_DIGIT = re.compile(r"\d")


@lru_cache(maxsize=1 << 20)
def _token_lemma(tok: str) -> str:
    """Lemma kept for a raw token, or "" if the token is dropped."""
    if tok in STOPWORDS:
        return ""
    if _DIGIT.search(tok):
        return tok
    lemma = lemmatize(tok)
    return "" if lemma in STOPWORDS else lemma


def normalize_tokens(sentence: str) -> list[str]:
    toks = _TOKEN.findall(_APOSTROPHES.sub("", sentence.lower()))
    return [lem for lem in map(_token_lemma, toks) if lem]


def normalize_post(post: RawPost, vocab: Optional[Vocabulary] = None) -> NormalizedPost:
    sentences = []
    for s in segment_sentences(post.text):
        lemmas = normalize_tokens(s)
        if vocab is not None:
            lemmas = [t for t in lemmas if t in vocab.entries]
        sentences.append(tuple(lemmas))
    return NormalizedPost(post.post_id, post.author_id, post.subreddit, post.created_utc, tuple(sentences))


def _normalize_chunk(posts, vocab):
    return [normalize_post(p, vocab) for p in posts]


def normalize_corpus(
    corpus: CorpusSlice | Sequence[RawPost],
    vocab: Optional[Vocabulary] = None,
    workers: int = 1,
    chunk_size: int = 20_000,
) -> list[NormalizedPost]:
    """Normalize every post, preserving input order.

    Sentences that lose all their lemmas stay in place as empty tuples so that
    sentence indices keep matching the raw text.
    """
    posts = corpus.posts if isinstance(corpus, CorpusSlice) else list(corpus)
    if workers <= 1 or len(posts) <= chunk_size:
        return [normalize_post(p, vocab) for p in posts]
    chunks = [posts[i : i + chunk_size] for i in range(0, len(posts), chunk_size)]
    with ProcessPoolExecutor(workers) as pool:
        parts = pool.map(_normalize_chunk, chunks, [vocab] * len(chunks))
        return [p for part in parts for p in part]


def count_lemmas(posts: Iterable[NormalizedPost]) -> Counter:
    counts = Counter()
    for p in posts:
        for s in p.sentences:
            counts.update(s)
    return counts


def build_vocabulary(
    corpus: CorpusSlice | Iterable[NormalizedPost],
    min_count: int = 100,
    year: Optional[int] = None,
) -> Vocabulary:
    """Yearly lemma counts, dropping lemmas seen fewer than ``min_count`` times."""
    if isinstance(corpus, CorpusSlice):
        year = corpus.year if year is None else year
        posts = normalize_corpus(corpus)
    else:
        posts = corpus
    counts = count_lemmas(posts)
    kept = {t: n for t, n in sorted(counts.items()) if n >= min_count}
    return Vocabulary(year, kept, min_count)


def write_normalized_cache(posts: Iterable[NormalizedPost], path, key: str) -> None:
    posts = list(posts)
    header = {"format": NORMALIZED_FORMAT, "version": NORMALIZED_VERSION, "key": key, "n_posts": len(posts)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for p in posts:
            fh.write(json.dumps(p.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_normalized_cache(path, key: Optional[str] = None) -> list[NormalizedPost]:
    with open(path, encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except ValueError:
            raise CorruptCache(f"{path}: unreadable header") from None
        if header.get("format") != NORMALIZED_FORMAT or header.get("version") != NORMALIZED_VERSION:
            raise CorruptCache(f"{path}: not a v{NORMALIZED_VERSION} normalized cache")
        if key is not None and header.get("key") != key:
            raise CorruptCache(f"{path}: stale cache (key mismatch)")
        posts = [NormalizedPost.from_dict(json.loads(line)) for line in fh]
    if len(posts) != header["n_posts"]:
        raise CorruptCache(f"{path}: truncated")
    return posts
