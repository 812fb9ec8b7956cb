"""Seed sets, embedding-based candidate expansion, the review round-trip and
lexicon matching.

Lexicon terms are matched against posts through the same normalization used for
post text, so an inflected table entry such as "percocets" matches whatever the
tokenizer produces for it.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

from .errors import (
    DuplicateTermAssignment,
    MalformedReviewFile,
    NoSeedsInVocabulary,
    NoTermsAccepted,
    ValidationError,
    ZeroSeedVolume,
)
from .textnorm import NormalizedPost, normalize_tokens

log = logging.getLogger(__name__)

DOMAINS = ("substance", "roa", "tampering")
LEXICON_COLUMNS = ["domain", "category", "primary_category", "term", "seed"]
REVIEW_COLUMNS = ["term", "best_cosine", "nearest_seed", "accept", "category"]
# review-file category cells may name a taxonomy path as "Primary>Secondary"
TAXONOMY_SEP = ">"


@dataclass(frozen=True)
class SeedSet:
    name: str
    terms: frozenset

    def __post_init__(self):
        if not self.terms:
            raise ValidationError(f"seed set {self.name!r} is empty")
        bad = [t for t in self.terms if t != t.lower()]
        if bad:
            raise ValidationError(f"seed terms must be lowercase lemmas: {sorted(bad)}")


@dataclass(frozen=True)
class Candidate:
    term: str
    best_cosine: float
    nearest_seed: str


@dataclass(frozen=True)
class CandidateSet:
    source: str
    candidates: Mapping[str, Candidate]
    missing_seeds: frozenset = frozenset()

    def terms(self) -> set:
        return set(self.candidates)


@dataclass(frozen=True)
class Mention:
    post_id: str
    term: str
    category: str
    sentence_index: int
    domain: str = ""


@dataclass(frozen=True)
class Lexicon:
    domain: str
    categories: Mapping[str, frozenset]
    taxonomy: Optional[Mapping[str, str]] = None
    seeds: frozenset = frozenset()

    def __post_init__(self):
        seen = {}
        for cat, terms in self.categories.items():
            for t in terms:
                if t in seen and seen[t] != cat:
                    raise DuplicateTermAssignment(f"{t!r} is in both {seen[t]!r} and {cat!r}")
                seen[t] = cat
        if self.taxonomy is not None:
            missing = set(self.categories) - set(self.taxonomy)
            if missing:
                raise ValidationError(f"taxonomy does not cover {sorted(missing)}")

    def terms(self) -> set:
        return {t for ts in self.categories.values() for t in ts}

    def category_of(self, term: str) -> Optional[str]:
        for cat, ts in self.categories.items():
            if term in ts:
                return cat
        return None

    @cached_property
    def lemma_index(self) -> dict[str, str]:
        """Normalized lemma -> category."""
        index = {}
        for cat in sorted(self.categories):
            for term in sorted(self.categories[cat]):
                lemmas = normalize_tokens(term)
                if len(lemmas) != 1:
                    log.warning("lexicon term %r normalizes to %r; skipped for matching", term, lemmas)
                    continue
                lem = lemmas[0]
                if index.get(lem, cat) != cat:
                    raise DuplicateTermAssignment(
                        f"{term!r} normalizes to {lem!r}, already used by {index[lem]!r}"
                    )
                index[lem] = cat
        return index

    def lemmas_of(self, terms: Iterable[str]) -> set:
        out = set()
        for t in terms:
            out.update(normalize_tokens(t))
        return out

    def primary(self) -> "Lexicon":
        """Collapse secondary categories into their taxonomy parents."""
        if self.taxonomy is None:
            raise ValidationError(f"{self.domain} lexicon has no taxonomy")
        merged: dict[str, set] = {}
        for cat, terms in self.categories.items():
            merged.setdefault(self.taxonomy[cat], set()).update(terms)
        return Lexicon(
            f"{self.domain}_primary",
            {k: frozenset(v) for k, v in sorted(merged.items())},
            None,
            self.seeds,
        )

    def without(self, categories: Iterable[str]) -> "Lexicon":
        drop = set(categories)
        tax = None
        if self.taxonomy is not None:
            tax = {k: v for k, v in self.taxonomy.items() if k not in drop}
        return Lexicon(
            self.domain,
            {k: v for k, v in self.categories.items() if k not in drop},
            tax,
            self.seeds,
        )


def load_lexicon(path) -> Lexicon:
    with open(path, encoding="utf-8", newline="") as fh:
        return _read_lexicon(fh, str(path))


def _read_lexicon(fh, name) -> Lexicon:
    reader = csv.DictReader(fh)
    if reader.fieldnames != LEXICON_COLUMNS:
        raise ValidationError(f"{name}: expected columns {LEXICON_COLUMNS}, got {reader.fieldnames}")
    domains = set()
    cats: dict[str, set] = {}
    taxonomy: dict[str, str] = {}
    seeds = set()
    for row in reader:
        domains.add(row["domain"])
        term = row["term"].strip()
        cats.setdefault(row["category"], set()).add(term)
        if row["primary_category"]:
            taxonomy[row["category"]] = row["primary_category"]
        if row["seed"] == "1":
            seeds.add(term)
    if len(domains) != 1:
        raise ValidationError(f"{name}: expected exactly one domain, got {sorted(domains)}")
    return Lexicon(
        domains.pop(),
        {k: frozenset(v) for k, v in cats.items()},
        taxonomy or None,
        frozenset(seeds),
    )


def save_lexicon(lexicon: Lexicon, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEXICON_COLUMNS)
        for cat in sorted(lexicon.categories):
            primary = lexicon.taxonomy.get(cat, "") if lexicon.taxonomy else ""
            for term in sorted(lexicon.categories[cat]):
                w.writerow([lexicon.domain, cat, primary, term, int(term in lexicon.seeds)])


def load_fixture_lexicon(domain: str) -> Lexicon:
    if domain not in DOMAINS:
        raise ValidationError(f"unknown lexicon domain {domain!r}; expected one of {DOMAINS}")
    res = resources.files("opilex").joinpath("data").joinpath(f"lexicon_{domain}.csv")
    with res.open("r", encoding="utf-8", newline="") as fh:
        lex = _read_lexicon(fh, res.name)
    # the shipped files keep the paper's row order; re-sort categories for stable output
    return Lexicon(lex.domain, dict(sorted(lex.categories.items())), lex.taxonomy, lex.seeds)


def fixture_seed_set(domain: str) -> SeedSet:
    return SeedSet(domain, load_fixture_lexicon(domain).seeds)


def expand_seeds(model, seeds: SeedSet, n: int = 20) -> CandidateSet:
    """Union of each seed's ``n`` nearest neighbours plus the seeds themselves.

    A term reached from several seeds keeps its highest cosine; ties go to the
    alphabetically first seed. Seeds missing from the model are reported in
    ``missing_seeds``.
    """
    from .embed import neighbours

    present = sorted(t for t in seeds.terms if t in model.vocabulary)
    missing = frozenset(seeds.terms) - set(present)
    if not present:
        raise NoSeedsInVocabulary(f"none of the {len(seeds.terms)} seeds of {seeds.name!r} are in the model")
    if missing:
        log.warning("%d seeds missing from model vocabulary: %s", len(missing), sorted(missing))

    best: dict[str, Candidate] = {}

    def offer(term, cos, seed):
        cur = best.get(term)
        if cur is None or cos > cur.best_cosine or (cos == cur.best_cosine and seed < cur.nearest_seed):
            best[term] = Candidate(term, cos, seed)

    for seed in present:
        offer(seed, 1.0, seed)
        for term, cos in neighbours(model, seed, n):
            offer(term, cos, seed)
    return CandidateSet(seeds.name, dict(sorted(best.items())), missing)


def export_review(candidates: CandidateSet, path) -> None:
    rows = sorted(
        candidates.candidates.values(), key=lambda c: (c.nearest_seed, -c.best_cosine, c.term)
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REVIEW_COLUMNS)
        for c in rows:
            w.writerow([c.term, f"{c.best_cosine:.6f}", c.nearest_seed, 0, ""])


def import_review(path, domain: str) -> Lexicon:
    """Read an edited review file back as a lexicon.

    Rows with ``accept=1`` and a non-empty category are kept. A category cell
    of the form ``Primary>Secondary`` also records the taxonomy parent. Terms
    that were their own nearest seed are flagged as seeds.
    """
    cats: dict[str, set] = {}
    taxonomy: dict[str, str] = {}
    seeds = set()
    where: dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(REVIEW_COLUMNS) <= set(reader.fieldnames):
            raise MalformedReviewFile(f"{path}: expected columns {REVIEW_COLUMNS}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            accept = (row["accept"] or "").strip()
            if accept not in ("0", "1"):
                raise MalformedReviewFile(f"{path}:{lineno}: accept must be 0 or 1, got {accept!r}")
            term = (row["term"] or "").strip()
            if not term:
                raise MalformedReviewFile(f"{path}:{lineno}: empty term")
            cell = (row["category"] or "").strip()
            if accept != "1" or not cell:
                continue
            if TAXONOMY_SEP in cell:
                primary, _, cat = (s.strip() for s in cell.partition(TAXONOMY_SEP))
                if not primary or not cat:
                    raise MalformedReviewFile(f"{path}:{lineno}: bad taxonomy cell {cell!r}")
                if taxonomy.get(cat, primary) != primary:
                    raise MalformedReviewFile(f"{path}:{lineno}: {cat!r} filed under two parents")
                taxonomy[cat] = primary
            else:
                cat = cell
            if where.get(term, cat) != cat:
                raise DuplicateTermAssignment(f"{term!r} accepted under {where[term]!r} and {cat!r}")
            where[term] = cat
            cats.setdefault(cat, set()).add(term)
            if (row["nearest_seed"] or "").strip() == term:
                seeds.add(term)
    if not cats:
        raise NoTermsAccepted(f"{path}: no rows accepted with a category")
    if taxonomy and set(taxonomy) != set(cats):
        raise MalformedReviewFile(f"{path}: taxonomy given for some categories only")
    return Lexicon(domain, {k: frozenset(v) for k, v in sorted(cats.items())}, taxonomy or None, frozenset(seeds))


def match_mentions(post: NormalizedPost, lexicon: Lexicon) -> list[Mention]:
    """One mention per lemma occurrence that belongs to a lexicon category."""
    index = lexicon.lemma_index
    out = []
    for i, sentence in enumerate(post.sentences):
        for lemma in sentence:
            cat = index.get(lemma)
            if cat is not None:
                out.append(Mention(post.post_id, lemma, cat, i, lexicon.domain))
    return out


def volume_growth(
    posts: Iterable[NormalizedPost],
    lexicon: Lexicon,
    category: str,
    seed_only_terms: Optional[Iterable[str]] = None,
) -> float:
    """Percent increase in posts matched by the full category over its seeds.

    ``seed_only_terms`` defaults to the lexicon's flagged seeds in ``category``.
    """
    full_terms = lexicon.categories.get(category)
    if full_terms is None:
        raise ValidationError(f"no category {category!r} in {lexicon.domain} lexicon")
    if seed_only_terms is None:
        seed_only_terms = full_terms & lexicon.seeds
    seed_only_terms = set(seed_only_terms)
    if not seed_only_terms <= full_terms:
        raise ValidationError(f"seed terms not in {category!r}: {sorted(seed_only_terms - full_terms)}")

    full = lexicon.lemmas_of(full_terms)
    seed = lexicon.lemmas_of(seed_only_terms)
    c_full = c_seed = 0
    for p in posts:
        lemmas = set(p.lemmas())
        if lemmas & full:
            c_full += 1
            if lemmas & seed:
                c_seed += 1
    if c_seed == 0:
        raise ZeroSeedVolume(f"no post mentions a seed term of {category!r}")
    return 100.0 * (c_full - c_seed) / c_seed
