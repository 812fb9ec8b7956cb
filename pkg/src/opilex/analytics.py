"""Quarterly popularity trends and proximity-thresholded odds ratios.

Contingency counting works per post. With sentence-distance threshold ``rho``,
a post with mentions of both categories no further than ``rho`` sentences
apart is a joint event. A post that mentions both but only further apart
counts as two separate events, one in each single-category cell, so the four
cells can sum to more than the number of posts.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Optional, Sequence

from .errors import DegenerateTable, EmptyRange, SameCategory, ValidationError
from .ingest import DELETED_AUTHOR
from .lexicon import Lexicon, Mention, match_mentions
from .textnorm import NormalizedPost

INF = math.inf
DEFAULT_RHOS = (0, 1, INF)


def chi2_sf_df1(x: float) -> float:
    """Survival function of the chi-square distribution with one degree of freedom."""
    if x <= 0:
        return 1.0
    return math.erfc(math.sqrt(x / 2.0))


# -- trends ---------------------------------------------------------------


@dataclass(frozen=True)
class TrendPoint:
    year: int
    quarter: int
    active_authors: int
    mentioning_authors: int
    share: float


@dataclass(frozen=True)
class TrendSeries:
    category: str
    points: tuple


def quarter_of(created_utc: int) -> tuple[int, int]:
    dt = datetime.fromtimestamp(created_utc, tz=timezone.utc)
    return dt.year, (dt.month - 1) // 3 + 1


def quarterly_popularity(
    posts: Sequence[NormalizedPost],
    lexicon: Lexicon,
    level: str = "category",
    years: tuple[int, int] = None,
    mentions: Optional[Mapping[str, Sequence[Mention]]] = None,
    denominator: str = "quarter",
) -> list[TrendSeries]:
    """Share of authors mentioning each category, per calendar quarter.

    ``level="primary"`` aggregates secondary categories through the lexicon
    taxonomy; an author counts once per quarter however often they mention a
    term. With ``denominator="cohort"`` the share is taken over every author
    active anywhere in the range instead of the quarter's active authors.
    Posts by deleted accounts are ignored throughout.
    """
    if level not in ("category", "primary"):
        raise ValidationError(f"unknown trend level {level!r}")
    if denominator not in ("quarter", "cohort"):
        raise ValidationError(f"unknown denominator {denominator!r}")
    if years is None:
        if not posts:
            raise EmptyRange("no posts and no year range given")
        ys = [quarter_of(p.created_utc)[0] for p in posts]
        years = (min(ys), max(ys))
    start, end = years
    if start > end:
        raise EmptyRange(f"empty year range {start}-{end}")

    if level == "primary":
        if lexicon.taxonomy is None:
            raise ValidationError(f"{lexicon.domain} lexicon has no taxonomy to aggregate")
        group = dict(lexicon.taxonomy)
    else:
        group = {c: c for c in lexicon.categories}
    groups = sorted(set(group.values()))

    quarters = [(y, q) for y in range(start, end + 1) for q in (1, 2, 3, 4)]
    active = defaultdict(set)
    mentioning = defaultdict(set)
    for p in posts:
        if p.author_id == DELETED_AUTHOR:
            continue
        yq = quarter_of(p.created_utc)
        if not start <= yq[0] <= end:
            continue
        active[yq].add(p.author_id)
        ms = mentions.get(p.post_id, ()) if mentions is not None else match_mentions(p, lexicon)
        for m in ms:
            g = group.get(m.category)
            if g is not None:
                mentioning[(g, yq)].add(p.author_id)

    if not any(active.values()):
        raise EmptyRange(f"no active authors in {start}-{end}")
    cohort = len(set().union(*active.values()))

    out = []
    for g in groups:
        pts = []
        for yq in quarters:
            n_act = len(active[yq])
            n_men = len(mentioning[(g, yq)])
            denom = n_act if denominator == "quarter" else cohort
            pts.append(TrendPoint(yq[0], yq[1], n_act, n_men, n_men / denom if denom else 0.0))
        out.append(TrendSeries(g, tuple(pts)))
    return out


# -- contingency tables ---------------------------------------------------


@dataclass(frozen=True)
class ContingencyTable:
    a: int  # joint
    b: int  # A without B (within rho)
    c: int  # B without A (within rho)
    d: int  # neither

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError(f"negative cell in {self}")

    def __add__(self, other: "ContingencyTable") -> "ContingencyTable":
        return ContingencyTable(self.a + other.a, self.b + other.b, self.c + other.c, self.d + other.d)

    def transpose(self) -> "ContingencyTable":
        return ContingencyTable(self.a, self.c, self.b, self.d)

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d

    def cells(self) -> tuple:
        return (self.a, self.b, self.c, self.d)


def min_distance(xs: Sequence[int], ys: Sequence[int]) -> int:
    """Smallest |x - y| over two sorted index lists."""
    i = j = 0
    best = None
    while i < len(xs) and j < len(ys):
        d = xs[i] - ys[j]
        if d == 0:
            return 0
        ad = -d if d < 0 else d
        if best is None or ad < best:
            best = ad
        if d < 0:
            i += 1
        else:
            j += 1
    return best


def _tally(n_posts, n_a, n_b, both_distances, rho, separate_events=True) -> ContingencyTable:
    n_both = len(both_distances)
    joint = sum(1 for dist in both_distances if dist <= rho)
    apart = n_both - joint
    if not separate_events:
        joint, apart = n_both, 0
    return ContingencyTable(
        a=joint,
        b=n_a - n_both + apart,
        c=n_b - n_both + apart,
        d=n_posts - (n_a + n_b - n_both),
    )


def _sentence_sets(mentions: Iterable[Mention], cat_a, cat_b):
    sa, sb = set(), set()
    for m in mentions:
        if m.category == cat_a:
            sa.add(m.sentence_index)
        elif m.category == cat_b:
            sb.add(m.sentence_index)
    return sorted(sa), sorted(sb)


def build_contingency(
    posts_mentions: Iterable[Sequence[Mention]],
    category_a: str,
    category_b: str,
    rho: float,
    separate_events: bool = True,
) -> ContingencyTable:
    """Count events over posts, one mention list per post.

    Posts with no mentions must still be passed (as empty lists) since they
    fill the ``d`` cell. ``rho=math.inf`` treats the whole post as one window.
    ``separate_events=False`` counts any post with both categories as joint.
    """
    if category_a == category_b:
        raise SameCategory(f"cannot associate {category_a!r} with itself")
    if rho < 0:
        raise ValidationError(f"rho must be >= 0, got {rho}")
    n = n_a = n_b = 0
    dists = []
    for ms in posts_mentions:
        n += 1
        sa, sb = _sentence_sets(ms, category_a, category_b)
        n_a += bool(sa)
        n_b += bool(sb)
        if sa and sb:
            dists.append(min_distance(sa, sb))
    return _tally(n, n_a, n_b, dists, rho, separate_events)


# -- odds ratios ----------------------------------------------------------


@dataclass(frozen=True)
class AssociationConfig:
    rho: float = 1
    alpha: float = 0.01
    z: float = 1.96
    zero_cell_correction: bool = True
    separate_events: bool = True

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.rho < 0:
            raise ValidationError(f"rho must be >= 0, got {self.rho}")


@dataclass(frozen=True)
class AssociationResult:
    category_a: str
    category_b: str
    rho: float
    odds_ratio: float
    ci_low: float
    ci_high: float
    p_value: float
    n_comentions: int
    significant: bool
    table: ContingencyTable = None
    domain_a: str = ""
    domain_b: str = ""


def odds_ratio(
    table: ContingencyTable,
    config: AssociationConfig = AssociationConfig(),
    category_a: str = "A",
    category_b: str = "B",
    rho: Optional[float] = None,
) -> AssociationResult:
    """Odds ratio, Woolf confidence interval and Pearson chi-square p-value.

    With ``zero_cell_correction`` and any zero cell, 0.5 is added to every cell
    before all three statistics are computed.
    """
    a, b, c, d = table.cells()
    if table.total == 0:
        raise DegenerateTable("empty table")
    if a + b == 0 or c + d == 0 or a + c == 0 or b + d == 0:
        raise DegenerateTable(f"empty margin in {table.cells()}")
    if 0 in (a, b, c, d):
        if not config.zero_cell_correction:
            raise DegenerateTable(f"zero cell in {table.cells()} with correction disabled")
        a, b, c, d = a + 0.5, b + 0.5, c + 0.5, d + 0.5

    or_ = (a * d) / (b * c)
    se = math.sqrt(1 / a + 1 / b + 1 / c + 1 / d)
    log_or = math.log(or_)
    lo = math.exp(log_or - config.z * se)
    hi = math.exp(log_or + config.z * se)

    n = a + b + c + d
    stat = n * (a * d - b * c) ** 2 / ((a + b) * (c + d) * (a + c) * (b + d))
    p = chi2_sf_df1(stat)
    return AssociationResult(
        category_a=category_a,
        category_b=category_b,
        rho=config.rho if rho is None else rho,
        odds_ratio=or_,
        ci_low=lo,
        ci_high=hi,
        p_value=p,
        n_comentions=table.a,
        significant=p <= config.alpha,
        table=table,
    )


def _category_sentences(ms: Iterable[Mention]) -> dict[str, list]:
    out = defaultdict(set)
    for m in ms:
        out[m.category].add(m.sentence_index)
    return {k: sorted(v) for k, v in out.items()}


def association_matrix(
    posts: Sequence[NormalizedPost],
    lexicon_a: Lexicon,
    lexicon_b: Lexicon,
    rho_list: Sequence[float] = DEFAULT_RHOS,
    config: AssociationConfig = AssociationConfig(),
) -> list[AssociationResult]:
    """Every category pair of two lexicons at every rho.

    Non-significant results are kept and flagged. Tables that cannot yield an
    odds ratio (an empty margin, or a zero cell without correction) are kept
    too, with NaN statistics.
    """
    if lexicon_a.domain == lexicon_b.domain:
        raise ValidationError(f"both lexicons are {lexicon_a.domain!r}")
    clash = set(lexicon_a.categories) & set(lexicon_b.categories)
    if clash:
        raise ValidationError(f"category names shared by both lexicons: {sorted(clash)}")

    n_posts = len(posts)
    by_cat_a = defaultdict(dict)  # category -> {post index: sorted sentences}
    by_cat_b = defaultdict(dict)
    for i, p in enumerate(posts):
        for cat, sents in _category_sentences(match_mentions(p, lexicon_a)).items():
            by_cat_a[cat][i] = sents
        for cat, sents in _category_sentences(match_mentions(p, lexicon_b)).items():
            by_cat_b[cat][i] = sents

    results = []
    for ca in sorted(lexicon_a.categories):
        pa = by_cat_a.get(ca, {})
        for cb in sorted(lexicon_b.categories):
            pb = by_cat_b.get(cb, {})
            dists = [min_distance(pa[i], pb[i]) for i in pa.keys() & pb.keys()]
            for rho in rho_list:
                table = _tally(n_posts, len(pa), len(pb), dists, rho, config.separate_events)
                try:
                    r = odds_ratio(table, config, ca, cb, rho)
                except DegenerateTable:
                    nan = math.nan
                    r = AssociationResult(ca, cb, rho, nan, nan, nan, nan, table.a, False, table)
                results.append(
                    AssociationResult(
                        **{**r.__dict__, "domain_a": lexicon_a.domain, "domain_b": lexicon_b.domain}
                    )
                )
    return results


def sort_results(results: Iterable[AssociationResult]) -> list[AssociationResult]:
    return sorted(results, key=lambda r: (r.domain_a, r.category_a, r.domain_b, r.category_b, r.rho))
