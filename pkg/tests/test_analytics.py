import math
import random
from datetime import datetime, timezone

import pytest
from hypothesis import given
from hypothesis import strategies as st

from opilex.analytics import (
    AssociationConfig,
    ContingencyTable,
    association_matrix,
    build_contingency,
    chi2_sf_df1,
    min_distance,
    odds_ratio,
    quarter_of,
    quarterly_popularity,
)
from opilex.errors import DegenerateTable, EmptyRange, SameCategory, ValidationError
from opilex.ingest import DELETED_AUTHOR
from opilex.lexicon import Lexicon, Mention, load_fixture_lexicon

from helpers import naive_table, npost, random_corpus

INF = math.inf


def ts(y, m, d=15):
    return int(datetime(y, m, d, tzinfo=timezone.utc).timestamp())


def M(cat, sent):
    return Mention("p", "t", cat, sent)


# -- contingency -----------------------------------------------------------


def test_contingency_examples():
    post = [M("A", 0), M("B", 1)]
    assert build_contingency([post], "A", "B", 1) == ContingencyTable(1, 0, 0, 0)
    assert build_contingency([post], "A", "B", 0) == ContingencyTable(0, 1, 1, 0)
    assert build_contingency([[]], "A", "B", 0) == ContingencyTable(0, 0, 0, 1)
    assert build_contingency([post], "A", "B", INF) == ContingencyTable(1, 0, 0, 0)


def test_separate_events_flag_off():
    post = [M("A", 0), M("B", 5)]
    assert build_contingency([post], "A", "B", 0, separate_events=False) == ContingencyTable(1, 0, 0, 0)


def test_same_category_rejected():
    with pytest.raises(SameCategory):
        build_contingency([[]], "A", "A", 1)
    with pytest.raises(ValidationError):
        build_contingency([[]], "A", "B", -1)


@pytest.mark.parametrize("seed", range(10))
def test_contingency_matches_bruteforce(seed):
    rng = random.Random(seed)
    corpus = random_corpus(rng, rng.randint(0, 200))
    for rho in (0, 1, 2, 5, INF):
        assert build_contingency(corpus, "A", "B", rho) == naive_table(corpus, "A", "B", rho)


@given(st.lists(st.integers(0, 30), min_size=1, max_size=8), st.lists(st.integers(0, 30), min_size=1, max_size=8))
def test_min_distance(xs, ys):
    xs, ys = sorted(set(xs)), sorted(set(ys))
    assert min_distance(xs, ys) == min(abs(x - y) for x in xs for y in ys)


@given(st.integers(0, 2**31))
def test_rho_monotone(seed):
    corpus = random_corpus(random.Random(seed), 50)
    tabs = [build_contingency(corpus, "A", "B", r) for r in (0, 1, 2, 3, 4, 5, INF)]
    for lo, hi in zip(tabs, tabs[1:]):
        assert lo.a <= hi.a and lo.b >= hi.b and lo.c >= hi.c and lo.d == hi.d


@given(st.integers(0, 2**31), st.sampled_from([0, 1, 2, INF]))
def test_swap_transposes(seed, rho):
    corpus = random_corpus(random.Random(seed), 40)
    t = build_contingency(corpus, "A", "B", rho)
    assert build_contingency(corpus, "B", "A", rho) == t.transpose()


@given(st.integers(0, 2**31), st.integers(1, 5))
def test_tables_merge_over_shards(seed, k):
    corpus = random_corpus(random.Random(seed), 60)
    whole = build_contingency(corpus, "A", "B", 1)
    parts = [build_contingency(corpus[i::k], "A", "B", 1) for i in range(k)]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    assert total == whole


# -- odds ratio ------------------------------------------------------------


def test_or_independence():
    r = odds_ratio(ContingencyTable(10, 10, 10, 10))
    assert r.odds_ratio == 1.0 and r.p_value == pytest.approx(1.0)


def test_or_worked_example():
    r = odds_ratio(ContingencyTable(20, 10, 5, 40))
    assert r.odds_ratio == pytest.approx(16.0)
    # Woolf interval with z = 1.96, frozen from a 40-digit evaluation
    assert r.ci_low == pytest.approx(4.8179028897722291833, abs=1e-9)
    assert r.ci_high == pytest.approx(53.135151508232793969, abs=1e-9)
    # Pearson statistic is exactly 25
    assert r.p_value == pytest.approx(5.7330314375838782335e-7, rel=1e-9)
    assert r.significant


def test_or_zero_cell_correction():
    r = odds_ratio(ContingencyTable(5, 0, 3, 10))
    assert r.odds_ratio == pytest.approx(33.0)
    with pytest.raises(DegenerateTable):
        odds_ratio(ContingencyTable(5, 0, 3, 10), AssociationConfig(zero_cell_correction=False))


@pytest.mark.parametrize("cells", [(0, 0, 0, 0), (0, 0, 3, 4), (3, 0, 4, 0)])
def test_or_degenerate(cells):
    with pytest.raises(DegenerateTable):
        odds_ratio(ContingencyTable(*cells))


def test_config_validation():
    with pytest.raises(ValidationError):
        AssociationConfig(alpha=0)
    with pytest.raises(ValidationError):
        AssociationConfig(rho=-1)


cell = st.integers(1, 500)


@given(cell, cell, cell, cell)
def test_or_invariants(a, b, c, d):
    r = odds_ratio(ContingencyTable(a, b, c, d))
    assert r.odds_ratio > 0
    assert r.ci_low <= r.odds_ratio <= r.ci_high
    assert 0.0 <= r.p_value <= 1.0
    s = odds_ratio(ContingencyTable(a, c, b, d))
    assert s.odds_ratio == pytest.approx(r.odds_ratio)
    assert (s.ci_low, s.ci_high) == pytest.approx((r.ci_low, r.ci_high))
    assert s.p_value == pytest.approx(r.p_value)


@given(cell, cell, cell, cell, st.integers(2, 6))
def test_or_scaling(a, b, c, d, k):
    r = odds_ratio(ContingencyTable(a, b, c, d))
    s = odds_ratio(ContingencyTable(k * a, k * b, k * c, k * d))
    assert s.odds_ratio == pytest.approx(r.odds_ratio)
    # the chi-square statistic scales with n, so p moves unless there is no association
    if a * d != b * c:
        if r.p_value > 1e-290:  # below that both may underflow to 0
            assert s.p_value < r.p_value
    else:
        assert s.p_value == pytest.approx(r.p_value)


def test_chi2_sf_reference_values():
    # 40-digit regularized upper incomplete gamma, Q(1/2, x/2)
    ref = {
        0.0001: 0.9920212873707367926,
        3.841: 0.050013683763956704798,
        6.635: 0.0099994195740425237731,
        10.83: 0.0009986863791802587832,
    }
    for x, want in ref.items():
        assert chi2_sf_df1(x) == pytest.approx(want, abs=1e-12)
    assert chi2_sf_df1(0.0) == 1.0


@given(st.floats(0, 80))
def test_chi2_sf_matches_scipy(x):
    scipy_stats = pytest.importorskip("scipy.stats")
    assert chi2_sf_df1(x) == pytest.approx(scipy_stats.chi2.sf(x, 1), rel=1e-10, abs=1e-300)


# -- association matrix ----------------------------------------------------


def _lex_pair():
    a = Lexicon("substance", {"Heroin": frozenset({"heroin"}), "Oxy": frozenset({"oxy"})})
    b = Lexicon("roa", {"Snort": frozenset({"snort"}), "Inject": frozenset({"inject"})}, {"Snort": "Inh", "Inject": "Inj"})
    return a, b


def test_association_matrix_shape_and_flags():
    a, b = _lex_pair()
    posts = [npost("p1", [["heroin", "snort"]])]
    res = association_matrix(posts, a, b, (0, 1, INF))
    assert len(res) == 2 * 2 * 3
    for r in res:
        assert r.table.total >= 1
        assert r.domain_a == "substance" and r.domain_b == "roa"
        if math.isnan(r.odds_ratio):
            assert not r.significant


def test_association_matrix_rejects_same_domain():
    a, _ = _lex_pair()
    with pytest.raises(ValidationError):
        association_matrix([], a, a)


def test_association_matrix_agrees_with_build_contingency():
    from opilex.lexicon import match_mentions

    sub = load_fixture_lexicon("substance")
    roa = load_fixture_lexicon("roa")
    rng = random.Random(4)
    pool = ["heroin", "oxy", "snort", "iv", "boof", "dog", "fent", "chew", "sub"]
    posts = [
        npost(f"p{i}", [[rng.choice(pool) for _ in range(rng.randint(0, 3))] for _ in range(rng.randint(1, 5))])
        for i in range(150)
    ]
    res = {(r.category_a, r.category_b, r.rho): r.table for r in association_matrix(posts, sub, roa, (0, 1, INF))}
    mentions = [match_mentions(p, sub) + match_mentions(p, roa) for p in posts]
    for ca, cb in [("Heroin", "Intranasal"), ("Oxycodone", "Intravenous"), ("Fentanyl", "Rectally")]:
        for rho in (0, 1, INF):
            assert res[(ca, cb, rho)] == naive_table(mentions, ca, cb, rho)


# -- trends ----------------------------------------------------------------


def test_quarter_of():
    assert quarter_of(ts(2018, 1, 1)) == (2018, 1)
    assert quarter_of(ts(2018, 4, 1)) == (2018, 2)
    assert quarter_of(ts(2018, 12, 31)) == (2018, 4)


def test_trend_examples():
    a, _ = _lex_pair()
    posts = [npost("p1", [["heroin"] * 50], author="u1", ts=ts(2018, 2))]
    posts += [npost(f"q{i}", [["dog"]], author=f"v{i}", ts=ts(2018, 2)) for i in range(3)]
    posts += [npost("d", [["heroin"]], author=DELETED_AUTHOR, ts=ts(2018, 2))]
    series = {s.category: s for s in quarterly_popularity(posts, a, years=(2018, 2018))}
    q1 = series["Heroin"].points[0]
    assert (q1.active_authors, q1.mentioning_authors, q1.share) == (4, 1, 0.25)
    assert len(series["Heroin"].points) == 4
    assert series["Heroin"].points[1].share == 0.0


def test_trend_single_author():
    a, _ = _lex_pair()
    posts = [npost("p1", [["heroin"]], ts=ts(2019, 7))]
    s = quarterly_popularity(posts, a, years=(2019, 2019))
    heroin = [x for x in s if x.category == "Heroin"][0]
    assert heroin.points[2].share == 1.0


def test_trend_errors():
    a, b = _lex_pair()
    with pytest.raises(EmptyRange):
        quarterly_popularity([], a)
    with pytest.raises(EmptyRange):
        quarterly_popularity([npost("p", [["heroin"]], ts=ts(2018, 1))], a, years=(2019, 2018))
    with pytest.raises(ValidationError):
        quarterly_popularity([npost("p", [["x"]])], a, level="primary")


def test_cohort_denominator():
    a, _ = _lex_pair()
    posts = [npost("p1", [["heroin"]], author="u1", ts=ts(2018, 2)), npost("p2", [["x"]], author="u2", ts=ts(2018, 5))]
    s = {x.category: x for x in quarterly_popularity(posts, a, years=(2018, 2018), denominator="cohort")}
    assert s["Heroin"].points[0].share == 0.5


@given(st.integers(0, 2**31))
def test_trend_share_bounds_and_primary_dominance(seed):
    rng = random.Random(seed)
    roa = load_fixture_lexicon("roa")
    pool = ["snort", "sniff", "smoke", "iv", "boof", "chew", "sip", "dog", "vape"]
    posts = [
        npost(f"p{i}", [[rng.choice(pool) for _ in range(rng.randint(0, 3))]], author=f"u{rng.randrange(15)}",
              ts=ts(2018, rng.randint(1, 12)))
        for i in range(60)
    ]
    sec = {s.category: s for s in quarterly_popularity(posts, roa, "category", (2018, 2018))}
    prim = {s.category: s for s in quarterly_popularity(posts, roa, "primary", (2018, 2018))}
    for s in list(sec.values()) + list(prim.values()):
        assert all(0.0 <= p.share <= 1.0 for p in s.points)
    for cat, parent in roa.taxonomy.items():
        for ps, pp in zip(sec[cat].points, prim[parent].points):
            assert pp.share >= ps.share
