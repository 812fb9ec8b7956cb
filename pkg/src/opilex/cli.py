"""Command line entry point.

    opilex <subcommand> --config CONFIG [--threads N] [--output DIR] [overrides]

Every run writes ``manifest_<subcommand>.json`` next to its outputs. Exit
codes: 0 success, 1 validation error (config, arguments), 2 data error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from . import __version__
from .analytics import AssociationConfig, association_matrix, quarterly_popularity, sort_results
from .config import PipelineConfig, load_config
from .discovery import (
    SeedQueryUnion,
    fleiss_kappa,
    read_annotations,
    read_review_candidates,
    run_discovery,
    TermStats,
    write_review_candidates,
)
from .embed import export_text, load_model, save_model, train_embeddings
from .errors import DataError, EmptyCorpus, OpilexError, ValidationError
from .ingest import (
    CorpusSlice,
    dataset_stats,
    filter_subreddits,
    load_corpora,
    read_corpus_cache,
    restrict_to_subreddits,
    write_corpus_cache,
)
from .lexicon import (
    DOMAINS,
    SeedSet,
    expand_seeds,
    export_review,
    import_review,
    load_fixture_lexicon,
    load_lexicon,
    save_lexicon,
)
from .textnorm import (
    build_vocabulary,
    data_fingerprint,
    normalize_corpus,
    normalize_tokens,
    read_normalized_cache,
    write_normalized_cache,
)

log = logging.getLogger("opilex")

TRENDS_COLUMNS = ["category", "year", "quarter", "active_authors", "mentioning_authors", "share"]
ASSOC_COLUMNS = [
    "domain_a", "category_a", "domain_b", "category_b", "rho", "a", "b", "c", "d",
    "odds_ratio", "ci_low", "ci_high", "p_value", "significant",
]
STATS_COLUMNS = [
    "year", "reddit_comments", "reddit_authors", "subreddits", "comments", "authors", "authors_prevalence",
]
ASSOC_PAIRS = [("substance", "roa"), ("substance", "tampering"), ("roa", "tampering"), ("roa_primary", "tampering")]


class ReviewPending(OpilexError):
    """Interactive discovery stopped to wait for an edited review file."""


def fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".6g")
    return str(x)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Per-invocation state: config, thread count, and output bookkeeping."""

    def __init__(self, command: str, argv: list, cfg: PipelineConfig, threads: int):
        self.command = command
        self.argv = argv
        self.cfg = cfg
        self.threads = threads
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache = self.out / "cache"
        self.cache.mkdir(exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.meta: dict = {}

    def note_input(self, path) -> str:
        digest = sha256_file(path)
        self.inputs[str(path)] = digest
        return digest

    def write_csv(self, name: str, header: list, rows) -> Path:
        path = self.out / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([fmt(x) for x in r])
        self.outputs.append(path)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8", newline="\n")
        self.outputs.append(path)
        return path

    def manifest(self) -> Path:
        doc = {
            "command": self.command,
            "argv": self.argv,
            "cwd": os.getcwd(),
            "text_resources_sha256": data_fingerprint(),
            "version": __version__,
            "config_sha256": self.cfg.sha256(),
            "config": self.cfg.to_json_dict(),
            "threads": self.threads,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {p.name: sha256_file(p) for p in sorted(self.outputs)},
        }
        if self.meta:
            doc["notes"] = self.meta
        path = self.out / f"manifest_{self.command}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
        return path

    # -- cached pipeline stages ----------------------------------------

    def raw_corpora(self) -> dict[int, CorpusSlice]:
        """Year slices straight from the dumps, cached by input content."""
        cfg = self.cfg
        h = hashlib.sha256()
        for p in cfg.inputs:
            if not Path(p).exists():
                raise DataError(f"input not found: {p}")
            h.update(self.note_input(p).encode())
        h.update(cfg.salt.encode("utf-8"))
        key = h.hexdigest()[:16]
        paths = {y: self.cache / f"corpus-{key}-{y}.ndjson" for y in cfg.year_range}
        if all(p.exists() for p in paths.values()):
            return {y: read_corpus_cache(p) for y, p in paths.items()}

        def lines():
            for p in cfg.inputs:
                with open(p, encoding="utf-8", errors="replace") as fh:
                    yield from fh

        slices = load_corpora(lines(), cfg.year_range, cfg.salt, workers=self.threads)
        for y, s in slices.items():
            write_corpus_cache(s, paths[y])
        return slices

    def platform_corpora(self) -> dict[int, CorpusSlice]:
        out = {}
        for y, s in self.raw_corpora().items():
            if not s.posts:
                log.warning("no posts for %d", y)
                continue
            try:
                out[y] = filter_subreddits(s, self.cfg.min_subreddit_comments)
            except EmptyCorpus as e:
                log.warning("%s", e)
        if not out:
            raise EmptyCorpus("no year in range has posts surviving the subreddit filter")
        return out

    def topical_corpora(self) -> dict[int, CorpusSlice]:
        out = {}
        for y, s in self.platform_corpora().items():
            if self.cfg.subreddits is None:
                out[y] = s
                continue
            try:
                out[y] = restrict_to_subreddits(s, self.cfg.subreddits)
            except EmptyCorpus as e:
                log.warning("%s", e)
        if not out:
            raise EmptyCorpus("no topical subreddit present in any year")
        return out

    def normalized(self, corpus: CorpusSlice, tag: str):
        """Normalized posts, pruned by the yearly vocabulary, cached by content."""
        h = hashlib.sha256()
        h.update(data_fingerprint().encode())
        h.update(f"{tag}|{corpus.year}|{self.cfg.vocab_min_count}".encode())
        for p in corpus.posts:
            h.update(json.dumps(p.to_dict(), sort_keys=True).encode("utf-8"))
        key = h.hexdigest()
        path = self.cache / f"normalized-{tag}-{corpus.year}-{key[:16]}.ndjson"
        if path.exists():
            return read_normalized_cache(path, key)
        posts = normalize_corpus(corpus, workers=self.threads)
        if self.cfg.vocab_min_count > 1:
            vocab = build_vocabulary(posts, self.cfg.vocab_min_count, corpus.year)
            posts = [
                replace(p, sentences=tuple(tuple(t for t in s if t in vocab.entries) for s in p.sentences))
                for p in posts
            ]
        write_normalized_cache(posts, path, key)
        return posts

    def lexicon(self, domain: str):
        path = self.cfg.lexicons.get(domain)
        if path is not None:
            self.note_input(path)
            lex = load_lexicon(path)
        else:
            lex = load_fixture_lexicon(domain)
        drop = self.cfg.exclude_categories.get(domain, ())
        return lex.without(drop) if drop else lex


# -- subcommands -----------------------------------------------------------


def cmd_ingest(run: Run, args) -> None:
    raw = run.raw_corpora()
    rows = []
    for y, s in sorted(raw.items()):
        rows.append([y, len(s.posts), len(s.subreddit_index), s.n_malformed])
    run.write_csv("ingest_summary.csv", ["year", "posts", "subreddits", "malformed_lines"], rows)


def cmd_stats(run: Run, args) -> None:
    raw = run.raw_corpora()
    topical = run.topical_corpora()
    rows = []
    for y in sorted(topical):
        platform = dataset_stats(raw[y])
        background = run.cfg.background_authors.get(y, platform.n_authors)
        st = dataset_stats(topical[y], background)
        rows.append([y, platform.n_comments, platform.n_authors, st.n_subreddits,
                     st.n_comments, st.n_authors, st.author_prevalence])
    run.write_csv("stats.csv", STATS_COLUMNS, rows)


def cmd_discover(run: Run, args) -> None:
    dc = run.cfg.discovery
    if not dc.seeds:
        raise ValidationError("discovery.seeds is empty")
    results = []
    for y, corpus in sorted(run.platform_corpora().items()):
        stats = TermStats.from_posts(run.normalized(corpus, "platform"))

        def review(r, cands, y=y):
            path = run.out / f"discovery_candidates_{y}_round{r + 1}.csv"
            if dc.interactive:
                if path.exists():
                    return read_review_candidates(path)
                write_review_candidates(cands, path, accept=0)
                raise ReviewPending(f"edit the accept column of {path} and re-run discover")
            write_review_candidates(cands, path)
            run.outputs.append(path)
            return [t for t, _ in cands]

        res = run_discovery(stats, dc.seeds, dc.rounds, dc.top_m, dc.k, review, year=y)
        run.write_text(f"discovery_{y}.json", res.to_json())
        results.append(res)
    union = SeedQueryUnion.of(results)
    run.write_text("query_union.json", json.dumps(sorted(union.terms), indent=2))
    top = sorted({s for r in results for s, _ in r.subreddit_ranking[: dc.top_m]})
    run.write_csv("subreddit_union.csv", ["subreddit"], [[s] for s in top])


def cmd_kappa(run: Run, args) -> None:
    path = run.cfg.annotations
    if path is None:
        raise ValidationError("no annotation file (set 'annotations' or pass --annotations)")
    run.note_input(path)
    res = fleiss_kappa(read_annotations(path))
    print(f"{res.kappa:.6f}")
    run.write_text("kappa.json", json.dumps(
        {"kappa": res.kappa, "p_bar": res.p_bar, "p_e": res.p_e}, indent=2, sort_keys=True))


def cmd_train(run: Run, args) -> None:
    cfg = run.cfg
    topical = run.topical_corpora()
    groups = (
        {"pooled": list(topical)} if cfg.embedding_scope == "pooled" else {str(y): [y] for y in topical}
    )
    for name, years in groups.items():
        posts = [p for y in years for p in run.normalized(topical[y], "topical")]
        model = train_embeddings(posts, cfg.embedding, workers=run.threads)
        stem = "model" if name == "pooled" else f"model_{name}"
        save_model(model, run.out / f"{stem}.bin")
        export_text(model, run.out / f"{stem}.txt")
        run.outputs += [run.out / f"{stem}.bin", run.out / f"{stem}.txt"]
        run.write_csv(f"{stem}_loss.csv", ["epoch", "mean_loss"],
                      [[i + 1, loss] for i, loss in enumerate(model.loss_history)])


def cmd_expand(run: Run, args) -> None:
    ex = run.cfg.expand
    model_path = ex.model or run.out / "model.bin"
    run.note_input(model_path)
    model = load_model(model_path)
    terms = ex.seeds if ex.seeds is not None else sorted(load_fixture_lexicon(ex.domain).seeds)
    # the model vocabulary holds lemmas, so seeds go through the same normalization
    lemmas = set()
    for t in terms:
        norm = normalize_tokens(t)
        if len(norm) == 1:
            lemmas.add(norm[0])
        else:
            log.warning("seed %r normalizes to %r; skipped", t, norm)
    cands = expand_seeds(model, SeedSet(ex.domain, frozenset(lemmas)), ex.n)
    path = run.out / f"review_{ex.domain}.csv"
    export_review(cands, path)
    run.outputs.append(path)


def cmd_lexicon_import(run: Run, args) -> None:
    path = run.cfg.review_file or run.out / f"review_{run.cfg.expand.domain}.csv"
    run.note_input(path)
    lex = import_review(path, run.cfg.expand.domain)
    out = run.out / f"lexicon_{lex.domain}.csv"
    save_lexicon(lex, out)
    run.outputs.append(out)


def _topical_posts(run: Run):
    topical = run.topical_corpora()
    return [p for y in sorted(topical) for p in run.normalized(topical[y], "topical")]


def cmd_trends(run: Run, args) -> None:
    cfg = run.cfg
    posts = _topical_posts(run)
    jobs = [
        ("trends_substance.csv", run.lexicon("substance"), "category"),
        ("trends_roa.csv", run.lexicon("roa"), "category"),
        ("trends_roa_primary.csv", run.lexicon("roa"), "primary"),
        ("trends_tampering.csv", run.lexicon("tampering"), "category"),
    ]
    for name, lex, level in jobs:
        series = quarterly_popularity(posts, lex, level, tuple(cfg.years), denominator=cfg.trend_denominator)
        rows = [
            [s.category, pt.year, pt.quarter, pt.active_authors, pt.mentioning_authors, pt.share]
            for s in series
            for pt in s.points
        ]
        run.write_csv(name, TRENDS_COLUMNS, rows)


def cmd_associate(run: Run, args) -> None:
    cfg = run.cfg
    posts = _topical_posts(run)
    acfg = AssociationConfig(
        alpha=cfg.alpha, zero_cell_correction=cfg.zero_cell_correction, separate_events=cfg.separate_events
    )
    lex = {d: run.lexicon(d) for d in DOMAINS}
    lex["roa_primary"] = lex["roa"].primary()
    results = []
    for da, db in ASSOC_PAIRS:
        results += association_matrix(posts, lex[da], lex[db], cfg.rho_list, acfg)
    rows = []
    for r in sort_results(results):
        t = r.table
        rows.append([r.domain_a, r.category_a, r.domain_b, r.category_b, r.rho, t.a, t.b, t.c, t.d,
                     r.odds_ratio, r.ci_low, r.ci_high, r.p_value, r.significant])
    run.write_csv("associations.csv", ASSOC_COLUMNS, rows)
    run.meta["associations.csv"] = (
        "separate_events=true: a post with both categories only further apart than rho adds 1 to b "
        "and 1 to c, so a+b+c+d can exceed the post count"
        if cfg.separate_events
        else "separate_events=false: any post mentioning both categories counts as joint"
    )


COMMANDS = {
    "ingest": (cmd_ingest, "dump files -> yearly corpus caches"),
    "stats": (cmd_stats, "dataset statistics table"),
    "discover": (cmd_discover, "iterative query expansion and subreddit ranking"),
    "kappa": (cmd_kappa, "Fleiss' kappa of an annotation CSV"),
    "train": (cmd_train, "train SGNS embeddings"),
    "expand": (cmd_expand, "expand seed terms into a review file"),
    "lexicon-import": (cmd_lexicon_import, "reviewed file -> lexicon CSV"),
    "trends": (cmd_trends, "quarterly author-share trends"),
    "associate": (cmd_associate, "odds ratios between lexicon categories"),
}


def _json_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="pipeline config JSON")
    common.add_argument("--threads", type=int, default=None,
                        help="worker count (default: $OPILEX_THREADS or 1; 1 is fully deterministic)")
    common.add_argument("--output", default=None, help="output directory (overrides output_dir)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, dotted for nested keys; VALUE parsed as JSON")
    common.add_argument("--years", nargs=2, type=int, metavar=("START", "END"))
    common.add_argument("--salt")
    common.add_argument("--min-subreddit-comments", type=int)
    common.add_argument("--vocab-min-count", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="opilex", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sps = {name: sub.add_parser(name, parents=[common], help=h) for name, (_, h) in COMMANDS.items()}

    sps["discover"].add_argument("--interactive", action="store_true", default=None)
    sps["discover"].add_argument("--rounds", type=int)
    sps["discover"].add_argument("--top-m", type=int)
    sps["discover"].add_argument("-k", type=int)
    sps["kappa"].add_argument("--annotations")
    sps["train"].add_argument("--epochs", type=int)
    sps["train"].add_argument("--vector-size", type=int)
    sps["train"].add_argument("--scope", choices=["pooled", "per-year"])
    for name in ("expand", "lexicon-import"):
        sps[name].add_argument("--domain", choices=list(DOMAINS))
    sps["expand"].add_argument("--model")
    sps["expand"].add_argument("-n", type=int)
    sps["lexicon-import"].add_argument("--review")
    sps["associate"].add_argument("--rho", action="append", help="repeatable; 'inf' allowed")
    sps["associate"].add_argument("--alpha", type=float)
    return p


_OVERRIDES = {
    "years": "years",
    "salt": "salt",
    "min_subreddit_comments": "min_subreddit_comments",
    "vocab_min_count": "vocab_min_count",
    "interactive": "discovery.interactive",
    "rounds": "discovery.rounds",
    "top_m": "discovery.top_m",
    "k": "discovery.k",
    "epochs": "embedding.epochs",
    "vector_size": "embedding.vector_size",
    "scope": "embedding.scope",
    "domain": "expand.domain",
    "n": "expand.n",
    "alpha": "alpha",
}


def _resolve(args) -> tuple[PipelineConfig, int]:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = _json_value(value)
    for attr, key in _OVERRIDES.items():
        v = getattr(args, attr, None)
        if v is not None:
            overrides[key] = list(v) if isinstance(v, (list, tuple)) else v
    rho = getattr(args, "rho", None)
    if rho:
        overrides["rho_list"] = [r if r == "inf" else _json_value(r) for r in rho]
    cfg = load_config(args.config, overrides)

    cwd_paths = {}
    if args.output:
        cwd_paths["output_dir"] = Path(args.output)
    if getattr(args, "annotations", None):
        cwd_paths["annotations"] = Path(args.annotations)
    if getattr(args, "review", None):
        cwd_paths["review_file"] = Path(args.review)
    if cwd_paths:
        cfg = replace(cfg, **cwd_paths)
    if getattr(args, "model", None):
        cfg = replace(cfg, expand=replace(cfg.expand, model=Path(args.model)))

    threads = args.threads
    if threads is None:
        env = os.environ.get("OPILEX_THREADS")
        try:
            threads = int(env) if env else 1
        except ValueError:
            raise ValidationError(f"OPILEX_THREADS must be an integer, got {env!r}") from None
    if threads < 1:
        raise ValidationError("--threads must be >= 1")
    return cfg, threads


def run(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code else 0
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg, threads = _resolve(args)
        r = Run(args.command, argv, cfg, threads)
        COMMANDS[args.command][0](r, args)
        r.manifest()
    except ReviewPending as e:
        r.manifest()
        print(str(e), file=sys.stderr)
        return 0
    except ValidationError as e:
        print(f"opilex {args.command}: {e}", file=sys.stderr)
        return 1
    except (DataError, OSError, UnicodeDecodeError) as e:
        print(f"opilex {args.command}: {e}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
