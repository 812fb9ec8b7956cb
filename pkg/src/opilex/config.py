"""Pipeline configuration: a single JSON file, schema-validated on load.

Relative paths are resolved against the directory holding the config file.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .embed import EmbeddingParams
from .errors import ValidationError


@dataclass(frozen=True)
class DiscoveryConfig:
    seeds: tuple = ()
    rounds: int = 2
    top_m: int = 150
    k: int = 10
    interactive: bool = False


@dataclass(frozen=True)
class ExpandConfig:
    domain: str = "substance"
    seeds: Optional[tuple] = None  # None: the fixture lexicon's seed terms
    n: int = 20
    model: Optional[Path] = None


@dataclass(frozen=True)
class PipelineConfig:
    inputs: tuple
    years: tuple
    salt: str
    output_dir: Path = Path("out")
    min_subreddit_comments: int = 100
    vocab_min_count: int = 100
    subreddits: Optional[tuple] = None
    background_authors: dict = field(default_factory=dict)
    embedding: EmbeddingParams = EmbeddingParams()
    embedding_scope: str = "pooled"
    discovery: DiscoveryConfig = DiscoveryConfig()
    lexicons: dict = field(default_factory=dict)
    exclude_categories: dict = field(default_factory=dict)
    expand: ExpandConfig = ExpandConfig()
    review_file: Optional[Path] = None
    annotations: Optional[Path] = None
    rho_list: tuple = (0, 1, math.inf)
    alpha: float = 0.01
    zero_cell_correction: bool = True
    separate_events: bool = True
    trend_denominator: str = "quarter"

    @property
    def year_range(self) -> range:
        return range(self.years[0], self.years[1] + 1)

    def to_json_dict(self) -> dict:
        """Fully resolved config as plain JSON types (used in manifests and cache keys)."""
        def conv(v):
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            if isinstance(v, (list, tuple)):
                return [conv(x) for x in v]
            if isinstance(v, dict):
                return {str(k): conv(x) for k, x in sorted(v.items())}
            return v

        return conv(asdict(self))

    def sha256(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _schema() -> dict:
    text = resources.files("opilex").joinpath("data").joinpath("config.schema.json").read_text("utf-8")
    return json.loads(text)


def _set_dotted(raw: dict, key: str, value) -> None:
    parts = key.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ValidationError(f"cannot set {key}: {p} is not an object")
    node[parts[-1]] = value


def parse_config(raw: dict, base_dir: Path = Path(".")) -> PipelineConfig:
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ValidationError(f"config {where}: {e.message}") from None

    def path(p):
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    years = tuple(raw["years"])
    if years[0] > years[1]:
        raise ValidationError(f"years {years[0]}-{years[1]} is an empty range")

    emb = dict(raw.get("embedding", {}))
    scope = emb.pop("scope", "pooled")
    disc = dict(raw.get("discovery", {}))
    if "seeds" in disc:
        disc["seeds"] = tuple(s.lower() for s in disc["seeds"])
    exp = dict(raw.get("expand", {}))
    if exp.get("seeds") is not None:
        exp["seeds"] = tuple(exp["seeds"])
    if "model" in exp:
        exp["model"] = path(exp["model"])

    kw = {}
    for key in ("min_subreddit_comments", "vocab_min_count", "alpha", "zero_cell_correction",
                "separate_events", "trend_denominator"):
        if key in raw:
            kw[key] = raw[key]
    if raw.get("subreddits") is not None:
        kw["subreddits"] = tuple(s.lower() for s in raw["subreddits"])
    if "rho_list" in raw:
        kw["rho_list"] = tuple(math.inf if r == "inf" else int(r) for r in raw["rho_list"])
    lex = raw.get("lexicons", {})

    return PipelineConfig(
        inputs=tuple(path(p) for p in raw["inputs"]),
        years=years,
        salt=raw["salt"],
        output_dir=path(raw.get("output_dir", "out")),
        background_authors={int(k): v for k, v in raw.get("background_authors", {}).items()},
        embedding=EmbeddingParams(**emb),
        embedding_scope=scope,
        discovery=DiscoveryConfig(**disc),
        lexicons={d: path(p) for d, p in sorted(lex.items()) if p is not None},
        exclude_categories={d: tuple(v) for d, v in sorted(raw.get("exclude_categories", {}).items())},
        expand=ExpandConfig(**exp),
        review_file=path(raw.get("review_file")),
        annotations=path(raw.get("annotations")),
        **kw,
    )


def load_config(path, overrides: Optional[dict] = None) -> PipelineConfig:
    """Read, apply dotted-key overrides, validate."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except ValueError as e:
        raise ValidationError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: top level must be an object")
    for key, value in (overrides or {}).items():
        _set_dotted(raw, key, value)
    return parse_config(raw, path.parent)
