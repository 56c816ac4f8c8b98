"""Three-phase cleaning of extracted asset rows.

Phase 1 standardizes characters and aliases, merges duplicate assets and
derives the countries column. Phase 2 merges near-identical asset names by
TF-IDF cosine. Phase 3 asks an LLM to tidy each cell.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .geo import find_countries, read_alias_csv
from .llm import Gateway, LLMError, render_prompt
from .simmetrics import tfidf_vectors
from .store import AssetRow

logger = logging.getLogger(__name__)

NA = "N/A"
MERGE_FIELDS = ("location", "countries", "ownership", "commodity", "status")
LLM_COLUMNS = ("physical_asset", "location", "ownership", "commodity", "status")

DEFAULT_CHAR_RULES: tuple[tuple[str, str], ...] = (
    (r"\\", ""),
    (r"['\"‘’“”]", ""),
    (r"\s+", " "),
    (r"\s*,\s*", ", "),
)


def _data_text(name: str) -> str | None:
    p = resources.files("assetpipe").joinpath(f"data/aliases/{name}")
    return p.read_text(encoding="utf-8") if p.is_file() else None


@dataclass
class StandardizationRules:
    char_rules: tuple[tuple[str, str], ...] = DEFAULT_CHAR_RULES
    ownership_aliases: dict[str, str] = field(default_factory=dict)
    location_aliases: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self._compiled = [(re.compile(p), r) for p, r in self.char_rules]
        # alias keys are looked up after character standardization, so index
        # both the raw and the standardized spelling ("Company's" -> "Companys")
        self.ownership_aliases = self._with_variants(self.ownership_aliases)
        self.location_aliases = self._with_variants(self.location_aliases)

    def _with_variants(self, table: Mapping[str, str]) -> dict[str, str]:
        out = dict(table)
        for alias, canon in table.items():
            out.setdefault(self.apply_chars(alias), canon)
        return out

    def apply_chars(self, value: str) -> str:
        for pat, rep in self._compiled:
            value = pat.sub(rep, value)
        return value.strip()

    @classmethod
    def for_company(cls, ticker: str = "", company_name: str = "",
                    alias_dir: str | Path | None = None) -> "StandardizationRules":
        """Built-in tables plus ``ownership_<TICKER>.csv`` when one exists.

        Without a company file, generic self-references ("the Company", "we")
        map to ``company_name``.
        """
        def load(name: str) -> dict[str, str]:
            if alias_dir is not None:
                p = Path(alias_dir) / name
                if p.is_file():
                    return read_alias_csv(p.read_text(encoding="utf-8"))
            text = _data_text(name)
            return read_alias_csv(text) if text else {}

        ownership: dict[str, str] = {}
        name = company_name or ticker
        if name:
            ownership.update({a: c.replace("{company}", name) for a, c in load("self_reference.csv").items()})
        if ticker:
            ownership.update(load(f"ownership_{ticker}.csv"))
        return cls(ownership_aliases=ownership, location_aliases=load("location.csv"))


def standardize_text(value: str, rules: StandardizationRules | None = None) -> str:
    """Strip backslashes and quotes, collapse whitespace, space commas as ", "."""
    return (rules or _DEFAULT_RULES).apply_chars(value or "")


_DEFAULT_RULES = StandardizationRules()


def split_parts(value: str) -> list[str]:
    return [p.strip() for p in value.split(",") if p.strip()]


def join_unique(parts: Iterable[str]) -> str:
    seen, out = set(), []
    for p in parts:
        key = p.strip().lower()
        if key and key not in seen:
            seen.add(key)
            out.append(p.strip())
    return ", ".join(out)


def normalize_aliases(column: str, value: str, rules: StandardizationRules) -> str:
    """Replace exact alias hits, whole value first, then each comma part."""
    if column == "ownership":
        table = rules.ownership_aliases
    elif column == "location":
        table = rules.location_aliases
    else:
        raise ValueError(f"no alias table for column {column!r}")
    if value in table:
        return table[value]
    if "," not in value:
        return value
    return join_unique(table.get(p, p) for p in split_parts(value))


def _merge(group: Sequence[AssetRow], canonical: str) -> AssetRow:
    ids = [r.id for r in group if r.id is not None]
    merged = replace(
        group[0],
        id=min(ids) if ids else None,
        physical_asset=canonical,
        source_chunk_ids=sorted({c for r in group for c in r.source_chunk_ids}),
        generic=all(r.generic for r in group),
    )
    for f in MERGE_FIELDS:
        values = join_unique(p for r in group for p in split_parts(getattr(r, f)) if p != NA)
        if f == "countries" and not values and any(r.countries for r in group):
            values = NA
        setattr(merged, f, values)
    return merged


def _asset_key(name: str) -> str:
    return " ".join(name.lower().split())


def consolidate_duplicates(rows: Sequence[AssetRow]) -> list[AssetRow]:
    """Merge rows sharing a normalized asset name; fields become comma unions."""
    groups: dict[str, list[AssetRow]] = {}
    for r in rows:
        groups.setdefault(_asset_key(r.physical_asset), []).append(r)
    return [_merge(g, g[0].physical_asset) for g in groups.values()]


@dataclass(frozen=True)
class ConsolidationConfig:
    threshold: float = 0.5
    field: str = "physical_asset"

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")


def similarity_matrix(names: Sequence[str]) -> np.ndarray:
    vecs = tfidf_vectors(names)
    return vecs @ vecs.T


def consolidate_similar(rows: Sequence[AssetRow], config: ConsolidationConfig = ConsolidationConfig()) -> list[AssetRow]:
    """Group rows whose TF-IDF cosine reaches the threshold (transitively).

    Each group keeps its longest name (ties: lexicographically first).
    """
    rows = list(rows)
    if len(rows) < 2:
        return rows
    names = [getattr(r, config.field) for r in rows]
    sims = similarity_matrix(names)
    parent = list(range(len(rows)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    n = len(rows)
    for i in range(n):
        for j in range(i + 1, n):
            if sims[i, j] >= config.threshold - 1e-12:
                a, b = find(i), find(j)
                if a != b:
                    parent[max(a, b)] = min(a, b)
    groups: dict[int, list[AssetRow]] = {}
    for i, r in enumerate(rows):
        groups.setdefault(find(i), []).append(r)
    out = []
    for root in sorted(groups):
        g = groups[root]
        if len(g) == 1:
            out.append(g[0])
            continue
        canonical = min((getattr(r, config.field) for r in g), key=lambda s: (-len(s), s))
        out.append(_merge(g, canonical))
    return out


def extract_countries(location: str, gateway: Gateway | None = None, model: str = "") -> str:
    """Comma-joined country names for a location, or "N/A"."""
    hits = find_countries(location)
    if hits:
        return ", ".join(hits)
    if gateway is None or not model or not location.strip():
        return NA
    try:
        answer = gateway.ask(model, render_prompt("country_extract", {"location": location}))
    except LLMError as exc:
        logger.warning("country extraction failed for %r: %s", location, exc)
        return NA
    hits = find_countries(answer)
    return ", ".join(hits) if hits else NA


def drop_empty_assets(rows: Sequence[AssetRow]) -> list[AssetRow]:
    return [r for r in rows if r.physical_asset.strip() and r.physical_asset.strip() != NA]


_GENERIC_WORDS = frozenset("""
our the a an and or of in at its their various other certain several multiple all some
natural gas oil crude petroleum coal power electric electricity generation generating
field fields mine mines mining plant plants facility facilities property properties
well wells refinery refineries station stations pipeline pipelines asset assets
operation operations project projects site sites reserve reserves unit units
land lands acreage interest interests onshore offshore domestic international
""".split())


def is_generic(name: str) -> bool:
    """True for unnamed assets such as "natural gas fields" or "Oil Wells"."""
    tokens = re.findall(r"[A-Za-z0-9]+", name)
    if not tokens:
        return True
    if all(t[0].islower() for t in tokens):
        return True
    return all(t.lower() in _GENERIC_WORDS for t in tokens)


def phase1(rows: Sequence[AssetRow], rules: StandardizationRules,
           country_fn: Callable[[str], str] = extract_countries) -> list[AssetRow]:
    """standardize -> aliases -> duplicate merge -> countries -> drop empty."""
    out = []
    for r in rows:
        r = replace(r, **{f: standardize_text(getattr(r, f), rules)
                          for f in ("physical_asset", "location", "ownership", "commodity", "status")})
        r.ownership = normalize_aliases("ownership", r.ownership, rules)
        r.location = normalize_aliases("location", r.location, rules)
        out.append(r)
    out = consolidate_duplicates(out)
    for r in out:
        r.countries = country_fn(r.location)
        r.generic = is_generic(r.physical_asset)
    return drop_empty_assets(out)


@dataclass
class CellCleaner:
    """Phase-3 per-cell LLM cleaning with a per-run cache."""

    gateway: Gateway
    model: str
    suspect_ratio: int = 10
    cache: dict[tuple[str, str], str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def __call__(self, column: str, value: str) -> str:
        return llm_clean_cell(column, value, self.gateway, self.model, self)


def llm_clean_cell(column: str, value: str, gateway: Gateway, model: str,
                   cleaner: CellCleaner | None = None) -> str:
    """Ask the model for one cleaned cell value.

    Countries and empty cells pass through. "not specified" becomes empty,
    and an answer more than ten times longer than the input is rejected.
    """
    if column.lower() == "countries" or not value.strip():
        return value
    if value.strip().lower() == "not specified":
        return ""
    key = (column, value)
    if cleaner is not None and key in cleaner.cache:
        return cleaner.cache[key]
    prompt = render_prompt("clean_cell", {"column": column, "value": value})
    answer = gateway.ask(model, prompt).strip()
    ratio = cleaner.suspect_ratio if cleaner else 10
    if answer.lower().strip(" .") == "not specified":
        answer = ""
    elif len(answer) > ratio * len(value):
        msg = f"suspect LLM output for {column}={value!r}; kept original"
        logger.warning(msg)
        if cleaner is not None:
            cleaner.warnings.append(msg)
        answer = value
    if cleaner is not None:
        cleaner.cache[key] = answer
    return answer


def phase3(rows: Sequence[AssetRow], clean_fn: Callable[[str, str], str]) -> list[AssetRow]:
    out = []
    for r in rows:
        out.append(replace(r, **{c: clean_fn(c, getattr(r, c)) for c in LLM_COLUMNS}))
    return drop_empty_assets(out)


def clean_rows(
    rows: Sequence[AssetRow],
    rules: StandardizationRules,
    *,
    config: ConsolidationConfig = ConsolidationConfig(),
    gateway: Gateway | None = None,
    country_model: str = "",
    cleaner: CellCleaner | None = None,
) -> list[AssetRow]:
    """Run all three phases; phase 3 only when ``cleaner`` is given."""
    rows = phase1(rows, rules, lambda loc: extract_countries(loc, gateway, country_model))
    rows = consolidate_similar(rows, config)
    if cleaner is not None:
        rows = phase3(rows, cleaner)
    return rows
