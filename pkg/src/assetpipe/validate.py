"""Reference-database matching, attribute similarity scoring and coverage."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .simmetrics import RankedList, cosine_tokens, dice, jaccard, levenshtein_norm, partial_ratio
from .store import AssetRow

logger = logging.getLogger(__name__)

REFERENCE_COLUMNS = ("ref_id", "company_ticker", "asset_name", "owner", "commodity", "country", "status", "asset_type")
ASSET_TYPES = frozenset({"mine", "refinery", "power_plant", "other"})
DEFAULT_EXCLUSIONS = frozenset({"closed", "abandoned"})
# (asset column, reference column)
ATTRIBUTE_PAIRS = (
    ("physical_asset", "asset_name"),
    ("ownership", "owner"),
    ("commodity", "commodity"),
    ("countries", "country"),
)
PAIRWISE_METRICS = ("partial_match", "jaccard", "cosine", "dice", "levenshtein_norm")
METRICS = PAIRWISE_METRICS + ("hits_at_5",)


class ReferenceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceAsset:
    ref_id: str
    company_ticker: str
    asset_name: str
    owner: str = ""
    commodity: str = ""
    country: str = ""
    status: str = ""
    asset_type: str = "other"

    def __post_init__(self):
        if not self.asset_name.strip():
            raise ReferenceFormatError(f"reference {self.ref_id}: empty asset_name")
        if self.asset_type not in ASSET_TYPES:
            raise ReferenceFormatError(f"reference {self.ref_id}: unknown asset_type {self.asset_type!r}")


def load_reference(source: str | Path) -> list[ReferenceAsset]:
    """Read a reference CSV (path or CSV text starting with the header)."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text(encoding="utf-8-sig")
    reader = csv.DictReader(io.StringIO(text, newline=""))
    missing = set(REFERENCE_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ReferenceFormatError(f"reference CSV missing columns: {sorted(missing)}")
    out = []
    for line, row in enumerate(reader, start=2):
        try:
            out.append(ReferenceAsset(**{c: (row[c] or "").strip() for c in REFERENCE_COLUMNS}))
        except ReferenceFormatError as exc:
            raise ReferenceFormatError(f"line {line}: {exc}") from None
    return out


def preprocess_reference(rows: Iterable[ReferenceAsset],
                         exclusions: Iterable[str] = DEFAULT_EXCLUSIONS) -> list[ReferenceAsset]:
    """Lowercase the text fields and drop rows with an excluded status."""
    excluded = {s.strip().lower() for s in exclusions}
    out = []
    for r in rows:
        status = r.status.strip().lower()
        if status in excluded:
            continue
        out.append(replace(r, asset_name=r.asset_name.lower(), owner=r.owner.lower(),
                           commodity=r.commodity.lower(), country=r.country.lower(), status=status))
    return out


@dataclass
class MatchResult:
    asset_id: int | None
    candidates: RankedList
    best: str | None = None
    best_score: float = 0.0

    def to_dict(self) -> dict:
        return {"asset_id": self.asset_id, "best": self.best, "best_score": self.best_score,
                "candidates": [[cid, s] for cid, s in self.candidates.items]}


def match_asset(asset: AssetRow, reference: Sequence[ReferenceAsset],
                threshold: float = 0.6, k: int = 5) -> MatchResult:
    """Top-k reference rows by partial ratio on the asset name; ties by ref_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    name = asset.physical_asset.lower()
    ranked = RankedList.from_scores((r.ref_id, partial_ratio(name, r.asset_name)) for r in reference).top(k)
    head = ranked.head
    if head is not None and head[1] >= threshold:
        return MatchResult(asset.id, ranked, head[0], head[1])
    return MatchResult(asset.id, ranked, None, head[1] if head else 0.0)


def pairwise_scores(a: str, b: str) -> dict[str, float]:
    a, b = a.lower(), b.lower()
    return {
        "partial_match": partial_ratio(a, b),
        "jaccard": jaccard(a, b),
        "cosine": cosine_tokens(a, b),
        "dice": dice(a, b),
        "levenshtein_norm": levenshtein_norm(a, b),
    }


@dataclass
class AttributeScores:
    per_attribute: dict[str, dict[str, float]]
    overall: float

    def to_dict(self) -> dict:
        return asdict(self)


def hits_indicator(asset: AssetRow, candidates: Sequence[ReferenceAsset], threshold: float = 0.6) -> dict[str, int]:
    """Per attribute: 1 when some candidate's value matches the asset's value."""
    out = {}
    for col, ref_col in ATTRIBUTE_PAIRS:
        value = getattr(asset, col).lower()
        out[col] = int(any(partial_ratio(value, getattr(c, ref_col)) >= threshold for c in candidates))
    return out


def score_match(asset: AssetRow, ref: ReferenceAsset,
                candidates: Sequence[ReferenceAsset] | None = None, threshold: float = 0.6) -> AttributeScores:
    """Five pairwise metrics per attribute plus the top-k hit indicator.

    ``overall`` is the mean of the four partial-match scores.
    """
    hits = hits_indicator(asset, candidates if candidates is not None else [ref], threshold)
    per = {}
    for col, ref_col in ATTRIBUTE_PAIRS:
        scores = pairwise_scores(getattr(asset, col), getattr(ref, ref_col))
        scores["hits_at_5"] = float(hits[col])
        per[col] = scores
    overall = math.fsum(per[c]["partial_match"] for c, _ in ATTRIBUTE_PAIRS) / len(ATTRIBUTE_PAIRS)
    return AttributeScores(per, overall)


def summarize_scores(scores: Sequence[AttributeScores]) -> dict:
    """Mean of every metric per attribute over matched assets, and overall means."""
    if not scores:
        return {"matched_assets": 0, "per_attribute": {}, "overall": None, "hits_at_5": None}
    per = {
        col: {m: math.fsum(s.per_attribute[col][m] for s in scores) / len(scores) for m in METRICS}
        for col, _ in ATTRIBUTE_PAIRS
    }
    overall = math.fsum(s.overall for s in scores) / len(scores)
    hits = math.fsum(per[c]["hits_at_5"] for c, _ in ATTRIBUTE_PAIRS) / len(ATTRIBUTE_PAIRS)
    return {"matched_assets": len(scores), "per_attribute": per, "overall": overall, "hits_at_5": hits}


def _percent(num: int, den: int) -> Fraction:
    return Fraction(100 * num, den)


@dataclass(frozen=True)
class CoverageReport:
    matched_count: int
    reference_total: int
    percent: float
    na: bool = False

    def display(self) -> str:
        return "N/A" if self.na else f"{self.percent:.2f}%"


def coverage(matched: int, reference_total: int) -> CoverageReport:
    """100 * N_m / N_L; N_L = 0 gives 0 flagged N/A."""
    if matched < 0 or reference_total < 0:
        raise ValueError("counts must be non-negative")
    if matched > reference_total:
        raise ValueError(f"matched ({matched}) exceeds reference total ({reference_total})")
    if reference_total == 0:
        return CoverageReport(0, 0, 0.0, na=True)
    return CoverageReport(matched, reference_total, float(_percent(matched, reference_total)))


@dataclass(frozen=True)
class ValidationCoverageReport:
    validated_count: int
    total_assets: int
    percent: float

    def display(self) -> str:
        return f"{self.percent:.2f}%"


def total_validation_coverage(validated: int, total: int) -> ValidationCoverageReport:
    if total <= 0:
        raise ValueError("total must be positive")
    if not 0 <= validated <= total:
        raise ValueError(f"validated ({validated}) must be within [0, {total}]")
    return ValidationCoverageReport(validated, total, float(_percent(validated, total)))


@dataclass
class ValidationResult:
    matches: list[MatchResult]
    scores: dict[int, AttributeScores]
    coverage: CoverageReport
    summary: dict = field(default_factory=dict)


def validate_assets(
    assets: Sequence[AssetRow],
    reference: Sequence[ReferenceAsset],
    company: str,
    *,
    threshold: float = 0.6,
    k: int = 5,
) -> ValidationResult:
    """Match every asset against the company's reference rows.

    ``reference`` must already be preprocessed. N_m counts distinct
    reference rows that are the best match of at least one asset.
    """
    ref = [r for r in reference if r.company_ticker.lower() == company.lower()]
    by_id = {r.ref_id: r for r in ref}
    matches, scores = [], {}
    for a in assets:
        m = match_asset(a, ref, threshold, k)
        matches.append(m)
        if m.best is not None:
            cands = [by_id[c] for c in m.candidates.ids()]
            scores[a.id] = score_match(a, by_id[m.best], cands, threshold)
    matched_refs = {m.best for m in matches if m.best is not None}
    cov = coverage(len(matched_refs), len(ref))
    return ValidationResult(matches, scores, cov, summarize_scores([scores[k_] for k_ in sorted(scores)]))


def validated_asset_ids(matches: Iterable[Mapping], verdicts: Iterable[Mapping]) -> set[int]:
    """Assets confirmed by a reference match or by at least one "yes" web verdict."""
    ids = {m["asset_id"] for m in matches if m.get("best") is not None}
    ids |= {v["asset_id"] for v in verdicts if v.get("verdict") and not v.get("skipped")}
    return ids
