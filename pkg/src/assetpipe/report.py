"""Per-company JSON and static HTML reports."""

from __future__ import annotations

import html
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

from .validate import CoverageReport, ValidationCoverageReport

TIMESTAMP_FIELDS = frozenset({"generated_at", "started_at", "finished_at", "seconds", "wall_time"})


@dataclass
class CompanyReport:
    company: str
    asset_count: int
    named_asset_count: int
    coverage: CoverageReport | None
    validation_coverage: ValidationCoverageReport | None
    reference_only_coverage: ValidationCoverageReport | None
    attribute_scores: dict
    rav: dict | None
    assets: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    generated_at: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("coverage", "validation_coverage", "reference_only_coverage"):
            obj = getattr(self, key)
            if obj is not None:
                d[key]["display"] = obj.display()
        return d


def now_iso() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def to_json(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def strip_volatile(data):
    """Copy of ``data`` without timestamp/timing keys, for golden comparisons."""
    if isinstance(data, dict):
        return {k: strip_volatile(v) for k, v in data.items() if k not in TIMESTAMP_FIELDS}
    if isinstance(data, list):
        return [strip_volatile(v) for v in data]
    return data


def _table(headers: list[str], rows: list[list]) -> str:
    head = "".join(f"<th>{html.escape(h)}</th>" for h in headers)
    body = "".join(
        "<tr>" + "".join(f"<td>{html.escape('' if c is None else str(c))}</td>" for c in r) + "</tr>"
        for r in rows
    )
    return f"<table><thead><tr>{head}</tr></thead><tbody>{body}</tbody></table>"


def _fmt(x) -> str:
    return "" if x is None else f"{x:.3f}" if isinstance(x, float) else str(x)


def render_html(data: dict) -> str:
    """Self-contained page: summary tables plus the report as embedded JSON."""
    company = html.escape(data["company"])
    summary = [
        ["Assets", data["asset_count"]],
        ["Named assets", data["named_asset_count"]],
        ["Coverage", (data["coverage"] or {}).get("display", "N/A")],
        ["Validation coverage (reference)", (data["reference_only_coverage"] or {}).get("display", "N/A")],
        ["Validation coverage (reference + web)", (data["validation_coverage"] or {}).get("display", "N/A")],
        ["Web validation score", _fmt((data["rav"] or {}).get("company_score"))],
    ]
    parts = [f"<h1>Asset report: {company}</h1>", _table(["Measure", "Value"], summary)]
    per = (data.get("attribute_scores") or {}).get("per_attribute") or {}
    if per:
        metrics = list(next(iter(per.values())))
        parts.append("<h2>Attribute similarity</h2>")
        parts.append(_table(["attribute", *metrics], [[a, *(_fmt(v[m]) for m in metrics)] for a, v in per.items()]))
    cols = ["id", "physical_asset", "location", "countries", "ownership", "commodity", "status"]
    parts.append("<h2>Assets</h2>")
    parts.append(_table(cols, [[a.get(c) for c in cols] for a in data.get("assets", [])]))
    if data.get("warnings"):
        parts.append("<h2>Warnings</h2><ul>" + "".join(f"<li>{html.escape(w)}</li>" for w in data["warnings"]) + "</ul>")
    blob = json.dumps(data, sort_keys=True, ensure_ascii=False).replace("</", "<\\/")
    style = ("body{font-family:sans-serif;margin:2em}table{border-collapse:collapse;margin-bottom:1.5em}"
             "td,th{border:1px solid #bbb;padding:3px 8px;text-align:left}th{background:#eee}")
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>{company} assets</title><style>{style}</style></head><body>\n"
        + "\n".join(parts)
        + f"\n<script type=\"application/json\" id=\"report-data\">{blob}</script>\n</body></html>\n"
    )
