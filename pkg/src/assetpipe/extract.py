"""Prompt-driven entity extraction, response parsing and voting ensembles."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .chunker import Chunk
from .geo import find_countries
from .llm import CHAINED_TECHNIQUES, Gateway, LLMError, get_template, render_prompt

logger = logging.getLogger(__name__)

ENTITY_FIELDS = ("physical_assets", "locations", "ownerships", "commodities", "statuses")
REL_FIELDS = ("asset", "location", "ownership", "commodity", "status")

_LABEL = re.compile(
    r"^[ \t>*\-•\[]*(physical[ _\-]*assets?|locations?|ownerships?|commodit(?:y|ies)|status(?:es)?)[ \t*]*:[ \t*]*(.*)$",
    re.I | re.M,
)
_REL_LABEL = re.compile(r"^[ \t>*\-•\[]*relationships?[ \t*]*:", re.I | re.M)
_REL_START = re.compile(r"(?<![\w])asset[ \t]*:", re.I)
_REL_KEY = re.compile(r"(?<![\w])(asset|location|ownership|commodit(?:y|ies)|status)[ \t]*:", re.I)
_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.+)$")
_EMPTY_ITEMS = {"none", "n/a", "na", "null", "nil", "-"}


def normalize_entity(value: str) -> str:
    """Voting key: lowercase, trimmed, internal whitespace collapsed."""
    return " ".join(value.lower().split())


def _field_for(label: str) -> str:
    label = label.lower()
    if label.startswith("physical"):
        return "physical_assets"
    if label.startswith("location"):
        return "locations"
    if label.startswith("ownership"):
        return "ownerships"
    if label.startswith("commodit"):
        return "commodities"
    return "statuses"


def _rel_key(label: str) -> str:
    label = label.lower()
    return "commodity" if label.startswith("commodit") else label


@dataclass
class Relationship:
    asset: str = ""
    location: str = ""
    ownership: str = ""
    commodity: str = ""
    status: str = ""

    def is_empty(self) -> bool:
        return not any(getattr(self, f) for f in REL_FIELDS)

    def key(self) -> tuple[str, ...]:
        return tuple(normalize_entity(getattr(self, f)) for f in REL_FIELDS)


@dataclass
class ExtractionRecord:
    chunk_id: str = ""
    model: str = ""
    template_id: str = ""
    physical_assets: list[str] = field(default_factory=list)
    locations: list[str] = field(default_factory=list)
    ownerships: list[str] = field(default_factory=list)
    commodities: list[str] = field(default_factory=list)
    statuses: list[str] = field(default_factory=list)
    relationships: list[Relationship] = field(default_factory=list)
    raw_response: str = ""
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        for name in ENTITY_FIELDS:
            setattr(self, name, _dedupe(getattr(self, name)))
        seen, rels = set(), []
        for r in self.relationships:
            if r.is_empty() or r.key() in seen:
                continue
            seen.add(r.key())
            rels.append(r)
        self.relationships = rels
        known = {normalize_entity(a) for a in self.physical_assets}
        for r in rels:
            if r.asset and normalize_entity(r.asset) not in known:
                self.physical_assets.append(r.asset)
                known.add(normalize_entity(r.asset))

    def entities(self, include_status: bool = False) -> list[str]:
        fields = ENTITY_FIELDS if include_status else ENTITY_FIELDS[:4]
        return [e for f in fields for e in getattr(self, f)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExtractionRecord":
        data = dict(data)
        data["relationships"] = [Relationship(**r) for r in data.get("relationships", [])]
        return cls(**data)


def _dedupe(items: Iterable[str]) -> list[str]:
    seen, out = set(), []
    for it in items:
        it = " ".join(str(it).split())
        key = normalize_entity(it)
        if not key or key in seen:
            continue
        seen.add(key)
        out.append(it)
    return out


def _closes(text: str, i: int) -> bool:
    rest = text[i:].lstrip()
    return not rest or rest[0] in ",]})"


def split_items(value: str) -> list[str]:
    """Split a list body on top-level commas; quoted items keep their commas."""
    value = value.strip()
    while value.startswith("[") and value.endswith("]"):
        value = value[1:-1].strip()
    value = value.strip("[]").strip()
    items, buf, quote, depth = [], [], None, 0
    for i, ch in enumerate(value):
        if quote:
            if ch == quote and _closes(value, i + 1):
                quote = None
            else:
                buf.append(ch)
        elif ch in "'\"" and not "".join(buf).strip():
            quote = ch
        elif ch in "([{":
            depth += 1
            buf.append(ch)
        elif ch in ")]}":
            depth -= 1
            buf.append(ch)
        elif ch == "," and depth <= 0:
            items.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    items.append("".join(buf))
    out = []
    for it in items:
        it = " ".join(it.split()).strip("'\"[]{} ").strip()
        if it and it.lower() not in _EMPTY_ITEMS:
            out.append(it)
    return out


def _rel_value(raw: str) -> str:
    raw = raw.strip().rstrip(",;").strip()
    raw = raw.rstrip("]})").rstrip(",; ").lstrip("[{(").strip()
    if not raw:
        return ""
    if raw[0] in "'\"":
        return ", ".join(split_items(raw))
    return " ".join(raw.split()).strip("'\" ")


def _parse_relationships(section: str) -> list[Relationship]:
    starts = [m.start() for m in _REL_START.finditer(section)]
    rels = []
    for n, s in enumerate(starts):
        e = starts[n + 1] if n + 1 < len(starts) else len(section)
        piece = section[s:e]
        keys = list(_REL_KEY.finditer(piece))
        values: dict[str, str] = {}
        for k, m in enumerate(keys):
            end = keys[k + 1].start() if k + 1 < len(keys) else len(piece)
            name = _rel_key(m.group(1))
            val = _rel_value(piece[m.end():end])
            if name not in values or not values[name]:
                values[name] = val
        rel = Relationship(**values)
        if not rel.is_empty():
            rels.append(rel)
    return rels


def _split_sections(raw: str) -> tuple[str, str]:
    """(entity-list text, relationships text)."""
    m = _REL_LABEL.search(raw)
    if not m:
        return raw, ""
    end = len(raw)
    for lab in _LABEL.finditer(raw, m.end()):
        value = lab.group(2).strip().lstrip("*").strip()
        if lab.group(1).lower().startswith("physical") or value.startswith("["):
            end = lab.start()
            break
    return raw[:m.start()] + raw[end:], raw[m.end():end]


def parse_extraction(raw: str) -> ExtractionRecord:
    """Parse an LLM response in the "physical assets: [...]" format.

    Never raises: anything unrecognised ends up as empty lists plus a warning.
    The response text is stored verbatim in ``raw_response``.
    """
    lists: dict[str, list[str]] = {f: [] for f in ENTITY_FIELDS}
    warnings = []
    try:
        body, rel_text = _split_sections(raw)
        lines = body.split("\n")
        found_label = False
        line_starts = []
        pos = 0
        for ln in lines:
            line_starts.append(pos)
            pos += len(ln) + 1
        for idx, ln in enumerate(lines):
            m = _LABEL.match(ln)
            if not m:
                continue
            found_label = True
            name = _field_for(m.group(1))
            value = m.group(2).strip().lstrip("*").strip()
            if value.startswith("[") and "]" not in value:
                extra = []
                for nxt in lines[idx + 1:]:
                    extra.append(nxt)
                    if "]" in nxt:
                        break
                value = " ".join([value] + extra)
            elif not value:
                for nxt in lines[idx + 1:]:
                    b = _BULLET.match(nxt)
                    if not b or _LABEL.match(nxt):
                        break
                    value += ", " + b.group(1) if value else b.group(1)
            lists[name].extend(split_items(value))
        rels = _parse_relationships(rel_text) if rel_text else []
        if rel_text.strip(" \t\n[]") and not rels:
            warnings.append("relationships section present but unparsed")
        if not found_label and not rel_text and not rels:
            warnings.append("no labelled sections found")
    except Exception as exc:  # the parser must survive arbitrary model output
        logger.exception("parse_extraction failed")
        lists = {f: [] for f in ENTITY_FIELDS}
        rels = []
        warnings.append(f"parser error: {exc!r}")
    return ExtractionRecord(relationships=rels, raw_response=raw, warnings=warnings, **lists)


def _quote(items: Iterable[str]) -> str:
    return "[" + ", ".join(f"'{it}'" for it in items) + "]"


def render_response(record: ExtractionRecord) -> str:
    """Inverse of parse_extraction, in the appendix output format."""
    out = [
        f"physical assets: {_quote(record.physical_assets)}",
        f"locations: {_quote(record.locations)}",
        f"ownerships: {_quote(record.ownerships)}",
        f"commodities: {_quote(record.commodities)}",
    ]
    if record.statuses:
        out.append(f"status: {_quote(record.statuses)}")
    out.append("relationships:")
    for r in record.relationships:
        parts = [f"{k}: '{getattr(r, k)}'" for k in REL_FIELDS if k != "status" or r.status]
        out.append("[" + ", ".join(parts) + "]")
    return "\n".join(out)


class ExtractionError(RuntimeError):
    def __init__(self, chunk_id: str, cause: Exception):
        self.chunk_id = chunk_id
        self.cause = cause
        super().__init__(f"extraction failed for chunk {chunk_id}: {cause}")


_ASSET_HINT = re.compile(
    r"\b(mines?|plants?|refiner(?:y|ies)|facilit(?:y|ies)|stations?|fields?|smelters?|wells?|"
    r"pipelines?|projects?|terminals?|dams?|units?|mills?|deposits?|reactors?|farms?)\b", re.I)
_COMMODITY_HINT = re.compile(
    r"\b(copper|gold|silver|zinc|lead|nickel|cobalt|molybdenum|lithium|iron|coal|oil|gas|bauxite|"
    r"alumina|aluminum|aluminium|electricity|power|uranium|crude|petroleum|ore|energy)\b", re.I)


def dynamic_flags(text: str) -> dict[str, bool]:
    """Keyword switches for the dynamic template."""
    return {
        "contains_assets": bool(_ASSET_HINT.search(text)),
        "contains_commodities": bool(_COMMODITY_HINT.search(text)),
        "contains_locations": bool(find_countries(text)),
    }


def _list_text(items: Sequence[str]) -> str:
    return "[" + ", ".join(items) + "]"


def _run_chain(chunk: Chunk, model: str, technique: str, gateway: Gateway) -> ExtractionRecord:
    steps = CHAINED_TECHNIQUES[technique]
    bindings: dict[str, str] = {"chunk": chunk.text}
    raws = []
    targets = {1: "physical_assets", 2: "locations", 3: "ownerships", 4: "commodities"}
    acc: dict[str, list[str]] = {f: [] for f in ENTITY_FIELDS}
    rels: list[Relationship] = []
    warnings: list[str] = []
    for tid in steps:
        step = int(tid.rsplit("_", 1)[1])
        text = gateway.ask(model, render_prompt(tid, bindings))
        raws.append(text)
        if step == 0:
            bindings["generated_knowledge"] = text.strip()
            continue
        parsed = parse_extraction(text)
        if step in targets:
            name = targets[step]
            acc[name] = getattr(parsed, name)
            bindings[name] = _list_text(acc[name])
        else:
            rels = parsed.relationships
        warnings.extend(f"step {step}: {w}" for w in parsed.warnings)
    return ExtractionRecord(relationships=rels, raw_response="\n\n".join(raws), warnings=warnings, **acc)


def extract_chunk(
    chunk: Chunk,
    model: str,
    template_id: str,
    gateway: Gateway,
    extra_bindings: Mapping[str, object] | None = None,
) -> ExtractionRecord:
    """Render the template for a chunk, query the model and parse the answer.

    ``prompt_chain`` and ``generated_knowledge`` run their multi-step
    sequences; every other id must be a single-shot extraction template.
    """
    try:
        if template_id in CHAINED_TECHNIQUES:
            rec = _run_chain(chunk, model, template_id, gateway)
        else:
            tpl = get_template(template_id)
            slot = "text" if "text" in tpl.required_bindings else "chunk"
            if tpl.required_bindings - {"text", "chunk"}:
                raise ValueError(f"{template_id} is not a single-chunk extraction template")
            bindings: dict[str, object] = {slot: chunk.text}
            if template_id == "dynamic":
                bindings.update(dynamic_flags(chunk.text))
            if extra_bindings:
                bindings.update(extra_bindings)
            resp = gateway.complete(gateway.request(model, render_prompt(template_id, bindings)))
            rec = parse_extraction(resp.text)
            if resp.truncated:
                rec.warnings.append("response truncated by provider")
    except LLMError as exc:
        raise ExtractionError(chunk.id, exc) from exc
    rec.chunk_id = chunk.id
    rec.model = model
    rec.template_id = template_id
    if rec.warnings:
        logger.info("chunk %s: %s", chunk.id, "; ".join(rec.warnings))
    return rec


@dataclass(frozen=True)
class EnsembleConfig:
    weights: Mapping[str, float]
    keep_threshold: float = 0.5
    normalizer: str = "lower_trim_collapse"

    def __post_init__(self):
        if not self.weights:
            raise ValueError("weights must be non-empty")
        for m, w in self.weights.items():
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"weight for {m} out of [0, 1]: {w}")
        total = math.fsum(self.weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total}")
        if not 0.0 < self.keep_threshold <= 1.0:
            raise ValueError("keep_threshold must be in (0, 1]")

    @classmethod
    def from_f1(cls, f1_by_model: Mapping[str, float], keep_threshold: float = 0.5) -> "EnsembleConfig":
        """Weights proportional to each model's F1."""
        total = math.fsum(f1_by_model.values())
        if total <= 0:
            raise ValueError("F1 scores must not all be zero")
        return cls({m: f / total for m, f in f1_by_model.items()}, keep_threshold)


def _check_same_chunk(records: Sequence[ExtractionRecord]) -> str:
    if not records:
        raise ValueError("no records to combine")
    ids = {r.chunk_id for r in records}
    if len(ids) != 1:
        raise ValueError(f"records span several chunks: {sorted(ids)}")
    return records[0].chunk_id


def _vote(records: Sequence[ExtractionRecord], keep) -> ExtractionRecord:
    lists = {}
    for name in ENTITY_FIELDS:
        support: dict[str, list[int]] = {}
        surface: dict[str, str] = {}
        for i, rec in enumerate(records):
            for ent in getattr(rec, name):
                key = normalize_entity(ent)
                surface.setdefault(key, ent)
                voters = support.setdefault(key, [])
                if i not in voters:
                    voters.append(i)
        lists[name] = [surface[k] for k, voters in support.items() if keep(voters)]
    kept_assets = {normalize_entity(a) for a in lists["physical_assets"]}
    rels = [r for rec in records for r in rec.relationships
            if r.asset and normalize_entity(r.asset) in kept_assets]
    return ExtractionRecord(relationships=rels, **lists)


def ensemble_eamv(records: Sequence[ExtractionRecord]) -> ExtractionRecord:
    """Keep entities proposed by strictly more than half of the records."""
    chunk_id = _check_same_chunk(records)
    n = len(records)
    out = _vote(records, lambda voters: 2 * len(voters) > n)
    out.chunk_id = chunk_id
    out.model = "eamv(" + "+".join(r.model for r in records) + ")"
    out.template_id = records[0].template_id
    return out


def ensemble_wmve(records: Sequence[ExtractionRecord], config: EnsembleConfig) -> ExtractionRecord:
    """Keep entities whose supporting models' weights sum to at least the threshold."""
    chunk_id = _check_same_chunk(records)
    for r in records:
        if r.model not in config.weights:
            raise KeyError(f"no ensemble weight for model {r.model!r}")
    weights = [config.weights[r.model] for r in records]
    # tolerance absorbs float error in sums such as 0.2 + 0.3
    out = _vote(records, lambda voters: math.fsum(weights[i] for i in voters) >= config.keep_threshold - 1e-12)
    out.chunk_id = chunk_id
    out.model = "wmve(" + "+".join(r.model for r in records) + ")"
    out.template_id = records[0].template_id
    return out
