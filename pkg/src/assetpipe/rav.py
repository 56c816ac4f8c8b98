"""Web-retrieval validation of asset attributes with two separate LLMs."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .llm import Gateway, render_prompt
from .simmetrics import bm25_rank
from .store import AssetRow

logger = logging.getLogger(__name__)

ATTRIBUTES = ("location", "ownership", "commodity")
QUERY_KEYWORDS = {"location": "location country", "ownership": "owner", "commodity": "commodity produced"}
# wording substituted into the answer prompt
ANSWER_ATTRIBUTE = {"location": "country", "ownership": "owner", "commodity": "commodity produced"}


class SearchConfigError(RuntimeError):
    pass


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchSnippet:
    title: str
    snippet: str
    url: str
    rank_in_provider: int = 0

    def __post_init__(self):
        if not self.snippet.strip():
            raise ValueError("snippet must be non-empty")

    @property
    def text(self) -> str:
        return f"{self.title} {self.snippet}".strip()


class SearchProvider(Protocol):
    def search(self, query: str, top_n: int = 10) -> list[SearchSnippet]: ...


def _snippets(items: Sequence[dict], top_n: int) -> list[SearchSnippet]:
    out = []
    for it in items:
        text = (it.get("snippet") or "").strip()
        if not text:
            continue
        out.append(SearchSnippet(it.get("title", ""), text, it.get("url") or it.get("link", ""), len(out)))
        if len(out) == top_n:
            break
    return out


class GoogleCSEProvider:
    """Custom-search JSON API client: GET key, cx, q; reads items[].title/snippet/link."""

    URL = "https://www.googleapis.com/customsearch/v1"

    def __init__(self, api_key: str, engine_id: str, *, session: requests.Session | None = None,
                 retries: int = 2, timeout: float = 20.0, sleep: Callable[[float], None] = time.sleep):
        if not api_key or not engine_id:
            raise SearchConfigError("search API key and engine id are required")
        self.api_key = api_key
        self.engine_id = engine_id
        self.session = session or requests.Session()
        self.retries = retries
        self.timeout = timeout
        self._sleep = sleep

    @classmethod
    def from_env(cls, **kw) -> "GoogleCSEProvider":
        key, cx = os.environ.get("SEARCH_API_KEY"), os.environ.get("SEARCH_ENGINE_ID")
        if not key or not cx:
            raise SearchConfigError("SEARCH_API_KEY and SEARCH_ENGINE_ID must be set")
        return cls(key, cx, **kw)

    def search(self, query: str, top_n: int = 10) -> list[SearchSnippet]:
        params = {"key": self.api_key, "cx": self.engine_id, "q": query, "num": min(top_n, 10)}
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.session.get(self.URL, params=params, timeout=self.timeout)
            except (requests.Timeout, requests.ConnectionError) as exc:
                last = exc
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = SearchError(f"HTTP {resp.status_code}")
                elif resp.status_code >= 400:
                    raise SearchError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    return _snippets(resp.json().get("items", []), top_n)
            if attempt < self.retries:
                self._sleep(0.5 * 2 ** attempt)
        raise SearchError(f"search failed after {self.retries + 1} attempts: {last}")


class ReplaySearchProvider:
    """Answers from JSONL lines {query, snippets: [{title, snippet, url}]}; unknown queries give []."""

    def __init__(self, scripted: dict[str, list[dict]] | None = None):
        self.scripted = dict(scripted or {})
        self.queries: list[str] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplaySearchProvider":
        scripted = {}
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                scripted[obj["query"]] = obj["snippets"]
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{n}: bad replay line: {exc}") from None
        return cls(scripted)

    def search(self, query: str, top_n: int = 10) -> list[SearchSnippet]:
        self.queries.append(query)
        return _snippets(self.scripted.get(query, []), top_n)


class RecordingSearchProvider:
    """Wraps a live provider and appends every exchange to a replay file."""

    def __init__(self, inner: SearchProvider, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()

    def search(self, query: str, top_n: int = 10) -> list[SearchSnippet]:
        hits = self.inner.search(query, top_n)
        line = {"query": query, "snippets": [{"title": s.title, "snippet": s.snippet, "url": s.url} for s in hits]}
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
        return hits


def build_query(asset: AssetRow, attribute: str) -> str | None:
    """"<asset> <keyword>", or None for unnamed assets that cannot be searched."""
    if attribute not in QUERY_KEYWORDS:
        raise ValueError(f"unknown attribute {attribute!r}")
    name = asset.physical_asset.strip()
    if not name or asset.generic:
        return None
    return f"{name} {QUERY_KEYWORDS[attribute]}"


def rank_snippets(query: str, snippets: Sequence[SearchSnippet], top_k: int = 3) -> list[SearchSnippet]:
    if not snippets:
        return []
    ranked = bm25_rank(query, [s.text for s in snippets])
    return [snippets[i] for i in ranked.ids(top_k)]


def generate_answer(asset: AssetRow, attribute: str, snippets: Sequence[SearchSnippet],
                    gateway: Gateway, model: str) -> str | None:
    """Concise web-derived value, or None when there is nothing to read."""
    if not snippets:
        return None
    joined = "\n".join(f"[{i}] {s.text}" for i, s in enumerate(snippets, 1))
    prompt = render_prompt("rav_answer", {
        "attribute": ANSWER_ATTRIBUTE.get(attribute, attribute),
        "asset": asset.physical_asset,
        "snippets": joined,
    })
    return gateway.ask(model, prompt).strip()


def parse_verdict(text: str) -> tuple[bool, bool]:
    """(verdict, understood) from the first token of a classifier answer."""
    words = text.strip().split(maxsplit=1)
    first = words[0].strip(".,!:;\"'*()").lower() if words else ""
    if first == "yes":
        return True, True
    if first == "no":
        return False, True
    return False, False


def classify_similarity(db_value: str, web_answer: str, gateway: Gateway, model: str) -> tuple[bool, str]:
    """(verdict, warning); an unreadable answer counts as "no" with a warning."""
    if not db_value.strip() or not web_answer.strip():
        raise ValueError("both values must be non-empty")
    text = gateway.ask(model, render_prompt("rav_classify", {"db": db_value, "web": web_answer}))
    verdict, ok = parse_verdict(text)
    if not ok:
        logger.warning("classifier answer not yes/no: %r", text[:80])
        return False, f"unparseable classifier answer: {text.strip()[:80]}"
    return verdict, ""


@dataclass
class RavVerdict:
    asset_id: int | None
    attribute: str
    db_value: str
    web_answer: str = ""
    verdict: bool | None = None
    snippet_urls: list[str] = field(default_factory=list)
    skipped: bool = False
    warning: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RavConfig:
    top_n: int = 10
    top_k: int = 3
    answer_model: str = ""
    classifier_model: str = ""
    workers: int = 4

    def __post_init__(self):
        if self.top_n < 1 or self.top_k < 1:
            raise ValueError("top_n and top_k must be positive")
        if self.answer_model and self.answer_model == self.classifier_model:
            raise ValueError("answer and classifier models must differ")


def _db_value(asset: AssetRow, attribute: str) -> str:
    if attribute == "location":
        value = asset.countries
        return "" if value.strip() == "N/A" else value
    return getattr(asset, attribute)


def validate_attribute(asset: AssetRow, attribute: str, search: SearchProvider,
                       gateway: Gateway, config: RavConfig) -> RavVerdict:
    db = _db_value(asset, attribute).strip()
    verdict = RavVerdict(asset.id, attribute, db)
    query = build_query(asset, attribute)
    if query is None:
        verdict.skipped, verdict.warning = True, "unnamed asset"
        return verdict
    if not db:
        verdict.skipped, verdict.warning = True, "no database value"
        return verdict
    try:
        found = search.search(query, config.top_n)
    except SearchError as exc:
        verdict.skipped, verdict.warning = True, f"search failed: {exc}"
        return verdict
    hits = rank_snippets(query, found, config.top_k)
    verdict.snippet_urls = [s.url for s in hits]
    answer = generate_answer(asset, attribute, hits, gateway, config.answer_model)
    if not answer:
        verdict.skipped, verdict.warning = True, "no web evidence"
        return verdict
    verdict.web_answer = answer
    verdict.verdict, verdict.warning = classify_similarity(db, answer, gateway, config.classifier_model)
    return verdict


def run_rav(assets: Sequence[AssetRow], search: SearchProvider, gateway: Gateway,
            config: RavConfig) -> list[RavVerdict]:
    """All attribute verdicts for all assets, ordered by (asset id, attribute)."""
    if not config.answer_model or not config.classifier_model:
        raise ValueError("answer and classifier models must be configured")
    tasks = [(a, att) for a in assets for att in ATTRIBUTES]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(lambda t: validate_attribute(t[0], t[1], search, gateway, config), tasks))
    return sorted(results, key=lambda v: (v.asset_id if v.asset_id is not None else -1, v.attribute))


@dataclass(frozen=True)
class RavScore:
    company: str
    per_asset: dict
    company_score: float
    assessed: int

    def to_dict(self) -> dict:
        return asdict(self)


def rav_score(verdicts: Sequence[RavVerdict], company: str = "") -> RavScore:
    """Mean over assets of each asset's mean yes-rate; skipped verdicts are ignored."""
    if not verdicts:
        raise ValueError("rav_score needs at least one verdict")
    per: dict = {}
    for v in verdicts:
        if v.skipped or v.verdict is None:
            continue
        per.setdefault(v.asset_id, []).append(1 if v.verdict else 0)
    means = {a: Fraction(sum(vs), len(vs)) for a, vs in per.items()}
    company_score = sum(means.values(), Fraction(0)) / len(means) if means else Fraction(0)
    return RavScore(
        company,
        {str(a): float(m) for a, m in sorted(means.items(), key=lambda kv: (kv[0] is None, kv[0]))},
        float(company_score),
        len(means),
    )


def verdict_table(verdicts: Sequence[RavVerdict]) -> str:
    """Canonical JSONL rendering, used for byte-level determinism checks."""
    return "".join(json.dumps(v.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for v in verdicts)
