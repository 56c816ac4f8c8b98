from __future__ import annotations

import json

import pytest
import requests

from assetpipe.llm import Gateway, StubProvider
from assetpipe.rav import (
    GoogleCSEProvider, RavConfig, RavVerdict, RecordingSearchProvider, ReplaySearchProvider, SearchConfigError,
    SearchError, SearchSnippet, build_query, classify_similarity, generate_answer, parse_verdict,
    rank_snippets, rav_score, run_rav, validate_attribute, verdict_table,
)
from assetpipe.store import AssetRow
from conftest import MINI, stub_gateway

CONFIG = RavConfig(answer_model="llama3", classifier_model="gemma2", workers=3)


def mini_assets() -> list[AssetRow]:
    spec = [
        ("Grasberg mine complex", "Indonesia", "PT Freeport Indonesia", "Copper, Gold", False),
        ("Chino mine", "USA", "Freeport-McMoRan Inc.", "Copper", False),
        ("natural gas fields", "N/A", "Freeport-McMoRan Inc.", "natural gas", True),
        ("Morenci", "USA", "Freeport-McMoRan Inc.", "Copper, Molybdenum", False),
        ("Cerro Verde", "Peru", "Freeport-McMoRan Inc.", "Copper, Molybdenum", False),
    ]
    return [AssetRow(id=i, company="FCX", physical_asset=n, countries=c, ownership=o, commodity=m, generic=g)
            for i, (n, c, o, m, g) in enumerate(spec, 1)]


def mini_run() -> tuple[list[RavVerdict], ReplaySearchProvider]:
    search = ReplaySearchProvider.from_file(MINI / "search_replay.jsonl")
    gw = Gateway(StubProvider.from_file(MINI / "llm_stub.json"), backoff=0)
    return run_rav(mini_assets(), search, gw, CONFIG), search


@pytest.mark.parametrize("attribute, expected", [
    ("location", "Chino mine location country"),
    ("ownership", "Chino mine owner"),
    ("commodity", "Chino mine commodity produced"),
])
def test_query_templates(attribute, expected):
    assert build_query(AssetRow(physical_asset=" Chino mine "), attribute) == expected


def test_query_skips_unnamed_and_rejects_unknown_attribute():
    assert build_query(AssetRow(physical_asset="gas fields", generic=True), "ownership") is None
    assert build_query(AssetRow(physical_asset=""), "location") is None
    with pytest.raises(ValueError):
        build_query(AssetRow(physical_asset="x"), "status")


def test_snippet_requires_text():
    with pytest.raises(ValueError):
        SearchSnippet("t", "  ", "u")


def test_replay_provider(tmp_path):
    p = tmp_path / "r.jsonl"
    p.write_text(json.dumps({"query": "q", "snippets": [{"title": "T", "snippet": "S", "url": "u"},
                                                         {"title": "E", "snippet": "", "url": "v"}]}) + "\n")
    prov = ReplaySearchProvider.from_file(p)
    assert prov.search("q") == [SearchSnippet("T", "S", "u", 0)]
    assert prov.search("other") == [] and prov.queries == ["q", "other"]
    p.write_text("{broken\n")
    with pytest.raises(ValueError, match=":1:"):
        ReplaySearchProvider.from_file(p)


def test_recording_provider_writes_replayable_file(tmp_path):
    inner = ReplaySearchProvider({"q": [{"title": "T", "snippet": "S", "url": "u"}]})
    rec = RecordingSearchProvider(inner, tmp_path / "rec.jsonl")
    rec.search("q")
    assert ReplaySearchProvider.from_file(tmp_path / "rec.jsonl").search("q")[0].snippet == "S"


def test_google_missing_env(monkeypatch):
    monkeypatch.delenv("SEARCH_API_KEY", raising=False)
    monkeypatch.delenv("SEARCH_ENGINE_ID", raising=False)
    with pytest.raises(SearchConfigError):
        GoogleCSEProvider.from_env()


class FakeResp:
    def __init__(self, status, payload=None):
        self.status_code, self._payload, self.text = status, payload, str(payload)

    def json(self):
        return self._payload


class FakeSession:
    def __init__(self, responses):
        self.responses, self.calls = list(responses), []

    def get(self, url, params=None, timeout=None):
        self.calls.append(params)
        r = self.responses.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


def test_google_provider_retries_and_parses():
    session = FakeSession([requests.Timeout("slow"), FakeResp(500),
                           FakeResp(200, {"items": [{"title": "A", "snippet": "alpha", "link": "http://a"}]})])
    prov = GoogleCSEProvider("k", "cx", session=session, sleep=lambda s: None)
    assert prov.search("grasberg owner", 3) == [SearchSnippet("A", "alpha", "http://a", 0)]
    assert session.calls[0] == {"key": "k", "cx": "cx", "q": "grasberg owner", "num": 3}


def test_google_provider_errors():
    with pytest.raises(SearchError):
        GoogleCSEProvider("k", "cx", session=FakeSession([FakeResp(403)])).search("q")
    with pytest.raises(SearchError):
        GoogleCSEProvider("k", "cx", session=FakeSession([FakeResp(503)] * 3), sleep=lambda s: None).search("q")


def test_rank_snippets_bm25():
    snippets = [SearchSnippet("", "gold price rally", "a"), SearchSnippet("", "Grasberg mine copper", "b"),
                SearchSnippet("", "Grasberg Grasberg Indonesia", "c")]
    assert [s.url for s in rank_snippets("grasberg copper", snippets, 2)] == ["b", "c"]
    assert rank_snippets("q", []) == []


@pytest.mark.parametrize("text, expected", [
    ("Yes", (True, True)), ("yes, these refer to the same", (True, True)), ("**No.**", (False, True)),
    ("NO", (False, True)), ("Partially similar.", (False, False)), ("", (False, False)),
])
def test_parse_verdict(text, expected):
    assert parse_verdict(text) == expected


def test_classify_warns_on_unclear_answer():
    assert classify_similarity("a", "b", stub_gateway(default="Maybe"), "m") == (False, "unparseable classifier answer: Maybe")
    assert classify_similarity("a", "b", stub_gateway(default="Yes."), "m") == (True, "")
    with pytest.raises(ValueError):
        classify_similarity("", "b", stub_gateway(default="Yes"), "m")


def test_generate_answer_prompt_and_empty():
    provider = StubProvider(default="Indonesia")
    asset = AssetRow(physical_asset="Grasberg")
    hits = [SearchSnippet("T", "in Papua", "u")]
    assert generate_answer(asset, "location", hits, Gateway(provider), "llama3") == "Indonesia"
    assert "state the country of Grasberg" in provider.calls[0] and "[1] T in Papua" in provider.calls[0]
    assert generate_answer(asset, "location", [], Gateway(provider), "llama3") is None


def test_config_requires_distinct_models():
    with pytest.raises(ValueError):
        RavConfig(answer_model="m", classifier_model="m")
    with pytest.raises(ValueError):
        RavConfig(top_k=0)
    with pytest.raises(ValueError):
        run_rav([], ReplaySearchProvider(), stub_gateway(), RavConfig())


def test_search_failure_is_skip():
    class Broken:
        def search(self, q, top_n=10):
            raise SearchError("down")

    v = validate_attribute(AssetRow(id=1, physical_asset="X", ownership="Y"), "ownership", Broken(),
                           stub_gateway(), CONFIG)
    assert v.skipped and "search failed" in v.warning


def test_mini_verdicts():
    verdicts, search = mini_run()
    table = {(v.asset_id, v.attribute): v for v in verdicts}
    assert len(verdicts) == 15
    assert all(table[(3, a)].skipped and table[(3, a)].warning == "unnamed asset" for a in ("location", "ownership", "commodity"))
    assert table[(2, "commodity")].skipped and table[(2, "commodity")].warning == "no web evidence"
    assert table[(1, "location")].verdict is True
    assert table[(4, "location")].db_value == "USA"
    assert table[(5, "commodity")].verdict is False and table[(5, "commodity")].warning
    assert "natural gas fields location country" not in search.queries


def test_mini_score_is_mean_of_means():
    verdicts, _ = mini_run()
    score = rav_score(verdicts, "FCX")
    assert score.per_asset == {"1": 1.0, "2": 1.0, "4": pytest.approx(1 / 3), "5": pytest.approx(1 / 3)}
    assert score.company_score == pytest.approx((1 + 1 + 1 / 3 + 1 / 3) / 4, abs=1e-15)
    assert score.assessed == 4


def test_verdict_table_byte_identical_across_runs():
    assert verdict_table(mini_run()[0]) == verdict_table(mini_run()[0])


@pytest.mark.parametrize("flags, expected", [
    ([(1, True), (1, False), (2, True)], (1 / 2 + 1) / 2),
    ([(1, True), (1, True), (1, True)], 1.0),
    ([(1, False)], 0.0),
    ([(1, None)], 0.0),
])
def test_rav_score_cases(flags, expected):
    verdicts = [RavVerdict(a, "location", "x", verdict=f, skipped=f is None) for a, f in flags]
    assert rav_score(verdicts).company_score == pytest.approx(expected)


def test_rav_score_empty():
    with pytest.raises(ValueError):
        rav_score([])
