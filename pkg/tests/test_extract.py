from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from assetpipe.chunker import Chunk
from assetpipe.extract import (
    EnsembleConfig, ExtractionError, ExtractionRecord, Relationship, dynamic_flags, ensemble_eamv,
    ensemble_wmve, extract_chunk, normalize_entity, parse_extraction, render_response, split_items,
)
from assetpipe.llm import ONE_SHOT_EXEMPLAR_RESPONSE, Gateway, StubProvider, render_prompt
from conftest import stub_gateway

CHUNK = Chunk(filing_id="F", seq=3, text="We operate the Grasberg mine in Indonesia.", token_count=7, start_token=0)


def test_exemplar_parses_exactly():
    rec = parse_extraction(ONE_SHOT_EXEMPLAR_RESPONSE)
    assert rec.physical_assets == ["Grasberg mine"]
    assert rec.locations == ["Sudirman Mountain Range", "Papua", "Indonesia"]
    assert rec.ownerships == ["Republic of Indonesia", "Delaware"]
    assert rec.commodities == ["copper", "gold"]
    assert rec.statuses == []
    assert rec.relationships == [Relationship("Grasberg mine", "Indonesia", "PT Freeport Indonesia", "copper, gold")]
    assert rec.warnings == []
    assert rec.raw_response == ONE_SHOT_EXEMPLAR_RESPONSE


@pytest.mark.parametrize("value, expected", [
    ("[a, b, c]", ["a", "b", "c"]),
    ("['Smith, Jones LLC', b]", ["Smith, Jones LLC", "b"]),
    ("[Mine (Arizona, US), x]", ["Mine (Arizona, US)", "x"]),
    ("[None]", []),
    ("N/A", []),
    ("", []),
    ("a; b", ["a; b"]),
])
def test_split_items(value, expected):
    assert split_items(value) == expected


def test_prose_response_warns_and_keeps_raw():
    rec = parse_extraction("I could not find any assets in this text.")
    assert rec.entities() == []
    assert rec.warnings == ["no labelled sections found"]


def test_bullets_and_multiline_brackets():
    raw = "Physical Assets:\n- Mine A\n- Plant B\nLocations: [Chile,\n Peru]\n**Commodities**: copper"
    rec = parse_extraction(raw)
    assert rec.physical_assets == ["Mine A", "Plant B"]
    assert rec.locations == ["Chile", "Peru"]
    assert rec.commodities == ["copper"]


def test_relationship_assets_join_asset_list_and_dedupe():
    rec = ExtractionRecord(physical_assets=["Mine A", "mine  a"],
                           relationships=[Relationship("Plant B"), Relationship("Plant B"), Relationship()])
    assert rec.physical_assets == ["Mine A", "Plant B"]
    assert len(rec.relationships) == 1


def test_unparsed_relationships_warn():
    rec = parse_extraction("physical assets: [X]\nrelationships: something odd")
    assert "relationships section present but unparsed" in rec.warnings


def test_render_round_trip():
    rec = parse_extraction(ONE_SHOT_EXEMPLAR_RESPONSE)
    again = parse_extraction(render_response(rec))
    for f in ("physical_assets", "locations", "ownerships", "commodities", "relationships"):
        assert getattr(again, f) == getattr(rec, f)


@settings(max_examples=300)
@given(st.text())
def test_parser_never_raises(raw):
    rec = parse_extraction(raw)
    assert rec.raw_response == raw


@settings(max_examples=200)
@given(st.lists(st.sampled_from(["physical assets: [", "locations:", "relationships: [asset: '",
                                 "'", "]", ",", "\n", "Mine", "(", "status:", "- x"]), max_size=30))
def test_parser_survives_structured_noise(parts):
    raw = "".join(parts)
    assert parse_extraction(raw).raw_response == raw


def test_normalize_entity():
    assert normalize_entity("  Grasberg\t MINE ") == "grasberg mine"


def test_dynamic_flags():
    flags = dynamic_flags("The copper mine in Peru")
    assert flags == {"contains_assets": True, "contains_commodities": True, "contains_locations": True}
    assert not any(dynamic_flags("Revenue grew.").values())


def test_extract_chunk_tags_record():
    gw = stub_gateway(default="physical assets: [Grasberg mine]")
    rec = extract_chunk(CHUNK, "gemma2", "irz_cot", gw)
    assert (rec.chunk_id, rec.model, rec.template_id) == ("F:0003", "gemma2", "irz_cot")
    assert rec.physical_assets == ["Grasberg mine"]


def test_extract_chunk_dynamic_binds_flags():
    provider = StubProvider(default="physical assets: []")
    extract_chunk(CHUNK, "m", "dynamic", Gateway(provider))
    flags_off = render_prompt("dynamic", {"chunk": CHUNK.text})
    assert "Grasberg" in provider.calls[0] and len(provider.calls[0]) > len(flags_off)


def test_extract_chunk_truncation_warning():
    prompt = render_prompt("zero_shot", {"chunk": CHUNK.text})
    gw = Gateway(StubProvider(responses={prompt: "physical assets: [A]"}, truncate={prompt}))
    assert "response truncated by provider" in extract_chunk(CHUNK, "m", "zero_shot", gw).warnings


def test_extract_chunk_wraps_llm_errors():
    with pytest.raises(ExtractionError) as ei:
        extract_chunk(CHUNK, "m", "irz_cot", stub_gateway())
    assert ei.value.chunk_id == "F:0003"


def test_extract_chunk_rejects_non_extraction_template():
    with pytest.raises(ValueError):
        extract_chunk(CHUNK, "m", "rav_classify", stub_gateway(default="x"))


@pytest.mark.parametrize("technique, calls", [("prompt_chain", 5), ("generated_knowledge", 6)])
def test_chained_techniques(technique, calls):
    answers = {
        "1": "physical assets: [Grasberg mine]",
        "2": "locations: [Indonesia]",
        "3": "ownerships: [PT-FI]",
        "4": "commodities: [copper]",
        "5": "relationships: [asset: 'Grasberg mine', location: 'Indonesia', ownership: 'PT-FI', commodity: 'copper']",
    }
    provider = StubProvider()
    step = {"n": 0 if technique == "generated_knowledge" else 1}

    def respond(prompt):
        n = str(step["n"])
        step["n"] += 1
        return answers.get(n, "Mines produce ore.")

    provider.responder = respond
    rec = extract_chunk(CHUNK, "m", technique, Gateway(provider))
    assert len(provider.calls) == calls
    assert rec.physical_assets == ["Grasberg mine"] and rec.commodities == ["copper"]
    assert rec.relationships[0].ownership == "PT-FI"
    # earlier answers are bound into later prompts
    assert "[Grasberg mine]" in provider.calls[-1]


def _rec(model, assets, chunk="c"):
    return ExtractionRecord(chunk_id=chunk, model=model, physical_assets=list(assets))


def test_eamv_matches_majority_oracles():
    rng = random.Random(11)
    pool = ["Mine A", "mine a", "Plant B", "Field C", "Port D", "Smelter E"]
    for _ in range(500):
        recs = [_rec(m, rng.sample(pool, rng.randint(0, 4))) for m in ("x", "y", "z")]
        sets = [{normalize_entity(a) for a in r.physical_assets} for r in recs]
        got = {normalize_entity(a) for a in ensemble_eamv(recs).physical_assets}
        assert got == oracles.majority(sets) == oracles.majority_by_subsets(sets)


WEIGHTS = EnsembleConfig({"m1": 0.2, "m2": 0.3, "m3": 0.5})


@pytest.mark.parametrize("support, kept", [
    ({"m1"}, False),            # 0.2
    ({"m2"}, False),            # 0.3
    ({"m3"}, True),             # 0.5
    ({"m1", "m2"}, True),       # 0.5 exactly
    ({"m1", "m3"}, True),       # 0.7
    ({"m2", "m3"}, True),       # 0.8
    ({"m1", "m2", "m3"}, True),
])
def test_wmve_hand_cases(support, kept):
    recs = [_rec(m, ["Asset"] if m in support else []) for m in ("m1", "m2", "m3")]
    assert (ensemble_wmve(recs, WEIGHTS).physical_assets == ["Asset"]) is kept


def test_wmve_higher_threshold():
    cfg = EnsembleConfig({"m1": 0.2, "m2": 0.3, "m3": 0.5}, keep_threshold=0.75)
    recs = [_rec("m1", []), _rec("m2", ["A"]), _rec("m3", ["A", "B"])]
    assert ensemble_wmve(recs, cfg).physical_assets == ["A"]


def test_ensemble_relationships_follow_assets():
    recs = [
        ExtractionRecord("c", "x", relationships=[Relationship("A", "Chile")]),
        ExtractionRecord("c", "y", physical_assets=["A", "B"]),
        ExtractionRecord("c", "z", relationships=[Relationship("B", "Peru")]),
    ]
    out = ensemble_eamv(recs)
    assert out.physical_assets == ["A", "B"]
    assert [r.location for r in out.relationships] == ["Chile", "Peru"]
    assert out.model == "eamv(x+y+z)"


@pytest.mark.parametrize("weights, threshold", [
    ({"a": 0.5, "b": 0.6}, 0.5), ({"a": 1.2, "b": -0.2}, 0.5), ({"a": 1.0}, 0.0), ({}, 0.5),
])
def test_ensemble_config_validation(weights, threshold):
    with pytest.raises(ValueError):
        EnsembleConfig(weights, threshold)


def test_ensemble_errors():
    with pytest.raises(ValueError):
        ensemble_eamv([_rec("x", [], "c1"), _rec("y", [], "c2")])
    with pytest.raises(ValueError):
        ensemble_eamv([])
    with pytest.raises(KeyError):
        ensemble_wmve([_rec("unknown", [])], WEIGHTS)


def test_weights_from_f1():
    cfg = EnsembleConfig.from_f1({"a": 0.6, "b": 0.6, "c": 0.3})
    assert cfg.weights == pytest.approx({"a": 0.4, "b": 0.4, "c": 0.2})


def test_record_dict_round_trip():
    rec = parse_extraction(ONE_SHOT_EXEMPLAR_RESPONSE)
    assert ExtractionRecord.from_dict(rec.to_dict()) == rec
