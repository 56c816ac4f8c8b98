from __future__ import annotations

import json
import time

import pytest

from assetpipe.config import ConfigError, load_config
from assetpipe.pipeline import STAGES, MissingStageError, Pipeline, StageError
from golden import check_or_update, golden_texts, run_mini


def test_mini_run_matches_goldens(mini_dir):
    start = time.perf_counter()
    pipe, manifest = run_mini(mini_dir)
    assert time.perf_counter() - start < 30
    assert manifest["ok"]
    assert check_or_update(golden_texts(pipe)) == []


def test_rerun_is_noop(mini_dir):
    pipe, _ = run_mini(mini_dir)
    report_path = pipe.report_paths("FCX")[0]
    before = report_path.read_bytes()
    snap = pipe.store.snapshot("FCX")
    _, manifest = run_mini(mini_dir)
    assert {s["status"] for s in manifest["companies"]["FCX"]["stages"]} == {"cached"}
    assert report_path.read_bytes() == before
    assert pipe.store.snapshot("FCX") == snap


def test_force_reproduces_same_outputs(mini_dir):
    pipe, _ = run_mini(mini_dir)
    first = golden_texts(pipe)
    pipe, manifest = run_mini(mini_dir, force=True)
    assert all(s["status"] == "done" for s in manifest["companies"]["FCX"]["stages"])
    assert golden_texts(pipe) == first


def test_mini_report_content(mini_dir):
    pipe, _ = run_mini(mini_dir)
    report = json.loads(pipe.report_paths("FCX")[0].read_text())
    names = [a["physical_asset"] for a in report["assets"]]
    assert names == ["Grasberg mine complex", "Chino mine", "natural gas fields", "Morenci", "Cerro Verde"]
    assert report["coverage"]["display"] == "75.00%"
    assert report["reference_only_coverage"]["display"] == "60.00%"
    assert report["validation_coverage"]["display"] == "80.00%"
    assert report["rav"]["company_score"] == pytest.approx(2 / 3)
    html = pipe.report_paths("FCX")[1].read_text()
    assert 'id="report-data"' in html and "Grasberg mine complex" in html
    assert (pipe.cfg.output_dir / "FCX" / "assets.csv").is_file()


def test_stage_rerun_invalidates_later_stages(mini_dir):
    pipe, _ = run_mini(mini_dir)
    pipe.run_stage("FCX", "clean")
    done = {n for n, s, _ in pipe.store.stage_rows("FCX") if s == "done"}
    assert done == set(STAGES[:STAGES.index("clean") + 1])
    _, manifest = run_mini(mini_dir)
    statuses = [s["status"] for s in manifest["companies"]["FCX"]["stages"]]
    assert statuses == ["cached"] * 5 + ["done"] * 3


def test_stage_before_ingest_is_error(mini_dir):
    pipe = Pipeline(load_config(mini_dir / "config.yaml"))
    with pytest.raises(MissingStageError):
        pipe.run_stage("FCX", "chunk")
    pipe.run_stage("FCX", "ingest")
    with pytest.raises(StageError):
        pipe.run_stage("FCX", "extract")


def test_missing_reference_skips_validation(mini_dir):
    (mini_dir / "reference.csv").unlink()
    pipe, manifest = run_mini(mini_dir)
    assert manifest["ok"]
    stages = {s["name"]: s for s in manifest["companies"]["FCX"]["stages"]}
    assert stages["validate"]["status"] == "skipped"
    assert "reference file missing" in stages["validate"]["warnings"][0]
    report = json.loads(pipe.report_paths("FCX")[0].read_text())
    assert report["coverage"] is None and report["reference_only_coverage"] is None
    assert report["validation_coverage"]["display"] == "80.00%"


def test_no_search_provider_skips_rav(mini_dir):
    cfg = load_config(mini_dir / "config.yaml", ["rav.provider=none"])
    manifest = Pipeline(cfg).run()
    stages = {s["name"]: s["status"] for s in manifest["companies"]["FCX"]["stages"]}
    assert stages["rav"] == "skipped" and stages["report"] == "done"


def test_report_on_empty_store(mini_dir):
    pipe = Pipeline(load_config(mini_dir / "config.yaml"))
    outcome = pipe.run_stage("FCX", "report")
    assert outcome.status == "done"
    report = json.loads(pipe.report_paths("FCX")[0].read_text())
    assert report["asset_count"] == 0 and report["assets"] == [] and report["rav"] is None


def test_failure_stops_company_and_is_recorded(mini_dir):
    stub = json.loads((mini_dir / "llm_stub.json").read_text())
    stub["rules"] = [r for r in stub["rules"] if not r["regex"].startswith("Text: Mine")]
    (mini_dir / "llm_stub.json").write_text(json.dumps(stub))
    pipe, manifest = run_mini(mini_dir)
    assert not manifest["ok"]
    stages = manifest["companies"]["FCX"]["stages"]
    assert stages[-1]["name"] == "extract" and stages[-1]["status"] == "error"
    assert pipe.store.stage_row("FCX", "extract")[0] == "error"


@pytest.mark.parametrize("mode", ["eamv", "wmve"])
def test_ensemble_modes_run(mini_dir, mode):
    cfg = load_config(mini_dir / "config.yaml", [f"extract.ensemble={mode}", "models.extraction=[gemma2, llama3, mistral]"])
    pipe = Pipeline(cfg)
    manifest = pipe.run()
    assert manifest["ok"]
    # identical stub answers for every model: ensembles agree with a single model
    names = [a.physical_asset for a in pipe.store.query_assets("FCX")]
    assert "Grasberg mine complex" in names and "Morenci" in names


def test_wmve_weights_from_ground_truth(mini_dir):
    cfg = load_config(mini_dir / "config.yaml", ["extract.ensemble=wmve", "models.extraction=[gemma2, llama3]"])
    conf = Pipeline(cfg).ensemble_config()
    assert conf.weights == pytest.approx({"gemma2": 0.5, "llama3": 0.5})
    cfg = load_config(mini_dir / "config.yaml", ["extract.weights={gemma2: 0.7, llama3: 0.3}",
                                                 "models.extraction=[gemma2, llama3]"])
    assert Pipeline(cfg).ensemble_config().weights == {"gemma2": 0.7, "llama3": 0.3}


@pytest.mark.parametrize("override", [
    "clean.tfidf_threshold=0", "chunk.overlap_tokens=2000", "extract.ensemble=vote", "rav.provider=bing",
    "models.extraction=[]", "llm.stub=missing.json",
])
def test_config_validation(mini_dir, override):
    with pytest.raises(ConfigError):
        load_config(mini_dir / "config.yaml", [override])


def test_config_discovers_filings_and_resolves_paths(mini_dir):
    cfg = load_config(mini_dir / "config.yaml")
    (fcx,) = cfg.companies
    assert fcx.ticker == "FCX" and [f.name for f in fcx.filings] == ["fcx-10k-2023.htm"]
    assert cfg.path("paths.reference") == mini_dir / "reference.csv"
    with pytest.raises(ConfigError):
        cfg.company("NEM")
    with pytest.raises(ConfigError):
        load_config(mini_dir / "nope.yaml")
    with pytest.raises(ConfigError):
        load_config(None, ["novalue"])
