"""Stage orchestration for one or more companies."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from .chunker import Chunk, ChunkerConfig, chunk
from .clean import CellCleaner, ConsolidationConfig, StandardizationRules, clean_rows
from .config import ConfigError, PipelineConfig
from .evalharness import compare_prompts, load_ground_truth
from .extract import EnsembleConfig, ExtractionRecord, dynamic_flags, ensemble_eamv, ensemble_wmve, extract_chunk
from .ingest import load_filing
from .llm import Gateway, HttpProvider, StubProvider
from .rav import (GoogleCSEProvider, RavConfig, RavVerdict, RecordingSearchProvider, ReplaySearchProvider,
                  SearchProvider, rav_score, run_rav)
from .report import CompanyReport, now_iso, render_html, to_json
from .store import Store
from .validate import (coverage, load_reference, preprocess_reference,
                       total_validation_coverage, validate_assets, validated_asset_ids)

logger = logging.getLogger(__name__)

STAGES = ("ingest", "chunk", "extract", "store", "clean", "validate", "rav", "report")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"{stage}: {message}")


class MissingStageError(StageError):
    pass


@dataclass
class StageOutcome:
    name: str
    status: str  # done | skipped | cached | error
    seconds: float = 0.0
    warnings: list[str] = field(default_factory=list)
    error: str = ""


def build_gateway(cfg: PipelineConfig) -> Gateway:
    stub = cfg.path("llm.stub")
    provider = StubProvider.from_file(stub) if stub else HttpProvider(cfg.get("llm.endpoint"))
    return Gateway(
        provider,
        retries=cfg.get("llm.retries"),
        backoff=cfg.get("llm.backoff_s"),
        max_concurrency=cfg.get("llm.max_concurrency"),
        timeout=cfg.get("llm.timeout_s"),
        embed_model=cfg.get("llm.embed_model"),
    )


def build_search(cfg: PipelineConfig) -> SearchProvider | None:
    kind = cfg.get("rav.provider")
    if kind == "replay":
        path = cfg.path("rav.replay_path")
        if path is None or not path.is_file():
            raise ConfigError(f"rav.replay_path not found: {path}")
        return ReplaySearchProvider.from_file(path)
    if kind == "google":
        live = GoogleCSEProvider.from_env()
        record = cfg.path("rav.record_path")
        return RecordingSearchProvider(live, record) if record else live
    return None


class Pipeline:
    def __init__(self, cfg: PipelineConfig, gateway: Gateway | None = None,
                 search: SearchProvider | None = None):
        self.cfg = cfg
        self.store = Store(cfg.output_dir / "db")
        self._gateway = gateway
        self._search = search

    @property
    def gateway(self) -> Gateway:
        if self._gateway is None:
            self._gateway = build_gateway(self.cfg)
        return self._gateway

    # stage helpers

    def _require(self, ticker: str, stage: str) -> None:
        if not self.store.stage_done(ticker, stage) and not self._skipped(ticker, stage):
            raise MissingStageError(stage, f"stage {stage!r} has not run for {ticker}")

    def _skipped(self, ticker: str, stage: str) -> bool:
        return self._stage_status(ticker, stage) == "skipped"

    def _stage_status(self, ticker: str, stage: str) -> str | None:
        row = self.store.stage_row(ticker, stage)
        return row[0] if row else None

    def _stage_detail(self, ticker: str, stage: str) -> dict:
        row = self.store.stage_row(ticker, stage)
        return row[1] if row else {}

    def company_name(self, ticker: str) -> str:
        spec = self.cfg.company(ticker)
        if spec.name:
            return spec.name
        names = [f["company_name"] for f in self.store.filings(ticker) if f["company_name"]]
        return names[0] if names else ticker

    # stages; each returns (status, detail, warnings)

    def stage_ingest(self, ticker: str) -> tuple[str, dict, list[str]]:
        spec = self.cfg.company(ticker)
        if not spec.filings:
            raise StageError("ingest", f"no filings configured for {ticker}")
        warnings = []
        for path in spec.filings:
            filing = load_filing(path, ticker=ticker, cik=spec.cik or None)
            # relative paths keep the database independent of where the run happens
            try:
                filing.source_uri = path.resolve().relative_to(self.cfg.base_dir.resolve()).as_posix()
            except ValueError:
                pass
            if not filing.date_known:
                warnings.append(f"{path.name}: filing date unknown")
            self.store.put_filing(ticker, filing)
        return "done", {"filings": len(spec.filings)}, warnings

    def stage_chunk(self, ticker: str) -> tuple[str, dict, list[str]]:
        self._require(ticker, "ingest")
        ccfg = ChunkerConfig(self.cfg.get("chunk.max_tokens"), self.cfg.get("chunk.overlap_tokens"))
        out: list[Chunk] = []
        for f in self.store.filings(ticker):
            out.extend(chunk(f["body"], ccfg, f["id"]))
            if not self.cfg.get("extract.tables"):
                continue
            seq = 0
            for t in f["tables"]:
                text = "\n".join(t["linearized"])
                # only tables that look like they list assets are worth a prompt
                if not text.strip() or not dynamic_flags(text)["contains_assets"]:
                    continue
                for c in chunk(text, ccfg, f["id"]):
                    out.append(replace(c, seq=seq, kind="table"))
                    seq += 1
        self.store.put_chunks(ticker, out)
        return "done", {"chunks": len(out)}, []

    def stage_extract(self, ticker: str) -> tuple[str, dict, list[str]]:
        self._require(ticker, "chunk")
        chunks = self.store.chunks(ticker)
        models = self.cfg.extraction_models
        prompt = self.cfg.get("extract.prompt")
        table_prompt = self.cfg.get("extract.table_prompt")
        tasks = [(c, m) for c in chunks for m in models]

        def run(task):
            c, m = task
            return extract_chunk(c, m, table_prompt if c.kind == "table" else prompt, self.gateway)

        with ThreadPoolExecutor(max_workers=self.gateway.max_concurrency) as pool:
            records = list(pool.map(run, tasks))
        self.store.put_extractions(ticker, records)
        warnings = sorted({f"{r.chunk_id}/{r.model}: {w}" for r in records for w in r.warnings})
        return "done", {"records": len(records)}, warnings

    def ensemble_config(self) -> EnsembleConfig:
        models = self.cfg.extraction_models
        weights = self.cfg.get("extract.weights")
        thr = self.cfg.get("extract.keep_threshold")
        if weights:
            return EnsembleConfig(dict(weights), thr)
        gt = self.cfg.path("paths.ground_truth")
        if gt is not None and gt.is_file():
            truth = load_ground_truth(gt)
            f1 = {}
            for m in models:
                rep = compare_prompts([self.cfg.get("extract.prompt")], truth, m, self.gateway)[0]
                f1[m] = rep.f1
            if sum(f1.values()) > 0:
                return EnsembleConfig.from_f1(f1, thr)
        return EnsembleConfig({m: 1 / len(models) for m in models}, thr)

    def final_records(self, ticker: str) -> list[ExtractionRecord]:
        records = self.store.extractions(ticker)
        mode = self.cfg.get("extract.ensemble")
        models = self.cfg.extraction_models
        if mode == "none" or len(models) == 1:
            return [r for r in records if r.model == models[0]]
        by_chunk: dict[str, list[ExtractionRecord]] = {}
        for r in records:
            if r.model in models:
                by_chunk.setdefault(r.chunk_id, []).append(r)
        if mode == "eamv":
            return [ensemble_eamv(v) for _, v in sorted(by_chunk.items())]
        conf = self.ensemble_config()
        return [ensemble_wmve(v, conf) for _, v in sorted(by_chunk.items())]

    def stage_store(self, ticker: str) -> tuple[str, dict, list[str]]:
        self._require(ticker, "extract")
        written = self.store.upsert_assets(ticker, self.final_records(ticker))
        return "done", {"written": written}, []

    def stage_clean(self, ticker: str) -> tuple[str, dict, list[str]]:
        self._require(ticker, "store")
        rules = StandardizationRules.for_company(ticker, self.company_name(ticker), self.cfg.path("paths.aliases"))
        model = self.cfg.get("models.cleaning") or ""
        cleaner = CellCleaner(self.gateway, model) if self.cfg.get("clean.llm_cells") and model else None
        rows = clean_rows(
            self.store.raw_assets(ticker), rules,
            config=ConsolidationConfig(self.cfg.get("clean.tfidf_threshold")),
            gateway=self.gateway if self.cfg.get("clean.country_llm") else None,
            country_model=model, cleaner=cleaner,
        )
        self.store.replace_assets(ticker, rows)
        return "done", {"rows": len(rows)}, list(cleaner.warnings) if cleaner else []

    def stage_validate(self, ticker: str) -> tuple[str, dict, list[str]]:
        self._require(ticker, "clean")
        ref_path = self.cfg.path("paths.reference")
        if ref_path is None or not ref_path.is_file():
            self.store.put_matches(ticker, [])
            return "skipped", {}, [f"reference file missing ({ref_path}); validation skipped"]
        reference = preprocess_reference(load_reference(ref_path), self.cfg.get("validate.status_exclusions"))
        assets = self.store.query_assets(ticker, require_asset=True)
        result = validate_assets(assets, reference, ticker,
                                 threshold=self.cfg.get("validate.match_threshold"), k=self.cfg.get("validate.hits_k"))
        rows = []
        for m in result.matches:
            d = m.to_dict()
            s = result.scores.get(m.asset_id)
            d["scores"] = s.to_dict() if s else None
            rows.append(d)
        self.store.put_matches(ticker, rows)
        detail = {"matched": result.coverage.matched_count, "reference_total": result.coverage.reference_total,
                  "summary": result.summary}
        warnings = [] if result.coverage.reference_total else [f"no reference rows for {ticker}"]
        return "done", detail, warnings

    def stage_rav(self, ticker: str) -> tuple[str, dict, list[str]]:
        self._require(ticker, "clean")
        if self._search is None:
            self._search = build_search(self.cfg)
        if self._search is None:
            self.store.put_verdicts(ticker, [])
            return "skipped", {}, ["no search provider configured; web validation skipped"]
        rc = RavConfig(self.cfg.get("rav.top_n"), self.cfg.get("rav.top_k"),
                       self.cfg.get("models.rav_answer"), self.cfg.get("models.rav_classifier"),
                       workers=self.gateway.max_concurrency)
        verdicts = run_rav(self.store.query_assets(ticker, require_asset=True), self._search, self.gateway, rc)
        self.store.put_verdicts(ticker, [v.to_dict() for v in verdicts])
        warnings = sorted({f"asset {v.asset_id}/{v.attribute}: {v.warning}" for v in verdicts
                           if v.warning and not v.skipped})
        return "done", {"verdicts": len(verdicts)}, warnings

    def build_report(self, ticker: str) -> CompanyReport:
        if not self.store.exists(ticker):
            self.store.init_company(ticker)
        assets = self.store.query_assets(ticker)
        matches = self.store.matches(ticker)
        verdicts = self.store.verdicts(ticker)
        vdetail = self._stage_detail(ticker, "validate") if self.store.stage_done(ticker, "validate") else {}
        cov = coverage(vdetail["matched"], vdetail["reference_total"]) if vdetail else None
        total = len(assets)
        val_cov = ref_cov = None
        if total:
            val_cov = total_validation_coverage(len(validated_asset_ids(matches, verdicts)), total)
            if vdetail:
                ref_cov = total_validation_coverage(len(validated_asset_ids(matches, [])), total)
        rav = None
        if verdicts:
            rav = rav_score([RavVerdict(**v) for v in verdicts], ticker).to_dict()
        warnings = []
        for name, _, detail in sorted(self.store.stage_rows(ticker), key=lambda r: STAGES.index(r[0])):
            warnings.extend(f"{name}: {w}" for w in detail.get("warnings", []))
        return CompanyReport(
            company=ticker,
            asset_count=total,
            named_asset_count=sum(1 for a in assets if not a.generic),
            coverage=cov,
            validation_coverage=val_cov,
            reference_only_coverage=ref_cov,
            attribute_scores=vdetail.get("summary", {}),
            rav=rav,
            assets=[{k: v for k, v in a.to_dict().items() if k != "company"} for a in assets],
            warnings=warnings,
            generated_at=now_iso(),
        )

    def report_paths(self, ticker: str) -> tuple[Path, Path]:
        d = self.cfg.output_dir / ticker
        return d / "report.json", d / "report.html"

    def stage_report(self, ticker: str) -> tuple[str, dict, list[str]]:
        rep = self.build_report(ticker).to_dict()
        jpath, hpath = self.report_paths(ticker)
        jpath.parent.mkdir(parents=True, exist_ok=True)
        jpath.write_text(to_json(rep), encoding="utf-8")
        hpath.write_text(render_html(rep), encoding="utf-8")
        self.store.export(ticker, "csv", jpath.parent / "assets.csv")
        return "done", {}, []

    # drivers

    def run_stage(self, ticker: str, name: str) -> StageOutcome:
        """Run one stage unconditionally and invalidate everything after it."""
        fn: Callable = getattr(self, f"stage_{name}")
        if not self.store.exists(ticker):
            if name != "ingest" and name != "report":
                raise MissingStageError(STAGES[0], f"nothing stored for {ticker}; run ingest first")
            self.store.init_company(ticker)
        start = time.perf_counter()
        status, detail, warnings = fn(ticker)
        detail["warnings"] = warnings
        self.store.mark_stage(ticker, name, status, json.dumps(detail, sort_keys=True))
        later = STAGES[STAGES.index(name) + 1:]
        if name != "report":
            self.store.clear_stages(ticker, later)
        for w in warnings:
            logger.warning("%s %s: %s", ticker, name, w)
        return StageOutcome(name, status, time.perf_counter() - start, warnings)

    def run_company(self, ticker: str, force: bool = False) -> list[StageOutcome]:
        self.cfg.company(ticker)
        if force or not self.store.exists(ticker):
            self.store.init_company(ticker, reset=force)
        outcomes = []
        for name in STAGES:
            status = self._stage_status(ticker, name)
            fresh = status in ("done", "skipped")
            if name == "report" and fresh:
                fresh = all(p.exists() for p in self.report_paths(ticker))
            if fresh:
                outcomes.append(StageOutcome(name, "cached"))
                continue
            try:
                outcomes.append(self.run_stage(ticker, name))
            except Exception as exc:  # a failed stage stops this company only
                logger.exception("%s: stage %s failed", ticker, name)
                self.store.mark_stage(ticker, name, "error", json.dumps({"error": str(exc)}))
                outcomes.append(StageOutcome(name, "error", error=f"{type(exc).__name__}: {exc}"))
                break
        return outcomes

    def run(self, tickers: list[str] | None = None, force: bool = False) -> dict:
        tickers = tickers or [c.ticker for c in self.cfg.companies]
        started = now_iso()
        with ThreadPoolExecutor(max_workers=self.cfg.get("workers")) as pool:
            results = dict(zip(tickers, pool.map(lambda t: self.run_company(t, force), tickers)))
        manifest = {
            "started_at": started,
            "finished_at": now_iso(),
            "companies": {
                t: {
                    "status": "error" if any(o.status == "error" for o in outs) else "ok",
                    "stages": [vars(o) for o in outs],
                }
                for t, outs in results.items()
            },
        }
        manifest["ok"] = all(c["status"] == "ok" for c in manifest["companies"].values())
        self.cfg.output_dir.mkdir(parents=True, exist_ok=True)
        (self.cfg.output_dir / "manifest.json").write_text(to_json(manifest), encoding="utf-8")
        return manifest
