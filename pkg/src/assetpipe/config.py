"""Pipeline configuration: YAML file plus dotted ``key=value`` overrides."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

DEFAULTS: dict[str, Any] = {
    "companies": [],
    "paths": {
        "filings": "filings",
        "reference": None,
        "ground_truth": None,
        "output": "out",
        "aliases": None,
    },
    "llm": {
        "endpoint": "http://localhost:11434",
        "stub": None,
        "max_concurrency": 4,
        "retries": 3,
        "timeout_s": 120.0,
        "backoff_s": 0.5,
        "embed_model": None,
    },
    "models": {
        "extraction": ["gemma2"],
        "cleaning": "gemma2",
        "rav_answer": "llama3",
        "rav_classifier": "gemma2",
    },
    "chunk": {"max_tokens": 1024, "overlap_tokens": 20},
    "extract": {
        "prompt": "irz_cot",
        "table_prompt": "table_improved",
        "tables": True,
        "ensemble": "none",
        "weights": None,
        "keep_threshold": 0.5,
    },
    "clean": {"tfidf_threshold": 0.5, "llm_cells": True, "country_llm": True},
    "validate": {"match_threshold": 0.6, "hits_k": 5, "status_exclusions": ["closed", "abandoned"]},
    "rav": {"provider": "none", "replay_path": None, "record_path": None, "top_n": 10, "top_k": 3},
    "workers": 2,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_override(data: dict, assignment: str) -> None:
    """Set ``a.b.c=value`` in place; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value: {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key}: {p} is not a section")
    node[parts[-1]] = yaml.safe_load(raw)


@dataclass
class CompanySpec:
    ticker: str
    cik: str = ""
    name: str = ""
    filings: list[Path] = field(default_factory=list)


@dataclass
class PipelineConfig:
    data: dict
    base_dir: Path
    companies: list[CompanySpec]

    def get(self, dotted: str, default: Any = None) -> Any:
        node: Any = self.data
        for p in dotted.split("."):
            if not isinstance(node, Mapping) or p not in node:
                return default
            node = node[p]
        return node

    def path(self, dotted: str) -> Path | None:
        value = self.get(dotted)
        if value in (None, ""):
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path("paths.output") or self.base_dir / "out"

    @property
    def extraction_models(self) -> list[str]:
        m = self.get("models.extraction")
        return [m] if isinstance(m, str) else list(m or [])

    def company(self, ticker: str) -> CompanySpec:
        for c in self.companies:
            if c.ticker == ticker:
                return c
        raise ConfigError(f"unknown company {ticker!r}")


def _check_range(cfg: PipelineConfig, key: str, lo: float, hi: float, lo_open: bool = False) -> None:
    v = cfg.get(key)
    if not isinstance(v, (int, float)) or v > hi or v < lo or (lo_open and v == lo):
        raise ConfigError(f"{key} out of range: {v!r}")


def load_config(path: str | Path | None = None, overrides: Sequence[str] = ()) -> PipelineConfig:
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        base = p.resolve().parent
    data = _merge(DEFAULTS, raw)
    for o in overrides:
        apply_override(data, o)
    cfg = PipelineConfig(data, base, [])
    filings_root = cfg.path("paths.filings")
    for entry in data["companies"] or []:
        if isinstance(entry, str):
            entry = {"ticker": entry}
        if "ticker" not in entry:
            raise ConfigError(f"company entry without ticker: {entry!r}")
        ticker = str(entry["ticker"]).upper()
        if "filings" in entry:
            files = [Path(f) if Path(f).is_absolute() else base / f for f in entry["filings"]]
        elif filings_root is not None and (filings_root / ticker).is_dir():
            files = sorted(f for f in (filings_root / ticker).iterdir()
                           if f.suffix.lower() in {".htm", ".html", ".txt"})
        else:
            files = []
        cfg.companies.append(CompanySpec(ticker, str(entry.get("cik", "")), entry.get("name", ""), files))
    validate_config(cfg)
    return cfg


def validate_config(cfg: PipelineConfig) -> None:
    _check_range(cfg, "chunk.max_tokens", 1, 1e9)
    _check_range(cfg, "chunk.overlap_tokens", 0, cfg.get("chunk.max_tokens") - 1)
    _check_range(cfg, "clean.tfidf_threshold", 0, 1, lo_open=True)
    _check_range(cfg, "validate.match_threshold", 0, 1)
    _check_range(cfg, "validate.hits_k", 1, 1000)
    _check_range(cfg, "rav.top_n", 1, 100)
    _check_range(cfg, "rav.top_k", 1, 100)
    _check_range(cfg, "llm.max_concurrency", 1, 1024)
    _check_range(cfg, "llm.retries", 0, 100)
    _check_range(cfg, "workers", 1, 1024)
    if cfg.get("extract.ensemble") not in ("none", "eamv", "wmve"):
        raise ConfigError("extract.ensemble must be none, eamv or wmve")
    if cfg.get("rav.provider") not in ("none", "replay", "google"):
        raise ConfigError("rav.provider must be none, replay or google")
    if not cfg.extraction_models:
        raise ConfigError("models.extraction is empty")
    for c in cfg.companies:
        for f in c.filings:
            if not f.is_file():
                raise ConfigError(f"{c.ticker}: filing not found: {f}")
    stub = cfg.path("llm.stub")
    if stub is not None and not stub.is_file():
        raise ConfigError(f"LLM stub script not found: {stub}")
