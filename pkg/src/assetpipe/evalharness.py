"""Scoring extraction output against annotated chunks."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .chunker import Chunk
from .extract import ExtractionRecord, Relationship, extract_chunk
from .llm import Gateway, LLMError, UnknownTemplateError
from .simmetrics import cosine_tokens, greedy_matches, jaccard

logger = logging.getLogger(__name__)

EVAL_FIELDS = ("physical_assets", "locations", "ownerships", "commodities")


class GroundTruthError(ValueError):
    pass


@dataclass
class GroundTruthChunk:
    chunk_id: str
    text: str
    physical_assets: list[str] = field(default_factory=list)
    locations: list[str] = field(default_factory=list)
    ownerships: list[str] = field(default_factory=list)
    commodities: list[str] = field(default_factory=list)
    relationships: list[Relationship] = field(default_factory=list)

    def __post_init__(self):
        if not self.text.strip():
            raise GroundTruthError(f"chunk {self.chunk_id}: empty text")
        for f in EVAL_FIELDS:
            setattr(self, f, list(dict.fromkeys(getattr(self, f))))

    def as_record(self) -> ExtractionRecord:
        return ExtractionRecord(chunk_id=self.chunk_id, relationships=list(self.relationships),
                                **{f: list(getattr(self, f)) for f in EVAL_FIELDS})


def load_ground_truth(path: str | Path) -> list[GroundTruthChunk]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            missing = {"chunk_id", "text", *EVAL_FIELDS} - set(obj)
            if missing:
                raise GroundTruthError(f"missing fields {sorted(missing)}")
            for f in EVAL_FIELDS:
                if not isinstance(obj[f], list) or not all(isinstance(x, str) for x in obj[f]):
                    raise GroundTruthError(f"{f} must be a list of strings")
            rels = [Relationship(**r) for r in obj.get("relationships", [])]
            out.append(GroundTruthChunk(
                chunk_id=str(obj["chunk_id"]), text=obj["text"], relationships=rels,
                **{f: obj[f] for f in EVAL_FIELDS},
            ))
        except (ValueError, TypeError) as exc:
            raise GroundTruthError(f"{path}:{n}: {exc}") from None
    ids = [g.chunk_id for g in out]
    if len(ids) != len(set(ids)):
        raise GroundTruthError(f"{path}: duplicate chunk_id")
    return out


@dataclass
class ChunkScores:
    chunk_id: str
    cosine: float
    jaccard: float
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    config: str
    cosine: float = 0.0
    jaccard: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    wall_time: float = 0.0
    chunks: list[ChunkScores] = field(default_factory=list)
    error: str = ""

    def to_dict(self, with_chunks: bool = False) -> dict:
        d = asdict(self)
        if not with_chunks:
            d.pop("chunks")
        return d


def _flat(rec) -> list[str]:
    return [e for f in EVAL_FIELDS for e in getattr(rec, f)]


def _counts(pred, gold) -> tuple[int, int, int]:
    """(true positives, predicted, gold), matched one-to-one within each field."""
    tp = n_pred = n_gold = 0
    for f in EVAL_FIELDS:
        p = sorted(set(getattr(pred, f)))
        g = sorted(set(getattr(gold, f)))
        tp += len(greedy_matches(p, g))
        n_pred += len(p)
        n_gold += len(g)
    return tp, n_pred, n_gold


def _embedding_cosine(gateway: Gateway, a: str, b: str) -> float:
    vecs = gateway.embed([a, b])
    na, nb = np.linalg.norm(vecs[0]), np.linalg.norm(vecs[1])
    if na == 0 or nb == 0:
        return 1.0 if na == nb else 0.0
    return float(min(1.0, max(0.0, vecs[0] @ vecs[1] / (na * nb))))


def score_chunk(pred: ExtractionRecord, gold: GroundTruthChunk, gateway: Gateway | None = None) -> ChunkScores:
    a, b = ", ".join(_flat(pred)), ", ".join(_flat(gold))
    tp, n_pred, n_gold = _counts(pred, gold)
    if n_pred == 0 and n_gold == 0:
        # nothing to find and nothing found: a perfect answer
        return ChunkScores(gold.chunk_id, 1.0, 1.0, 1.0, 1.0, 1.0)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    if gateway is not None and gateway.embed_model:
        cos = _embedding_cosine(gateway, a, b)
    else:
        cos = cosine_tokens(a, b)
    return ChunkScores(gold.chunk_id, cos, jaccard(a, b), precision, recall, f1)


def evaluate_extraction(predictions: Sequence[ExtractionRecord], truth: Sequence[GroundTruthChunk],
                        *, config: str = "", gateway: Gateway | None = None) -> EvalReport:
    """Macro-average of per-chunk scores; chunk ids must align exactly."""
    pred_by_id = {p.chunk_id: p for p in predictions}
    truth_ids = [g.chunk_id for g in truth]
    if set(pred_by_id) != set(truth_ids) or len(pred_by_id) != len(predictions):
        raise ValueError("predictions and ground truth cover different chunks")
    if not truth:
        return EvalReport(config)
    rows = [score_chunk(pred_by_id[g.chunk_id], g, gateway) for g in truth]

    def mean(attr: str) -> float:
        return math.fsum(getattr(r, attr) for r in rows) / len(rows)

    return EvalReport(config, mean("cosine"), mean("jaccard"), mean("precision"),
                      mean("recall"), mean("f1"), chunks=rows)


def _chunk_for(gold: GroundTruthChunk) -> Chunk:
    return Chunk(filing_id="eval", seq=0, text=gold.text, token_count=len(gold.text.split()), start_token=0)


def compare_prompts(template_ids: Sequence[str], eval_set: Sequence[GroundTruthChunk], model: str,
                    gateway: Gateway, scoring_gateway: Gateway | None = None) -> list[EvalReport]:
    """One report per template; a failing template yields an error row."""
    reports = []
    for tid in template_ids:
        start = time.perf_counter()
        try:
            preds = []
            for gold in eval_set:
                rec = extract_chunk(_chunk_for(gold), model, tid, gateway)
                rec.chunk_id = gold.chunk_id
                preds.append(rec)
            report = evaluate_extraction(preds, eval_set, config=tid, gateway=scoring_gateway)
        except (UnknownTemplateError, LLMError, ValueError, RuntimeError) as exc:
            logger.error("template %s failed: %s", tid, exc)
            report = EvalReport(tid, error=f"{type(exc).__name__}: {exc}")
        report.wall_time = time.perf_counter() - start
        reports.append(report)
    return reports


def format_table(reports: Sequence[EvalReport]) -> str:
    head = f"{'config':<22}{'cosine':>8}{'jaccard':>9}{'prec':>7}{'recall':>8}{'f1':>7}{'time_s':>9}"
    lines = [head]
    for r in reports:
        if r.error:
            lines.append(f"{r.config:<22}  error: {r.error}")
            continue
        lines.append(f"{r.config:<22}{r.cosine:>8.3f}{r.jaccard:>9.3f}{r.precision:>7.3f}"
                     f"{r.recall:>8.3f}{r.f1:>7.3f}{r.wall_time:>9.3f}")
    return "\n".join(lines)
