"""SQLite persistence, one database file per company."""

from __future__ import annotations

import csv
import io
import json
import logging
import re
import sqlite3
import threading
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .chunker import Chunk
from .extract import ExtractionRecord, normalize_entity
from .ingest import Filing

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

_MIGRATIONS = {
    1: """
    CREATE TABLE filings (
        id TEXT PRIMARY KEY, ticker TEXT, cik TEXT, form_type TEXT, filing_date TEXT,
        company_name TEXT, source_uri TEXT, body TEXT NOT NULL, tables_json TEXT NOT NULL
    );
    CREATE TABLE chunks (
        id TEXT PRIMARY KEY, filing_id TEXT NOT NULL REFERENCES filings(id) ON DELETE CASCADE,
        seq INTEGER NOT NULL, kind TEXT NOT NULL, start_token INTEGER NOT NULL,
        token_count INTEGER NOT NULL, text TEXT NOT NULL
    );
    CREATE TABLE extractions (
        chunk_id TEXT NOT NULL REFERENCES chunks(id) ON DELETE CASCADE,
        model TEXT NOT NULL, template_id TEXT NOT NULL, record_json TEXT NOT NULL,
        PRIMARY KEY (chunk_id, model, template_id)
    );
    CREATE TABLE raw_assets (
        id INTEGER PRIMARY KEY, natural_key TEXT UNIQUE NOT NULL,
        physical_asset TEXT NOT NULL, location TEXT NOT NULL, countries TEXT NOT NULL,
        ownership TEXT NOT NULL, commodity TEXT NOT NULL, status TEXT NOT NULL,
        source_chunk_ids TEXT NOT NULL, generic INTEGER NOT NULL DEFAULT 0
    );
    CREATE TABLE assets (
        id INTEGER PRIMARY KEY,
        physical_asset TEXT NOT NULL, location TEXT NOT NULL, countries TEXT NOT NULL,
        ownership TEXT NOT NULL, commodity TEXT NOT NULL, status TEXT NOT NULL,
        source_chunk_ids TEXT NOT NULL, generic INTEGER NOT NULL DEFAULT 0
    );
    CREATE TABLE matches (
        asset_id INTEGER PRIMARY KEY, best_ref TEXT, best_score REAL NOT NULL,
        candidates_json TEXT NOT NULL, scores_json TEXT
    );
    CREATE TABLE rav_verdicts (
        asset_id INTEGER NOT NULL, attribute TEXT NOT NULL, db_value TEXT NOT NULL,
        web_answer TEXT NOT NULL, verdict INTEGER, skipped INTEGER NOT NULL,
        warning TEXT NOT NULL, snippet_urls TEXT NOT NULL,
        PRIMARY KEY (asset_id, attribute)
    );
    CREATE TABLE stages (
        name TEXT PRIMARY KEY, status TEXT NOT NULL, detail TEXT NOT NULL
    );
    """,
}

ASSET_COLUMNS = ("physical_asset", "location", "countries", "ownership", "commodity", "status")


class UnknownCompanyError(LookupError):
    pass


@dataclass
class AssetRow:
    id: int | None = None
    company: str = ""
    physical_asset: str = ""
    location: str = ""
    countries: str = ""
    ownership: str = ""
    commodity: str = ""
    status: str = ""
    source_chunk_ids: list[str] = field(default_factory=list)
    # set during cleaning for unnamed assets ("natural gas fields"); RAV skips them
    generic: bool = False

    def natural_key(self) -> str:
        return "|".join(normalize_entity(v) for v in (self.physical_asset, self.location, self.ownership))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AssetRow":
        known = {f.name for f in fields(cls)}
        data = {k: v for k, v in data.items() if k in known}
        data["source_chunk_ids"] = list(data.get("source_chunk_ids") or [])
        data["generic"] = bool(data.get("generic", False))
        return cls(**data)


EXPORT_FIELDS = tuple(f.name for f in fields(AssetRow))


def rows_from_record(record: ExtractionRecord, company: str = "") -> list[AssetRow]:
    """One row per relationship, plus one per asset that no relationship covers."""
    src = [record.chunk_id] if record.chunk_id else []
    rows = [
        AssetRow(
            company=company, physical_asset=r.asset, location=r.location, ownership=r.ownership,
            commodity=r.commodity, status=r.status, source_chunk_ids=list(src),
        )
        for r in record.relationships
    ]
    covered = {normalize_entity(r.asset) for r in record.relationships if r.asset}
    for a in record.physical_assets:
        if normalize_entity(a) not in covered:
            rows.append(AssetRow(company=company, physical_asset=a, source_chunk_ids=list(src)))
            covered.add(normalize_entity(a))
    return rows


_TICKER_OK = re.compile(r"^[A-Za-z0-9._-]+$")


class Store:
    """Manages the per-company database files under ``root``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def path(self, company: str) -> Path:
        if not _TICKER_OK.match(company):
            raise ValueError(f"invalid company identifier {company!r}")
        return self.root / f"{company}.sqlite"

    def exists(self, company: str) -> bool:
        return self.path(company).exists()

    def _lock(self, company: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(company, threading.Lock())

    def init_company(self, company: str, *, reset: bool = False) -> None:
        p = self.path(company)
        if reset and p.exists():
            p.unlink()
        with self._connect(company, create=True) as con:
            con.execute("CREATE TABLE IF NOT EXISTS schema_migrations (version INTEGER PRIMARY KEY)")
            have = {v for (v,) in con.execute("SELECT version FROM schema_migrations")}
            for version in sorted(_MIGRATIONS):
                if version not in have:
                    con.executescript(_MIGRATIONS[version])
                    con.execute("INSERT INTO schema_migrations(version) VALUES (?)", (version,))

    @contextmanager
    def _connect(self, company: str, create: bool = False) -> Iterator[sqlite3.Connection]:
        p = self.path(company)
        if not create and not p.exists():
            raise UnknownCompanyError(company)
        con = sqlite3.connect(p)
        con.execute("PRAGMA foreign_keys = ON")
        try:
            with con:
                yield con
        finally:
            con.close()

    @contextmanager
    def _write(self, company: str) -> Iterator[sqlite3.Connection]:
        with self._lock(company), self._connect(company) as con:
            yield con

    # filings and chunks

    def put_filing(self, company: str, filing: Filing) -> None:
        tables = [asdict(t) for t in filing.tables]
        with self._write(company) as con:
            con.execute(
                "INSERT OR REPLACE INTO filings VALUES (?,?,?,?,?,?,?,?,?)",
                (filing.id, filing.ticker, filing.cik, filing.form_type,
                 filing.filing_date.isoformat() if filing.filing_date else None,
                 filing.company_name, filing.source_uri, filing.body, json.dumps(tables, sort_keys=True)),
            )

    def filings(self, company: str) -> list[dict]:
        with self._connect(company) as con:
            con.row_factory = sqlite3.Row
            rows = con.execute("SELECT * FROM filings ORDER BY id").fetchall()
        out = []
        for r in rows:
            d = dict(r)
            d["tables"] = json.loads(d.pop("tables_json"))
            out.append(d)
        return out

    def put_chunks(self, company: str, chunks: Sequence[Chunk]) -> None:
        with self._write(company) as con:
            con.executemany(
                "INSERT OR REPLACE INTO chunks VALUES (?,?,?,?,?,?,?)",
                [(c.id, c.filing_id, c.seq, c.kind, c.start_token, c.token_count, c.text) for c in chunks],
            )

    def chunks(self, company: str) -> list[Chunk]:
        with self._connect(company) as con:
            rows = con.execute(
                "SELECT filing_id, seq, text, token_count, start_token, kind FROM chunks ORDER BY id"
            ).fetchall()
        return [Chunk(filing_id=f, seq=s, text=t, token_count=n, start_token=st, kind=k) for f, s, t, n, st, k in rows]

    # extractions

    def put_extractions(self, company: str, records: Sequence[ExtractionRecord]) -> None:
        with self._write(company) as con:
            con.executemany(
                "INSERT OR REPLACE INTO extractions VALUES (?,?,?,?)",
                [(r.chunk_id, r.model, r.template_id, json.dumps(r.to_dict(), sort_keys=True)) for r in records],
            )

    def extractions(self, company: str) -> list[ExtractionRecord]:
        with self._connect(company) as con:
            rows = con.execute(
                "SELECT record_json FROM extractions ORDER BY chunk_id, model, template_id"
            ).fetchall()
        return [ExtractionRecord.from_dict(json.loads(j)) for (j,) in rows]

    # asset rows

    def _check_sources(self, con: sqlite3.Connection, ids: Iterable[str]) -> None:
        for cid in ids:
            if con.execute("SELECT 1 FROM chunks WHERE id = ?", (cid,)).fetchone() is None:
                raise ValueError(f"source chunk {cid!r} does not exist")

    def upsert_assets(self, company: str, records: Sequence[ExtractionRecord]) -> int:
        """Write raw rows keyed by normalized asset|location|ownership.

        Returns the number of rows inserted or changed; re-submitting the same
        records returns 0.
        """
        written = 0
        with self._write(company) as con:
            for rec in records:
                for row in rows_from_record(rec, company):
                    if not row.physical_asset.strip():
                        continue
                    self._check_sources(con, row.source_chunk_ids)
                    key = row.natural_key()
                    old = con.execute(
                        "SELECT id, commodity, status, source_chunk_ids FROM raw_assets WHERE natural_key = ?", (key,)
                    ).fetchone()
                    if old is None:
                        con.execute(
                            "INSERT INTO raw_assets(natural_key, physical_asset, location, countries, ownership,"
                            " commodity, status, source_chunk_ids, generic) VALUES (?,?,?,?,?,?,?,?,0)",
                            (key, row.physical_asset, row.location, "", row.ownership, row.commodity,
                             row.status, json.dumps(sorted(row.source_chunk_ids))),
                        )
                        written += 1
                        continue
                    rid, commodity, status, src_json = old
                    src = sorted(set(json.loads(src_json)) | set(row.source_chunk_ids))
                    commodity = commodity or row.commodity
                    status = status or row.status
                    if (commodity, status, json.dumps(src)) != (old[1], old[2], src_json):
                        con.execute(
                            "UPDATE raw_assets SET commodity=?, status=?, source_chunk_ids=? WHERE id=?",
                            (commodity, status, json.dumps(src), rid),
                        )
                        written += 1
        return written

    def raw_assets(self, company: str) -> list[AssetRow]:
        return self._rows(company, "raw_assets", "", ())

    def replace_assets(self, company: str, rows: Sequence[AssetRow]) -> None:
        """Atomically swap the cleaned table contents; ids are reassigned 1..n."""
        with self._write(company) as con:
            for r in rows:
                self._check_sources(con, r.source_chunk_ids)
            con.execute("DELETE FROM matches")
            con.execute("DELETE FROM rav_verdicts")
            con.execute("DELETE FROM assets")
            con.executemany(
                "INSERT INTO assets(id, physical_asset, location, countries, ownership, commodity, status,"
                " source_chunk_ids, generic) VALUES (?,?,?,?,?,?,?,?,?)",
                [(i, r.physical_asset, r.location, r.countries, r.ownership, r.commodity, r.status,
                  json.dumps(sorted(set(r.source_chunk_ids))), int(r.generic)) for i, r in enumerate(rows, 1)],
            )

    def query_assets(self, company: str, where: dict[str, str] | None = None,
                     require_asset: bool = False) -> list[AssetRow]:
        """Cleaned rows ordered by id; ``where`` is an exact column=value filter."""
        clauses, params = [], []
        for col, val in (where or {}).items():
            if col not in ASSET_COLUMNS:
                raise ValueError(f"unknown column {col!r}")
            clauses.append(f"{col} = ?")
            params.append(val)
        if require_asset:
            clauses.append("TRIM(physical_asset) <> ''")
        sql = (" WHERE " + " AND ".join(clauses)) if clauses else ""
        return self._rows(company, "assets", sql, tuple(params))

    def _rows(self, company: str, table: str, where: str, params: tuple) -> list[AssetRow]:
        with self._connect(company) as con:
            rows = con.execute(
                f"SELECT id, physical_asset, location, countries, ownership, commodity, status,"
                f" source_chunk_ids, generic FROM {table}{where} ORDER BY id", params
            ).fetchall()
        return [
            AssetRow(id=r[0], company=company, physical_asset=r[1], location=r[2], countries=r[3],
                     ownership=r[4], commodity=r[5], status=r[6], source_chunk_ids=json.loads(r[7]),
                     generic=bool(r[8]))
            for r in rows
        ]

    # validation results

    def put_matches(self, company: str, matches: Sequence[dict]) -> None:
        with self._write(company) as con:
            con.execute("DELETE FROM matches")
            con.executemany(
                "INSERT INTO matches VALUES (?,?,?,?,?)",
                [(m["asset_id"], m["best"], m["best_score"], json.dumps(m["candidates"]),
                  json.dumps(m.get("scores"), sort_keys=True) if m.get("scores") is not None else None)
                 for m in matches],
            )

    def matches(self, company: str) -> list[dict]:
        with self._connect(company) as con:
            rows = con.execute("SELECT * FROM matches ORDER BY asset_id").fetchall()
        return [
            {"asset_id": a, "best": b, "best_score": s, "candidates": json.loads(c),
             "scores": json.loads(sc) if sc else None}
            for a, b, s, c, sc in rows
        ]

    def put_verdicts(self, company: str, verdicts: Sequence[dict]) -> None:
        with self._write(company) as con:
            con.execute("DELETE FROM rav_verdicts")
            con.executemany(
                "INSERT INTO rav_verdicts VALUES (?,?,?,?,?,?,?,?)",
                [(v["asset_id"], v["attribute"], v["db_value"], v["web_answer"],
                  None if v["verdict"] is None else int(v["verdict"]), int(v["skipped"]),
                  v.get("warning", ""), json.dumps(v["snippet_urls"])) for v in verdicts],
            )

    def verdicts(self, company: str) -> list[dict]:
        with self._connect(company) as con:
            rows = con.execute("SELECT * FROM rav_verdicts ORDER BY asset_id, attribute").fetchall()
        return [
            {"asset_id": a, "attribute": at, "db_value": d, "web_answer": w,
             "verdict": None if v is None else bool(v), "skipped": bool(s), "warning": wr,
             "snippet_urls": json.loads(u)}
            for a, at, d, w, v, s, wr, u in rows
        ]

    # stage bookkeeping

    def stage_done(self, company: str, name: str) -> bool:
        if not self.exists(company):
            return False
        with self._connect(company) as con:
            row = con.execute("SELECT status FROM stages WHERE name = ?", (name,)).fetchone()
        return row is not None and row[0] == "done"

    def stage_row(self, company: str, name: str) -> tuple[str, dict] | None:
        """(status, detail) for a stage, or None if it never ran."""
        if not self.exists(company):
            return None
        with self._connect(company) as con:
            row = con.execute("SELECT status, detail FROM stages WHERE name = ?", (name,)).fetchone()
        return (row[0], json.loads(row[1] or "{}")) if row else None

    def stage_rows(self, company: str) -> list[tuple[str, str, dict]]:
        with self._connect(company) as con:
            rows = con.execute("SELECT name, status, detail FROM stages ORDER BY name").fetchall()
        return [(n, s, json.loads(d or "{}")) for n, s, d in rows]

    def mark_stage(self, company: str, name: str, status: str = "done", detail: str = "") -> None:
        with self._write(company) as con:
            con.execute("INSERT OR REPLACE INTO stages VALUES (?,?,?)", (name, status, detail))

    def clear_stages(self, company: str, names: Iterable[str]) -> None:
        with self._write(company) as con:
            con.executemany("DELETE FROM stages WHERE name = ?", [(n,) for n in names])

    # export

    def export(self, company: str, fmt: str, dest: str | Path | None = None) -> str:
        """Serialize cleaned rows as CSV or JSONL; written to ``dest`` when given."""
        rows = self.query_assets(company)
        if fmt == "csv":
            text = rows_to_csv(rows)
        elif fmt == "jsonl":
            text = "".join(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n" for r in rows)
        else:
            raise ValueError(f"unsupported export format {fmt!r}")
        if dest is not None:
            Path(dest).write_bytes(text.encode("utf-8"))
        return text

    def import_jsonl(self, company: str, text: str) -> list[AssetRow]:
        rows = [AssetRow.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
        self.replace_assets(company, rows)
        return self.query_assets(company)

    def snapshot(self, company: str) -> dict:
        """Deterministic dump of the database contents, for golden comparisons."""
        out = {}
        with self._connect(company) as con:
            tables = [t for (t,) in con.execute(
                "SELECT name FROM sqlite_master WHERE type='table' ORDER BY name")]
            for t in tables:
                cols = [c[1] for c in con.execute(f"PRAGMA table_info({t})")]
                rows = con.execute(f"SELECT * FROM {t} ORDER BY {', '.join(cols)}").fetchall()
                out[t] = [dict(zip(cols, r)) for r in rows]
        return out


def rows_to_csv(rows: Sequence[AssetRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(EXPORT_FIELDS)
    for r in rows:
        d = r.to_dict()
        d["source_chunk_ids"] = json.dumps(d["source_chunk_ids"])
        d["generic"] = int(d["generic"])
        w.writerow([d[k] for k in EXPORT_FIELDS])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[AssetRow]:
    out = []
    for d in csv.DictReader(io.StringIO(text, newline="")):
        d = dict(d)
        d["id"] = int(d["id"]) if d.get("id") else None
        d["source_chunk_ids"] = json.loads(d.get("source_chunk_ids") or "[]")
        d["generic"] = d.get("generic") in ("1", "true", "True")
        out.append(AssetRow.from_dict(d))
    return out
