"""Load 10-K submissions, strip markup and pull tables out as structured rows."""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

import requests
from bs4 import BeautifulSoup, Comment, Declaration, Doctype, NavigableString, ProcessingInstruction

logger = logging.getLogger(__name__)

# Dropped with their content. ix:header holds hidden inline-XBRL facts.
_DROP_TAGS = ["script", "style", "nav", "noscript", "head", "template", "ix:header"]
_BLOCK_TAGS = {
    "address", "article", "aside", "blockquote", "br", "caption", "dd", "div", "dl", "dt",
    "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6",
    "header", "hr", "li", "main", "ol", "p", "pre", "section", "table", "tbody", "tfoot",
    "thead", "tr", "ul", "document", "text", "page", "center",
}
_CELL_TAGS = {"td", "th"}

_INLINE_WS = re.compile(r"[^\S\n]+")
_TAG_START = re.compile(r"<(?=[A-Za-z/!?])")
_HAS_TAG = re.compile(r"<[A-Za-z/!?]")

_HEADER_FIELDS = {
    "form_type": r"CONFORMED SUBMISSION TYPE",
    "filing_date": r"FILED AS OF DATE",
    "company_name": r"COMPANY CONFORMED NAME",
    "cik": r"CENTRAL INDEX KEY",
    "ticker": r"(?:TICKER|TRADING SYMBOL)",
    "period": r"CONFORMED PERIOD OF REPORT",
}
_SEC_HEADER_BLOCK = re.compile(r"<(SEC|IMS)-HEADER>.*?</\1-HEADER>", re.S | re.I)
# SGML envelope lines around each document, e.g. "<TYPE>10-K"
_ENVELOPE_LINE = re.compile(r"^[ \t]*<(SEC-DOCUMENT|IMS-DOCUMENT|TYPE|SEQUENCE|FILENAME|DESCRIPTION)>.*$", re.M | re.I)


class FilingEncodingError(UnicodeError):
    """Raised when a filing's bytes are not valid text."""

    def __init__(self, source: str, offset: int, reason: str):
        self.source = source
        self.offset = offset
        super().__init__(f"{source}: undecodable input at byte {offset}: {reason}")


@dataclass
class TableRecord:
    table_index: int
    header: list[str]
    rows: list[list[str]]
    linearized: list[str]
    padded_rows: list[int] = field(default_factory=list)
    header_padded: bool = False

    def as_text(self) -> str:
        return "\n".join(self.linearized)


@dataclass
class Filing:
    id: str
    ticker: str
    cik: str
    form_type: str
    filing_date: date | None
    body: str
    tables: list[TableRecord]
    source_uri: str
    company_name: str = ""

    @property
    def date_known(self) -> bool:
        return self.filing_date is not None


def _single_pass(html: str) -> str:
    soup = BeautifulSoup(html, "html.parser")
    for name in _DROP_TAGS:
        for tag in soup.find_all(name):
            tag.decompose()
    for node in soup.find_all(string=lambda s: isinstance(s, (Comment, Doctype, Declaration, ProcessingInstruction))):
        node.extract()
    for tag in soup.find_all(True):
        if tag.name in _BLOCK_TAGS:
            tag.insert_before(NavigableString("\n"))
            tag.append(NavigableString("\n"))
        elif tag.name in _CELL_TAGS:
            tag.append(NavigableString(" "))
    text = soup.get_text()
    # keep leftovers such as a decoded "&lt;p&gt;" from reading as markup
    text = _TAG_START.sub("< ", text)
    lines = (_INLINE_WS.sub(" ", ln).strip() for ln in text.replace("\r", "\n").split("\n"))
    return "\n".join(ln for ln in lines if ln)


def has_markup(text: str) -> bool:
    return bool(_HAS_TAG.search(text))


def strip_markup(html: str) -> str:
    """Plain text from HTML: tags and script/style/nav content removed,
    entities decoded, whitespace runs collapsed, block boundaries as newlines.

    Runs to a fixed point so double-escaped input is fully decoded and the
    result is stable under a second call.
    """
    text = html
    for _ in range(8):
        nxt = _single_pass(text)
        if nxt == text:
            break
        text = nxt
    return text


def _cell_text(cell) -> str:
    return _INLINE_WS.sub(" ", cell.get_text(" ")).strip()


def linearize_row(header: list[str], row: list[str]) -> str:
    """"H1: c1; H2: c2" ; empty cells are left out, unlabeled cells stand alone."""
    parts = []
    for h, c in zip(header, row):
        if not c:
            continue
        parts.append(f"{h}: {c}" if h else c)
    return "; ".join(parts)


def extract_tables(html: str) -> list[TableRecord]:
    """One TableRecord per <table>; the first row (from <thead> when present)
    is the header. Ragged rows are padded, fully empty rows skipped."""
    if not html or "<" not in html:
        return []
    soup = BeautifulSoup(html, "html.parser")
    out = []
    for table in soup.find_all("table"):
        trs = [tr for tr in table.find_all("tr") if tr.find_parent("table") is table]
        thead = table.find("thead")
        if thead is not None and thead.find_parent("table") is table:
            # header rows first regardless of source order
            trs.sort(key=lambda tr: 0 if tr.find_parent("thead") is thead else 1)
        grid = []
        for tr in trs:
            cells = [_cell_text(c) for c in tr.find_all(["td", "th"], recursive=False)]
            if any(cells):
                grid.append(cells)
        if not grid:
            continue
        header, body = grid[0], grid[1:]
        width = max(len(r) for r in grid)
        header_padded = len(header) < width
        header = header + [f"Column {i + 1}" for i in range(len(header), width)]
        padded = []
        rows = []
        for i, r in enumerate(body):
            if len(r) < width:
                padded.append(i)
                r = r + [""] * (width - len(r))
            rows.append(r)
        out.append(TableRecord(
            table_index=len(out),
            header=header,
            rows=rows,
            linearized=[linearize_row(header, r) for r in rows],
            padded_rows=padded,
            header_padded=header_padded,
        ))
    return out


def parse_header(text: str) -> dict[str, str]:
    """EDGAR "CONFORMED" header fields found near the top of a submission."""
    head = text[:20000]
    found = {}
    for key, label in _HEADER_FIELDS.items():
        m = re.search(rf"^\s*{label}:\s*(.+?)\s*$", head, re.M | re.I)
        if m:
            found[key] = m.group(1).strip()
    return found


def _parse_date(value: str | None) -> date | None:
    if not value:
        return None
    for fmt in ("%Y%m%d", "%Y-%m-%d", "%m/%d/%Y"):
        try:
            return datetime.strptime(value.strip(), fmt).date()
        except ValueError:
            continue
    return None


def _read_source(source: str | Path, timeout: float) -> bytes:
    s = str(source)
    if s.startswith(("http://", "https://")):
        try:
            resp = requests.get(s, timeout=timeout, headers={"User-Agent": "assetpipe/0.1"})
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise OSError(f"cannot fetch {s}: {exc}") from exc
        return resp.content
    return Path(s).read_bytes()


def _decode(raw: bytes, source: str) -> str:
    nul = raw.find(b"\x00")
    if nul != -1:
        raise FilingEncodingError(source, nul, "NUL byte in text document")
    try:
        return raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise FilingEncodingError(source, exc.start, exc.reason) from exc


def load_filing(
    source: str | Path,
    *,
    ticker: str | None = None,
    cik: str | None = None,
    form_type: str | None = None,
    filing_date: str | None = None,
    timeout: float = 30.0,
) -> Filing:
    """Read a raw EDGAR submission (text or HTML) from a path or URL.

    Keyword arguments override header metadata. A missing form type is
    reported as "UNKNOWN"; an unparseable date as filing_date=None.
    """
    raw = _read_source(source, timeout)
    text = _decode(raw, str(source))
    meta = parse_header(text)
    content = _SEC_HEADER_BLOCK.sub("", text)
    if not _SEC_HEADER_BLOCK.search(text) and meta:
        # plain-text header lines before the first document
        first_doc = re.search(r"<DOCUMENT>|<html", content, re.I)
        if first_doc:
            content = content[first_doc.start():]
    content = _ENVELOPE_LINE.sub("", content)
    body = strip_markup(content)
    tables = extract_tables(content)

    f_date = _parse_date(filing_date or meta.get("filing_date"))
    if f_date is None:
        logger.warning("%s: filing date unknown", source)
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()[:12]
    tick = (ticker if ticker is not None else meta.get("ticker", "")).upper()
    the_cik = cik if cik is not None else meta.get("cik", "")
    filing_id = f"{tick or the_cik or 'filing'}-{f_date.isoformat() if f_date else 'nodate'}-{digest}"
    return Filing(
        id=filing_id,
        ticker=tick,
        cik=the_cik,
        form_type=(form_type or meta.get("form_type") or "UNKNOWN").strip(),
        filing_date=f_date,
        body=body,
        tables=tables,
        source_uri=str(source),
        company_name=meta.get("company_name", ""),
    )
