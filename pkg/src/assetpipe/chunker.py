"""Sentence-aligned token windows over filing text.

A token is a whitespace-delimited word. Chunks pack whole sentences up to
``max_tokens``; each new chunk starts at the sentence holding the token
``overlap_tokens`` before the previous chunk's end, so overlap is a lower
bound rather than an exact count. Sentences longer than the window are cut
at the token limit.
"""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass

from .ingest import has_markup, strip_markup

_TOKEN = re.compile(r"\S+")
_BOUNDARY = re.compile(r"[.!?]+[\"'’”)\]]*(\s+)")

ABBREVIATIONS = frozenset({
    "inc", "corp", "co", "ltd", "llc", "l.l.c", "plc", "u.s", "u.s.a", "u.k", "e.g", "i.e",
    "mr", "mrs", "ms", "dr", "st", "jr", "sr", "no", "nos", "vs", "approx", "mt", "ft", "dept",
    "s.a", "n.v", "s.a.b", "c.v", "de", "est", "fig",
})
_INITIAL = re.compile(r"^[A-Z]\.$")
_CAPWORD = re.compile(r"^[A-Z][a-z]+[,;]?$")


@dataclass(frozen=True)
class ChunkerConfig:
    max_tokens: int = 1024
    overlap_tokens: int = 20

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")
        if not 0 <= self.overlap_tokens < self.max_tokens:
            raise ValueError(
                f"overlap_tokens must be in [0, max_tokens), got {self.overlap_tokens}"
            )


@dataclass
class Chunk:
    filing_id: str
    seq: int
    text: str
    token_count: int
    start_token: int
    kind: str = "text"

    @property
    def id(self) -> str:
        tag = "t" if self.kind == "table" else ""
        return f"{self.filing_id}:{tag}{self.seq:04d}"

    @property
    def end_token(self) -> int:
        """Exclusive end offset in the filing token stream."""
        return self.start_token + self.token_count


def _prepare(text: str) -> str:
    return strip_markup(text) if has_markup(text) else text


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(_prepare(text))


def _guarded(text: str, punct_start: int) -> bool:
    """True when the period ending at punct_start closes an abbreviation or initial."""
    if text[punct_start] != ".":
        return False
    word_start = punct_start
    while word_start > 0 and not text[word_start - 1].isspace():
        word_start -= 1
    word = text[word_start:punct_start + 1]
    stem = word.rstrip(".").lstrip("(\"'").lower()
    if stem in ABBREVIATIONS:
        return True
    if not _INITIAL.match(word):
        return False
    before = text[:word_start].split()
    after = text[punct_start + 1:].split(maxsplit=1)
    prev_tok = before[-1] if before else ""
    next_tok = after[0] if after else ""
    if _INITIAL.match(next_tok) or _INITIAL.match(prev_tok):
        return True
    # middle initial between two capitalised names: "John A. Smith"
    return bool(_CAPWORD.match(prev_tok) and _CAPWORD.match(next_tok))


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Character spans [start, end) that partition ``text``.

    A boundary is terminal punctuation followed by whitespace; the whitespace
    stays with the preceding sentence.
    """
    if not text:
        return []
    spans = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        if _guarded(text, m.start()):
            continue
        end = m.end()
        if end >= len(text):
            break
        spans.append((start, end))
        start = end
    spans.append((start, len(text)))
    return spans


def _units(text: str, max_tokens: int) -> tuple[list[re.Match], list[tuple[int, int]]]:
    toks = list(_TOKEN.finditer(text))
    units = []
    ti = 0
    for _, end in split_sentences(text):
        first = ti
        while ti < len(toks) and toks[ti].start() < end:
            ti += 1
        # hard-split sentences that exceed the window
        for s in range(first, ti, max_tokens):
            units.append((s, min(s + max_tokens, ti)))
    return toks, units


def chunk(text: str, config: ChunkerConfig = ChunkerConfig(), filing_id: str = "") -> list[Chunk]:
    text = _prepare(text)
    toks, units = _units(text, config.max_tokens)
    starts = [u[0] for u in units]
    chunks: list[Chunk] = []
    i = 0
    while i < len(units):
        j = i
        while j < len(units) and units[j][1] - units[i][0] <= config.max_tokens:
            j += 1
        ts, te = units[i][0], units[j - 1][1]
        chunks.append(Chunk(
            filing_id=filing_id,
            seq=len(chunks),
            text=text[toks[ts].start():toks[te - 1].end()],
            token_count=te - ts,
            start_token=ts,
        ))
        if j == len(units):
            break
        target = max(te - config.overlap_tokens, 0)
        k = bisect.bisect_right(starts, target) - 1
        if k <= i or units[j][1] - units[k][0] > config.max_tokens:
            # no sentence start at or before the target lets the window move
            # forward; take the earliest later start that does
            k = max(k + 1, i + 1)
            while units[j][1] - units[k][0] > config.max_tokens:
                k += 1
        i = k
    return chunks
