"""Country gazetteer lookups."""

from __future__ import annotations

import csv
import io
import re
from functools import lru_cache
from importlib import resources

# Phrases that contain a country name but do not refer to that country.
_BLOCKED = ("New Mexico", "Gulf of Mexico", "New Guinea", "New South Wales", "New England")
_EXTRA = {"Niger Delta": "Nigeria"}


def read_alias_csv(text: str) -> dict[str, str]:
    out = {}
    for row in csv.DictReader(io.StringIO(text)):
        alias = (row.get("alias") or "").strip()
        if alias:
            out[alias] = (row.get("canonical") or "").strip()
    return out


@lru_cache(maxsize=1)
def gazetteer() -> dict[str, str]:
    text = resources.files("assetpipe").joinpath("data/gazetteer.csv").read_text(encoding="utf-8")
    table = read_alias_csv(text)
    table.update(_EXTRA)
    return table


def _case_sensitive(alias: str) -> bool:
    # abbreviations like "US", "U.S.", "DRC" must not match ordinary words
    letters = [c for c in alias if c.isalpha()]
    return "." in alias or (len(letters) <= 4 and all(c.isupper() for c in letters))


@lru_cache(maxsize=1)
def _pattern() -> re.Pattern:
    names = list(gazetteer()) + list(_BLOCKED)
    names.sort(key=lambda n: (-len(n), n))
    alts = []
    for n in names:
        body = re.escape(n)
        alts.append(body if _case_sensitive(n) else f"(?i:{body})")
    return re.compile(r"(?<![\w.])(?:" + "|".join(alts) + r")(?![\w$])")


@lru_cache(maxsize=1)
def _lookup() -> dict[str, str | None]:
    table: dict[str, str | None] = {}
    for alias, canon in gazetteer().items():
        table[alias] = canon
        if not _case_sensitive(alias):
            table.setdefault(alias.lower(), canon)
    for b in _BLOCKED:
        table[b.lower()] = None
    return table


def find_countries(text: str) -> list[str]:
    """Canonical country names mentioned in ``text``, in order of first mention."""
    found: list[str] = []
    look = _lookup()
    for m in _pattern().finditer(text or ""):
        hit = m.group(0)
        canon = look.get(hit, look.get(hit.lower()))
        if canon and canon not in found:
            found.append(canon)
    return found


def canonical_countries() -> frozenset[str]:
    return frozenset(gazetteer().values())
