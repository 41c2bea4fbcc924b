"""The eleven evaluation tags (M1..M11) and free-text tag-name normalization."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import IO

CATALOG_CODES = tuple(f"M{i}" for i in range(1, 12))


class CatalogError(ValueError):
    """Shipped catalog file is malformed (missing/duplicate/unknown codes)."""


@dataclass(frozen=True)
class CatalogEntry:
    code: str
    name: str
    definition: str


@dataclass(frozen=True)
class TagCatalog:
    entries: tuple[CatalogEntry, ...]

    def __post_init__(self):
        codes = [e.code for e in self.entries]
        if codes != list(CATALOG_CODES):
            raise CatalogError(f"catalog must hold exactly M1..M11 in order, got {codes}")

    def get(self, code: str) -> CatalogEntry:
        try:
            return self.entries[CATALOG_CODES.index(code)]
        except ValueError:
            raise KeyError(code) from None

    @property
    def codes(self) -> tuple[str, ...]:
        return CATALOG_CODES

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)


def load_tag_catalog(source: IO[bytes] | bytes | None = None) -> TagCatalog:
    """Load the tag catalog, defaulting to the shipped asset.

    Raises CatalogError naming the offending code on missing, extra, or
    duplicated entries.
    """
    if source is None:
        raw = resources.files("rmf.assets").joinpath("tag_catalog.json").read_bytes()
    elif isinstance(source, bytes):
        raw = source
    else:
        raw = source.read()
    rows = json.loads(raw)
    seen: dict[str, CatalogEntry] = {}
    for row in rows:
        code = row["code"]
        if code not in CATALOG_CODES:
            raise CatalogError(f"unknown tag code {code}")
        if code in seen:
            raise CatalogError(f"duplicate {code}")
        seen[code] = CatalogEntry(code=code, name=row["name"], definition=row["definition"])
    missing = [c for c in CATALOG_CODES if c not in seen]
    if missing:
        raise CatalogError(f"missing {', '.join(missing)}")
    return TagCatalog(entries=tuple(seen[c] for c in CATALOG_CODES))


def load_tag_aliases() -> dict[str, str]:
    raw = resources.files("rmf.assets").joinpath("tag_aliases.json").read_bytes()
    return json.loads(raw)


_PUNCT = re.compile(r"[?!.:]+$")
_WS = re.compile(r"\s+")


def _normalize_key(name: str) -> str:
    return _WS.sub(" ", _PUNCT.sub("", name.strip())).lower()


class UnknownTagName(ValueError):
    def __init__(self, name: str, valid: list[str]):
        self.name = name
        self.valid = valid
        super().__init__(f"unknown tag name {name!r}; valid names: {', '.join(valid)}")


def normalize_tag(name: str, aliases: dict[str, str] | None = None) -> str:
    """Map a free-text tag name (or a bare code) to its canonical M-code.

    Total over well-formed inputs: every recognized surface string maps to
    exactly one code; anything else raises UnknownTagName.
    """
    if aliases is None:
        aliases = load_tag_aliases()
    stripped = name.strip()
    if stripped.upper() in CATALOG_CODES:
        return stripped.upper()
    key = _normalize_key(name)
    if key in aliases:
        return aliases[key]
    raise UnknownTagName(name, sorted(set(aliases.values()), key=lambda c: int(c[1:])))
