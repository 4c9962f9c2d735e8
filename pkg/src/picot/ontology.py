"""Hierarchical type paths and taxonomies."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from importlib import resources

log = logging.getLogger(__name__)

_WS = re.compile(r"\s")


class MalformedType(ValueError):
    pass


class EmptyTaxonomy(ValueError):
    pass


@dataclass(frozen=True)
class TypePath:
    """A slash-delimited type such as ``/person/actor``; sorts by canonical text."""

    segments: tuple

    def __lt__(self, other):
        return self.canonical_text < other.canonical_text

    @property
    def canonical_text(self):
        return "/" + "/".join(self.segments)

    @property
    def level(self):
        return len(self.segments)

    @property
    def is_coarse(self):
        return len(self.segments) == 1

    @property
    def leaf(self):
        return self.segments[-1]

    def prefix(self, level):
        return TypePath(self.segments[:level])

    def __str__(self):
        return self.canonical_text


def parse_type(text):
    """Parse and normalize (trim, lowercase) a type path."""
    if not isinstance(text, str):
        raise MalformedType(f"type must be a string, got {type(text).__name__}")
    norm = text.strip().lower()
    if not norm.startswith("/"):
        raise MalformedType(f"{text!r}: missing leading '/'")
    segments = tuple(norm[1:].split("/"))
    for seg in segments:
        if not seg:
            raise MalformedType(f"{text!r}: empty segment")
        if _WS.search(seg):
            raise MalformedType(f"{text!r}: whitespace inside a segment")
    return TypePath(segments)


def coarse_of(t):
    return t if t.is_coarse else TypePath(t.segments[:1])


@dataclass(frozen=True)
class TypeWarning:
    kind: str  # "MissingAncestor" | "UnknownType"
    type: TypePath

    def __str__(self):
        return f"{self.kind}({self.type})"


def MissingAncestor(t):  # noqa: N802
    return TypeWarning("MissingAncestor", t)


def UnknownType(t):  # noqa: N802
    return TypeWarning("UnknownType", t)


class Taxonomy:
    """An immutable set of type paths.

    Closure violations (a level-k type whose level-(k-1) prefix is absent) are
    collected in ``warnings`` rather than raised.
    """

    def __init__(self, types):
        types = list(types)
        seen = set()
        for t in types:
            if t in seen:
                raise ValueError(f"duplicate type {t}")
            seen.add(t)
        self._types = frozenset(seen)
        self._order = tuple(sorted(seen))
        self.warnings = tuple(
            MissingAncestor(t.prefix(t.level - 1))
            for t in self._order
            if t.level > 1 and t.prefix(t.level - 1) not in self._types
        )

    @property
    def types(self):
        return self._types

    @property
    def ordered(self):
        """Types sorted by canonical text; this is the predictor's output order."""
        return self._order

    @property
    def max_depth(self):
        return max((t.level for t in self._types), default=0)

    def index_of(self, t):
        return self._order.index(t)

    def coarse_types(self):
        return tuple(t for t in self._order if t.is_coarse)

    def fine_types(self):
        return tuple(t for t in self._order if not t.is_coarse)

    def __contains__(self, t):
        return t in self._types

    def __len__(self):
        return len(self._types)

    def __iter__(self):
        return iter(self._order)

    def __eq__(self, other):
        return isinstance(other, Taxonomy) and self._types == other._types

    def __hash__(self):
        return hash(self._types)

    def to_text(self):
        return "".join(t.canonical_text + "\n" for t in self._order)


def drop_other(t):
    """Re-root ``/other/...`` paths one level up; ``/other`` itself maps to None."""
    if t.segments[0] != "other":
        return t
    if t.level == 1:
        return None
    return TypePath(t.segments[1:])


def parse_taxonomy(text, drop_other_type=True):
    types = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            t = parse_type(line)
        except MalformedType as exc:
            raise MalformedType(f"line {lineno}: {exc}") from None
        if drop_other_type:
            t = drop_other(t)
            if t is None:
                continue
        if t in seen:
            if drop_other_type:
                continue
            raise ValueError(f"line {lineno}: duplicate type {t}")
        seen.add(t)
        types.append(t)
    return Taxonomy(types)


def load_taxonomy(path, drop_other_type=True):
    with open(path, encoding="utf-8") as fh:
        return parse_taxonomy(fh.read(), drop_other_type)


def bundled_taxonomy(name):
    """Load one of the bundled fixture ontologies: ``bbn``, ``ontonotes`` or ``figer``.

    OntoNotes is loaded with the ``/other`` branch dropped and its children
    promoted, which yields the two-level view used for training.
    """
    text = resources.files("picot.data").joinpath(f"{name}_types.txt").read_text("utf-8")
    return parse_taxonomy(text, drop_other_type=(name == "ontonotes"))


def taxonomy_stats(tax):
    """Return (coarse_count, fine_count, fine/coarse rounded to one decimal)."""
    if not len(tax):
        raise EmptyTaxonomy("taxonomy has no types")
    coarse = sum(1 for t in tax.types if t.is_coarse)
    fine = len(tax) - coarse
    ratio = round(fine / coarse, 1) if coarse else 0.0
    return coarse, fine, ratio


def validate_example_types(tax, types):
    """Advisory checks on one gold set; never mutates it."""
    out = []
    present = set(types)
    for t in sorted(present):
        if t not in tax:
            out.append(UnknownType(t))
    ancestors = {t.prefix(k) for t in present for k in range(1, t.level)}
    missing = sorted(ancestors - present)
    out.extend(MissingAncestor(c) for c in missing)
    return out
