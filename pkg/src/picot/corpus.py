"""Annotated examples, type descriptions, and the synthetic corpus generator."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from picot.ontology import (
    MalformedType,
    Taxonomy,
    TypePath,
    coarse_of,
    drop_other,
    load_taxonomy,
    parse_type,
    validate_example_types,
)

log = logging.getLogger(__name__)


class ParseError(ValueError):
    def __init__(self, msg, line=None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


class SpanError(ParseError):
    pass


class DuplicateId(ParseError):
    pass


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    id: str
    tokens: tuple
    entity_start: int
    entity_end: int
    gold_types: frozenset

    def __post_init__(self):
        if not self.tokens:
            raise SpanError(f"{self.id}: empty sentence")
        if not 0 <= self.entity_start < self.entity_end <= len(self.tokens):
            raise SpanError(
                f"{self.id}: span [{self.entity_start}, {self.entity_end}) outside {len(self.tokens)} tokens"
            )
        if not self.gold_types:
            raise ParseError(f"{self.id}: empty gold type set")

    @property
    def entity_tokens(self):
        return self.tokens[self.entity_start:self.entity_end]

    @property
    def fine_types(self):
        return frozenset(t for t in self.gold_types if not t.is_coarse)

    @property
    def coarse_types(self):
        return frozenset(coarse_of(t) for t in self.gold_types)

    def to_record(self):
        return {
            "id": self.id,
            "tokens": list(self.tokens),
            "entity_start": self.entity_start,
            "entity_end": self.entity_end,
            "types": [t.canonical_text for t in sorted(self.gold_types)],
        }


@dataclass(frozen=True)
class TypeDescription:
    type: TypePath
    descriptions: tuple  # of token tuples

    def __post_init__(self):
        if not self.descriptions or any(not d for d in self.descriptions):
            raise ParseError(f"{self.type}: descriptions must be non-empty token lists")

    def to_record(self):
        return {"type": self.type.canonical_text, "descriptions": [list(d) for d in self.descriptions]}


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("record is not an object", lineno)
            yield lineno, rec


def _str_list(value, what, lineno):
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ParseError(f"{what} must be a list of strings", lineno)
    return value


def _types(raw, lineno, drop_other_type):
    out = set()
    for text in _str_list(raw, "types", lineno):
        try:
            t = parse_type(text)
        except MalformedType as exc:
            raise ParseError(str(exc), lineno) from None
        if drop_other_type:
            t = drop_other(t)
            if t is None:
                continue
        out.add(t)
    return frozenset(out)


def load_examples(path, tax, drop_other_type=True):
    """Read an examples JSONL file in file order.

    Types outside ``tax`` or gold sets that are not ancestor-closed are logged
    as warnings; gold labels are never repaired.
    """
    examples = []
    ids = set()
    for lineno, rec in _read_jsonl(path):
        for key in ("tokens", "entity_start", "entity_end", "types"):
            if key not in rec:
                raise ParseError(f"missing field {key!r}", lineno)
        ex_id = rec.get("id", f"line-{lineno}")
        if not isinstance(ex_id, str):
            raise ParseError("id must be a string", lineno)
        if ex_id in ids:
            raise DuplicateId(f"duplicate id {ex_id!r}", lineno)
        tokens = _str_list(rec["tokens"], "tokens", lineno)
        start, end = rec["entity_start"], rec["entity_end"]
        if not (isinstance(start, int) and isinstance(end, int)) or isinstance(start, bool):
            raise ParseError("entity_start/entity_end must be integers", lineno)
        if not 0 <= start < end <= len(tokens):
            raise SpanError(f"span [{start}, {end}) outside {len(tokens)} tokens", lineno)
        gold = _types(rec["types"], lineno, drop_other_type)
        if not gold:
            raise ParseError("no gold types", lineno)
        for w in validate_example_types(tax, gold):
            log.warning("%s line %d (%s): %s", os.path.basename(str(path)), lineno, ex_id, w)
        ids.add(ex_id)
        examples.append(Example(ex_id, tuple(tokens), start, end, gold))
    return examples


def load_descriptions(path, tax):
    out = []
    for lineno, rec in _read_jsonl(path):
        if "type" not in rec or "descriptions" not in rec:
            raise ParseError("record needs 'type' and 'descriptions'", lineno)
        try:
            t = parse_type(rec["type"])
        except (MalformedType, AttributeError) as exc:
            raise ParseError(str(exc), lineno) from None
        descs = rec["descriptions"]
        if not isinstance(descs, list) or not descs:
            raise ParseError("descriptions must be a non-empty list", lineno)
        toks = tuple(tuple(_str_list(d, "description", lineno)) for d in descs)
        if any(not d for d in toks):
            raise ParseError("empty description", lineno)
        if t not in tax:
            log.warning("descriptions line %d: UnknownType(%s)", lineno, t)
        out.append(TypeDescription(t, toks))
    return out


def write_examples(path, examples):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record()) + "\n")


def write_descriptions(path, descs):
    with open(path, "w", encoding="utf-8") as fh:
        for d in descs:
            fh.write(json.dumps(d.to_record()) + "\n")


SPLITS = ("train", "dev", "test")


def write_corpus(out_dir, corpus):
    os.makedirs(out_dir, exist_ok=True)
    for split in SPLITS:
        write_examples(os.path.join(out_dir, f"{split}.jsonl"), getattr(corpus, split))
    with open(os.path.join(out_dir, "taxonomy.txt"), "w", encoding="utf-8") as fh:
        fh.write(corpus.taxonomy.to_text())
    write_descriptions(os.path.join(out_dir, "descriptions.jsonl"), corpus.descriptions)


def load_corpus(data_dir, drop_other_type=True):
    """Load ``train/dev/test.jsonl``, ``taxonomy.txt`` and optional ``descriptions.jsonl``."""
    tax = load_taxonomy(os.path.join(data_dir, "taxonomy.txt"), drop_other_type)
    splits = [load_examples(os.path.join(data_dir, f"{s}.jsonl"), tax, drop_other_type) for s in SPLITS]
    desc_path = os.path.join(data_dir, "descriptions.jsonl")
    descs = load_descriptions(desc_path, tax) if os.path.exists(desc_path) else []
    return Corpus(*splits, tax, descs)


# -- synthetic corpora ----------------------------------------------------------

_COARSE_NAMES = (
    "person", "location", "organization", "event", "product", "art", "building",
    "vehicle", "animal", "food", "award", "language", "law", "disease", "game",
    "software", "weapon", "religion", "instrument", "currency",
)
_FINE_NAMES = (
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota",
    "kappa", "lambda", "mu", "nu", "xi", "omicron", "pi", "rho", "sigma",
)
_FILLER = (
    "the", "said", "on", "at", "with", "from", "report", "today", "after", "before",
    "new", "old", "city", "year", "group", "local", "many", "few", "during", "near",
    "week", "news", "told", "also", "more", "than", "public", "official", "early", "late",
)
_N_NAMES = 60
_N_DISTRACTORS = 24


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 1
    n_coarse: int = 2
    n_fine_per_coarse: int = 3
    n_train: int = 600
    n_dev: int = 100
    n_test: int = 100
    cue_strength: float = 1.0

    def validate(self):
        counts = (self.n_coarse, self.n_fine_per_coarse, self.n_train, self.n_dev, self.n_test)
        if any(not isinstance(c, int) or isinstance(c, bool) or c < 1 for c in counts):
            raise InvalidSpec("all counts must be integers >= 1")
        if not 0.0 <= self.cue_strength <= 1.0:
            raise InvalidSpec("cue_strength must lie in [0, 1]")
        if self.n_coarse > len(_COARSE_NAMES) or self.n_fine_per_coarse > len(_FINE_NAMES):
            raise InvalidSpec(
                f"at most {len(_COARSE_NAMES)} coarse and {len(_FINE_NAMES)} fine types per coarse"
            )
        n_fine = self.n_coarse * self.n_fine_per_coarse
        if min(self.n_train, self.n_dev, self.n_test) < n_fine:
            raise InvalidSpec(f"every split needs at least {n_fine} examples to cover each fine type")
        return self

    @classmethod
    def from_dict(cls, raw):
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidSpec(f"unknown spec fields: {sorted(unknown)}")
        return cls(**raw).validate()


@dataclass(frozen=True)
class Corpus:
    train: list
    dev: list
    test: list
    taxonomy: Taxonomy
    descriptions: list = field(default_factory=list)


def coarse_cue(t):
    return f"ccue_{coarse_of(t).leaf}"


def fine_cue(t):
    return f"fcue_{t.leaf}"


def _synth_types(spec):
    tree = {}
    for i in range(spec.n_coarse):
        c = _COARSE_NAMES[i]
        tree[TypePath((c,))] = [TypePath((c, f"{c}_{_FINE_NAMES[j]}")) for j in range(spec.n_fine_per_coarse)]
    return tree


def _synth_example(rng, ex_id, fine, cue_strength):
    words = [str(w) for w in rng.choice(_FILLER, size=int(rng.integers(4, 9)))]
    if rng.random() < cue_strength:
        extra = [coarse_cue(fine), fine_cue(fine)]
    else:
        extra = [f"noise{int(k)}" for k in rng.integers(0, _N_DISTRACTORS, size=2)]
    for w in extra:
        words.insert(int(rng.integers(0, len(words) + 1)), w)
    entity = [f"name{int(k)}" for k in rng.integers(0, _N_NAMES, size=int(rng.integers(1, 3)))]
    pos = int(rng.integers(0, len(words) + 1))
    tokens = words[:pos] + entity + words[pos:]
    return Example(ex_id, tuple(tokens), pos, pos + len(entity), frozenset({coarse_of(fine), fine}))


def generate_synthetic(spec):
    """Build a deterministic corpus whose sentences carry type cue tokens.

    Each fine type owns one cue token and shares one coarse cue token with its
    siblings. With probability ``cue_strength`` an example carries both cues for
    its gold type; otherwise it carries two label-independent distractors.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    tree = _synth_types(spec)
    fines = [f for c in tree for f in tree[c]]
    splits = []
    for name, n in zip(SPLITS, (spec.n_train, spec.n_dev, spec.n_test)):
        labels = fines + [fines[int(k)] for k in rng.integers(0, len(fines), size=n - len(fines))]
        labels = [labels[int(k)] for k in rng.permutation(n)]
        splits.append([_synth_example(rng, f"{name}-{k:05d}", f, spec.cue_strength) for k, f in enumerate(labels)])
    tax = Taxonomy(list(tree) + fines)
    descs = [
        TypeDescription(
            f,
            (
                ("kind", "of", coarse_of(f).leaf, "marked", "by", fine_cue(f)),
                ("a", coarse_of(f).leaf, "often", "seen", "with", coarse_cue(f), fine_cue(f)),
            ),
        )
        for f in fines
    ]
    return Corpus(*splits, tax, descs)
