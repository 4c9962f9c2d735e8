"""Prompt-guided expressions: type-scarce, type-rich, and description-rich.

Layouts (``BEFORE_PROMPT``; ``AFTER_CLS`` moves [ENT] to index 1 instead)::

    type-scarce   [CLS] sentence [ENT] entity is a [MASK] . [SEP]
    type-rich     [CLS] sentence [ENT] entity is an actor . [SEP]
    description   [CLS] [VENT] description [ENT] [VENT] is an actor . [SEP]
"""

from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass

from picot.ontology import coarse_of

log = logging.getLogger(__name__)

PAD, UNK, CLS, SEP, ENT, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[ENT]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, ENT, MASK)
VENT = "[VENT]"
PROMPT_WORDS = ("is", "a", "an", "and", ".")
DEFAULT_MAX_LEN = 128


class NoFineType(ValueError):
    pass


class ExprKind(enum.Enum):
    TYPE_SCARCE = "ts"
    TYPE_RICH = "tr"
    DESCRIPTION_RICH = "desc"


class EntPosition(enum.Enum):
    BEFORE_PROMPT = "before-prompt"
    AFTER_CLS = "after-cls"


class Vocabulary:
    """Token <-> id map; ids 0-5 are the special tokens in ``SPECIALS`` order."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate vocabulary tokens")
        self.tokens = tuple(tokens)
        self.token_to_id = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.token_to_id

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token):
        return self.token_to_id.get(token, 1)

    def ids(self, tokens):
        return [self.token_to_id.get(t, 1) for t in tokens]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    @property
    def pad_id(self):
        return 0

    @property
    def unk_id(self):
        return 1

    @property
    def cls_id(self):
        return 2

    @property
    def sep_id(self):
        return 3

    @property
    def ent_id(self):
        return 4

    @property
    def mask_id(self):
        return 5


def type_phrase(types):
    """Words naming ``types``: each leaf segment split on "_", joined by "and"."""
    words = []
    for t in sorted(types):
        if words:
            words.append("and")
        words.extend(w for w in t.leaf.split("_") if w)
    return words


def article_for(words):
    return "an" if words and words[0][:1] in "aeiou" else "a"


def build_vocab(corpus, descs, tax, min_count=1):
    if not corpus:
        raise ValueError("build_vocab needs a non-empty corpus")
    counts = Counter(tok for ex in corpus for tok in ex.tokens)
    keep = {t for t, c in counts.items() if c >= min_count}
    forced = {VENT, *PROMPT_WORDS}
    for t in tax:
        forced.update(type_phrase([t]))
    for d in descs:
        forced.update(type_phrase([d.type]))
        for desc in d.descriptions:
            forced.update(desc)
            counts.update(desc)
    words = (keep | forced) - set(SPECIALS)
    ordered = sorted(words, key=lambda t: (-counts.get(t, 0), t))
    return Vocabulary(SPECIALS + tuple(ordered))


@dataclass(frozen=True)
class Expression:
    kind: ExprKind
    token_ids: tuple
    cls_pos: int
    ent_pos: int
    mask_pos: int | None
    source_example_id: str | None
    carried_fine_types: frozenset
    carried_coarse_types: frozenset
    key: str  # unique within a batch; fixes summation order in the contrast losses

    def __len__(self):
        return len(self.token_ids)


def _assemble(vocab, kind, lead, entity, tail, ent_position, max_len):
    """Lay out [CLS] lead [ENT] entity tail [SEP], truncating ``lead`` from the left."""
    fixed = 3 + len(entity) + len(tail)
    if fixed + len(lead) > max_len:
        lead = lead[len(lead) - max(0, max_len - fixed):]
    if ent_position is EntPosition.AFTER_CLS:
        toks = [CLS, ENT, *lead, *entity, *tail, SEP]
        ent_pos = 1
    else:
        toks = [CLS, *lead, ENT, *entity, *tail, SEP]
        ent_pos = 1 + len(lead)
    mask_pos = toks.index(MASK) if kind is ExprKind.TYPE_SCARCE else None
    return vocab.ids(toks), ent_pos, mask_pos


def _sentence_parts(ex):
    # the whole sentence precedes [ENT]; the entity mention is repeated after it
    return list(ex.tokens), list(ex.entity_tokens)


def build_type_scarce(ex, vocab, ent_position=EntPosition.BEFORE_PROMPT, max_len=DEFAULT_MAX_LEN):
    lead, entity = _sentence_parts(ex)
    ids, ent_pos, mask_pos = _assemble(
        vocab, ExprKind.TYPE_SCARCE, lead, entity, ["is", "a", MASK, "."], ent_position, max_len
    )
    return Expression(
        ExprKind.TYPE_SCARCE, tuple(ids), 0, ent_pos, mask_pos, ex.id,
        ex.fine_types, ex.coarse_types, f"{ex.id}\x00ts",
    )


def build_type_rich(ex, vocab, ent_position=EntPosition.BEFORE_PROMPT, max_len=DEFAULT_MAX_LEN):
    fine = ex.fine_types
    if not fine:
        raise NoFineType(f"{ex.id}: gold set has no fine-grained type")
    phrase = type_phrase(fine)
    lead, entity = _sentence_parts(ex)
    ids, ent_pos, _ = _assemble(
        vocab, ExprKind.TYPE_RICH, lead, entity, ["is", article_for(phrase), *phrase, "."], ent_position, max_len
    )
    return Expression(
        ExprKind.TYPE_RICH, tuple(ids), 0, ent_pos, None, ex.id,
        fine, frozenset(coarse_of(t) for t in fine), f"{ex.id}\x00tr",
    )


def build_description_rich(desc, vocab, ent_position=EntPosition.BEFORE_PROMPT, max_len=DEFAULT_MAX_LEN):
    phrase = type_phrase([desc.type])
    tail = ["is", article_for(phrase), *phrase, "."]
    fine = frozenset([desc.type])
    out = []
    for k, words in enumerate(desc.descriptions):
        if ent_position is EntPosition.AFTER_CLS:
            lead, entity = [VENT, *words, VENT], []
        else:
            lead, entity = [VENT, *words], [VENT]
        ids, ent_pos, _ = _assemble(vocab, ExprKind.DESCRIPTION_RICH, lead, entity, tail, ent_position, max_len)
        out.append(Expression(
            ExprKind.DESCRIPTION_RICH, tuple(ids), 0, ent_pos, None, None,
            fine, frozenset({coarse_of(desc.type)}), f"\x01desc{desc.type.canonical_text}\x00{k}",
        ))
    return out


def batch_expressions(batch, descs_by_type, vocab, ent_position, use_type_rich, use_descriptions,
                      max_len=DEFAULT_MAX_LEN):
    """All expressions for one training batch: type-scarce first, then type-rich, then descriptions.

    Description expressions are built for exactly the fine types present in the
    batch's gold sets.
    """
    scarce = [build_type_scarce(ex, vocab, ent_position, max_len) for ex in batch]
    rich = []
    if use_type_rich:
        for ex in batch:
            try:
                rich.append(build_type_rich(ex, vocab, ent_position, max_len))
            except NoFineType as exc:
                log.warning("skipping type-rich expression: %s", exc)
    extra = []
    if use_descriptions:
        present = sorted({t for ex in batch for t in ex.fine_types})
        for t in present:
            if t in descs_by_type:
                extra.extend(build_description_rich(descs_by_type[t], vocab, ent_position, max_len))
    return scarce, rich, extra
