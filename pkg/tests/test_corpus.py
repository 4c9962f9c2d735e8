import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import majority_macro_f1
from picot.corpus import (
    DuplicateId, InvalidSpec, ParseError, SpanError, SynthSpec, coarse_cue, fine_cue, generate_synthetic,
    load_corpus, load_descriptions, load_examples, write_corpus,
)
from picot.evaluation import score
from picot.ontology import Taxonomy, parse_type

TAX = Taxonomy([parse_type(t) for t in ("/person", "/person/actor", "/organization")])


def _write(tmp_path, lines, name="x.jsonl"):
    path = tmp_path / name
    path.write_text("".join((json.dumps(r) if not isinstance(r, str) else r) + "\n" for r in lines))
    return path


def test_load_example_record(tmp_path):
    rec = {"tokens": ["Vivien", "Leigh", "won", "an", "Oscar"], "entity_start": 0, "entity_end": 2,
           "types": ["/person", "/person/actor"]}
    (ex,) = load_examples(_write(tmp_path, [rec]), TAX)
    assert " ".join(ex.entity_tokens) == "Vivien Leigh"
    assert ex.gold_types == {parse_type("/person"), parse_type("/person/actor")}
    assert ex.id == "line-1"
    assert ex.fine_types == {parse_type("/person/actor")}
    assert ex.coarse_types == {parse_type("/person")}


def test_empty_file(tmp_path):
    assert load_examples(_write(tmp_path, []), TAX) == []


@pytest.mark.parametrize("rec,exc", [
    ({"tokens": ["a", "b"], "entity_start": 1, "entity_end": 3, "types": ["/person"]}, SpanError),
    ({"tokens": ["a", "b"], "entity_start": 1, "entity_end": 1, "types": ["/person"]}, SpanError),
    ({"tokens": ["a"], "entity_start": 0, "types": ["/person"]}, ParseError),
    ({"tokens": ["a"], "entity_start": 0, "entity_end": 1, "types": ["person"]}, ParseError),
    ({"tokens": ["a"], "entity_start": 0, "entity_end": 1, "types": []}, ParseError),
    ({"tokens": "a b", "entity_start": 0, "entity_end": 1, "types": ["/person"]}, ParseError),
    ("{not json", ParseError),
])
def test_bad_records(tmp_path, rec, exc):
    ok = {"tokens": ["x"], "entity_start": 0, "entity_end": 1, "types": ["/person"]}
    with pytest.raises(exc) as info:
        load_examples(_write(tmp_path, [ok, rec]), TAX)
    assert info.value.line == 2


def test_duplicate_ids(tmp_path):
    rec = {"id": "a", "tokens": ["x"], "entity_start": 0, "entity_end": 1, "types": ["/person"]}
    with pytest.raises(DuplicateId):
        load_examples(_write(tmp_path, [rec, rec]), TAX)


def test_unknown_type_warns_but_loads(tmp_path, caplog):
    rec = {"tokens": ["x"], "entity_start": 0, "entity_end": 1, "types": ["/alien"]}
    (ex,) = load_examples(_write(tmp_path, [rec]), TAX)
    assert ex.gold_types == {parse_type("/alien")}
    assert "UnknownType" in caplog.text


def test_descriptions(tmp_path):
    path = _write(tmp_path, [{"type": "/person/actor", "descriptions": [["person", "who", "can", "perform"]]}])
    (d,) = load_descriptions(path, TAX)
    assert d.type == parse_type("/person/actor") and d.descriptions == (("person", "who", "can", "perform"),)
    with pytest.raises(ParseError):
        load_descriptions(_write(tmp_path, [{"type": "/person/actor", "descriptions": []}], "e.jsonl"), TAX)
    with pytest.raises(ParseError):
        load_descriptions(_write(tmp_path, [{"type": "/person/actor", "descriptions": [[]]}], "f.jsonl"), TAX)


def test_other_type_dropped_from_golds(tmp_path):
    rec = {"tokens": ["x"], "entity_start": 0, "entity_end": 1, "types": ["/other", "/other/health"]}
    (ex,) = load_examples(_write(tmp_path, [rec]), TAX)
    assert ex.gold_types == {parse_type("/health")}


def test_synthetic_deterministic_and_roundtrips(tmp_path):
    spec = SynthSpec(seed=1, n_coarse=2, n_fine_per_coarse=3, n_train=600, n_dev=100, n_test=100)
    write_corpus(tmp_path / "a", generate_synthetic(spec))
    write_corpus(tmp_path / "b", generate_synthetic(spec))
    for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "taxonomy.txt", "descriptions.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    back = load_corpus(tmp_path / "a")
    orig = generate_synthetic(spec)
    assert back.train == orig.train and back.test == orig.test
    assert back.taxonomy == orig.taxonomy
    assert back.descriptions == orig.descriptions


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 4), st.integers(1, 4), st.floats(0, 1))
def test_synthetic_structure(seed, n_coarse, n_fine, cue):
    n = n_coarse * n_fine
    spec = SynthSpec(seed, n_coarse, n_fine, n + 5, n, n + 1, cue)
    c = generate_synthetic(spec)
    assert (len(c.train), len(c.dev), len(c.test)) == (n + 5, n, n + 1)
    ids = [{ex.id for ex in split} for split in (c.train, c.dev, c.test)]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    for split in (c.train, c.dev, c.test):
        assert {t for ex in split for t in ex.fine_types} == set(c.taxonomy.fine_types())
        for ex in split:
            assert all(t.prefix(k) in ex.gold_types for t in ex.gold_types for k in range(1, t.level))
    assert {d.type for d in c.descriptions} == set(c.taxonomy.fine_types())


def test_separable_at_full_cue_strength():
    c = generate_synthetic(SynthSpec(cue_strength=1.0))
    for ex in c.train + c.dev + c.test:
        (fine,) = ex.fine_types
        cues = [w for w in ex.tokens if w.startswith(("ccue_", "fcue_"))]
        assert sorted(cues) == sorted([coarse_cue(fine), fine_cue(fine)])


def test_zero_cue_strength_has_no_label_signal():
    c = generate_synthetic(SynthSpec(cue_strength=0.0))
    by_token = {}
    for ex in c.train:
        for w in ex.tokens:
            by_token.setdefault(w, set()).update(ex.fine_types)
    assert not any(w.startswith(("ccue_", "fcue_")) for w in by_token)
    # every frequent token co-occurs with every fine type
    n_fine = len(c.taxonomy.fine_types())
    counts = {w: sum(w in ex.tokens for ex in c.train) for w in by_token}
    assert all(len(by_token[w]) == n_fine for w in by_token if counts[w] >= 30)
    # with no signal the best predictor is a constant: the most frequent training gold set
    keys = [tuple(sorted(t.canonical_text for t in ex.gold_types)) for ex in c.train]
    majority = min(set(keys), key=lambda k: (-keys.count(k), k))
    preds = [{parse_type(t) for t in majority}] * len(c.test)
    expected = majority_macro_f1(keys, [[t.canonical_text for t in ex.gold_types] for ex in c.test])
    assert abs(score([ex.gold_types for ex in c.test], preds).macro_f1 - expected) < 1e-12


@pytest.mark.parametrize("raw", [
    {"n_fine_per_coarse": 0}, {"n_train": 3}, {"cue_strength": 1.5}, {"bogus": 1}, {"n_coarse": 1.5},
])
def test_invalid_spec(raw):
    with pytest.raises(InvalidSpec):
        SynthSpec.from_dict(raw)
