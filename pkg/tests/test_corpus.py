"""JSONL corpus loaders: schema validation, field maps, round trips."""

import json

import pytest

from tedeval.corpus import (CaptionPair, Ted6kInstance, load_pairs,
                            load_ted6k, save_jsonl)
from tedeval.errors import ArgumentError, ValidationError


def _bench_rec(i=0, **kw):
    rec = {"id": f"inst-{i}", "caption": "a cat", "positive": "one cat",
           "negatives": ["two cats", "no cat"], "category": "quantity"}
    rec.update(kw)
    return rec


def _pair_rec(i=0, **kw):
    rec = {"id": f"pair-{i}", "caption_a": "a cat sits",
           "caption_b": "a sitting cat", "source": "img-1"}
    rec.update(kw)
    return rec


def _write(tmp_path, records, name="corpus.jsonl"):
    path = tmp_path / name
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    return path


def test_load_ted6k_happy_path(tmp_path):
    path = _write(tmp_path, [_bench_rec(0), _bench_rec(1)])
    out = load_ted6k(path)
    assert len(out) == 2
    assert out[0].negatives == ("two cats", "no cat")


def test_duplicate_id_rejected_with_line(tmp_path):
    path = _write(tmp_path, [_bench_rec(0), _bench_rec(0)])
    with pytest.raises(ValidationError) as err:
        load_ted6k(path)
    assert err.value.line == 2


def test_missing_field_rejected(tmp_path):
    rec = _bench_rec(0)
    del rec["positive"]
    with pytest.raises(ValidationError):
        load_ted6k(_write(tmp_path, [rec]))


def test_unknown_category_rejected(tmp_path):
    with pytest.raises(ValidationError):
        load_ted6k(_write(tmp_path, [_bench_rec(0, category="vibes")]))


def test_positive_among_negatives_rejected(tmp_path):
    with pytest.raises(ValidationError):
        load_ted6k(_write(tmp_path, [
            _bench_rec(0, negatives=["one cat", "no cat"])]))


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(_bench_rec(0)) + "\n{not json\n")
    with pytest.raises(ValidationError) as err:
        load_ted6k(path)
    assert err.value.line == 2


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("\n\n")
    with pytest.raises(ArgumentError):
        load_ted6k(path)


def test_field_map_renames_keys(tmp_path):
    rec = {"uid": "x", "text": "a cat", "pos": "one cat",
           "negs": ["no cat"], "cat": "quantity"}
    path = _write(tmp_path, [rec])
    out = load_ted6k(path, field_map={"uid": "id", "text": "caption",
                                      "pos": "positive", "negs": "negatives",
                                      "cat": "category"})
    assert out[0].id == "x"


def test_identical_captions_rejected(tmp_path):
    with pytest.raises(ValidationError):
        load_pairs(_write(tmp_path, [_pair_rec(0, caption_b="a cat sits")]))


def test_save_load_round_trip(tmp_path):
    bench = [Ted6kInstance(**{k: tuple(v) if k == "negatives" else v
                              for k, v in _bench_rec(i).items()})
             for i in range(3)]
    pairs = [CaptionPair(**_pair_rec(i)) for i in range(3)]
    bp, pp = tmp_path / "b.jsonl", tmp_path / "p.jsonl"
    save_jsonl(bench, bp)
    save_jsonl(pairs, pp)
    assert load_ted6k(bp) == bench
    assert load_pairs(pp) == pairs
