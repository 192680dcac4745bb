"""Synthetic corpus generator: determinism and structural guarantees."""

import numpy as np
import pytest

from tedeval.corpus import CATEGORIES
from tedeval.errors import ArgumentError
from tedeval.toygen import (CONCEPTS, gen_bench, gen_diffusion_captions,
                            gen_pairs)


def test_gen_pairs_deterministic_and_sized():
    a = gen_pairs(0, n_pairs=50)
    b = gen_pairs(0, n_pairs=50)
    assert a == b
    assert len(a) == 50
    assert gen_pairs(1, n_pairs=50) != a


def test_pairs_share_concept_not_caption():
    for pair in gen_pairs(3, n_pairs=40):
        assert pair.caption_a != pair.caption_b
        shared = [c for c in CONCEPTS
                  if c in pair.caption_a and c in pair.caption_b]
        assert len(shared) == 1


def test_gen_bench_deterministic_and_valid():
    a = gen_bench(0, n_instances=60)
    assert a == gen_bench(0, n_instances=60)
    assert len(a) == 60
    assert {inst.category for inst in a} == CATEGORIES


def test_bench_positive_keeps_concept_negatives_swap_it():
    for inst in gen_bench(2, n_instances=60):
        concept = next(c for c in CONCEPTS if c in inst.caption)
        assert concept in inst.positive
        assert inst.positive != inst.caption
        for neg in inst.negatives:
            assert concept not in neg
            other = [c for c in CONCEPTS if c in neg]
            assert len(other) == 1


def test_bench_negatives_are_hard():
    # every negative shares surface material with the instance: the caption's
    # filler word and the positive's template
    for inst in gen_bench(4, n_instances=30):
        cap_words = set(inst.caption.split())
        pos_words = set(inst.positive.split())
        for neg in inst.negatives:
            neg_words = set(neg.split())
            assert cap_words & neg_words  # lexical overlap with the caption
            assert pos_words & neg_words  # and with the positive


def test_argument_validation():
    with pytest.raises(ArgumentError):
        gen_pairs(0, n_concepts=1)
    with pytest.raises(ArgumentError):
        gen_bench(0, n_concepts=3, n_negatives=3)


def test_diffusion_captions_unique_sorted_deterministic():
    caps = gen_diffusion_captions(0, n_captions=40)
    assert caps == sorted(set(caps))
    assert caps == gen_diffusion_captions(0, n_captions=40)
    assert len(caps) > 10
