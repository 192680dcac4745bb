"""Synthetic caption-pair corpus and 4-way benchmark generator.

Each record is built around one of a closed set of multi-word concept tokens.
A caption pair phrases the same concept through two templates. A benchmark
instance balances surface overlap so that untrained embeddings sit near
chance while a trained aggregator can rely on the concept: the positive
shares only the concept with the caption (different template, different
filler), while every negative shares the caption's filler word and the
positive's template but names a different concept.
"""

import numpy as np

from .corpus import CATEGORIES, CaptionPair, Ted6kInstance
from .errors import ArgumentError

CONCEPTS = (
    "amberstonecliff", "basaltridgepath", "cobaltgrovebank", "dunehollowcrest",
    "emberfieldshore", "fjordwaterledge", "grovemeadowside", "harborlightpier",
    "irisblossomvale", "jadepebblebrook", "kelpforestreach", "lotuspondgarden",
    "maplebranchknoll", "nectarbloomridge", "onyxbouldercove", "prairiewindflat",
)

FILLERS = (
    "benchplankboard", "crateboxpanel", "fencepostbeam", "lanternglasspane",
    "muralwallpatch", "pondstoneslab", "railingbarframe", "stallcovertarp",
    "trellisvinegrid", "wagonwheelspoke", "awningclothfold", "kioskstandshelf",
)

TEMPLATES = (
    "a {c} by {f}",
    "the {c} near {f}",
    "{f} behind a {c}",
    "{f} with the {c}",
    "see {c} at {f}",
    "this {c} by {f}",
)

_CATEGORY_CYCLE = tuple(sorted(CATEGORIES))


def _render(template_idx, concept, filler):
    return TEMPLATES[template_idx].format(c=concept, f=filler)


def gen_pairs(seed, n_pairs=512, n_concepts=16):
    """Caption pairs: same concept, different template and filler."""
    if n_concepts < 2 or n_concepts > len(CONCEPTS):
        raise ArgumentError(f"n_concepts must be in [2, {len(CONCEPTS)}]")
    rng = np.random.default_rng([seed, 0xA1])
    pairs = []
    for i in range(n_pairs):
        concept = CONCEPTS[rng.integers(n_concepts)]
        ti, tj = rng.choice(len(TEMPLATES), size=2, replace=False)
        fa, fb = (FILLERS[k] for k in rng.choice(len(FILLERS), size=2,
                                                 replace=False))
        pairs.append(CaptionPair(
            id=f"pair-{i:05d}",
            caption_a=_render(ti, concept, fa),
            caption_b=_render(tj, concept, fb),
            source=f"{concept}-{i:05d}"))
    return pairs


def gen_bench(seed, n_instances=400, n_concepts=16, n_negatives=3):
    """4-way benchmark with balanced hard negatives.

    The positive keeps the caption's concept but changes template and filler;
    each negative reuses the positive's template and the caption's filler
    while swapping in a different concept.
    """
    if n_concepts < n_negatives + 1 or n_concepts > len(CONCEPTS):
        raise ArgumentError("need more concepts than negatives per instance")
    rng = np.random.default_rng([seed, 0xB2])
    instances = []
    for i in range(n_instances):
        chosen = rng.choice(n_concepts, size=n_negatives + 1, replace=False)
        concept = CONCEPTS[chosen[0]]
        ti, tj = rng.choice(len(TEMPLATES), size=2, replace=False)
        f_cap, f_pos = (FILLERS[k] for k in rng.choice(len(FILLERS), size=2,
                                                       replace=False))
        instances.append(Ted6kInstance(
            id=f"inst-{i:05d}",
            caption=_render(ti, concept, f_cap),
            positive=_render(tj, concept, f_pos),
            negatives=tuple(_render(tj, CONCEPTS[c], f_cap)
                            for c in chosen[1:]),
            category=_CATEGORY_CYCLE[i % len(_CATEGORY_CYCLE)]))
    return instances


def gen_diffusion_captions(seed, n_captions=64, n_concepts=16):
    """Caption list for the toy denoiser (hashes spread across components)."""
    rng = np.random.default_rng([seed, 0xC3])
    captions = []
    for _ in range(n_captions):
        concept = CONCEPTS[rng.integers(n_concepts)]
        ti = rng.integers(len(TEMPLATES))
        filler = FILLERS[rng.integers(len(FILLERS))]
        captions.append(_render(ti, concept, filler))
    return sorted(set(captions))
