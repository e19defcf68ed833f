"""Synthetic keyword-QA corpus for offline end-to-end training checks.

Each prompt holds a contiguous span of keyword tokens buried among filler
tokens. Fillers mix stopwords with content-looking distractor words, so the
stopword heuristic alone cannot tell keywords from distractors. The question
names the keywords; the local QA oracle then answers with the keyword span,
and the answer degrades as keywords are dropped from the prompt.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Sample

KEYWORDS = (
    "falcon harbor violet copper meadow glacier lantern saffron orchid canyon "
    "ember walnut quartz thistle beacon marble cobalt juniper summit tundra "
    "willow garnet prairie velvet anchor cedar lagoon maple onyx pepper"
).split()

DISTRACTORS = (
    "report system value number result method process level group period "
    "market member office policy program series sector source status factor"
).split()

FILLER_STOPWORDS = (
    "of and to in is was for on with as at by from or but be are were this "
    "that it its which so than then there"
).split()


@dataclass(frozen=True)
class ToyPrompt:
    sample: Sample
    keyword_positions: tuple[int, ...]


def keyword_corpus(
    n_prompts: int,
    seed: int = 0,
    n_keywords: int = 5,
    n_fillers: int = 45,
    distractor_fraction: float = 0.2,
    prefix: str = "toy",
) -> list[ToyPrompt]:
    """Generate prompts of ``n_keywords + n_fillers`` tokens (no punctuation)."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_prompts):
        kws = list(rng.choice(KEYWORDS, size=n_keywords, replace=False))
        fillers = [
            str(rng.choice(DISTRACTORS)) if rng.random() < distractor_fraction else str(rng.choice(FILLER_STOPWORDS))
            for _ in range(n_fillers)
        ]
        start = int(rng.integers(0, n_fillers + 1))
        tokens = fillers[:start] + kws + fillers[start:]
        positions = tuple(range(start, start + n_keywords))
        sample = Sample(
            id=f"{prefix}-{k}",
            context=" ".join(tokens),
            task="qa",
            question="find " + " ".join(kws),
            reference=" ".join(kws),
        )
        out.append(ToyPrompt(sample, positions))
    return out
