"""Apply keep masks to token sequences and compress long documents chunk by chunk."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import DEFAULT_MAX_LEN, Sample, TokenSequence, Vocabulary, chunk, tokenize
from .errors import EmptyCompression, SchemaError
from .policy import ActionMask, PolicyParameters, forward_many, select_topk, threshold_select

MODES = ("topk", "threshold")


@dataclass(frozen=True)
class CompressedPrompt:
    seq: TokenSequence
    kept_indices: tuple[int, ...]


@dataclass(frozen=True)
class CompressionStats:
    original_n: int
    compressed_n: int

    @property
    def rate(self) -> float:
        """Fraction of tokens kept (tau)."""
        return self.compressed_n / self.original_n

    @property
    def ratio(self) -> float:
        """Compression factor (C.R. = 1 / tau)."""
        return self.original_n / self.compressed_n

    def as_dict(self) -> dict:
        return {
            "original_n": self.original_n,
            "compressed_n": self.compressed_n,
            "rate": self.rate,
            "ratio": self.ratio,
        }


def compress(seq: TokenSequence, mask: ActionMask | Sequence[int]) -> tuple[CompressedPrompt, CompressionStats]:
    bits = mask.a if isinstance(mask, ActionMask) else np.asarray(mask)
    if len(bits) != seq.n:
        raise SchemaError(f"mask length {len(bits)} != sequence length {seq.n}")
    kept = tuple(int(i) for i in np.flatnonzero(bits))
    if not kept:
        raise EmptyCompression("mask drops every token")
    return CompressedPrompt(seq.take(kept), kept), CompressionStats(seq.n, len(kept))


def _select(p, c: float, mode: str) -> ActionMask:
    if mode == "topk":
        return select_topk(p, c)
    if mode == "threshold":
        return threshold_select(p)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def compress_document(
    doc: Sample | TokenSequence,
    params: PolicyParameters,
    c: float,
    mode: str = "topk",
    *,
    vocab: Vocabulary | None = None,
    max_len: int = DEFAULT_MAX_LEN,
) -> tuple[CompressedPrompt, CompressionStats]:
    """Chunk, score and compress each chunk independently, then concatenate.

    A ``Sample`` is tokenized from its context (``vocab`` required). In
    threshold mode a chunk with no token above 0.5 keeps its single most
    probable token so that no chunk disappears entirely.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if not 0 < c <= 1:
        raise ValueError(f"rate c must lie in (0, 1], got {c}")
    if isinstance(doc, Sample):
        if vocab is None:
            raise ValueError("a vocabulary is needed to tokenize a Sample")
        seq = tokenize(doc.context, vocab)
    else:
        seq = doc
    pieces = chunk(seq, max_len)
    probs = forward_many(params, pieces)
    kept: list[int] = []
    offset = 0
    for piece, p in zip(pieces, probs):
        mask = _select(p, c, mode)
        if mask.kept == 0:
            mask.a[int(np.argmax(p.p))] = 1
        kept.extend(offset + i for i in np.flatnonzero(mask.a))
        offset += piece.n
    out = seq.take(kept)
    return CompressedPrompt(out, tuple(int(i) for i in kept)), CompressionStats(seq.n, len(kept))
