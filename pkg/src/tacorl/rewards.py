"""Task metrics, length-shaped reward, and the token-wise relevance reward."""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import TokenSequence, is_punct, split_words

REWARD_METRICS = ("bleu", "rouge1", "rougeL", "f1", "f1_plus_relevance", "relevance")
TOLERANCE_MODES = ("closed", "half_open")


@dataclass(frozen=True)
class RewardConfig:
    c: float = 0.5
    L: float = 30
    r0: float = -0.1
    lam: float = 0.01
    alpha: float = 0.5
    metric: str = "bleu"
    # "closed": |delta| <= L ; "half_open": -L <= delta < L
    tolerance: str = "closed"

    def __post_init__(self):
        if not 0 < self.c <= 1:
            raise ValueError(f"c must lie in (0, 1], got {self.c}")
        if self.L < 0:
            raise ValueError("L must be >= 0")
        if self.r0 >= 0:
            raise ValueError("r0 must be negative")
        if self.lam < 0 or self.alpha < 0:
            raise ValueError("lambda and alpha must be >= 0")
        if self.metric not in REWARD_METRICS:
            raise ValueError(f"unknown reward metric {self.metric!r}")
        if self.tolerance not in TOLERANCE_MODES:
            raise ValueError(f"unknown tolerance mode {self.tolerance!r}")


@dataclass(frozen=True)
class RewardOutcome:
    delta: float
    in_tolerance: bool
    value: float
    metric_value: float | None


def shaped_reward(
    metric_value: float | None, original_n: int, compressed_n: int, config: RewardConfig
) -> RewardOutcome:
    """Metric value when the kept count is within L of c * original_n, else r0."""
    if original_n < 1 or compressed_n < 1:
        raise ValueError("token counts must be >= 1")
    delta = compressed_n - config.c * original_n
    if config.tolerance == "closed":
        ok = abs(delta) <= config.L
    else:
        ok = -config.L <= delta < config.L
    if ok and metric_value is None:
        raise ValueError("an in-tolerance outcome needs a metric value")
    return RewardOutcome(delta, ok, float(metric_value) if ok else config.r0, metric_value)


# --- n-gram metrics ---------------------------------------------------------


def metric_tokens(text: str) -> list[str]:
    return [t.lower() for t in split_words(text)]


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def modified_precision(candidate: Sequence[str], reference: Sequence[str], n: int) -> tuple[int, int]:
    """(clipped matches, candidate n-gram count)."""
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    matches = sum(min(cnt, ref[g]) for g, cnt in cand.items())
    return matches, max(len(candidate) - n + 1, 0)


def bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    """Sentence BLEU-4 with brevity penalty.

    Unigram precision is unsmoothed (no unigram overlap scores 0). For n >= 2
    an order with zero matches uses (0 + 1) / (count + 1).
    """
    cand, ref = metric_tokens(candidate), metric_tokens(reference)
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        m, t = modified_precision(cand, ref, n)
        if n == 1 and m == 0:
            return 0.0
        p = m / t if m > 0 else 1.0 / (t + 1)
        log_sum += math.log(p)
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return bp * math.exp(log_sum / max_n)


def _f_measure(overlap: float, n_cand: int, n_ref: int) -> float:
    if n_cand == 0 or n_ref == 0 or overlap == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 2 * p * r / (p + r)


def rouge_n(candidate: str, reference: str, n: int = 1) -> float:
    if n not in (1, 2):
        raise ValueError("rouge_n supports n in {1, 2}")
    ct, rt = metric_tokens(candidate), metric_tokens(reference)
    cand, ref = ngrams(ct, n), ngrams(rt, n)
    if not cand and not ref:
        # both texts shorter than n: only an exact (non-empty) match counts
        return float(bool(ct) and ct == rt)
    overlap = sum((cand & ref).values())
    return _f_measure(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    cand, ref = metric_tokens(candidate), metric_tokens(reference)
    return _f_measure(lcs_length(cand, ref), len(cand), len(ref))


# --- QA metrics ---------------------------------------------------------------

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation and articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def token_f1(candidate: str, reference: str) -> float:
    cand = normalize_answer(candidate).split()
    ref = normalize_answer(reference).split()
    overlap = sum((Counter(cand) & Counter(ref)).values())
    return _f_measure(overlap, len(cand), len(ref))


def exact_match(candidate: str, reference: str) -> int:
    return int(normalize_answer(candidate) == normalize_answer(reference))


def _contains(hay: Sequence[str], needle: Sequence[str]) -> bool:
    k = len(needle)
    return any(list(hay[i : i + k]) == list(needle) for i in range(len(hay) - k + 1))


def best_subspan_em(candidate: str, reference: str) -> int:
    """1 if either normalized answer is a contiguous token span of the other."""
    cand = normalize_answer(candidate).split()
    ref = normalize_answer(reference).split()
    if cand == ref:
        return 1
    if not cand or not ref:
        return 0
    return int(_contains(cand, ref) or _contains(ref, cand))


METRICS = {
    "bleu": bleu,
    "rouge1": lambda c, r: rouge_n(c, r, 1),
    "rouge2": lambda c, r: rouge_n(c, r, 2),
    "rougeL": rouge_l,
    "f1": token_f1,
    "em": exact_match,
    "subspan_em": best_subspan_em,
}


def compute_metric(name: str, candidate: str, reference: str) -> float:
    try:
        fn = METRICS[name]
    except KeyError:
        raise ValueError(f"unknown metric {name!r}") from None
    return float(fn(candidate, reference))


# --- token-wise relevance -----------------------------------------------------

_SENT_END = re.compile(r"(?<=[.!?])\s+")
SENTENCE_TERMINATORS = frozenset(".!?")


def sentence_split(text: str) -> list[str]:
    """Split after '.', '!' or '?' followed by whitespace."""
    text = text.strip()
    if not text:
        return []
    return [s for s in _SENT_END.split(text) if s]


def embed_terms(text: str) -> list[str]:
    return [t.lower() for t in split_words(text) if not is_punct(t)]


class CorpusStats:
    """Document frequencies for TF-IDF embeddings and IDF-weighted scoring.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1, so unseen terms get the largest
    weight. Any object exposing ``similarity(text_a, text_b)`` can stand in
    for this class where relevance scores are needed.
    """

    def __init__(self, documents: Iterable[str]):
        self.df: Counter = Counter()
        self.n_docs = 0
        for doc in documents:
            self.n_docs += 1
            self.df.update(set(embed_terms(doc)))

    @classmethod
    def from_contexts(cls, contexts: Iterable[str]) -> "CorpusStats":
        """One document per sentence of every context."""
        return cls(s for ctx in contexts for s in sentence_split(ctx))

    def idf(self, term: str) -> float:
        return math.log((1 + self.n_docs) / (1 + self.df.get(term, 0))) + 1.0

    def embed(self, text: str) -> dict[str, float]:
        return embed(text, self)

    def similarity(self, a: str, b: str) -> float:
        return cosine(embed(a, self), embed(b, self))


def embed(text: str, corpus_stats: CorpusStats) -> dict[str, float]:
    """L2-normalized sparse TF-IDF vector (term -> weight); empty for empty text."""
    tf = Counter(embed_terms(text))
    vec = {t: cnt * corpus_stats.idf(t) for t, cnt in tf.items()}
    norm = math.sqrt(sum(v * v for v in vec.values()))
    if norm == 0:
        return {}
    return {t: v / norm for t, v in vec.items()}


def cosine(u: dict[str, float], v: dict[str, float]) -> float:
    if len(u) > len(v):
        u, v = v, u
    return float(sum(w * v.get(t, 0.0) for t, w in u.items()))


def token_sentences(seq: TokenSequence) -> list[list[int]]:
    """Group token positions into sentences closed by '.', '!' or '?' tokens."""
    groups: list[list[int]] = [[]]
    for i, tok in enumerate(seq.tokens):
        groups[-1].append(i)
        if tok in SENTENCE_TERMINATORS and i + 1 < seq.n:
            groups.append([])
    return groups


def token_relevance(seq: TokenSequence, question: str, corpus_stats) -> np.ndarray:
    """Each token's score is its sentence's similarity with the question."""
    scores = np.empty(seq.n)
    for group in token_sentences(seq):
        text = " ".join(seq.tokens[i] for i in group)
        scores[group] = corpus_stats.similarity(text, question)
    return scores


def relevance_reward(context_seq: TokenSequence, question: str, mask, corpus_stats) -> float:
    """Mean sentence-question similarity over the kept tokens."""
    bits = np.asarray(mask.a if hasattr(mask, "a") else mask, dtype=np.float64)
    if len(bits) != context_seq.n:
        raise ValueError(f"mask length {len(bits)} != context length {context_seq.n}")
    total = bits.sum()
    if total == 0:
        return 0.0
    return float(bits @ token_relevance(context_seq, question, corpus_stats) / total)


def combine_qa_reward(r_f1: float, r_sim: float, alpha: float) -> float:
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return r_f1 + alpha * r_sim
