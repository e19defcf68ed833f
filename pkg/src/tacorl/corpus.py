"""Tokenization, vocabulary, chunking and JSON Lines dataset ingestion."""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyInput, ParseError, SchemaError, VocabError

PUNCT = frozenset(string.punctuation)
UNK = "<unk>"
DEFAULT_MAX_LEN = 512
TASKS = ("summarization", "qa")

# Small English stopword list used by the heuristic labeler and the
# extractive local oracle. Kept in-package so labels never depend on the
# version of an external list.
STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because
    been before being below between both but by can could did do does doing
    down during each few for from further had has have having he her here hers
    herself him himself his how i if in into is it its itself just me more most
    my myself no nor not now of off on once only or other our ours ourselves out
    over own same she should so some such than that the their theirs them
    themselves then there these they this those through to too under until up
    very was we were what when where which while who whom why will with would
    you your yours yourself yourselves
    """.split()
)


def split_words(text: str) -> list[str]:
    """Whitespace split, then peel leading/trailing punctuation into tokens.

    Every peeled punctuation character becomes its own token; punctuation
    inside a word ("don't", "3.14") is left alone.
    """
    out: list[str] = []
    for word in text.split():
        lead: list[str] = []
        trail: list[str] = []
        i, j = 0, len(word)
        while i < j and word[i] in PUNCT:
            lead.append(word[i])
            i += 1
        while j > i and word[j - 1] in PUNCT:
            trail.append(word[j - 1])
            j -= 1
        out.extend(lead)
        if i < j:
            out.append(word[i:j])
        out.extend(reversed(trail))
    return out


def is_punct(token: str) -> bool:
    return bool(token) and all(ch in PUNCT for ch in token)


class Vocabulary:
    """Lowercased token -> dense id map with an unknown-token slot at id 0."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [UNK]
        self.stoi: dict[str, int] = {UNK: 0}
        for tok in tokens:
            self.add(tok)

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        vocab = cls()
        for text in texts:
            for tok in split_words(text):
                vocab.add(tok)
        return vocab

    def add(self, token: str) -> int:
        key = token.lower()
        idx = self.stoi.get(key)
        if idx is None:
            idx = len(self.itos)
            self.stoi[key] = idx
            self.itos.append(key)
        return idx

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def size(self) -> int:
        return len(self.itos)

    def __len__(self) -> int:
        return len(self.itos)

    def lookup(self, token: str) -> int:
        return self.stoi.get(token.lower(), 0)

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self.itos):
            raise VocabError(f"id {idx} outside vocabulary of size {len(self.itos)}")
        return self.itos[idx]

    def to_json(self) -> str:
        return json.dumps({"tokens": self.itos}, ensure_ascii=False)

    @classmethod
    def from_json(cls, payload: str) -> "Vocabulary":
        tokens = json.loads(payload)["tokens"]
        if not tokens or tokens[0] != UNK:
            raise SchemaError("vocabulary file must start with the unknown token")
        vocab = cls()
        for tok in tokens[1:]:
            vocab.add(tok)
        return vocab

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.ids):
            raise SchemaError(f"{len(self.tokens)} tokens but {len(self.ids)} ids")
        if not self.tokens:
            raise EmptyInput("token sequence must hold at least one token")

    @property
    def n(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def take(self, indices: Sequence[int]) -> "TokenSequence":
        return TokenSequence(
            tuple(self.tokens[i] for i in indices), tuple(self.ids[i] for i in indices)
        )


@dataclass(frozen=True)
class Sample:
    id: str
    context: str
    task: str = "summarization"
    question: str | None = None
    reference: str | None = None
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.task not in TASKS:
            raise SchemaError(f"unknown task {self.task!r}")
        if self.task == "qa" and not self.question:
            raise SchemaError(f"qa sample {self.id!r} has no question")


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    if not text or not text.strip():
        raise EmptyInput("cannot tokenize empty text")
    tokens = split_words(text)
    return TokenSequence(tuple(tokens), tuple(vocab.lookup(t) for t in tokens))


def detokenize(seq: TokenSequence) -> str:
    return " ".join(seq.tokens)


def chunk(seq: TokenSequence, max_len: int = DEFAULT_MAX_LEN) -> list[TokenSequence]:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    return [
        TokenSequence(seq.tokens[i : i + max_len], seq.ids[i : i + max_len])
        for i in range(0, seq.n, max_len)
    ]


def heuristic_labels(seq: TokenSequence) -> list[int]:
    """Keep (1) tokens that are neither stopwords nor pure punctuation."""
    return [0 if (t.lower() in STOPWORDS or is_punct(t)) else 1 for t in seq.tokens]


_REQUIRED = ("id", "context", "task")


def _parse_sample(obj, lineno: int) -> Sample:
    if not isinstance(obj, dict):
        raise SchemaError("expected a JSON object", line=lineno)
    for key in _REQUIRED:
        if key not in obj:
            raise SchemaError(f"missing required field {key!r}", line=lineno)
    for key in ("id", "context", "task", "question", "reference"):
        if key in obj and obj[key] is not None and not isinstance(obj[key], str):
            raise SchemaError(f"field {key!r} must be a string", line=lineno)
    if not obj["context"].strip():
        raise SchemaError("empty context", line=lineno)
    extra = {k: v for k, v in obj.items() if k not in {"id", "context", "task", "question", "reference"}}
    try:
        return Sample(
            id=obj["id"],
            context=obj["context"],
            task=obj["task"],
            question=obj.get("question"),
            reference=obj.get("reference"),
            extra=extra,
        )
    except SchemaError as exc:
        raise SchemaError(str(exc), line=lineno) from None


def load_dataset(path: str | Path) -> list[Sample]:
    """Read a JSON Lines dataset, one sample per non-blank line, in file order."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    samples: list[Sample] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, line=lineno) from None
            sample = _parse_sample(obj, lineno)
            if sample.id in seen:
                raise SchemaError(f"duplicate id {sample.id!r}", line=lineno)
            seen.add(sample.id)
            samples.append(sample)
    return samples


def dump_dataset(samples: Iterable[Sample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in samples:
            row = {"id": s.id, "context": s.context, "task": s.task}
            if s.question is not None:
                row["question"] = s.question
            if s.reference is not None:
                row["reference"] = s.reference
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
