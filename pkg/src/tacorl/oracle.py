"""Task oracles that turn a (possibly compressed) prompt into task output.

``LocalOracle`` is deterministic and offline: an IDF-ranked extractive
summarizer and a question-overlap window answerer. ``RemoteOracle`` speaks
the chat-completions wire format. ``CachedOracle`` wraps either one with a
content-addressed on-disk store.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx

from .corpus import STOPWORDS, TASKS, is_punct, split_words
from .errors import ConfigError, OracleUnavailable
from .rewards import CorpusStats, normalize_answer, sentence_split

log = logging.getLogger(__name__)

API_KEY_ENV = "TACO_API_KEY"
DEFAULT_TEMPLATES = {
    "summarization": "Summarize the following text:",
    "qa": "Answer the question using the context:",
}


@dataclass(frozen=True)
class OracleRequest:
    prompt: str
    task: str = "summarization"
    question: str | None = None
    max_output_tokens: int = 64

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "qa" and not self.question:
            raise ValueError("qa requests need a question")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")


@dataclass(frozen=True)
class OracleResponse:
    text: str
    source: str  # "local" | "remote" | "cache"
    latency_ms: float | None = None
    attempts: int = 1


class Oracle(Protocol):
    oracle_id: str

    def generate(self, request: OracleRequest) -> OracleResponse: ...


# --- local oracles ------------------------------------------------------------


def _content_terms(text: str) -> list[str]:
    return [t.lower() for t in split_words(text) if not is_punct(t) and t.lower() not in STOPWORDS]


def local_summarize(request: OracleRequest, corpus_stats: CorpusStats | None = None) -> OracleResponse:
    """Extractive summary: top IDF-mass sentences, emitted in original order.

    Sentences are taken best-first while they fit in ``max_output_tokens``;
    the best sentence is always included.
    """
    sentences = sentence_split(request.prompt)
    if not sentences:
        return OracleResponse("", "local")
    idf = corpus_stats.idf if corpus_stats is not None else (lambda _t: 1.0)
    scores = [sum(idf(t) for t in _content_terms(s)) for s in sentences]
    ranked = sorted(range(len(sentences)), key=lambda i: (-scores[i], i))
    budget = request.max_output_tokens
    chosen: list[int] = []
    used = 0
    for i in ranked:
        size = len(split_words(sentences[i]))
        if chosen and used + size > budget:
            continue
        chosen.append(i)
        used += size
        if used >= budget:
            break
    return OracleResponse(" ".join(sentences[i] for i in sorted(chosen)), "local")


def question_terms(question: str) -> set[str]:
    terms = {normalize_answer(t) for t in split_words(question)}
    return {t for t in terms if t and t not in STOPWORDS}


def local_answer(request: OracleRequest) -> OracleResponse:
    """Window of ``max_output_tokens`` tokens with the most question terms.

    Overlap counts window tokens whose normalized form is a non-stopword
    question term; ties go to the earliest window.
    """
    tokens = split_words(request.prompt)
    if not tokens:
        return OracleResponse("", "local")
    qterms = question_terms(request.question or "")
    hits = [1 if normalize_answer(t) in qterms else 0 for t in tokens]
    w = min(request.max_output_tokens, len(tokens))
    cur = sum(hits[:w])
    best_start, best = 0, cur
    for s in range(1, len(tokens) - w + 1):
        cur += hits[s + w - 1] - hits[s - 1]
        if cur > best:
            best, best_start = cur, s
    return OracleResponse(" ".join(tokens[best_start : best_start + w]), "local")


class LocalOracle:
    """Deterministic offline oracle dispatching on the request task."""

    oracle_id = "local-v1"

    def __init__(self, corpus_stats: CorpusStats | None = None):
        self.corpus_stats = corpus_stats
        self.calls = 0
        if corpus_stats is not None:
            # summaries depend on the IDF table, so it is part of the cache identity
            blob = json.dumps([corpus_stats.n_docs, sorted(corpus_stats.df.items())])
            self.oracle_id = f"local-v1:{hashlib.sha256(blob.encode()).hexdigest()[:12]}"

    def generate(self, request: OracleRequest) -> OracleResponse:
        self.calls += 1
        if request.task == "qa":
            return local_answer(request)
        return local_summarize(request, self.corpus_stats)


# --- remote oracle ------------------------------------------------------------


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    model: str = "gpt-3.5-turbo"
    api_key: str | None = None
    timeout_s: float = 60.0
    max_attempts: int = 5
    backoff_s: float = 1.0
    max_backoff_s: float = 30.0


class RemoteOracle:
    def __init__(
        self,
        endpoint: EndpointConfig,
        templates: dict[str, str] | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        key = endpoint.api_key or os.environ.get(API_KEY_ENV, "").strip()
        if not key:
            raise ConfigError(f"remote oracle needs an API key in ${API_KEY_ENV}")
        if not endpoint.url:
            raise ConfigError("remote oracle needs an endpoint URL")
        self.endpoint = endpoint
        self.templates = dict(DEFAULT_TEMPLATES if templates is None else templates)
        self._key = key
        self._client = client or httpx.Client(timeout=endpoint.timeout_s)
        self._sleep = sleep
        digest = hashlib.sha256(json.dumps(self.templates, sort_keys=True).encode()).hexdigest()[:12]
        self.oracle_id = f"remote:{endpoint.model}:{digest}"

    def build_body(self, request: OracleRequest) -> dict:
        content = f"{self.templates[request.task]}\n\n{request.prompt}"
        if request.question:
            content += f"\n\nQuestion: {request.question}"
        return {
            "model": self.endpoint.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": content}],
        }

    def generate(self, request: OracleRequest) -> OracleResponse:
        url = self.endpoint.url.rstrip("/") + "/chat/completions"
        body = self.build_body(request)
        headers = {"Authorization": f"Bearer {self._key}"}
        last = "no attempt made"
        t0 = time.monotonic()
        for attempt in range(1, self.endpoint.max_attempts + 1):
            try:
                resp = self._client.post(url, json=body, headers=headers)
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
            else:
                if resp.status_code == 200:
                    text = resp.json()["choices"][0]["message"]["content"] or ""
                    ms = (time.monotonic() - t0) * 1000
                    return OracleResponse(text.strip(), "remote", latency_ms=ms, attempts=attempt)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = f"HTTP {resp.status_code}"
                else:
                    raise ConfigError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
            if attempt < self.endpoint.max_attempts:
                delay = min(self.endpoint.backoff_s * 2 ** (attempt - 1), self.endpoint.max_backoff_s)
                log.warning("oracle attempt %d failed (%s); retrying in %.1fs", attempt, last, delay)
                self._sleep(delay)
        raise OracleUnavailable(f"gave up after {self.endpoint.max_attempts} attempts: {last}")


# --- cache --------------------------------------------------------------------


def cache_key(oracle_id: str, request: OracleRequest) -> str:
    payload = json.dumps(
        [oracle_id, request.task, request.prompt, request.question, request.max_output_tokens],
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class CachedOracle:
    """Content-addressed response cache: {dir}/{key[:2]}/{key}.json.

    Storage failures are logged and the wrapper degrades to pass-through.
    """

    def __init__(self, oracle: Oracle, store: str | Path):
        self.inner = oracle
        self.oracle_id = oracle.oracle_id
        self.store = Path(store)
        self.hits = 0
        self.misses = 0

    def _path(self, key: str) -> Path:
        return self.store / key[:2] / f"{key}.json"

    def _read(self, key: str) -> str | None:
        path = self._path(key)
        try:
            with path.open(encoding="utf-8") as fh:
                return json.load(fh)["text"]
        except FileNotFoundError:
            return None
        except (OSError, ValueError, KeyError) as exc:
            log.warning("cache read failed for %s: %s", path, exc)
            return None

    def _write(self, key: str, request: OracleRequest, text: str) -> None:
        path = self._path(key)
        record = {
            "oracle_id": self.oracle_id,
            "task": request.task,
            "prompt": request.prompt,
            "question": request.question,
            "max_output_tokens": request.max_output_tokens,
            "text": text,
            "timestamp": time.time(),
        }
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record, fh, ensure_ascii=False)
            os.replace(tmp, path)
        except OSError as exc:
            log.warning("cache write failed for %s: %s", path, exc)

    def generate(self, request: OracleRequest) -> OracleResponse:
        key = cache_key(self.oracle_id, request)
        text = self._read(key)
        if text is not None:
            self.hits += 1
            return OracleResponse(text, "cache")
        self.misses += 1
        resp = self.inner.generate(request)
        self._write(key, request, resp.text)
        return resp


def cached(oracle: Oracle, store: str | Path) -> CachedOracle:
    return CachedOracle(oracle, store)


def cache_stats(store: str | Path) -> dict:
    store = Path(store)
    files = list(store.glob("??/*.json")) if store.exists() else []
    return {"entries": len(files), "bytes": sum(f.stat().st_size for f in files)}


def cache_clear(store: str | Path) -> int:
    store = Path(store)
    n = cache_stats(store)["entries"]
    if store.exists():
        for sub in store.iterdir():
            if sub.is_dir() and len(sub.name) == 2:
                shutil.rmtree(sub)
    return n


def generate_many(oracle: Oracle, requests: Sequence[OracleRequest], parallelism: int = 4) -> list[OracleResponse]:
    """Issue requests with bounded concurrency; results keep request order."""
    if parallelism <= 1:
        return [oracle.generate(r) for r in requests]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(oracle.generate, requests))
