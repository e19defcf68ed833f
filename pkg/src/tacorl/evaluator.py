"""Evaluate a policy over a grid of compression rates.

For every rate each sample is compressed (top-k), the oracle is run on the
compressed prompt, and the output is scored against the oracle output for
the uncompressed prompt (primary) and against the gold reference (when the
sample has one).
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .compressor import compress_document
from .corpus import DEFAULT_MAX_LEN, Sample, Vocabulary, detokenize, tokenize
from .errors import OracleUnavailable, SchemaError
from .oracle import Oracle, OracleRequest
from .policy import PolicyParameters
from .rewards import METRICS, compute_metric

log = logging.getLogger(__name__)

DEFAULT_RATES = (0.5, 0.33, 0.25, 0.2, 0.166)
DEFAULT_METRICS = ("bleu", "rouge1", "rouge2", "rougeL", "f1", "em", "subspan_em")
COUNT_METRICS = frozenset({"em", "subspan_em"})


@dataclass
class EvalRow:
    """One (rate, metric) cell of the report."""

    rate: float
    metric: str
    vs_orig: float | None  # mean over scored samples, None if nothing was scored
    vs_ref: float | None  # None when no scored sample carries a reference
    em_count_orig: int | None  # only for the exact-match style metrics
    em_count_ref: int | None
    samples: int
    scored: int
    with_reference: int
    achieved_rate: float  # mean per-sample tau
    original_n: int
    compressed_n: int

    @property
    def coverage(self) -> float:
        return self.scored / self.samples if self.samples else 0.0


@dataclass
class EvalReport:
    rates: tuple[float, ...]
    metrics: tuple[str, ...]
    rows: list[EvalRow] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    def row(self, rate: float, metric: str) -> EvalRow:
        for r in self.rows:
            if r.rate == rate and r.metric == metric:
                return r
        raise KeyError((rate, metric))

    @property
    def samples(self) -> int:
        return self.rows[0].samples if self.rows else 0

    @property
    def coverage(self) -> float:
        return min((r.coverage for r in self.rows), default=0.0)

    @property
    def complete(self) -> bool:
        return not self.failures and all(r.scored == r.samples for r in self.rows)

    def to_jsonl(self) -> str:
        lines = []
        for r in self.rows:
            d = asdict(r)
            d["coverage"] = r.coverage
            lines.append(json.dumps(d))
        for f in self.failures:
            lines.append(json.dumps({"failure": f}))
        return "".join(ln + "\n" for ln in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "EvalReport":
        rows, failures = [], []
        for ln in text.splitlines():
            if not ln.strip():
                continue
            d = json.loads(ln)
            if "failure" in d:
                failures.append(d["failure"])
                continue
            d.pop("coverage", None)
            rows.append(EvalRow(**d))
        rates = tuple(dict.fromkeys(r.rate for r in rows))
        metrics = tuple(dict.fromkeys(r.metric for r in rows))
        return cls(rates, metrics, rows, failures)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))

    def table(self) -> str:
        return format_table(self)


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.4f}"
    return str(x)


def _aligned(header: Sequence[str], body: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h) for i, h in enumerate(header)]
    fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    out = [fmt(header), fmt(["-" * w for w in widths])]
    out += [fmt(row) for row in body]
    return "\n".join(out) + "\n"


def format_table(report: EvalReport) -> str:
    header = ["rate", "C.R.", "metric", "vs_orig", "vs_ref", "em_count", "tau", "coverage"]
    body = []
    for r in report.rows:
        count = "-" if r.em_count_orig is None else f"{r.em_count_orig}/{r.scored}"
        body.append([
            f"{r.rate:g}", f"{1 / r.rate:.1f}x", r.metric, _fmt(r.vs_orig), _fmt(r.vs_ref),
            count, f"{r.achieved_rate:.4f}", f"{r.coverage:.2f}",
        ])
    return _aligned(header, body)


def _request(sample: Sample, prompt: str, max_output_tokens: int) -> OracleRequest:
    return OracleRequest(prompt, sample.task, sample.question, max_output_tokens)


def _safe_generate(oracle: Oracle, request: OracleRequest) -> str | OracleUnavailable:
    try:
        return oracle.generate(request).text
    except OracleUnavailable as exc:
        return exc


def _generate_all(oracle: Oracle, requests: Sequence[OracleRequest], parallelism: int) -> list:
    if parallelism <= 1:
        return [_safe_generate(oracle, r) for r in requests]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(lambda r: _safe_generate(oracle, r), requests))


def evaluate(
    dataset: Sequence[Sample],
    params: PolicyParameters,
    vocab: Vocabulary,
    rates: Sequence[float] = DEFAULT_RATES,
    oracle: Oracle | None = None,
    metrics: Sequence[str] = DEFAULT_METRICS,
    *,
    max_len: int = DEFAULT_MAX_LEN,
    max_output_tokens: int = 64,
    parallelism: int = 1,
) -> EvalReport:
    """Score top-k compression at every rate; oracle failures drop a sample, not the run."""
    if not dataset:
        raise ValueError("dataset is empty")
    if oracle is None:
        raise ValueError("an oracle is required")
    rates = tuple(float(c) for c in rates)
    for c in rates:
        if not 0 < c <= 1:
            raise ValueError(f"rate must lie in (0, 1], got {c}")
    metrics = tuple(metrics)
    for m in metrics:
        if m not in METRICS:
            raise ValueError(f"unknown metric {m!r}")

    seqs = [tokenize(s.context, vocab) for s in dataset]
    orig_reqs = [_request(s, detokenize(q), max_output_tokens) for s, q in zip(dataset, seqs)]
    y_orig = _generate_all(oracle, orig_reqs, parallelism)
    failures = [
        {"sample_id": s.id, "rate": None, "error": str(y)}
        for s, y in zip(dataset, y_orig)
        if isinstance(y, OracleUnavailable)
    ]

    report = EvalReport(rates, metrics, failures=failures)
    for c in rates:
        comps = [compress_document(q, params, c, "topk", max_len=max_len) for q in seqs]
        comp_reqs = [_request(s, detokenize(cp.seq), max_output_tokens) for s, (cp, _) in zip(dataset, comps)]
        y_comp = _generate_all(oracle, comp_reqs, parallelism)
        scored = []
        for s, yo, yc in zip(dataset, y_orig, y_comp):
            if isinstance(yc, OracleUnavailable):
                failures.append({"sample_id": s.id, "rate": c, "error": str(yc)})
            ok = not isinstance(yo, OracleUnavailable) and not isinstance(yc, OracleUnavailable)
            scored.append(ok)
        taus = [st.rate for _, st in comps]
        orig_total = sum(st.original_n for _, st in comps)
        comp_total = sum(st.compressed_n for _, st in comps)
        for m in metrics:
            vo, vr = [], []
            for s, yo, yc, ok in zip(dataset, y_orig, y_comp, scored):
                if not ok:
                    continue
                vo.append(compute_metric(m, yc, yo))
                if s.reference is not None:
                    vr.append(compute_metric(m, yc, s.reference))
            counted = m in COUNT_METRICS
            report.rows.append(EvalRow(
                rate=c,
                metric=m,
                vs_orig=float(np.mean(vo)) if vo else None,
                vs_ref=float(np.mean(vr)) if vr else None,
                em_count_orig=int(sum(vo)) if counted else None,
                em_count_ref=int(sum(vr)) if counted and vr else None,
                samples=len(dataset),
                scored=len(vo),
                with_reference=len(vr),
                achieved_rate=float(np.mean(taus)),
                original_n=orig_total,
                compressed_n=comp_total,
            ))
    if failures:
        log.warning("%d oracle failures; report coverage %.2f", len(failures), report.coverage)
    return report


@dataclass(frozen=True)
class DeltaRow:
    rate: float
    metric: str
    delta_orig: float | None
    delta_ref: float | None


def _diff(a: float | None, b: float | None) -> float | None:
    if a is None or b is None:
        return None
    return b - a


def compare(report_a: EvalReport, report_b: EvalReport) -> list[DeltaRow]:
    """Per-cell differences b - a; both reports must share the same rate x metric grid."""
    if report_a.samples != report_b.samples:
        raise SchemaError(f"sample counts differ: {report_a.samples} vs {report_b.samples}")
    keys_a = [(r.rate, r.metric) for r in report_a.rows]
    keys_b = [(r.rate, r.metric) for r in report_b.rows]
    if sorted(keys_a) != sorted(keys_b) or len(set(keys_a)) != len(keys_a):
        raise SchemaError("reports cover different rate x metric cells")
    out = []
    for ra in report_a.rows:
        rb = report_b.row(ra.rate, ra.metric)
        out.append(DeltaRow(ra.rate, ra.metric, _diff(ra.vs_orig, rb.vs_orig), _diff(ra.vs_ref, rb.vs_ref)))
    return out


def format_deltas(deltas: Sequence[DeltaRow]) -> str:
    sign = lambda x: "-" if x is None else f"{x:+.4f}"
    body = [[f"{d.rate:g}", d.metric, sign(d.delta_orig), sign(d.delta_ref)] for d in deltas]
    return _aligned(["rate", "metric", "d_orig", "d_ref"], body)


def nonzero_deltas(deltas: Sequence[DeltaRow]) -> int:
    return sum(1 for d in deltas for v in (d.delta_orig, d.delta_ref) if v is not None and v != 0)
