"""REINFORCE fine-tuning loop for the compression policy."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .compressor import compress
from .corpus import DEFAULT_MAX_LEN, Sample, TokenSequence, Vocabulary, chunk, detokenize, tokenize
from .errors import NumericalError, OracleUnavailable
from .oracle import Oracle, OracleRequest
from .policy import (
    PolicyParameters,
    add_grads,
    apply_update,
    entropy,
    forward,
    loss_and_gradient,
    sample_actions,
    scale_grads,
)
from .rewards import (
    RewardConfig,
    combine_qa_reward,
    compute_metric,
    relevance_reward,
    shaped_reward,
)

log = logging.getLogger(__name__)

SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4
    lr: float = 1e-6
    schedule: str = "cosine"
    reward: RewardConfig = field(default_factory=RewardConfig)
    samples_per_prompt: int = 1
    seed: int = 0
    checkpoint_every: int = 0  # 0: only at the end
    max_seq_len: int = DEFAULT_MAX_LEN
    max_output_tokens: int = 64
    baseline: float = 0.0  # constant subtracted from every reward; 0 = plain REINFORCE

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.samples_per_prompt < 1:
            raise ValueError("samples_per_prompt must be >= 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.max_seq_len < 1 or self.max_output_tokens < 1:
            raise ValueError("max_seq_len and max_output_tokens must be >= 1")


@dataclass
class TrainLogRecord:
    epoch: int
    step: int
    sample_id: str
    chunk: int
    delta: float | None
    reward: float | None
    in_tolerance: bool | None
    tolerance_rate: float | None
    metric_value: float | None
    loss: float | None
    entropy: float | None
    kept_fraction: float | None
    lr: float
    skipped: bool = False
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass(frozen=True)
class TrainItem:
    sample: Sample
    seq: TokenSequence
    chunk: int = 0


def learning_rate(step: int, total: int, base: float, schedule: str = "cosine") -> float:
    if schedule == "constant":
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total))


def make_items(dataset: Sequence[Sample], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> list[TrainItem]:
    """One training item per chunk of every sample, in dataset order."""
    items = []
    for s in dataset:
        for j, piece in enumerate(chunk(tokenize(s.context, vocab), max_len)):
            items.append(TrainItem(s, piece, j))
    return items


def _request(sample: Sample, text: str, config: TrainConfig) -> OracleRequest:
    return OracleRequest(text, sample.task, sample.question, config.max_output_tokens)


def reward_metric(name, y_comp, y_orig, *, seq, mask, question, corpus_stats, alpha) -> float:
    if name in ("bleu", "rouge1", "rougeL", "f1"):
        return compute_metric(name, y_comp, y_orig)
    r_sim = relevance_reward(seq, question or "", mask, corpus_stats)
    if name == "relevance":
        return r_sim
    return combine_qa_reward(compute_metric("f1", y_comp, y_orig), r_sim, alpha)


def train_step(
    params: PolicyParameters,
    item: TrainItem,
    oracle: Oracle,
    config: TrainConfig,
    rng: np.random.Generator,
    *,
    lr: float | None = None,
    corpus_stats=None,
    epoch: int = 0,
    step: int = 0,
) -> tuple[PolicyParameters, TrainLogRecord]:
    """One pass of the loop body: sample, compress, score, update."""
    lr = config.lr if lr is None else lr
    rc = config.reward
    seq, sample = item.seq, item.sample
    p = forward(params, seq)
    needs_text = rc.metric != "relevance"
    try:
        y_orig = oracle.generate(_request(sample, detokenize(seq), config)).text if needs_text else ""
        grads = None
        losses, deltas, rewards, metrics, kept, flags = [], [], [], [], [], []
        for _ in range(config.samples_per_prompt):
            mask = sample_actions(p, rng)
            comp, stats = compress(seq, mask)
            probe = shaped_reward(0.0, stats.original_n, stats.compressed_n, rc)
            metric_value = None
            if probe.in_tolerance:
                y_comp = (
                    oracle.generate(_request(sample, detokenize(comp.seq), config)).text if needs_text else ""
                )
                metric_value = reward_metric(
                    rc.metric, y_comp, y_orig, seq=seq, mask=mask,
                    question=sample.question, corpus_stats=corpus_stats, alpha=rc.alpha,
                )
            outcome = shaped_reward(metric_value, stats.original_n, stats.compressed_n, rc)
            loss, g = loss_and_gradient(params, seq, mask, outcome.value - config.baseline, rc.lam)
            grads = g if grads is None else add_grads(grads, g)
            losses.append(loss)
            deltas.append(outcome.delta)
            rewards.append(outcome.value)
            metrics.append(metric_value)
            kept.append(stats.rate)
            flags.append(outcome.in_tolerance)
    except OracleUnavailable as exc:
        log.warning("step %d (%s chunk %d) skipped: %s", step, sample.id, item.chunk, exc)
        return params, TrainLogRecord(
            epoch, step, sample.id, item.chunk, None, None, None, None, None, None, None, None, lr,
            skipped=True, error=str(exc),
        )
    k = config.samples_per_prompt
    if k > 1:
        grads = scale_grads(grads, 1.0 / k)
    new_params = apply_update(params, grads, lr)
    known = [m for m in metrics if m is not None]
    record = TrainLogRecord(
        epoch=epoch,
        step=step,
        sample_id=sample.id,
        chunk=item.chunk,
        delta=float(np.mean(deltas)),
        reward=float(np.mean(rewards)),
        in_tolerance=flags[0] if k == 1 else None,
        tolerance_rate=float(np.mean(flags)),
        metric_value=float(np.mean(known)) if known else None,
        loss=float(np.mean(losses)),
        entropy=entropy(p),
        kept_fraction=float(np.mean(kept)),
        lr=lr,
    )
    return new_params, record


@dataclass
class TrainResult:
    params: PolicyParameters
    records: list[TrainLogRecord]
    step: int


def _trim_log(path: Path, keep_below: int) -> None:
    if not path.exists():
        return
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    kept = [ln for ln in lines if json.loads(ln)["step"] < keep_below]
    path.write_text("".join(ln + "\n" for ln in kept), encoding="utf-8")


def run_training(
    dataset: Sequence[Sample],
    init_params: PolicyParameters,
    oracle: Oracle,
    config: TrainConfig,
    *,
    vocab: Vocabulary,
    corpus_stats=None,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    resume: bool = False,
    stop_after: int | None = None,
) -> TrainResult:
    """Run ``config.epochs`` epochs of per-chunk updates.

    Epoch order is a seeded permutation; the sampling generator of global
    step t is seeded from (seed, t), so a run resumed from a checkpoint
    replays exactly what the uninterrupted run would have done.
    ``stop_after`` halts after that many global steps (used to simulate a
    crash).
    """
    if not dataset:
        raise ValueError("dataset is empty")
    items = make_items(dataset, vocab, config.max_seq_len)
    total = config.epochs * len(items)
    params, start = init_params, 0
    ckpt = Path(checkpoint_path) if checkpoint_path else None
    log_file = Path(log_path) if log_path else None
    if resume and ckpt is not None and ckpt.exists():
        params, start = load_checkpoint(ckpt, expected_dims=init_params.dims)
        log.info("resuming from step %d", start)
        if log_file is not None:
            _trim_log(log_file, start)
    elif log_file is not None and log_file.exists():
        log_file.unlink()

    records: list[TrainLogRecord] = []
    fh = log_file.open("a", encoding="utf-8") if log_file else None
    t = 0
    try:
        for epoch in range(config.epochs):
            order = np.random.default_rng([config.seed, 1, epoch]).permutation(len(items))
            for idx in order:
                if t < start:
                    t += 1
                    continue
                if stop_after is not None and t >= stop_after:
                    return TrainResult(params, records, t)
                lr = learning_rate(t, total, config.lr, config.schedule)
                rng = np.random.default_rng([config.seed, 2, t])
                try:
                    params, rec = train_step(
                        params, items[idx], oracle, config, rng,
                        lr=lr, corpus_stats=corpus_stats, epoch=epoch, step=t,
                    )
                except NumericalError:
                    if ckpt is not None:
                        save_checkpoint(params, t, ckpt)
                    raise
                records.append(rec)
                if fh:
                    fh.write(rec.to_json() + "\n")
                    fh.flush()
                t += 1
                if ckpt is not None and config.checkpoint_every and t % config.checkpoint_every == 0:
                    save_checkpoint(params, t, ckpt)
    finally:
        if fh:
            fh.close()
    if ckpt is not None:
        save_checkpoint(params, t, ckpt)
    return TrainResult(params, records, t)


def epoch_summary(records: Sequence[TrainLogRecord]) -> dict[int, dict]:
    out: dict[int, dict] = {}
    for epoch in sorted({r.epoch for r in records}):
        rs = [r for r in records if r.epoch == epoch and not r.skipped]
        out[epoch] = {
            "steps": len(rs),
            "skipped": sum(1 for r in records if r.epoch == epoch and r.skipped),
            "mean_reward": float(np.mean([r.reward for r in rs])) if rs else float("nan"),
            "mean_delta": float(np.mean([r.delta for r in rs])) if rs else float("nan"),
            "kept_fraction": float(np.mean([r.kept_fraction for r in rs])) if rs else float("nan"),
        }
    return out
