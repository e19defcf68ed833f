"""Command-line entry point: ``taco {bootstrap,train,compress,evaluate,cache}``.

Every subcommand accepts ``--config FILE``: a flat ``key = value`` file whose
keys are the long flag names (dashes or underscores). Flags given on the
command line override the file; unknown keys are rejected.

Exit codes: 0 ok, 2 usage/config, 3 data, 4 oracle, 5 numerical.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import digest, load_checkpoint, save_checkpoint
from .compressor import MODES, compress_document
from .corpus import DEFAULT_MAX_LEN, Vocabulary, chunk, detokenize, heuristic_labels, load_dataset, tokenize
from .errors import (
    ConfigError,
    DimError,
    EmptyCompression,
    EmptyInput,
    IntegrityError,
    NumericalError,
    OracleUnavailable,
    ParseError,
    SchemaError,
    VersionError,
    VocabError,
)
from .evaluator import DEFAULT_METRICS, DEFAULT_RATES, evaluate
from .oracle import CachedOracle, EndpointConfig, LocalOracle, RemoteOracle, cache_clear, cache_stats
from .policy import Dims, init_params, supervised_bootstrap
from .rewards import REWARD_METRICS, TOLERANCE_MODES, CorpusStats, RewardConfig
from .trainer import SCHEDULES, TrainConfig, epoch_summary, run_training

log = logging.getLogger("tacorl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ORACLE, EXIT_NUMERICAL = 0, 2, 3, 4, 5

_DATA_ERRORS = (ParseError, SchemaError, EmptyInput, VocabError, DimError, VersionError, IntegrityError, EmptyCompression)

# flags that must end up set, from the command line or the config file
_REQUIRED = {
    "bootstrap": ("dataset", "out"),
    "train": ("dataset", "init", "out"),
    "compress": ("checkpoint", "rate"),
    "evaluate": ("checkpoint", "dataset"),
}
_NOT_CONFIGURABLE = {"help", "config", "command", "cache_command"}


def vocab_path(checkpoint: str | Path) -> Path:
    return Path(str(checkpoint) + ".vocab.json")


def float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def name_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def read_config(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in _NOT_CONFIGURABLE}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    defaults = {}
    for key, text in values.items():
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            value = _bool(text)
        elif action.type is not None:
            try:
                value = action.type(text)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        else:
            value = text
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"{key} must be one of {sorted(action.choices)}, got {value!r}")
        defaults[key] = value
    sub.set_defaults(**defaults)


def _add_oracle_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--oracle", choices=("local", "remote"), default="local", help="oracle backend")
    p.add_argument("--endpoint-url", default="", help="chat-completions base URL (remote oracle)")
    p.add_argument("--model", default="gpt-3.5-turbo", help="model name sent to the remote oracle")
    p.add_argument("--cache", default=".taco_cache", help="oracle response cache directory ('' disables)")
    p.add_argument("--max-output-tokens", type=int, default=64, help="oracle output budget")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="taco", description="Task-aware prompt compression with a REINFORCE-tuned token policy.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    subs = parser.add_subparsers(dest="command", required=True)
    out: dict[str, argparse.ArgumentParser] = {}

    p = subs.add_parser("bootstrap", help="stage 1: supervised training on heuristic keep labels")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--dataset", help="JSON Lines dataset")
    p.add_argument("--out", help="checkpoint to write (vocabulary goes to <out>.vocab.json)")
    p.add_argument("--dim", type=int, default=32, help="embedding / state width d")
    p.add_argument("--depth", type=int, default=1, help="number of bidirectional layers")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN, help="chunk length")
    out["bootstrap"] = p

    p = subs.add_parser("train", help="stage 2: REINFORCE fine-tuning against an oracle")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--dataset", help="JSON Lines dataset")
    p.add_argument("--init", help="starting checkpoint (usually from bootstrap)")
    p.add_argument("--out", help="checkpoint to write; also the resume point")
    p.add_argument("--log", help="JSON Lines training log (default <out>.log.jsonl)")
    p.add_argument("--resume", action="store_true", help="continue from --out if it exists")
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-6)
    p.add_argument("--schedule", choices=SCHEDULES, default="cosine")
    p.add_argument("--c", type=float, default=0.5, help="target keep fraction")
    p.add_argument("--L", type=float, default=30.0, help="length tolerance in tokens")
    p.add_argument("--r0", type=float, default=-0.1, help="reward outside tolerance")
    p.add_argument("--lam", type=float, default=0.01, help="entropy weight")
    p.add_argument("--alpha", type=float, default=0.5, help="relevance weight for f1_plus_relevance")
    p.add_argument("--metric", choices=REWARD_METRICS, default="bleu")
    p.add_argument("--tolerance", choices=TOLERANCE_MODES, default="closed")
    p.add_argument("--samples-per-prompt", type=int, default=1)
    p.add_argument("--baseline", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    _add_oracle_flags(p)
    out["train"] = p

    p = subs.add_parser("compress", help="compress one text with a checkpoint")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--checkpoint")
    p.add_argument("--input", default="-", help="text file, '-' for stdin")
    p.add_argument("--rate", type=float, help="target keep fraction in (0, 1]")
    p.add_argument("--mode", choices=MODES, default="topk")
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    out["compress"] = p

    p = subs.add_parser("evaluate", help="metrics across compression rates")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--rates", type=float_list, default=list(DEFAULT_RATES), help="comma-separated rates")
    p.add_argument("--metrics", type=name_list, default=list(DEFAULT_METRICS), help="comma-separated metrics")
    p.add_argument("--report", default="report", help="output prefix: writes <report>.jsonl and <report>.txt")
    p.add_argument("--parallelism", type=int, default=4)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    _add_oracle_flags(p)
    out["evaluate"] = p

    p = subs.add_parser("cache", help="inspect or clear the oracle cache")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("cache_command", choices=("stats", "clear"))
    p.add_argument("--cache", default=".taco_cache")
    out["cache"] = p
    return parser, out


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        _apply_config(subs[args.command], read_config(args.config))
        args = parser.parse_args(argv)
    missing = [k for k in _REQUIRED.get(args.command, ()) if getattr(args, k, None) is None]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))
    return args


# --- helpers ------------------------------------------------------------------


def _dataset(path: str):
    if not Path(path).exists():
        raise ConfigError(f"dataset not found: {path}")
    return load_dataset(path)


def _load_policy(checkpoint: str):
    if not Path(checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    vpath = vocab_path(checkpoint)
    if not vpath.exists():
        raise ConfigError(f"vocabulary sidecar not found: {vpath}")
    vocab = Vocabulary.load(vpath)
    params, step = load_checkpoint(checkpoint)
    if params.dims.V != len(vocab):
        raise VersionError(f"checkpoint vocabulary size {params.dims.V} != sidecar size {len(vocab)}")
    return params, step, vocab


def make_oracle(args, corpus_stats: CorpusStats):
    if args.oracle == "remote":
        inner = RemoteOracle(EndpointConfig(url=args.endpoint_url, model=args.model))
    else:
        inner = LocalOracle(corpus_stats)
    return CachedOracle(inner, args.cache) if args.cache else inner


# --- subcommands ----------------------------------------------------------------


def cmd_bootstrap(args) -> int:
    data = _dataset(args.dataset)
    vocab = Vocabulary.build(s.context for s in data)
    params = init_params(args.seed, Dims(len(vocab), args.dim, args.depth))
    pairs = []
    for s in data:
        for piece in chunk(tokenize(s.context, vocab), args.max_len):
            pairs.append((piece, heuristic_labels(piece)))
    print(f"bootstrap: seed={args.seed} samples={len(data)} chunks={len(pairs)} V={len(vocab)} d={args.dim} depth={args.depth}")
    params = supervised_bootstrap(params, pairs, args.epochs, args.lr, seed=args.seed)
    save_checkpoint(params, 0, args.out)
    vocab.save(vocab_path(args.out))
    print(f"wrote {args.out} sha256={digest(args.out)}")
    return EXIT_OK


def cmd_train(args) -> int:
    data = _dataset(args.dataset)
    reward = RewardConfig(
        c=args.c, L=args.L, r0=args.r0, lam=args.lam, alpha=args.alpha, metric=args.metric, tolerance=args.tolerance
    )
    config = TrainConfig(
        epochs=args.epochs, lr=args.lr, schedule=args.schedule, reward=reward,
        samples_per_prompt=args.samples_per_prompt, seed=args.seed, checkpoint_every=args.checkpoint_every,
        max_seq_len=args.max_len, max_output_tokens=args.max_output_tokens, baseline=args.baseline,
    )
    stats = CorpusStats.from_contexts(s.context for s in data)
    oracle = make_oracle(args, stats)  # remote without a key fails here, before any work
    params, _, vocab = _load_policy(args.init)
    out = Path(args.out)
    log_file = Path(args.log) if args.log else Path(str(out) + ".log.jsonl")
    print(f"train: seed={args.seed} epochs={args.epochs} lr={args.lr} c={args.c} L={args.L} metric={args.metric} oracle={oracle.oracle_id}")
    result = run_training(
        data, params, oracle, config, vocab=vocab, corpus_stats=stats,
        checkpoint_path=out, log_path=log_file, resume=args.resume,
    )
    vocab.save(vocab_path(out))
    if result.records and all(r.skipped for r in result.records):
        raise OracleUnavailable(f"every training step was skipped; last error: {result.records[-1].error}")
    for epoch, s in epoch_summary(result.records).items():
        print(
            f"epoch {epoch}: steps={s['steps']} skipped={s['skipped']} mean_r={s['mean_reward']:.4f} "
            f"mean_delta={s['mean_delta']:.2f} kept={s['kept_fraction']:.4f}"
        )
    print(f"wrote {out} step={result.step} sha256={digest(out)}")
    return EXIT_OK


def cmd_compress(args) -> int:
    if not 0 < args.rate <= 1:
        raise ConfigError(f"--rate must lie in (0, 1], got {args.rate}")
    params, _, vocab = _load_policy(args.checkpoint)
    if args.input == "-":
        text = sys.stdin.read()
    else:
        if not Path(args.input).exists():
            raise ConfigError(f"input not found: {args.input}")
        text = Path(args.input).read_text(encoding="utf-8")
    seq = tokenize(text, vocab)
    comp, stats = compress_document(seq, params, args.rate, args.mode, max_len=args.max_len)
    print(detokenize(comp.seq))
    print(f"original_n={stats.original_n} compressed_n={stats.compressed_n} tau={stats.rate!r} cr={stats.ratio!r}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    data = _dataset(args.dataset)
    if not data:
        raise ConfigError(f"dataset is empty: {args.dataset}")
    for c in args.rates:
        if not 0 < c <= 1:
            raise ConfigError(f"rates must lie in (0, 1], got {c}")
    unknown = [m for m in args.metrics if m not in DEFAULT_METRICS]
    if unknown:
        raise ConfigError(f"unknown metric(s): {', '.join(unknown)}")
    stats = CorpusStats.from_contexts(s.context for s in data)
    oracle = make_oracle(args, stats)
    params, _, vocab = _load_policy(args.checkpoint)
    report = evaluate(
        data, params, vocab, args.rates, oracle, args.metrics,
        max_len=args.max_len, max_output_tokens=args.max_output_tokens, parallelism=args.parallelism,
    )
    if not any(r.scored for r in report.rows):
        raise OracleUnavailable(f"no sample could be scored; first error: {report.failures[0]['error']}")
    jsonl, txt = Path(args.report + ".jsonl"), Path(args.report + ".txt")
    if jsonl.parent != Path(""):
        jsonl.parent.mkdir(parents=True, exist_ok=True)
    report.save(jsonl)
    table = report.table()
    txt.write_text(table, encoding="utf-8")
    if not report.complete:
        print(f"WARNING: incomplete evaluation, {len(report.failures)} oracle failures, coverage {report.coverage:.2f}")
    sys.stdout.write(table)
    print(f"wrote {jsonl} and {txt}")
    return EXIT_OK


def cmd_cache(args) -> int:
    if args.cache_command == "stats":
        s = cache_stats(args.cache)
        print(f"cache {args.cache}: entries={s['entries']} bytes={s['bytes']}")
    else:
        n = cache_clear(args.cache)
        print(f"cache {args.cache}: removed {n} entries")
    return EXIT_OK


COMMANDS = {
    "bootstrap": cmd_bootstrap,
    "train": cmd_train,
    "compress": cmd_compress,
    "evaluate": cmd_evaluate,
    "cache": cmd_cache,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OracleUnavailable as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
