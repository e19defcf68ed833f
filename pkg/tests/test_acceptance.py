"""End-to-end acceptance criteria; each test records one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdicts are
repeated in the "acceptance criteria" section of the terminal summary.
"""

import math
import time

import numpy as np

from metric_fixtures import FIXTURES, IDENTITY_TEXTS
from oracles import all_masks, central_difference, ref_forward, ref_log_prob, ref_entropy
from toy import keyword_stats, toy_config, toy_setup
from tacorl.checkpoint import dumps, load_checkpoint, loads, save_checkpoint
from tacorl.compressor import compress_document
from tacorl.corpus import DEFAULT_MAX_LEN, TokenSequence, Vocabulary, detokenize, tokenize
from tacorl.evaluator import DEFAULT_RATES, evaluate
from tacorl.oracle import CachedOracle, LocalOracle
from tacorl.policy import Dims, PolicyParameters, init_params, loss_and_gradient, topk_count
from tacorl.rewards import (
    METRICS,
    CorpusStats,
    RewardConfig,
    combine_qa_reward,
    compute_metric,
    relevance_reward,
    shaped_reward,
)
from tacorl.trainer import run_training


def _perturbed(seed, dims, scale=0.3):
    """Initialized parameters plus noise, so biases are non-zero too."""
    P = init_params(seed, dims)
    rng = np.random.default_rng(seed + 1000)
    flat = P.flat()
    return PolicyParameters.from_flat(dims, flat + scale * rng.standard_normal(flat.size))


# --- 1. gradient correctness ---------------------------------------------------------


def test_gradient_matches_finite_differences(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, failures, instances = 0.0, 0, 24
    for k in range(instances):
        V, d, n, depth = int(rng.integers(2, 51)), int(rng.integers(2, 17)), int(rng.integers(1, 17)), k % 3
        dims = Dims(V, d, depth)
        P = _perturbed(k, dims)
        ids = rng.integers(0, V, n)
        a = rng.integers(0, 2, n)
        r, lam = float(rng.uniform(-1, 1)), float(rng.uniform(0, 0.1))

        def ref_loss(theta):
            p = ref_forward(PolicyParameters.from_flat(dims, theta).tensors, depth, ids)
            return -r * ref_log_prob(p, a) - lam * ref_entropy(p)

        _, g = loss_and_gradient(P, ids, a, r, lam)
        g = g.flat()
        fd = central_difference(ref_loss, P.flat(), 1e-4)
        err = np.abs(g - fd)
        tol = np.maximum(1e-4 * np.maximum(np.abs(g), np.abs(fd)), 1e-8)
        failures += int(np.sum(err > tol))
        worst = max(worst, float(np.max(err / tol)))
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and elapsed < 60
    verdict(1, ok, f"{instances} instances, {failures} entries out of tolerance, worst err/tol {worst:.3f}, {elapsed:.1f}s")
    assert ok


# --- 2. estimator unbiasedness --------------------------------------------------------


def test_reinforce_estimator_is_unbiased(verdict):
    t0 = time.perf_counter()
    shaped_cfg = RewardConfig(c=0.5, L=1, r0=-0.1)
    worst, cases = 0.0, 0
    for k, n in enumerate((3, 5, 8)):
        dims = Dims(12, 4, 1 + k % 2)
        P = _perturbed(10 + k, dims)
        ids = np.random.default_rng(k).integers(0, 12, n)
        masks = all_masks(n)
        table = np.random.default_rng(50 + k).uniform(-1, 1, len(masks))
        target = np.arange(n) % 2

        def shaped(a):
            kept = int(a.sum())
            if kept == 0:  # |delta| = c*n > L for every n used here
                return shaped_cfg.r0
            metric = float(np.mean(a == target))
            return shaped_reward(metric, n, kept, shaped_cfg).value

        rewards = {
            "kept_fraction": [float(a.mean()) for a in masks],
            "random_table": list(table),
            "shaped": [shaped(a) for a in masks],
        }
        for name, rs in rewards.items():
            rs = np.array(rs)
            p = ref_forward(P.tensors, dims.depth, ids)
            probs = np.array([np.prod(np.where(a == 1, p, 1 - p)) for a in masks])
            # loss_and_gradient with lam=0 returns -r * grad log P(a)
            est = -sum(P_a * loss_and_gradient(P, ids, a, r, 0.0)[1].flat() for P_a, a, r in zip(probs, masks, rs))

            def objective(theta):
                q = ref_forward(PolicyParameters.from_flat(dims, theta).tensors, dims.depth, ids)
                return sum(np.prod(np.where(a == 1, q, 1 - q)) * r for a, r in zip(masks, rs))

            fd = central_difference(objective, P.flat(), 1e-4)
            worst = max(worst, float(np.max(np.abs(est - fd))))
            cases += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed < 120
    verdict(2, ok, f"{cases} (n, reward) cases, max |estimator - fd| {worst:.2e}, {elapsed:.1f}s")
    assert ok


# --- 3. toy-task convergence ------------------------------------------------------------


def test_toy_task_convergence(verdict):
    t0 = time.perf_counter()
    train, held, vocab, params = toy_setup(n_train=200, n_held=50, seed=0)
    cfg = toy_config()
    assert cfg.epochs <= 10
    res = run_training([t.sample for t in train], params, LocalOracle(), cfg, vocab=vocab)
    kw, filler, _ = keyword_stats(res.params, train, vocab)
    retention = keyword_stats(res.params, held, vocab)[2]
    elapsed = time.perf_counter() - t0
    checks = {"keyword>=0.9": kw >= 0.9, "filler<=0.3": filler <= 0.3, "held retention>=0.95": retention >= 0.95}
    ok = all(checks.values()) and elapsed < 300
    failed = [k for k, v in checks.items() if not v]
    verdict(
        3, ok,
        f"keyword p {kw:.3f}, filler p {filler:.3f}, held-out retention {retention:.3f}, {elapsed:.1f}s"
        + (f" (failed: {', '.join(failed)})" if failed else ""),
    )
    assert ok


# --- 4. reward shaping contract -----------------------------------------------------------


def test_reward_shaping_contract(verdict):
    rng = np.random.default_rng(4)
    bad = 0
    in_tol = 0
    for i in range(10_000):
        n = int(rng.integers(1, 5000))
        m = int(rng.integers(1, 5000))
        # mix grid rates and integer L (exact boundaries) with arbitrary floats
        c = float(rng.choice(DEFAULT_RATES)) if i % 2 else float(rng.uniform(0.01, 1.0))
        L = float(rng.integers(0, 200)) if i % 3 else float(rng.uniform(0, 200))
        if i % 5 == 0:  # land exactly on the tolerance boundary
            c, n = 0.5, 2 * int(rng.integers(1, 2000))
            m = int(c * n + rng.choice([-1, 1]) * L) if c * n - L >= 1 else m
        metric = float(rng.uniform(0, 1))
        out = shaped_reward(metric, n, m, RewardConfig(c=c, L=L, r0=-0.1))
        delta_ok = out.delta == m - c * n
        iff_ok = (out.value == -0.1) == (abs(m - c * n) > L)
        value_ok = out.value == (metric if abs(m - c * n) <= L else -0.1)
        bad += not (delta_ok and iff_ok and value_ok)
        in_tol += out.in_tolerance
    ok = bad == 0
    verdict(4, ok, f"10000 tuples ({in_tol} in tolerance), {bad} violations")
    assert ok


# --- 5. metric oracles ------------------------------------------------------------------------


def test_metric_fixtures(verdict):
    wrong = [
        (m, c, r, e, compute_metric(m, c, r))
        for m, c, r, e in FIXTURES
        if round(compute_metric(m, c, r), 4) != round(e, 4)
    ]
    not_one = [(name, t) for t in IDENTITY_TEXTS for name in METRICS if compute_metric(name, t, t) != 1.0]
    ok = len(FIXTURES) >= 25 and not wrong and not not_one
    verdict(5, ok, f"{len(FIXTURES)} fixtures, {len(wrong)} mismatches; identity failures {len(not_one)}")
    assert ok, (wrong, not_one)


# --- 6. exact-rate inference -------------------------------------------------------------------

# Smallest length for which every grid rate meets the 0.02 bound (exhaustive
# search over n in [1, 4096]; shorter documents cannot, e.g. n = 1 gives tau = 1).
MIN_DOC_LEN = 26


def test_exact_rate_inference(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    V = 200
    vocab = Vocabulary([f"t{i}" for i in range(V - 1)])
    params = init_params(6, Dims(len(vocab), 4, 1))
    count_bad, tau_bad, worst = 0, 0, 0.0
    for _ in range(1000):
        n = int(rng.integers(MIN_DOC_LEN, 4097))
        ids = rng.integers(1, len(vocab), n)
        seq = TokenSequence(tuple(vocab.token(i) for i in ids), tuple(int(i) for i in ids))
        for c in DEFAULT_RATES:
            comp, stats = compress_document(seq, params, c, "topk")
            per_chunk = np.bincount(np.asarray(comp.kept_indices) // DEFAULT_MAX_LEN, minlength=-(-n // DEFAULT_MAX_LEN))
            lens = [min(DEFAULT_MAX_LEN, n - s) for s in range(0, n, DEFAULT_MAX_LEN)]
            count_bad += int(any(k != topk_count(c, ln) for k, ln in zip(per_chunk, lens)))
            dev = abs(stats.rate - c)
            worst = max(worst, dev)
            tau_bad += dev > 0.02
    elapsed = time.perf_counter() - t0
    ok = count_bad == 0 and tau_bad == 0
    verdict(
        6, ok,
        f"1000 docs (n in [{MIN_DOC_LEN}, 4096]) x 5 rates: {count_bad} chunk-count errors, "
        f"{tau_bad} tau misses, worst |tau - c| {worst:.4f}, {elapsed:.1f}s",
    )
    assert ok


# --- 7. determinism & persistence ----------------------------------------------------------------


class _Recorder:
    oracle_id = "local-recorded"

    def __init__(self):
        self.inner = LocalOracle()
        self.prompts = []

    def generate(self, request):
        self.prompts.append(request.prompt)
        return self.inner.generate(request)


def test_determinism_and_persistence(verdict, tmp_path):
    train, _, vocab, params = toy_setup(n_train=20, n_held=1, seed=0)
    data = [t.sample for t in train]
    cfg = toy_config(epochs=2, seed=9)
    for name in ("a", "b"):
        run_training(data, params, LocalOracle(), cfg, vocab=vocab, checkpoint_path=tmp_path / f"{name}.ckpt")
    same_runs = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    trained, step = load_checkpoint(tmp_path / "a.ckpt")
    save_checkpoint(trained, step, tmp_path / "c.ckpt")
    again, step2 = load_checkpoint(tmp_path / "c.ckpt")
    round_trip = again.equals(trained) and step2 == step and dumps(again, step) == (tmp_path / "a.ckpt").read_bytes()
    round_trip = round_trip and loads(dumps(trained, step))[0].equals(trained)

    full = {detokenize(tokenize(s.context, vocab)) for s in data}
    rec = _Recorder()
    evaluate(data, trained, vocab, oracle=CachedOracle(rec, tmp_path / "cache"))
    cold = sum(p in full for p in rec.prompts)
    before = len(rec.prompts)
    evaluate(data, trained, vocab, oracle=CachedOracle(rec, tmp_path / "cache"))
    warm = sum(p in full for p in rec.prompts[before:])
    ok = same_runs and round_trip and cold == len(data) and warm == 0
    verdict(
        7, ok,
        f"identical checkpoints {same_runs}, bit-exact round trip {round_trip}, "
        f"y_orig oracle calls cold {cold} / warm {warm}",
    )
    assert ok


# --- 8. relevance reward ------------------------------------------------------------------------


def test_relevance_reward_fixture(verdict):
    context = "cats purr . dogs bark loudly . cats chase dogs ."
    question = "why do cats purr"
    stats = CorpusStats.from_contexts([context])  # three one-sentence documents
    # idf = ln((1 + N) / (1 + df)) + 1 with N = 3
    a = math.log(4 / 3) + 1  # cats, dogs: df = 2
    b = math.log(2) + 1  # purr, bark, loudly, chase: df = 1
    w = math.log(4) + 1  # why, do: unseen
    q_norm = math.sqrt(2 * w * w + a * a + b * b)
    s1 = (a * a + b * b) / (math.sqrt(a * a + b * b) * q_norm)  # {cats, purr}
    s2 = 0.0  # {dogs, bark, loudly}: no shared term
    s3 = (a * a) / (math.sqrt(2 * a * a + b * b) * q_norm)  # {cats, chase, dogs}
    token_score = [s1] * 3 + [s2] * 4 + [s3] * 4

    vocab = Vocabulary.build([context])
    seq = tokenize(context, vocab)
    assert seq.n == 11
    masks = [
        [1] * 11,
        [1, 1, 1] + [0] * 8,
        [0, 0, 0, 1, 1, 0, 0, 1, 0, 1, 0],
        [1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1],
        [0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0],
    ]
    worst = 0.0
    for m in masks:
        expected = sum(s for s, k in zip(token_score, m) if k) / sum(m)
        worst = max(worst, abs(relevance_reward(seq, question, m, stats) - expected))

    rng = np.random.default_rng(8)
    combine_exact = all(
        combine_qa_reward(f, s, al) == f + al * s for f, s, al in rng.uniform(0, 1, (100, 3))
    )
    ok = worst <= 1e-9 and combine_exact
    verdict(8, ok, f"5 masks, max |relevance - hand value| {worst:.1e}; combine exact {combine_exact}")
    assert ok
