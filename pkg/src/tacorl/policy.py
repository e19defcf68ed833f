"""Token keep/drop policy: a small bidirectional recurrent encoder with a
two-class softmax head, plus the REINFORCE loss and its exact gradient.

The encoder maps ids -> embeddings -> ``depth`` bidirectional tanh-RNN
layers -> logits ``W h_i + b`` (2 classes, index 1 = keep). Each layer runs a
left-to-right state of width ceil(d/2) and a right-to-left state of width
floor(d/2); their concatenation (width d) feeds the next layer.

Gradients are derived by hand (backprop through time) and checked against
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import TokenSequence
from .errors import DimError, NumericalError, SchemaError, VocabError

KEEP = 1
_P_LO = np.nextafter(0.0, 1.0)
_P_HI = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class Dims:
    V: int
    d: int
    depth: int = 1

    @property
    def d_fwd(self) -> int:
        return (self.d + 1) // 2

    @property
    def d_bwd(self) -> int:
        return self.d // 2

    def validate(self) -> None:
        if self.V < 2 or self.d < 2 or self.depth < 0:
            raise DimError(f"invalid dims V={self.V} d={self.d} depth={self.depth}")


def tensor_layout(dims: Dims) -> list[tuple[str, tuple[int, ...]]]:
    """Fixed tensor order and shapes; checkpoints serialize in this order."""
    d, df, db = dims.d, dims.d_fwd, dims.d_bwd
    layout = [("embedding", (dims.V, d))]
    for l in range(dims.depth):
        layout += [
            (f"layer{l}.fwd_in", (df, d)),
            (f"layer{l}.fwd_rec", (df, df)),
            (f"layer{l}.fwd_b", (df,)),
            (f"layer{l}.bwd_in", (db, d)),
            (f"layer{l}.bwd_rec", (db, db)),
            (f"layer{l}.bwd_b", (db,)),
        ]
    layout += [("classifier_W", (2, d)), ("classifier_b", (2,))]
    return layout


class PolicyParameters:
    """Ordered mapping name -> float64 array, shaped per ``tensor_layout``.

    Treated as an immutable snapshot: updates build a new instance.
    The same container type doubles as the gradient bundle.
    """

    def __init__(self, dims: Dims, tensors: dict[str, np.ndarray]):
        layout = tensor_layout(dims)
        if [name for name, _ in layout] != list(tensors):
            raise DimError("tensor names do not match the layout for these dims")
        for name, shape in layout:
            if tensors[name].shape != shape:
                raise DimError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
        self.dims = dims
        self.tensors = tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(self.dims, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> "PolicyParameters":
        return PolicyParameters(self.dims, {k: np.zeros_like(v) for k, v in self.tensors.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    @classmethod
    def from_flat(cls, dims: Dims, vec: np.ndarray) -> "PolicyParameters":
        out, pos = {}, 0
        for name, shape in tensor_layout(dims):
            size = int(np.prod(shape))
            out[name] = np.array(vec[pos : pos + size], dtype=np.float64).reshape(shape)
            pos += size
        if pos != len(vec):
            raise DimError(f"flat vector has {len(vec)} entries, layout needs {pos}")
        return cls(dims, out)

    def equals(self, other: "PolicyParameters") -> bool:
        """Bitwise equality of every tensor."""
        return self.dims == other.dims and all(
            a.tobytes() == b.tobytes() for a, b in zip(self.tensors.values(), other.tensors.values())
        )

    def __repr__(self) -> str:
        return f"PolicyParameters({self.dims})"


GradientBundle = PolicyParameters


@dataclass(frozen=True)
class KeepProbabilities:
    p: np.ndarray
    logit: np.ndarray  # keep-minus-drop logit margin, p = sigmoid(logit)

    def __len__(self) -> int:
        return len(self.p)


@dataclass(frozen=True)
class ActionMask:
    a: np.ndarray

    @classmethod
    def of(cls, bits: Iterable[int]) -> "ActionMask":
        return cls(np.asarray(list(bits) if not isinstance(bits, np.ndarray) else bits, dtype=np.int8))

    @property
    def kept(self) -> int:
        return int(self.a.sum())

    @property
    def n(self) -> int:
        return len(self.a)

    def __len__(self) -> int:
        return len(self.a)

    def tolist(self) -> list[int]:
        return [int(x) for x in self.a]


def init_params(seed: int, dims: Dims) -> PolicyParameters:
    """Glorot-uniform weights, deterministic in ``seed``; all biases zero."""
    dims.validate()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_layout(dims):
        if len(shape) == 1:
            tensors[name] = np.zeros(shape)
        else:
            fan_out, fan_in = shape
            s = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-s, s, size=shape)
    return PolicyParameters(dims, tensors)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


@dataclass
class _Cache:
    ids: np.ndarray
    layer_io: list  # per layer: (input, fwd states, bwd states)
    top: np.ndarray
    logit: np.ndarray


def _check_ids(params: PolicyParameters, ids: np.ndarray) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= params.dims.V):
        bad = int(ids.max()) if ids.max() >= params.dims.V else int(ids.min())
        raise VocabError(f"token id {bad} outside vocabulary of size {params.dims.V}")


def _forward_batch(params: PolicyParameters, ids: np.ndarray) -> _Cache:
    """Forward pass over a (B, n) batch of equal-length id sequences."""
    _check_ids(params, ids)
    dims = params.dims
    B, n = ids.shape
    x = params["embedding"][ids]
    layer_io = []
    for l in range(dims.depth):
        w_fi, w_fr, b_f = params[f"layer{l}.fwd_in"], params[f"layer{l}.fwd_rec"], params[f"layer{l}.fwd_b"]
        w_bi, w_br, b_b = params[f"layer{l}.bwd_in"], params[f"layer{l}.bwd_rec"], params[f"layer{l}.bwd_b"]
        pre_f = x @ w_fi.T + b_f
        pre_b = x @ w_bi.T + b_b
        fs = np.empty((B, n, dims.d_fwd))
        bs = np.empty((B, n, dims.d_bwd))
        h = np.zeros((B, dims.d_fwd))
        for t in range(n):
            h = np.tanh(pre_f[:, t] + h @ w_fr.T)
            fs[:, t] = h
        h = np.zeros((B, dims.d_bwd))
        for t in range(n - 1, -1, -1):
            h = np.tanh(pre_b[:, t] + h @ w_br.T)
            bs[:, t] = h
        layer_io.append((x, fs, bs))
        x = np.concatenate([fs, bs], axis=-1)
    with np.errstate(invalid="ignore", over="ignore"):  # non-finite values are reported below
        z = x @ params["classifier_W"].T + params["classifier_b"]
        logit = z[..., KEEP] - z[..., 1 - KEEP]
    if not np.all(np.isfinite(logit)):
        raise NumericalError("non-finite logits in forward pass", tensor="logits")
    return _Cache(ids=ids, layer_io=layer_io, top=x, logit=logit)


def _backward_batch(params: PolicyParameters, cache: _Cache, dlogit: np.ndarray) -> GradientBundle:
    """Gradient of a scalar objective given d(objective)/d(logit margin)."""
    dims = params.dims
    grads: dict[str, np.ndarray] = {}
    dz = np.zeros(dlogit.shape + (2,))
    dz[..., KEEP] = dlogit
    dz[..., 1 - KEEP] = -dlogit
    grads["classifier_W"] = np.einsum("bnk,bnd->kd", dz, cache.top)
    grads["classifier_b"] = dz.sum(axis=(0, 1))
    dx = dz @ params["classifier_W"]
    for l in range(dims.depth - 1, -1, -1):
        x_in, fs, bs = cache.layer_io[l]
        w_fi, w_fr = params[f"layer{l}.fwd_in"], params[f"layer{l}.fwd_rec"]
        w_bi, w_br = params[f"layer{l}.bwd_in"], params[f"layer{l}.bwd_rec"]
        B, n, _ = fs.shape
        d_fs, d_bs = dx[..., : dims.d_fwd], dx[..., dims.d_fwd :]

        dpre_f = np.empty_like(fs)
        g_fr = np.zeros_like(w_fr)
        carry = np.zeros((B, dims.d_fwd))
        for t in range(n - 1, -1, -1):
            dpre = (d_fs[:, t] + carry) * (1.0 - fs[:, t] ** 2)
            dpre_f[:, t] = dpre
            if t > 0:
                g_fr += dpre.T @ fs[:, t - 1]
            carry = dpre @ w_fr

        dpre_b = np.empty_like(bs)
        g_br = np.zeros_like(w_br)
        carry = np.zeros((B, dims.d_bwd))
        for t in range(n):
            dpre = (d_bs[:, t] + carry) * (1.0 - bs[:, t] ** 2)
            dpre_b[:, t] = dpre
            if t < n - 1:
                g_br += dpre.T @ bs[:, t + 1]
            carry = dpre @ w_br

        grads[f"layer{l}.fwd_in"] = np.einsum("bnh,bnd->hd", dpre_f, x_in)
        grads[f"layer{l}.fwd_rec"] = g_fr
        grads[f"layer{l}.fwd_b"] = dpre_f.sum(axis=(0, 1))
        grads[f"layer{l}.bwd_in"] = np.einsum("bnh,bnd->hd", dpre_b, x_in)
        grads[f"layer{l}.bwd_rec"] = g_br
        grads[f"layer{l}.bwd_b"] = dpre_b.sum(axis=(0, 1))
        dx = dpre_f @ w_fi + dpre_b @ w_bi
    g_emb = np.zeros_like(params["embedding"])
    np.add.at(g_emb, cache.ids.ravel(), dx.reshape(-1, dims.d))
    grads["embedding"] = g_emb

    ordered = {name: grads[name] for name, _ in tensor_layout(dims)}
    for name, g in ordered.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}", tensor=name)
    return PolicyParameters(dims, ordered)


def _ids(seq: TokenSequence | Sequence[int] | np.ndarray) -> np.ndarray:
    ids = seq.ids if isinstance(seq, TokenSequence) else seq
    return np.asarray(ids, dtype=np.int64).reshape(1, -1)


def _probs(logit: np.ndarray) -> np.ndarray:
    return np.clip(_sigmoid(logit), _P_LO, _P_HI)


def forward(params: PolicyParameters, seq: TokenSequence | Sequence[int]) -> KeepProbabilities:
    """Per-token keep probabilities softmax(W h_i + b)[keep]."""
    cache = _forward_batch(params, _ids(seq))
    logit = cache.logit[0]
    return KeepProbabilities(p=_probs(logit), logit=logit)


def forward_many(params: PolicyParameters, seqs: Sequence[TokenSequence]) -> list[KeepProbabilities]:
    """Forward several sequences, batching the ones that share a length."""
    out: list[KeepProbabilities | None] = [None] * len(seqs)
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        by_len.setdefault(s.n, []).append(i)
    for idxs in by_len.values():
        ids = np.asarray([seqs[i].ids for i in idxs], dtype=np.int64)
        logits = _forward_batch(params, ids).logit
        for row, i in enumerate(idxs):
            out[i] = KeepProbabilities(p=_probs(logits[row]), logit=logits[row])
    return out  # type: ignore[return-value]


def _as_p(p: KeepProbabilities | Sequence[float] | np.ndarray) -> np.ndarray:
    return p.p if isinstance(p, KeepProbabilities) else np.asarray(p, dtype=np.float64)


def _as_a(a: ActionMask | Sequence[int] | np.ndarray) -> np.ndarray:
    return a.a if isinstance(a, ActionMask) else np.asarray(a)


def sample_actions(p, rng: np.random.Generator) -> ActionMask:
    """Independent Bernoulli(p_i) draws; an all-zero draw keeps the argmax token."""
    probs = _as_p(p)
    a = (rng.random(len(probs)) < probs).astype(np.int8)
    if not a.any():
        a[int(np.argmax(probs))] = 1
    return ActionMask(a)


def round_half_up(x: float) -> int:
    # c*n is non-negative here, so half-up equals half-away-from-zero.
    return int(np.floor(x + 0.5))


def topk_count(c: float, n: int) -> int:
    return max(1, round_half_up(c * n))


def select_topk(p, c: float) -> ActionMask:
    """Keep the max(1, round(c*n)) most probable tokens; ties go to the lower index."""
    if not 0 < c <= 1:
        raise ValueError(f"rate c must lie in (0, 1], got {c}")
    probs = _as_p(p)
    k = topk_count(c, len(probs))
    # Logit margins order tokens exactly like p but without float saturation ties.
    score = p.logit if isinstance(p, KeepProbabilities) else probs
    order = np.argsort(-score, kind="stable")
    a = np.zeros(len(probs), dtype=np.int8)
    a[order[:k]] = 1
    return ActionMask(a)


def threshold_select(p) -> ActionMask:
    return ActionMask((_as_p(p) >= 0.5).astype(np.int8))


def log_prob(p, a) -> float:
    probs, bits = _as_p(p), _as_a(a)
    if len(probs) != len(bits):
        raise SchemaError(f"mask length {len(bits)} != probability length {len(probs)}")
    return float(np.sum(np.where(bits == 1, np.log(probs), np.log1p(-probs))))


def entropy(p) -> float:
    """Sum of per-token binary entropies (nats)."""
    probs = _as_p(p)
    return float(np.sum(-probs * np.log(probs) - (1.0 - probs) * np.log1p(-probs)))


def _stable_terms(logit: np.ndarray, bits: np.ndarray) -> tuple[float, float, np.ndarray]:
    """log P(a), H(p) and p evaluated from logit margins without cancellation."""
    log_p = _log_sigmoid(logit)
    log_q = _log_sigmoid(-logit)
    p = _sigmoid(logit)
    lp = float(np.sum(np.where(bits == 1, log_p, log_q)))
    ent = float(np.sum(-p * log_p - (1.0 - p) * log_q))
    return lp, ent, p


def loss_and_gradient(
    params: PolicyParameters,
    seq: TokenSequence | Sequence[int],
    a,
    r: float,
    lam: float,
) -> tuple[float, GradientBundle]:
    """L = -r * sum_i log p(a_i|x) - lam * H(p), with its exact gradient."""
    if not np.isfinite(r):
        raise NumericalError(f"reward {r} is not finite", tensor="reward")
    if lam < 0:
        raise ValueError("entropy weight must be non-negative")
    cache = _forward_batch(params, _ids(seq))
    logit = cache.logit[0]
    bits = _as_a(a)
    if len(bits) != len(logit):
        raise SchemaError(f"mask length {len(bits)} != sequence length {len(logit)}")
    lp, ent, p = _stable_terms(logit, bits)
    loss = -r * lp - lam * ent
    # d log p(a_i)/d logit = a_i - p_i ; dH_i/d logit = -logit * p_i (1 - p_i)
    dlogit = -r * (bits - p) + lam * logit * p * (1.0 - p)
    grads = _backward_batch(params, cache, dlogit.reshape(1, -1))
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss", tensor="loss")
    return float(loss), grads


def apply_update(params: PolicyParameters, grads: GradientBundle, lr: float) -> PolicyParameters:
    """Plain gradient descent step theta - lr * grad."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if grads.dims != params.dims or list(grads.tensors) != list(params.tensors):
        raise DimError("gradient bundle does not match parameter layout")
    out = {}
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise DimError(f"{name}: gradient shape {g.shape} != parameter shape {value.shape}")
        out[name] = value - lr * g
    return PolicyParameters(params.dims, out)


def add_grads(a: GradientBundle, b: GradientBundle, scale: float = 1.0) -> GradientBundle:
    return PolicyParameters(a.dims, {k: a[k] + scale * b[k] for k in a.tensors})


def scale_grads(g: GradientBundle, scale: float) -> GradientBundle:
    return PolicyParameters(g.dims, {k: v * scale for k, v in g.items()})


def bce_loss_and_gradient(
    params: PolicyParameters, seq: TokenSequence | Sequence[int], labels: Sequence[int]
) -> tuple[float, GradientBundle]:
    """Mean binary cross-entropy of keep probabilities against 0/1 labels."""
    cache = _forward_batch(params, _ids(seq))
    logit = cache.logit[0]
    y = np.asarray(labels, dtype=np.float64)
    if len(y) != len(logit):
        raise SchemaError(f"{len(y)} labels for {len(logit)} tokens")
    n = len(y)
    loss = float(-np.sum(y * _log_sigmoid(logit) + (1 - y) * _log_sigmoid(-logit)) / n)
    dlogit = (_sigmoid(logit) - y) / n
    return loss, _backward_batch(params, cache, dlogit.reshape(1, -1))


def supervised_bootstrap(
    params: PolicyParameters,
    labeled_pairs: Sequence[tuple[TokenSequence, Sequence[int]]],
    epochs: int,
    lr: float,
    seed: int = 0,
) -> PolicyParameters:
    """Stage-one training: per-sequence SGD on mean BCE against token labels."""
    for seq, labels in labeled_pairs:
        if len(labels) != seq.n:
            raise SchemaError(f"{len(labels)} labels for a {seq.n}-token sequence")
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for idx in rng.permutation(len(labeled_pairs)):
            seq, labels = labeled_pairs[idx]
            _, g = bce_loss_and_gradient(params, seq, labels)
            params = apply_update(params, g, lr)
    return params
