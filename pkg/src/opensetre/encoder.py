"""Compact differentiable encoder with entity-marker readout and NOTA scoring.

The encoder embeds tokens (plus optional learned positions), applies a single
weight-tied mixer block zero or more times (single-head scaled dot-product
attention and a tanh feed-forward, both with residual connections), reads out
a fixed-length representation, and classifies with a linear head.  The NOTA
detection score is the log-sum-exp of the logits.

Forward and reverse passes are written out explicitly so that gradients with
respect to every parameter and every input embedding are exact and fully
deterministic; tests check them against central finite differences.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import E1, E1_END, E2, E2_END, RelationInstance, Vocabulary

READOUTS = ("markers", "mean", "sum")

# decide() returns this for inputs rejected as none-of-the-above
NOTA_DECISION = -1


class EncoderError(ValueError):
    pass


class LengthError(EncoderError):
    """Marked sequence longer than the position table."""


@dataclass(frozen=True)
class EncoderConfig:
    d_e: int = 32
    depth: int = 1
    readout: str = "markers"
    use_positions: bool = True
    max_len: int = 64

    def __post_init__(self) -> None:
        if self.depth not in (0, 1, 2):
            raise EncoderError("depth must be 0, 1, or 2")
        if self.readout not in READOUTS:
            raise EncoderError(f"readout must be one of {READOUTS}")
        if self.d_e <= 0 or self.max_len <= 0:
            raise EncoderError("d_e and max_len must be positive")


@dataclass(frozen=True)
class MarkedInstance:
    """Token ids with entity markers inserted, plus the position bookkeeping.

    ``orig_to_marked[i]`` is the marked-sequence position of original token i.
    """

    ids: tuple[int, ...]
    e1_pos: int
    e2_pos: int
    orig_to_marked: tuple[int, ...]


def mark_instance(instance: RelationInstance, vocab: Vocabulary) -> MarkedInstance:
    """Insert [E1]/[/E1]/[E2]/[/E2] as real vocabulary tokens around the spans."""
    hs, he = instance.head
    ts, te = instance.tail
    ids: list[int] = []
    orig_to_marked: list[int] = []
    e1_pos = e2_pos = -1
    n = len(instance.tokens)
    for i in range(n + 1):
        # closers before openers so adjacent spans nest correctly
        if i == he:
            ids.append(vocab.id(E1_END))
        if i == te:
            ids.append(vocab.id(E2_END))
        if i == hs:
            e1_pos = len(ids)
            ids.append(vocab.id(E1))
        if i == ts:
            e2_pos = len(ids)
            ids.append(vocab.id(E2))
        if i < n:
            orig_to_marked.append(len(ids))
            ids.append(vocab.id(instance.tokens[i]))
    return MarkedInstance(tuple(ids), e1_pos, e2_pos, tuple(orig_to_marked))


class EncoderParams:
    """All trainable tensors plus the architecture config.

    The mixer block is allocated only for depth >= 1 and is applied ``depth``
    times with shared weights.
    """

    def __init__(self, config: EncoderConfig, n_relations: int, tensors: dict[str, np.ndarray]):
        self.config = config
        self.n_relations = n_relations
        self._tensors = tensors
        for name, arr in tensors.items():
            setattr(self, name, arr)

    @staticmethod
    def tensor_shapes(config: EncoderConfig, vocab_size: int, n_relations: int) -> dict[str, tuple[int, ...]]:
        d = config.d_e
        shapes: dict[str, tuple[int, ...]] = {
            "emb": (vocab_size, d),
            "pos": (config.max_len, d),
        }
        if config.depth >= 1:
            shapes.update(
                wq=(d, d), wk=(d, d), wv=(d, d), wo=(d, d),
                w1=(d, d), b1=(d,), w2=(d, d), b2=(d,),
            )
        shapes["w_cls"] = (n_relations, 2 * d)
        shapes["b_cls"] = (n_relations,)
        return shapes

    @classmethod
    def init(cls, vocab_size: int, n_relations: int, config: EncoderConfig, seed: int) -> "EncoderParams":
        if n_relations < 1:
            raise EncoderError("need at least one known relation")
        rng = np.random.default_rng(seed)
        tensors = {
            name: rng.uniform(-0.08, 0.08, size=shape)
            for name, shape in cls.tensor_shapes(config, vocab_size, n_relations).items()
        }
        return cls(config, n_relations, tensors)

    def tensors(self) -> dict[str, np.ndarray]:
        return self._tensors

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self._tensors.items()}

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, self.n_relations,
                             {name: arr.copy() for name, arr in self._tensors.items()})

    def checksum(self) -> int:
        crc = 0
        for name in sorted(self._tensors):
            crc = zlib.crc32(self._tensors[name].tobytes(), crc)
        return crc

    @property
    def vocab_size(self) -> int:
        return self._tensors["emb"].shape[0]


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: EncoderParams, marked: MarkedInstance,
            x0_override: np.ndarray | None = None) -> tuple[np.ndarray, dict]:
    """Logits for one marked instance, with cached intermediates for backward.

    ``x0_override`` replaces the embedded input matrix wholesale; gradient
    tests use it to probe single input positions.
    """
    cfg = params.config
    ids = np.asarray(marked.ids, dtype=np.int64)
    if ids.size > cfg.max_len:
        raise LengthError(f"sequence length {ids.size} exceeds max_len {cfg.max_len}")

    if x0_override is not None:
        x = x0_override.copy()
    else:
        x = params.emb[ids].copy()
        if cfg.use_positions:
            x += params.pos[: ids.size]

    cache: dict = {"ids": ids, "x0": x, "blocks": []}
    scale = 1.0 / math.sqrt(cfg.d_e)
    for _ in range(cfg.depth):
        q = x @ params.wq
        k = x @ params.wk
        v = x @ params.wv
        attn = _softmax_rows((q @ k.T) * scale)
        ctx = attn @ v
        xa = x + ctx @ params.wo
        z = np.tanh(xa @ params.w1 + params.b1)
        x_out = xa + z @ params.w2 + params.b2
        cache["blocks"].append({"x_in": x, "q": q, "k": k, "v": v, "attn": attn,
                                "ctx": ctx, "xa": xa, "z": z})
        x = x_out

    if cfg.readout == "markers":
        h = np.concatenate([x[marked.e1_pos], x[marked.e2_pos]])
    else:
        pooled = x.sum(axis=0) if cfg.readout == "sum" else x.mean(axis=0)
        h = np.concatenate([pooled, pooled])

    logits = params.w_cls @ h + params.b_cls
    cache.update(x_final=x, h=h, marked=marked)
    return logits, cache


def backward(params: EncoderParams, cache: dict, d_logits: np.ndarray,
             grads: dict[str, np.ndarray] | None = None) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Propagate d(objective)/d(logits) back to all parameters and inputs.

    Returns (parameter gradients, per-position input-embedding gradients).
    Gradients accumulate into ``grads`` when given, so a batch can share one
    accumulator.
    """
    cfg = params.config
    marked: MarkedInstance = cache["marked"]
    if grads is None:
        grads = params.zero_grads()

    grads["w_cls"] += np.outer(d_logits, cache["h"])
    grads["b_cls"] += d_logits
    dh = params.w_cls.T @ d_logits

    d = cfg.d_e
    t_len = cache["ids"].size
    dx = np.zeros((t_len, d))
    if cfg.readout == "markers":
        dx[marked.e1_pos] += dh[:d]
        dx[marked.e2_pos] += dh[d:]
    else:
        dpool = dh[:d] + dh[d:]
        if cfg.readout == "mean":
            dpool = dpool / t_len
        dx += dpool

    scale = 1.0 / math.sqrt(d)
    for blk in reversed(cache["blocks"]):
        x_in, q, k, v = blk["x_in"], blk["q"], blk["k"], blk["v"]
        attn, ctx, xa, z = blk["attn"], blk["ctx"], blk["xa"], blk["z"]

        # feed-forward with residual: x_out = xa + tanh(xa w1 + b1) w2 + b2
        dz = dx @ params.w2.T
        grads["w2"] += z.T @ dx
        grads["b2"] += dx.sum(axis=0)
        du = dz * (1.0 - z * z)
        grads["w1"] += xa.T @ du
        grads["b1"] += du.sum(axis=0)
        dxa = dx + du @ params.w1.T

        # attention with residual: xa = x_in + (attn v) wo
        dctx = dxa @ params.wo.T
        grads["wo"] += ctx.T @ dxa
        dattn = dctx @ v.T
        dv = attn.T @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=1, keepdims=True))
        dq = dscores @ k * scale
        dk = dscores.T @ q * scale
        grads["wq"] += x_in.T @ dq
        grads["wk"] += x_in.T @ dk
        grads["wv"] += x_in.T @ dv
        dx = dxa + dq @ params.wq.T + dk @ params.wk.T + dv @ params.wv.T

    input_grads = dx
    np.add.at(grads["emb"], cache["ids"], dx)
    if cfg.use_positions:
        grads["pos"][:t_len] += dx
    return grads, input_grads


def encode(params: EncoderParams, marked: MarkedInstance) -> np.ndarray:
    """Fixed-length representation h of dimension 2 * d_e."""
    _, cache = forward(params, marked)
    return cache["h"]


def class_logits(params: EncoderParams, h: np.ndarray) -> np.ndarray:
    if h.shape != (2 * params.config.d_e,):
        raise EncoderError(f"representation must have dimension {2 * params.config.d_e}")
    return params.w_cls @ h + params.b_cls


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    return _softmax_rows(np.asarray(logits, dtype=np.float64))


def nota_score(logits: np.ndarray) -> float:
    """log-sum-exp of the logits, max-subtracted for overflow safety."""
    logits = np.asarray(logits, dtype=np.float64)
    m = logits.max()
    return float(m + np.log(np.exp(logits - m).sum()))


def nota_score_grad_logits(logits: np.ndarray) -> np.ndarray:
    """d nota_score / d logits, which is softmax(logits)."""
    return softmax_probs(logits)


def decide(logits: np.ndarray, alpha: float) -> int:
    """Relation index, or NOTA_DECISION when the detection score is <= alpha.

    Argmax ties break toward the lowest relation index.
    """
    if nota_score(logits) <= alpha:
        return NOTA_DECISION
    return int(np.argmax(logits))


def grad_embeddings(params: EncoderParams, marked: MarkedInstance,
                    objective: str = "nota_score") -> np.ndarray:
    """Per-position gradients of the objective w.r.t. the input embeddings.

    One forward-backward pass yields the gradient at every position; shape is
    (marked length, d_e).
    """
    logits, cache = forward(params, marked)
    if objective != "nota_score":
        raise EncoderError(f"unknown objective {objective!r}")
    _, input_grads = backward(params, cache, nota_score_grad_logits(logits))
    return input_grads


def save_checkpoint(params: EncoderParams, vocab: Vocabulary,
                    relations: Sequence[str], path: str | Path) -> None:
    """Single-JSON checkpoint: {"version":1, "config":{...}, "tensors":{...}}."""
    cfg = params.config
    doc = {
        "version": 1,
        "config": {
            "d_e": cfg.d_e,
            "depth": cfg.depth,
            "readout": cfg.readout,
            "use_positions": cfg.use_positions,
            "max_len": cfg.max_len,
            "vocab": list(vocab.tokens),
            "relations": list(relations),
        },
        "tensors": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel(order="C")]}
            for name, arr in params.tensors().items()
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> tuple[EncoderParams, Vocabulary, tuple[str, ...]]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != 1:
        raise EncoderError(f"unsupported checkpoint version {doc.get('version')!r}")
    c = doc["config"]
    config = EncoderConfig(d_e=c["d_e"], depth=c["depth"], readout=c["readout"],
                           use_positions=c["use_positions"], max_len=c["max_len"])
    vocab_tokens = c["vocab"]
    relations = tuple(c["relations"])
    tensors = {}
    for name, spec in doc["tensors"].items():
        arr = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        tensors[name] = arr
    expected = EncoderParams.tensor_shapes(config, len(vocab_tokens), len(relations))
    if set(expected) != set(tensors):
        raise EncoderError("checkpoint tensor names do not match the config")
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != shape:
            raise EncoderError(f"tensor {name!r} has shape {tensors[name].shape}, expected {shape}")
    n_reserved = len(Vocabulary([]).tokens)
    vocab = Vocabulary(vocab_tokens[n_reserved:])
    if list(vocab.tokens) != list(vocab_tokens):
        raise EncoderError("checkpoint vocabulary does not start with the reserved tokens")
    return EncoderParams(config, len(relations), tensors), vocab, relations
