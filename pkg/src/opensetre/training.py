"""Unknown-aware training loop: per batch, a synthesis step then a learning step.

Each batch is first used (read-only) to synthesize one negative per instance,
then the model takes a single optimizer step on the joint objective: cross
entropy on the known relations plus a weighted binary-sigmoid separation loss
pushing the detection score up on knowns and down on negatives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import (
    NOTA_LABEL,
    RelationInstance,
    TfIdfTable,
    Vocabulary,
    build_banlist,
    build_vocab,
    compute_tfidf,
    known_relations,
)
from .encoder import (
    EncoderConfig,
    EncoderParams,
    backward,
    forward,
    mark_instance,
    nota_score,
    softmax_probs,
)
from .synthesis import NegativeInstance, SynthesisConfig, synthesize_negative


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    beta: float = 0.05
    epochs: int = 20
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    use_negatives: bool = True
    min_count: int = 1
    banlist_k: int | None = None
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise TrainError("batch_size must be >= 1")
        if self.beta < 0.0:
            raise TrainError("beta must be >= 0")
        if self.epochs < 0:
            raise TrainError("epochs must be >= 0")

    def to_dict(self) -> dict:
        """Flat dict: synthesis and encoder fields inlined."""
        out: dict = {}
        for f in fields(self):
            if f.name in ("synthesis", "encoder"):
                continue
            out[f.name] = getattr(self, f.name)
        for f in fields(self.synthesis):
            out[f.name] = getattr(self.synthesis, f.name)
        for f in fields(self.encoder):
            out[f.name] = getattr(self.encoder, f.name)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        syn_names = {f.name for f in fields(SynthesisConfig)}
        enc_names = {f.name for f in fields(EncoderConfig)}
        own_names = {f.name for f in fields(cls)} - {"synthesis", "encoder"}
        unknown = set(d) - syn_names - enc_names - own_names
        if unknown:
            raise TrainError(f"unknown config field {sorted(unknown)[0]!r}")
        syn = SynthesisConfig(**{k: d.pop(k) for k in list(d) if k in syn_names})
        enc = EncoderConfig(**{k: d.pop(k) for k in list(d) if k in enc_names})
        return cls(synthesis=syn, encoder=enc, **d)


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss_cls: float
    loss_nota: float
    loss: float
    delta_s: float | None

    def to_dict(self) -> dict:
        return {"step": self.step, "loss_cls": self.loss_cls,
                "loss_nota": self.loss_nota, "loss": self.loss,
                "delta_s": self.delta_s}


TrainHistory = list[StepRecord]


def save_history(history: TrainHistory, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def _softplus(x: np.ndarray | float) -> np.ndarray | float:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return np.exp(-_softplus(-np.asarray(x, dtype=np.float64)))


def cls_loss(probs: Sequence[np.ndarray], labels: Sequence[int]) -> float:
    """Mean negative log-probability of the gold labels."""
    if len(probs) != len(labels):
        raise TrainError("probs and labels must have equal length")
    total = 0.0
    for p, y in zip(probs, labels):
        total += -float(np.log(p[y]))
    return total / len(probs)


def nota_loss(s_known: Sequence[float], s_neg: Sequence[float]) -> float:
    """Binary-sigmoid separation loss between known and negative scores."""
    if len(s_known) != len(s_neg):
        raise TrainError("score batches must have equal size")
    sk = np.asarray(s_known, dtype=np.float64)
    sn = np.asarray(s_neg, dtype=np.float64)
    return float(np.mean(_softplus(-sk)) + np.mean(_softplus(sn)))


def total_loss(loss_cls: float, loss_nota: float, beta: float) -> float:
    if beta < 0.0:
        raise TrainError("beta must be >= 0")
    return loss_cls + beta * loss_nota


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: EncoderParams) -> "AdamState":
        return cls(m=params.zero_grads(), v=params.zero_grads())


def optimizer_step(params: EncoderParams, grads: dict[str, np.ndarray],
                   state: AdamState, lr: float, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> EncoderParams:
    """One bias-corrected adaptive-moment update, in place."""
    tensors = params.tensors()
    if set(grads) != set(tensors):
        raise TrainError("gradient names do not match parameter tensors")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, arr in tensors.items():
        g = grads[name]
        if g.shape != arr.shape:
            raise TrainError(f"gradient shape mismatch for {name!r}")
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


def negative_score(params: EncoderParams, negative: NegativeInstance,
                   vocab: Vocabulary) -> float:
    """Detection score of a negative, whichever space it lives in."""
    if negative.is_token_level:
        logits, _ = forward(params, mark_instance(negative.instance, vocab))
    else:
        logits = params.w_cls @ negative.representation + params.b_cls
    return nota_score(logits)


def delta_s(params: EncoderParams, known_batch: Sequence[RelationInstance],
            negatives: Sequence[NegativeInstance], vocab: Vocabulary) -> float:
    """Mean detection-score gap between known and negative instances."""
    if not known_batch or not negatives:
        raise TrainError("delta_s needs non-empty batches")
    s_known = [nota_score(forward(params, mark_instance(inst, vocab))[0])
               for inst in known_batch]
    s_neg = [negative_score(params, neg, vocab) for neg in negatives]
    return float(np.mean(s_known) - np.mean(s_neg))


@dataclass(frozen=True)
class BatchLoss:
    loss_cls: float
    loss_nota: float
    loss: float
    grads: dict[str, np.ndarray]
    s_known: list[float]
    s_neg: list[float]


def batch_loss_and_grads(params: EncoderParams, marked_batch: Sequence,
                         labels: Sequence[int],
                         negatives: Sequence[NegativeInstance],
                         beta: float, vocab: Vocabulary,
                         compute_grads: bool = True) -> BatchLoss:
    """Joint loss over a batch and its negatives, with parameter gradients.

    The cross-entropy half averages over the batch; the separation loss
    averages its known and negative halves separately, matching the joint
    objective the optimizer steps on.  An empty negative list gives the
    baseline arm: the known half of the separation loss still applies.
    ``compute_grads=False`` skips the backward passes (finite-difference
    probes only need the loss value).
    """
    b = len(marked_batch)
    if b == 0:
        raise TrainError("batch must be non-empty")
    grads = params.zero_grads() if compute_grads else {}
    sum_cls = 0.0
    sum_nota_known = 0.0
    sum_nota_neg = 0.0
    s_known_vals: list[float] = []
    s_neg_vals: list[float] = []

    for marked, y in zip(marked_batch, labels):
        logits, cache = forward(params, marked)
        p = softmax_probs(logits)
        s = nota_score(logits)
        sum_cls += s - float(logits[y])  # -log p[y] via the logsumexp identity
        sum_nota_known += float(_softplus(-s))
        if compute_grads:
            d_logits = p.copy()
            d_logits[y] -= 1.0
            d_logits /= b
            d_logits += (beta / b) * (float(_sigmoid(s)) - 1.0) * p
            backward(params, cache, d_logits, grads)
        s_known_vals.append(s)

    for neg in negatives:
        if neg.is_token_level:
            logits, cache = forward(params, mark_instance(neg.instance, vocab))
            p = softmax_probs(logits)
            s = nota_score(logits)
            if compute_grads:
                d_logits = (beta / b) * float(_sigmoid(s)) * p
                backward(params, cache, d_logits, grads)
        else:
            h = neg.representation
            logits = params.w_cls @ h + params.b_cls
            p = softmax_probs(logits)
            s = nota_score(logits)
            if compute_grads:
                d_logits = (beta / b) * float(_sigmoid(s)) * p
                grads["w_cls"] += np.outer(d_logits, h)
                grads["b_cls"] += d_logits
        sum_nota_neg += float(_softplus(s))
        s_neg_vals.append(s)

    loss_cls_val = sum_cls / b
    loss_nota_val = sum_nota_known / b + sum_nota_neg / b
    return BatchLoss(loss_cls_val, loss_nota_val,
                     total_loss(loss_cls_val, loss_nota_val, beta),
                     grads, s_known_vals, s_neg_vals)


class NegativeSource:
    """Per-instance negative provider honoring the iterative-synthesis toggle.

    With iterative synthesis on, every request re-synthesizes against the
    current parameters; with it off, the negative built on first request is
    reused verbatim for the rest of training.
    """

    def __init__(self, train_set: Sequence[RelationInstance], vocab: Vocabulary,
                 tfidf: TfIdfTable, banlist: frozenset[int], config: SynthesisConfig):
        self._train_set = train_set
        self._vocab = vocab
        self._tfidf = tfidf
        self._banlist = banlist
        self._config = config
        self._frozen: dict[int, NegativeInstance] = {}

    def get(self, params: EncoderParams, idx: int,
            rng: np.random.Generator) -> NegativeInstance:
        if not self._config.iterative and idx in self._frozen:
            return self._frozen[idx]
        neg = synthesize_negative(params, self._train_set[idx], self._vocab,
                                  self._tfidf, self._banlist, self._config, rng)
        if not self._config.iterative:
            self._frozen[idx] = neg
        return neg


@dataclass
class TrainResult:
    params: EncoderParams
    history: TrainHistory
    vocab: Vocabulary
    relations: tuple[str, ...]
    tfidf: TfIdfTable
    banlist: frozenset[int]
    config: TrainConfig


def train(config: TrainConfig, train_set: Sequence[RelationInstance],
          val_set: Sequence[RelationInstance] | None = None) -> TrainResult:
    """Run the full loop; fully deterministic given the config seed.

    The tf-idf table and ban list are computed once from the whole training
    set before the loop.  Each batch runs the synthesis step with the current
    parameters (never mutating them) and then one joint optimizer step over
    the batch and its negatives.
    """
    if not train_set:
        raise TrainError("training set is empty")
    if any(inst.relation == NOTA_LABEL for inst in train_set):
        raise TrainError("training instances must all carry known relations")

    vocab = build_vocab(train_set, config.min_count)
    relations = known_relations(train_set)
    rel_index = {r: j for j, r in enumerate(relations)}
    tfidf = compute_tfidf(train_set, vocab)
    banlist = build_banlist(tfidf, config.banlist_k)

    params = EncoderParams.init(len(vocab), len(relations), config.encoder, config.seed)
    state = AdamState.init(params)
    rng = np.random.default_rng(config.seed)

    marked = [mark_instance(inst, vocab) for inst in train_set]
    labels = [rel_index[inst.relation] for inst in train_set]
    source = NegativeSource(train_set, vocab, tfidf, banlist, config.synthesis)

    history: TrainHistory = []
    step = 0
    n = len(train_set)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idxs = [int(i) for i in order[start: start + config.batch_size]]

            negatives: list[NegativeInstance] = []
            if config.use_negatives:
                negatives = [source.get(params, i, rng) for i in idxs]

            batch = batch_loss_and_grads(params, [marked[i] for i in idxs],
                                         [labels[i] for i in idxs],
                                         negatives, config.beta, vocab)
            optimizer_step(params, batch.grads, state, config.lr,
                           config.adam_beta1, config.adam_beta2, config.adam_eps)

            gap = None
            if batch.s_neg:
                gap = float(np.mean(batch.s_known) - np.mean(batch.s_neg))
            history.append(StepRecord(step, batch.loss_cls, batch.loss_nota,
                                      batch.loss, gap))
            step += 1

    return TrainResult(params, history, vocab, relations, tfidf, banlist, config)
