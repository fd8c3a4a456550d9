"""Negative-instance synthesis: adversarial token substitution plus baselines.

The adversarial mode substitutes the selected key tokens with the vocabulary
token whose embedding has the largest dot product with the detection-score
gradient at that position, excluding banned tokens and the original token.
The mask mode substitutes [MASK] instead; the gaussian modes emit noise (or
noise-shifted) vectors directly in representation space.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .corpus import MASK, NOTA_LABEL, RelationInstance, TfIdfTable, Vocabulary
from .encoder import EncoderParams, encode, mark_instance
from .attribution import input_dot_products, select_key_tokens, token_importance

MODES = ("adversarial", "mask", "gaussian", "gaussian_shift")


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class SynthesisConfig:
    epsilon: float = 0.2
    mode: str = "adversarial"
    use_attribution: bool = True
    use_tfidf: bool = True
    use_dp: bool = True
    iterative: bool = True
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon <= 1.0:
            raise SynthesisError("epsilon must be in (0, 1]")
        if self.mode not in MODES:
            raise SynthesisError(f"mode must be one of {MODES}")
        if self.sigma <= 0.0:
            raise SynthesisError("sigma must be positive")


@dataclass(frozen=True)
class NegativeInstance:
    """Either a substituted token sequence or a raw representation vector.

    Token-level negatives keep the source's length and entity spans and are
    labeled NOTA; representation-level negatives carry only the vector.
    """

    instance: RelationInstance | None = None
    representation: np.ndarray | None = None
    substituted: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if (self.instance is None) == (self.representation is None):
            raise SynthesisError("exactly one of instance/representation must be set")

    @property
    def is_token_level(self) -> bool:
        return self.instance is not None


def misleading_token(grad: np.ndarray, embeddings: np.ndarray,
                     banned: frozenset[int], original: int) -> int:
    """Allowed token maximizing gradient . embedding; ties to the lowest index.

    The original token is excluded along with everything banned.
    """
    scores = embeddings @ grad
    mask = np.zeros(len(scores), dtype=bool)
    mask[list(banned)] = True
    if 0 <= original < len(scores):
        mask[original] = True
    if mask.all():
        raise SynthesisError("every vocabulary token is banned from substitution")
    scores = np.where(mask, -np.inf, scores)
    return int(np.argmax(scores))  # first max wins: lowest index on ties


def gaussian_negative(dim: int, rng: np.random.Generator, sigma: float,
                      anchor: np.ndarray | None = None) -> NegativeInstance:
    """Representation-space noise: sigma * z, optionally shifted by an anchor."""
    if sigma <= 0.0:
        raise SynthesisError("sigma must be positive")
    h = sigma * rng.standard_normal(dim)
    if anchor is not None:
        h = anchor + h
    return NegativeInstance(representation=h)


def synthesize_negative(params: EncoderParams, instance: RelationInstance,
                        vocab: Vocabulary, table: TfIdfTable,
                        banlist: frozenset[int], config: SynthesisConfig,
                        rng: np.random.Generator | None = None) -> NegativeInstance:
    """One negative for one source instance under the configured mode."""
    if config.mode in ("gaussian", "gaussian_shift"):
        if rng is None:
            raise SynthesisError(f"mode {config.mode!r} needs an explicit rng")
        anchor = None
        if config.mode == "gaussian_shift":
            anchor = encode(params, mark_instance(instance, vocab))
        return gaussian_negative(2 * params.config.d_e, rng, config.sigma, anchor)

    grads, dots = input_dot_products(params, instance, vocab)
    imp = token_importance(params, instance, vocab, table,
                           use_attribution=config.use_attribution,
                           use_tfidf=config.use_tfidf, use_dp=config.use_dp,
                           raw_dots=dots)
    selected = select_key_tokens(imp.importance, config.epsilon, imp.candidates)

    tokens = list(instance.tokens)
    for i in selected:
        if config.mode == "mask":
            tokens[i] = MASK
        else:
            new_id = misleading_token(grads[i], params.emb, banlist,
                                      vocab.id(instance.tokens[i]))
            tokens[i] = vocab.token(new_id)
    negative = replace(instance, tokens=tuple(tokens), relation=NOTA_LABEL)
    return NegativeInstance(instance=negative, substituted=tuple(sorted(selected)))


def synthesize_batch(params: EncoderParams, batch: list[RelationInstance],
                     vocab: Vocabulary, table: TfIdfTable,
                     banlist: frozenset[int], config: SynthesisConfig,
                     rng: np.random.Generator | None = None) -> list[NegativeInstance]:
    """One negative per source, in batch order, without touching params."""
    if not batch:
        raise SynthesisError("batch must be non-empty")
    return [synthesize_negative(params, inst, vocab, table, banlist, config, rng)
            for inst in batch]


__all__ = [
    "MODES", "NegativeInstance", "SynthesisConfig", "SynthesisError",
    "gaussian_negative", "misleading_token", "synthesize_batch",
    "synthesize_negative",
]
