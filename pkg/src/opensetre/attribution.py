"""Token-importance scoring: which tokens carry the relational semantics.

Importance combines three per-position factors:

* an attribution score from input gradients of the NOTA detection score,
* the relation-conditional tf-idf statistic of the token,
* a dependency boost for tokens on the syntactic path between the entities.

Entity-span tokens and inserted markers are never substitution candidates.
All positions refer to the instance's own tokens; marker insertion is an
encoder artifact and stays invisible here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import RelationInstance, TfIdfTable, Vocabulary
from .encoder import EncoderParams, grad_embeddings, mark_instance, forward, nota_score


class AttributionError(ValueError):
    pass


@dataclass(frozen=True)
class TokenImportance:
    """Per-position factors and their product, plus candidacy flags."""

    attribution: np.ndarray   # a, sums to 1 over positions
    tfidf: np.ndarray         # t(w_i, y), >= 0
    dependency: np.ndarray    # dp, 1 or |x|/|T|
    importance: np.ndarray    # a * t * dp with ablated factors replaced by ones
    candidates: tuple[int, ...]


def candidate_positions(instance: RelationInstance) -> tuple[int, ...]:
    """Positions eligible for substitution: everything outside the entity spans."""
    spans = instance.span_positions()
    return tuple(i for i in range(len(instance.tokens)) if i not in spans)


def input_dot_products(params: EncoderParams, instance: RelationInstance,
                       vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Per-position (gradient, gradient . word-embedding) for the NOTA score.

    Gradients are taken at the marked sequence and mapped back to the
    instance's own positions; the dot product uses the token embedding alone,
    not the position component.
    """
    marked = mark_instance(instance, vocab)
    grads = grad_embeddings(params, marked, objective="nota_score")
    n = len(instance.tokens)
    per_pos = np.zeros((n, params.config.d_e))
    dots = np.zeros(n)
    for i in range(n):
        g = grads[marked.orig_to_marked[i]]
        per_pos[i] = g
        dots[i] = float(g @ params.emb[vocab.id(instance.tokens[i])])
    return per_pos, dots


def attribution_scores(params: EncoderParams, instance: RelationInstance,
                       vocab: Vocabulary) -> np.ndarray:
    """Normalized |gradient . embedding| per position; uniform if all zero."""
    _, dots = input_dot_products(params, instance, vocab)
    return normalize_attribution(dots)


def normalize_attribution(raw_dots: np.ndarray) -> np.ndarray:
    mags = np.abs(np.asarray(raw_dots, dtype=np.float64))
    total = mags.sum()
    if total == 0.0:
        return np.full(mags.shape, 1.0 / mags.size)
    return mags / total


def dp_scores(instance: RelationInstance) -> np.ndarray:
    """|x|/|T| for positions on the dependency path, 1 elsewhere.

    Without a (non-empty) dep_path annotation every position scores 1.
    """
    n = len(instance.tokens)
    out = np.ones(n)
    path = instance.dep_path
    if path:
        boost = n / len(path)
        for i in path:
            out[i] = boost
    return out


def importance_scores(attribution: np.ndarray, tfidf: np.ndarray,
                      dependency: np.ndarray) -> np.ndarray:
    """Elementwise product of the three factors."""
    if not (len(attribution) == len(tfidf) == len(dependency)):
        raise AttributionError("importance factors must have equal length")
    return np.asarray(attribution) * np.asarray(tfidf) * np.asarray(dependency)


def token_importance(params: EncoderParams, instance: RelationInstance,
                     vocab: Vocabulary, table: TfIdfTable,
                     use_attribution: bool = True, use_tfidf: bool = True,
                     use_dp: bool = True,
                     raw_dots: np.ndarray | None = None) -> TokenImportance:
    """Assemble all factors for one instance; ablation switches turn a factor
    into all-ones without touching the others.

    ``raw_dots`` lets a caller that already ran the gradient pass skip a
    second one.
    """
    n = len(instance.tokens)
    if raw_dots is None:
        a = attribution_scores(params, instance, vocab)
    else:
        a = normalize_attribution(raw_dots)
    t = np.array([table.value(vocab.id(tok), instance.relation) for tok in instance.tokens])
    dp = dp_scores(instance)
    importance = importance_scores(
        a if use_attribution else np.ones(n),
        t if use_tfidf else np.ones(n),
        dp if use_dp else np.ones(n),
    )
    return TokenImportance(a, t, dp, importance, candidate_positions(instance))


def select_key_tokens(importance: np.ndarray, epsilon: float,
                      candidates: tuple[int, ...]) -> tuple[int, ...]:
    """Top candidate positions by importance, descending.

    Takes max(1, round(epsilon * |candidates|)) positions; ties go to the
    lower position index.  Rounding is half-up for determinism.
    """
    if not 0.0 < epsilon <= 1.0:
        raise AttributionError("epsilon must be in (0, 1]")
    if not candidates:
        raise AttributionError("no candidate positions to select from")
    count = max(1, int(np.floor(epsilon * len(candidates) + 0.5)))
    count = min(count, len(candidates))
    ranked = sorted(candidates, key=lambda i: (-importance[i], i))
    return tuple(ranked[:count])


def counterfactual_contribution(params: EncoderParams, instance: RelationInstance,
                                vocab: Vocabulary, i: int) -> float:
    """Detection-score drop when token i is deleted and the rest re-encoded.

    Spans (and dep_path, if any) are reindexed around the deletion.  Deleting
    the last remaining token, or emptying an entity span, is an error.
    """
    n = len(instance.tokens)
    if not 0 <= i < n:
        raise AttributionError(f"position {i} out of bounds")
    if n == 1:
        raise AttributionError("cannot delete the only token")

    def shift_span(span: tuple[int, int]) -> tuple[int, int]:
        s, e = span
        s2 = s - 1 if i < s else s
        e2 = e - 1 if i < e else e
        if s2 >= e2:
            raise AttributionError(f"deleting position {i} empties an entity span")
        return s2, e2

    reduced = RelationInstance(
        tokens=instance.tokens[:i] + instance.tokens[i + 1:],
        head=shift_span(instance.head),
        tail=shift_span(instance.tail),
        relation=instance.relation,
        dep_path=None if instance.dep_path is None
        else frozenset(j - (j > i) for j in instance.dep_path if j != i),
    )

    logits_full, _ = forward(params, mark_instance(instance, vocab))
    logits_reduced, _ = forward(params, mark_instance(reduced, vocab))
    return nota_score(logits_full) - nota_score(logits_reduced)
