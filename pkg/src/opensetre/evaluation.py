"""Threshold calibration and open-set metrics.

All thresholding uses strictly-greater semantics: a score must exceed alpha
to count as known, matching the decision rule where score <= alpha rejects.
Candidate thresholds are the observed scores plus a -inf sentinel, with no
interpolation, so results are exact and reproducible at small sample sizes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import RelationInstance, Vocabulary
from .encoder import (
    NOTA_DECISION,
    EncoderParams,
    forward,
    mark_instance,
    nota_score,
)


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    acc_open: float
    acc_known: float
    auroc: float
    fpr95: float
    alpha: float
    delta_s: float | None = None

    def to_dict(self) -> dict:
        return {
            "acc_open": self.acc_open,
            "acc_known": self.acc_known,
            "auroc": self.auroc,
            "fpr95": self.fpr95,
            "alpha": self.alpha,
            "delta_s": self.delta_s,
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")


def calibrate_alpha(known_scores: Sequence[float], target_tpr: float = 0.95) -> float:
    """Largest observed score keeping at least target_tpr of knowns strictly above.

    Falls back to -inf when no finite candidate qualifies (e.g. all scores
    equal, or a single score).
    """
    scores = np.asarray(known_scores, dtype=np.float64)
    if scores.size == 0:
        raise EvalError("calibration needs at least one known score")
    n = scores.size
    for cand in np.unique(scores)[::-1]:
        if np.count_nonzero(scores > cand) / n >= target_tpr:
            return float(cand)
    return -math.inf


def auroc(known_scores: Sequence[float], nota_scores: Sequence[float]) -> float:
    """Probability that a known score outranks a NOTA score, ties worth 0.5.

    Computed by the rank-sum formulation with average ranks, O(m log m).
    """
    known = np.asarray(known_scores, dtype=np.float64)
    nota = np.asarray(nota_scores, dtype=np.float64)
    if known.size == 0 or nota.size == 0:
        raise EvalError("auroc needs scores on both sides")
    combined = np.concatenate([known, nota])
    order = np.argsort(combined, kind="stable")
    ranks = np.empty(combined.size, dtype=np.float64)
    sorted_vals = combined[order]
    i = 0
    while i < combined.size:
        j = i
        while j + 1 < combined.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i: j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    r_known = ranks[: known.size].sum()
    u = r_known - known.size * (known.size + 1) / 2.0
    return float(u / (known.size * nota.size))


def fpr_at_95_tpr(known_scores: Sequence[float], nota_scores: Sequence[float],
                  target_tpr: float = 0.95) -> float:
    """NOTA false-positive rate at the known-TPR calibration threshold."""
    nota = np.asarray(nota_scores, dtype=np.float64)
    if nota.size == 0:
        raise EvalError("fpr_at_95_tpr needs NOTA scores")
    alpha = calibrate_alpha(known_scores, target_tpr)
    return float(np.count_nonzero(nota > alpha) / nota.size)


def evaluate(params: EncoderParams, dataset: Sequence[RelationInstance],
             alpha: float, vocab: Vocabulary, relations: Sequence[str],
             delta_s: float | None = None) -> MetricsReport:
    """Open-set metrics over a dataset whose gold labels are known or NOTA.

    Any label outside ``relations`` counts as NOTA.  Open-set accuracy uses
    the thresholded decision over n+1 classes; known-only accuracy ignores
    the threshold entirely and scores the plain argmax on gold-known rows.
    """
    if not dataset:
        raise EvalError("evaluation dataset is empty")
    rel_index = {r: j for j, r in enumerate(relations)}

    n_total = 0
    n_open_correct = 0
    n_known = 0
    n_known_correct = 0
    known_scores: list[float] = []
    nota_scores: list[float] = []

    for inst in dataset:
        logits, _ = forward(params, mark_instance(inst, vocab))
        s = nota_score(logits)
        pred = NOTA_DECISION if s <= alpha else int(np.argmax(logits))
        gold = rel_index.get(inst.relation, NOTA_DECISION)

        n_total += 1
        if pred == gold:
            n_open_correct += 1
        if gold != NOTA_DECISION:
            known_scores.append(s)
            n_known += 1
            if int(np.argmax(logits)) == gold:
                n_known_correct += 1
        else:
            nota_scores.append(s)

    acc_open = n_open_correct / n_total
    acc_known = n_known_correct / n_known if n_known else 0.0
    if known_scores and nota_scores:
        roc = auroc(known_scores, nota_scores)
        fpr = fpr_at_95_tpr(known_scores, nota_scores)
    else:
        roc, fpr = 0.0, 0.0
    return MetricsReport(acc_open=acc_open, acc_known=acc_known, auroc=roc,
                         fpr95=fpr, alpha=alpha, delta_s=delta_s)


def score_dataset(params: EncoderParams, dataset: Sequence[RelationInstance],
                  vocab: Vocabulary, relations: Sequence[str]) -> tuple[list[float], list[float]]:
    """Detection scores split into (gold-known, gold-NOTA) lists."""
    rel_set = set(relations)
    known, nota = [], []
    for inst in dataset:
        logits, _ = forward(params, mark_instance(inst, vocab))
        s = nota_score(logits)
        (known if inst.relation in rel_set else nota).append(s)
    return known, nota
