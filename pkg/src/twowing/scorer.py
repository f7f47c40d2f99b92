"""Claim-verification and evidence metrics.

* NoScoreEv: label accuracy, evidence ignored.
* ScoreEv: label accuracy where a SUPPORTED/REFUTED claim only counts if the
  predicted evidence covers every gold sentence.
* Evidence precision / recall / F1, micro-averaged over (title, sentence)
  pairs of SUPPORTED/REFUTED claims.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from twowing.corpus import LABEL_INDEX, load_dataset
from twowing.errors import ArgumentError, ParseError, ValidationError


@dataclass
class ClaimJudgment:
    gold_label: str
    pred_label: str
    gold_evidence: set = field(default_factory=set)
    pred_evidence: set = field(default_factory=set)


def _require(judgments: Sequence[ClaimJudgment]) -> None:
    if len(judgments) == 0:
        raise ArgumentError("no judgments to score")


def no_score_ev(judgments: Sequence[ClaimJudgment]) -> float:
    _require(judgments)
    return sum(j.gold_label == j.pred_label for j in judgments) / len(judgments)


def _fully_supported(j: ClaimJudgment) -> bool:
    if j.gold_label != j.pred_label:
        return False
    return j.gold_label == "NEI" or set(j.gold_evidence) <= set(j.pred_evidence)


def score_ev(judgments: Sequence[ClaimJudgment]) -> float:
    _require(judgments)
    return sum(_fully_supported(j) for j in judgments) / len(judgments)


def evidence_prf(judgments: Sequence[ClaimJudgment]) -> tuple[float, float, float]:
    """Micro precision, recall and F1 over SUPPORTED/REFUTED claims.

    Zero denominators give 0 by convention.
    """
    tp = n_pred = n_gold = 0
    for j in judgments:
        if j.gold_label == "NEI":
            continue
        gold, pred = set(j.gold_evidence), set(j.pred_evidence)
        tp += len(gold & pred)
        n_pred += len(pred)
        n_gold += len(gold)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def acc_ceiling(rate: float, n_supported: int, n_refuted: int, n_nei: int) -> float:
    """Best reachable 3-way accuracy when only a ``rate`` fraction of S/R claims
    have all their gold pages retrieved (NEI claims need no evidence)."""
    if not 0.0 <= rate <= 1.0:
        raise ArgumentError(f"rate must be in [0, 1], got {rate}")
    if min(n_supported, n_refuted, n_nei) < 0:
        raise ArgumentError("counts must be non-negative")
    total = n_supported + n_refuted + n_nei
    if total == 0:
        raise ArgumentError("counts are all zero")
    return (rate * (n_supported + n_refuted) + n_nei) / total


@dataclass
class EvalReport:
    no_score_ev: float
    score_ev: float
    precision: float
    recall: float
    f1: float
    counts: dict = field(default_factory=dict)
    n: int = 0

    def as_dict(self) -> dict:
        return {
            "NoScoreEv": self.no_score_ev,
            "ScoreEv": self.score_ev,
            "precision": self.precision,
            "recall": self.recall,
            "F1": self.f1,
        }

    def to_text(self) -> str:
        lines = [f"claims: {self.n}"]
        for label in ("SUPPORTED", "REFUTED", "NEI"):
            lines.append(f"  gold {label}: {self.counts.get(label, 0)}")
        for key, val in self.as_dict().items():
            lines.append(f"{key:>10}: {100 * val:.2f}%")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        keys = list(self.as_dict())
        vals = [f"{100 * v:.2f}" for v in self.as_dict().values()]
        return ",".join(keys) + "\n" + ",".join(vals) + "\n"


def evaluate(judgments: Sequence[ClaimJudgment]) -> EvalReport:
    _require(judgments)
    p, r, f = evidence_prf(judgments)
    counts = Counter(j.gold_label for j in judgments)
    return EvalReport(
        no_score_ev=round(no_score_ev(judgments), 4),
        score_ev=round(score_ev(judgments), 4),
        precision=round(p, 4),
        recall=round(r, 4),
        f1=round(f, 4),
        counts=dict(counts),
        n=len(judgments),
    )


def load_predictions(path) -> dict:
    """Read a predictions file into ``claim id -> (label, evidence set)``."""
    preds = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                cid = rec["claim_id"]
                label = rec["predicted_label"]
                evidence = {(t, int(i)) for t, i in rec.get("evidence", [])}
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise ParseError("malformed prediction record", path, lineno) from None
            if label not in LABEL_INDEX:
                raise ValidationError(f"unknown label {label!r}", path, lineno)
            preds[cid] = (label, evidence)
    return preds


def score_files(gold_path, pred_path) -> EvalReport:
    """Score a predictions file against a gold claims file.

    Raises:
        ArgumentError: if the two files do not cover the same claim ids.
    """
    gold = load_dataset(gold_path)
    preds = load_predictions(pred_path)
    gold_ids = {g.id for g in gold}
    missing = sorted(gold_ids - set(preds))
    extra = sorted(set(preds) - gold_ids)
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing predictions for ids {missing}")
        if extra:
            parts.append(f"predictions for unknown ids {extra}")
        raise ArgumentError("; ".join(parts))
    js = [ClaimJudgment(g.label, preds[g.id][0], set(g.evidence), preds[g.id][1]) for g in gold]
    return evaluate(js)
