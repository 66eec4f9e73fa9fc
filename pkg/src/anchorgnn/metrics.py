"""Evaluation metrics for confidence indicators under distribution shift.

* top-1 expected calibration error over uniform confidence bins,
* OOD-detection AUROC ranking in-distribution confidence above OOD confidence
  (Mann-Whitney formulation, ties counted half, ID is the positive class),
* generalization-gap prediction: a confidence threshold tuned on validation
  so that coverage estimates target accuracy.

Record batches serialize to CSV with the fixed column order
``confidence,pred,true,split``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EvalRecord",
    "GepThreshold",
    "accuracy",
    "ece",
    "auroc",
    "fit_gep_threshold",
    "gep_error",
    "records_to_csv",
    "records_from_csv",
]


@dataclass
class EvalRecord:
    """One scored prediction: confidence, predicted class, true class, split tag."""

    confidence: float
    predicted: int
    actual: int
    split: str = "id"

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")

    @property
    def correct(self) -> bool:
        return self.predicted == self.actual


def accuracy(records: list[EvalRecord]) -> float:
    if not records:
        raise ValueError("accuracy of an empty record list is undefined")
    return float(np.mean([r.correct for r in records]))


def ece(records: list[EvalRecord], n_bins: int = 10) -> float:
    """Binned top-1 expected calibration error.

    Confidences are placed into ``n_bins`` uniform bins over [0, 1] (a
    confidence of exactly 1.0 lands in the top bin); each nonempty bin
    contributes its sample fraction times |bin accuracy - bin confidence|.
    """
    if not records:
        raise ValueError("ece of an empty record list is undefined")
    if n_bins < 1:
        raise ValueError(f"need at least one bin, got {n_bins}")
    conf = np.array([r.confidence for r in records])
    correct = np.array([r.correct for r in records], dtype=np.float64)
    bins = np.minimum((conf * n_bins).astype(int), n_bins - 1)
    total = len(records)
    value = 0.0
    for b in range(n_bins):
        mask = bins == b
        count = int(mask.sum())
        if count == 0:
            continue
        gap = abs(correct[mask].mean() - conf[mask].mean())
        value += (count / total) * gap
    return float(value)


def auroc(scores_id, scores_ood) -> float:
    """Probability that a random ID score exceeds a random OOD score (ties half).

    Computed from average ranks, which matches the O(n^2) pairwise count
    exactly, including tied scores. ID is the positive class, so perfect
    separation with higher ID confidence gives 1.0.
    """
    scores_id = np.asarray(scores_id, dtype=np.float64)
    scores_ood = np.asarray(scores_ood, dtype=np.float64)
    if scores_id.size == 0 or scores_ood.size == 0:
        raise ValueError("auroc requires nonempty ID and OOD score lists")
    combined = np.concatenate([scores_id, scores_ood])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(len(combined))
    ranks[order] = np.arange(1, len(combined) + 1, dtype=np.float64)
    # average ranks across tied values
    sorted_scores = combined[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    n_pos, n_neg = scores_id.size, scores_ood.size
    rank_sum = ranks[:n_pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class GepThreshold:
    """Validation-tuned confidence threshold for coverage-based accuracy estimates."""

    tau: float
    val_error: float

    def __post_init__(self):
        if not (0.0 <= self.tau <= 1.0):
            raise ValueError(f"threshold must be in [0, 1], got {self.tau}")


def _coverage(confidences: np.ndarray, tau: float) -> float:
    return float(np.mean(confidences > tau))


def fit_gep_threshold(val_records: list[EvalRecord]) -> GepThreshold:
    """Exact scan for the threshold whose coverage best matches validation accuracy.

    Candidates are every distinct validation confidence plus {0, 1}; ties are
    broken toward the smaller threshold.
    """
    if not val_records:
        raise ValueError("cannot tune a threshold on empty validation records")
    conf = np.array([r.confidence for r in val_records])
    acc = accuracy(val_records)
    candidates = sorted(set(conf.tolist()) | {0.0, 1.0})
    best_tau, best_err = 0.0, float("inf")
    for tau in candidates:
        err = abs(acc - _coverage(conf, tau))
        if err < best_err:
            best_tau, best_err = tau, err
    return GepThreshold(best_tau, best_err)


def gep_error(records: list[EvalRecord], acc_target: float, tau: float) -> float:
    """|true target accuracy - fraction of confidences above the threshold|."""
    if not records:
        raise ValueError("gep_error of an empty record list is undefined")
    conf = np.array([r.confidence for r in records])
    return abs(acc_target - _coverage(conf, tau))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_CSV_FIELDS = ["confidence", "pred", "true", "split"]


def records_to_csv(records: list[EvalRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for r in records:
            writer.writerow([repr(r.confidence), r.predicted, r.actual, r.split])


def records_from_csv(path: str) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _CSV_FIELDS:
            raise ValueError(f"unexpected record CSV header {header!r}")
        return [EvalRecord(float(c), int(p), int(t), s) for c, p, t, s in reader]
