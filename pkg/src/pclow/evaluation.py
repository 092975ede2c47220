"""Agreement metrics between PC_low predictions and expert causality labels,
plus factual-outcome discrimination and inter-model correlation.

Expert labels use the five WHO-UMC-style categories. They map to
probabilities 0.5 / 0.25 / 0.5 / 0.75 / 0.9 (unassessable, unlikely,
possible, probable, nearly_certain) and dichotomize to 0 only for
"unlikely".
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from pclow.cohort import CohortError
from pclow.estimators import CaseEstimate, TLearnerModel, predict_mu_arrays

CATEGORIES = ("unassessable", "unlikely", "possible", "probable", "nearly_certain")

_CATEGORY_PROBABILITY = {
    "unassessable": 0.5,
    "unlikely": 0.25,
    "possible": 0.5,
    "probable": 0.75,
    "nearly_certain": 0.9,
}

_CATEGORY_DICHOTOMY = {
    "unassessable": 1,
    "unlikely": 0,
    "possible": 1,
    "probable": 1,
    "nearly_certain": 1,
}


class EvaluationError(ValueError):
    """Invalid metric input."""


@dataclass(frozen=True)
class ExpertAssessment:
    admission_id: str
    category: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise EvaluationError(f"unknown assessment category {self.category!r}")


@dataclass
class AgreementReport:
    mse: float
    auc: float
    ppv: float | None  # None when no prediction reaches the threshold
    n_cases: int
    # per case: (admission_id, pc_low, mapped probability, dichotomized label)
    table: list[tuple[str, float, float, int]]


def map_expert_label(category: str) -> float:
    """Probability assigned to a qualitative causality category."""
    try:
        return _CATEGORY_PROBABILITY[category]
    except KeyError:
        raise EvaluationError(f"unknown assessment category {category!r}") from None


def dichotomize_label(category: str) -> int:
    """1 for every category except 'unlikely'."""
    try:
        return _CATEGORY_DICHOTOMY[category]
    except KeyError:
        raise EvaluationError(f"unknown assessment category {category!r}") from None


def auc(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Mann-Whitney AUC: concordant pairs plus half the ties, over all
    positive x negative pairs."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if len(scores) != len(labels):
        raise EvaluationError("scores and labels lengths differ")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("auc requires both classes")
    ranks = rankdata(scores)  # average ranks give ties weight 0.5
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def ppv(
    scores: Sequence[float], labels: Sequence[float], threshold: float = 0.5
) -> float | None:
    """Positive predictive value at an inclusive threshold; None when no
    score reaches it."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    positive = scores >= threshold
    if not positive.any():
        return None
    return float(labels[positive].mean())


def mse(predictions: Sequence[float], targets: Sequence[float]) -> float:
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(predictions) != len(targets):
        raise EvaluationError("predictions and targets lengths differ")
    return float(np.mean((predictions - targets) ** 2))


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Sample Pearson correlation; None for a constant vector."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise EvaluationError("pearson needs two equal-length vectors of length >= 2")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    xc = x - x.mean()
    yc = y - y.mean()
    return float((xc @ yc) / np.sqrt((xc @ xc) * (yc @ yc)))


def evaluate_factual(model: TLearnerModel, cohort) -> dict[str, float]:
    """AUC of each base model on its own treatment arm of a test cohort."""
    observed = ~np.isnan(cohort.outcome)
    sub = cohort.subset(observed)
    mu0, mu1 = predict_mu_arrays(model, sub)
    out = {}
    for label, arm, preds in (("control", 0, mu0), ("treated", 1, mu1)):
        mask = sub.treatment == arm
        out[label] = auc(preds[mask], sub.outcome[mask])
    return out


def evaluate_counterfactual(
    cases: Sequence[CaseEstimate],
    assessments: Mapping[str, ExpertAssessment] | Sequence[ExpertAssessment],
) -> AgreementReport:
    """Compare scored PC_low cases against expert assessments.

    MSE is against the mapped probabilities; AUC and PPV against the
    dichotomized labels. Every scored case must have an assessment.
    """
    if not isinstance(assessments, Mapping):
        assessments = {a.admission_id: a for a in assessments}
    scored = [c for c in cases if c.in_support and c.pc_low is not None]
    missing = [c.admission_id for c in scored if c.admission_id not in assessments]
    if missing:
        raise EvaluationError(f"missing assessments for: {missing}")
    table = []
    for c in scored:
        cat = assessments[c.admission_id].category
        table.append((c.admission_id, c.pc_low, map_expert_label(cat), dichotomize_label(cat)))
    preds = [t[1] for t in table]
    probs = [t[2] for t in table]
    labels = [t[3] for t in table]
    return AgreementReport(
        mse=mse(preds, probs),
        auc=auc(preds, labels),
        ppv=ppv(preds, labels),
        n_cases=len(table),
        table=table,
    )


def propensity_histogram(
    scores: Sequence[float], treatment: Sequence[int], bins: int = 20
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Equal-width bins on [0, 1]; per-arm counts (control, treated)."""
    scores = np.asarray(scores, dtype=float)
    treatment = np.asarray(treatment)
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts0, _ = np.histogram(scores[treatment == 0], bins=edges)
    counts1, _ = np.histogram(scores[treatment == 1], bins=edges)
    return edges, counts0, counts1


# --- assessment file IO ----------------------------------------------------


def read_assessments(path) -> dict[str, ExpertAssessment]:
    out: dict[str, ExpertAssessment] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["admission_id", "category"]:
            raise CohortError(f"unexpected assessment header {header}")
        for rownum, row in enumerate(reader, start=1):
            if len(row) != 2:
                raise CohortError(f"assessment row {rownum}: expected 2 cells")
            aid, category = row
            if aid in out:
                raise CohortError(f"duplicate assessment for {aid}")
            out[aid] = ExpertAssessment(aid, category)
    return out


def write_assessments(assessments: Sequence[ExpertAssessment], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["admission_id", "category"])
        for a in assessments:
            w.writerow([a.admission_id, a.category])
