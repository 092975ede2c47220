"""Causal estimators: common-support trimming, T-learner fitting,
per-admission PC_low, and ATT by outcome-model averaging and by IPTW.

PC_low = max{0, 1 - mu0/mu1}: the positive part of the excess risk ratio,
i.e. one minus the inverse of the risk ratio of the two counterfactual
outcome risks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from pclow.cohort import Cohort
from pclow.learners import (
    FittedLearner,
    LearnerSpec,
    fit_learner,
    fit_propensity,
    load_learner,
    predict_proba,
    recalibrate,
    save_learner,
)
from pclow.preprocess import (
    SelectionReport,
    apply_imputation,
    imputation_values,
    select_variables,
)


class EstimationError(RuntimeError):
    """Estimation cannot proceed (empty support, degenerate arm, ...)."""


@dataclass(frozen=True)
class MuPair:
    """Estimated counterfactual outcome risks under control and treatment."""

    mu0: float
    mu1: float


@dataclass
class EffectEstimate:
    risk0: float
    risk1: float
    ard: float
    rr: float | None  # None marks an undefined ratio (risk0 == 0)


@dataclass
class SupportInterval:
    """Propensity-score range where both arms have observations."""

    lower: float
    upper: float
    excluded: tuple[int, ...]  # row indices strictly outside the interval

    def contains(self, scores: np.ndarray) -> np.ndarray:
        return (scores >= self.lower) & (scores <= self.upper)


@dataclass
class TLearnerModel:
    model0: FittedLearner  # fit on control-arm admissions only
    model1: FittedLearner  # fit on treated-arm admissions only
    propensity: FittedLearner
    selection: SelectionReport
    support: SupportInterval
    imputation: np.ndarray  # per-covariate fill values from training
    covariate_names: tuple[str, ...]
    seed: int


@dataclass
class CaseEstimate:
    """PC_low for one treated admission that developed the outcome.

    Admissions outside the training support interval are flagged rather
    than scored: err and pc_low stay None.
    """

    admission_id: str
    mu0: float
    mu1: float
    err: float | None
    pc_low: float | None
    in_support: bool


def effect_from_risks(risk0: float, risk1: float) -> EffectEstimate:
    rr = None if risk0 == 0 else risk1 / risk0
    return EffectEstimate(risk0, risk1, risk1 - risk0, rr)


def pc_low(mu: MuPair | float, mu1: float | None = None) -> float:
    """Lower bound on the probability of causation from a mu pair.

    Accepts a MuPair or the two risks positionally. mu1 must be positive.
    """
    if isinstance(mu, MuPair):
        mu0, mu1 = mu.mu0, mu.mu1
    else:
        mu0 = mu
    if mu1 is None:
        raise TypeError("pc_low needs a MuPair or two risks")
    if mu1 <= 0:
        raise EstimationError("undefined: zero treated risk")
    return max(0.0, 1.0 - mu0 / mu1)


def pc_low_values(mu0: np.ndarray, mu1: np.ndarray) -> np.ndarray:
    """Vectorized pc_low."""
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    if (mu1 <= 0).any():
        raise EstimationError("undefined: zero treated risk")
    return np.maximum(0.0, 1.0 - mu0 / mu1)


def common_support(scores: np.ndarray, treatment: np.ndarray) -> SupportInterval:
    """Min-max overlap of propensity scores between the arms."""
    scores = np.asarray(scores, dtype=float)
    treatment = np.asarray(treatment)
    s1 = scores[treatment == 1]
    s0 = scores[treatment == 0]
    if s1.size == 0 or s0.size == 0:
        raise EstimationError("both arms must be non-empty")
    lower = max(s1.min(), s0.min())
    upper = min(s1.max(), s0.max())
    if lower > upper:
        raise EstimationError("no common support")
    excluded = tuple(int(i) for i in np.flatnonzero((scores < lower) | (scores > upper)))
    return SupportInterval(float(lower), float(upper), excluded)


def _spawn_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(index,)).generate_state(1)[0])


def fit_tlearner(
    cohort: Cohort,
    learner_spec: LearnerSpec,
    propensity_spec: LearnerSpec,
    seed: int = 0,
) -> TLearnerModel:
    """Fit the full pipeline on one cohort: impute, fit the propensity
    model, trim to common support, select variables, then fit one outcome
    model per arm and recalibrate each on its own training rows.
    """
    observed = ~np.isnan(cohort.outcome)
    if not observed.all():
        cohort = cohort.subset(observed)
    if len(cohort) == 0:
        raise EstimationError("no admissions with observed outcomes")
    fills = imputation_values(cohort)
    data = apply_imputation(cohort, fills)
    names = data.schema.names

    prop = fit_propensity(
        data.covariates, data.treatment, propensity_spec,
        feature_names=names, seed=_spawn_seed(seed, 0),
    )
    scores = predict_proba(prop, data.covariates)
    if propensity_spec.recalibrate:
        prop = recalibrate(prop, scores, data.treatment)
        scores = predict_proba(prop, data.covariates)
    support = common_support(scores, data.treatment)
    inside = support.contains(scores)
    trimmed = data.subset(inside) if not inside.all() else data

    selection = select_variables(trimmed)
    cols = [trimmed.schema.index(n) for n in selection.retained]
    X = trimmed.covariates[:, cols]
    sel_names = tuple(selection.retained)

    models = []
    for arm in (0, 1):
        mask = trimmed.treatment == arm
        y = trimmed.outcome[mask]
        if np.unique(y).size < 2:
            raise EstimationError(
                f"arm {arm} has a single outcome class after trimming"
            )
        m = fit_learner(
            X[mask], y, learner_spec, feature_names=sel_names,
            seed=_spawn_seed(seed, 1 + arm),
        )
        if learner_spec.recalibrate:
            m = recalibrate(m, predict_proba(m, X[mask]), y)
        models.append(m)

    return TLearnerModel(
        model0=models[0],
        model1=models[1],
        propensity=prop,
        selection=selection,
        support=support,
        imputation=fills,
        covariate_names=tuple(names),
        seed=seed,
    )


def _prepare_features(model: TLearnerModel, cohort: Cohort) -> np.ndarray:
    if cohort.schema.names != model.covariate_names:
        missing = [n for n in model.covariate_names if n not in cohort.schema.names]
        extra = [n for n in cohort.schema.names if n not in model.covariate_names]
        raise EstimationError(f"feature mismatch: missing {missing}, extra {extra}")
    data = apply_imputation(cohort, model.imputation)
    cols = [cohort.schema.index(n) for n in model.selection.retained]
    return data.covariates[:, cols]


def predict_mu_arrays(model: TLearnerModel, cohort: Cohort) -> tuple[np.ndarray, np.ndarray]:
    """Both counterfactual risks for every admission, regardless of its
    observed arm."""
    X = _prepare_features(model, cohort)
    return predict_proba(model.model0, X), predict_proba(model.model1, X)


def predict_mu(model: TLearnerModel, cohort: Cohort) -> list[MuPair]:
    mu0, mu1 = predict_mu_arrays(model, cohort)
    return [MuPair(float(a), float(b)) for a, b in zip(mu0, mu1)]


def propensity_scores(model: TLearnerModel, cohort: Cohort) -> np.ndarray:
    data = apply_imputation(cohort, model.imputation)
    return predict_proba(model.propensity, data.covariates)


def pc_low_cases(model: TLearnerModel, cohort: Cohort) -> list[CaseEstimate]:
    """PC_low for the treated admissions that developed the outcome.

    Returns an empty list when no admission qualifies. Cases outside the
    training support interval are flagged, not scored.
    """
    qualifying = (cohort.treatment == 1) & (cohort.outcome == 1.0)
    if not qualifying.any():
        return []
    sub = cohort.subset(qualifying)
    mu0, mu1 = predict_mu_arrays(model, sub)
    scores = propensity_scores(model, sub)
    in_support = model.support.contains(scores)
    cases = []
    for i, aid in enumerate(sub.admission_ids):
        if in_support[i]:
            val = pc_low(MuPair(float(mu0[i]), float(mu1[i])))
            err = 1.0 - mu0[i] / mu1[i]
            cases.append(CaseEstimate(aid, float(mu0[i]), float(mu1[i]),
                                      float(err), float(val), True))
        else:
            cases.append(CaseEstimate(aid, float(mu0[i]), float(mu1[i]),
                                      None, None, False))
    return cases


def att_tlearner(model: TLearnerModel, cohort: Cohort) -> EffectEstimate:
    """ATT from the outcome models: average mu0 and mu1 over the treated
    admissions within the support interval."""
    mu0, mu1 = predict_mu_arrays(model, cohort)
    scores = propensity_scores(model, cohort)
    mask = (cohort.treatment == 1) & model.support.contains(scores)
    if not mask.any():
        raise EstimationError("no treated admissions within support")
    return effect_from_risks(float(mu0[mask].mean()), float(mu1[mask].mean()))


def att_iptw(
    scores: np.ndarray, treatment: np.ndarray, outcome: np.ndarray
) -> EffectEstimate:
    """ATT by inverse probability of treatment weighting.

    Treated admissions keep weight 1; controls are weighted by
    e(x)/(1 - e(x)) and normalized to sum to one (Hajek).
    """
    scores = np.asarray(scores, dtype=float)
    treatment = np.asarray(treatment)
    outcome = np.asarray(outcome, dtype=float)
    t = treatment == 1
    c = ~t
    if not t.any() or not c.any():
        raise EstimationError("both arms must be non-empty")
    if (scores[c] >= 1.0).any():
        raise EstimationError(
            "control admission with propensity score 1: infinite weight "
            "(should have been trimmed)"
        )
    w = scores[c] / (1.0 - scores[c])
    risk1 = float(outcome[t].mean())
    risk0 = float(np.sum(w * outcome[c]) / np.sum(w))
    return effect_from_risks(risk0, risk1)


# --- serialization of the fitted pipeline ----------------------------------

PIPELINE_MAGIC = "CFADE-TLEARNER-v1"


def save_tlearner(model: TLearnerModel, directory, stem: str) -> list[Path]:
    """Write the three learners as CFADE-LEARNER-v1 files plus a pipeline
    sidecar holding selection, support and imputation state."""
    directory = Path(directory)
    paths = []
    for part, learner in (
        ("model0", model.model0),
        ("model1", model.model1),
        ("propensity", model.propensity),
    ):
        p = directory / f"{stem}_{part}.learner"
        save_learner(learner, p)
        paths.append(p)
    sidecar = directory / f"{stem}_pipeline.json"
    payload = {
        "magic": PIPELINE_MAGIC,
        "selection": {
            "removed_by_prevalence": model.selection.removed_by_prevalence,
            "removed_by_pvalue": model.selection.removed_by_pvalue,
            "retained": model.selection.retained,
        },
        "support": {
            "lower": model.support.lower,
            "upper": model.support.upper,
            "excluded": list(model.support.excluded),
        },
        "imputation": model.imputation.tolist(),
        "covariate_names": list(model.covariate_names),
        "seed": model.seed,
    }
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    paths.append(sidecar)
    return paths


def load_tlearner(directory, stem: str) -> TLearnerModel:
    directory = Path(directory)
    with open(directory / f"{stem}_pipeline.json", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("magic") != PIPELINE_MAGIC:
        raise EstimationError("not a pipeline sidecar file")
    sel = payload["selection"]
    return TLearnerModel(
        model0=load_learner(directory / f"{stem}_model0.learner"),
        model1=load_learner(directory / f"{stem}_model1.learner"),
        propensity=load_learner(directory / f"{stem}_propensity.learner"),
        selection=SelectionReport(
            sel["removed_by_prevalence"],
            [(n, p) for n, p in sel["removed_by_pvalue"]],
            sel["retained"],
        ),
        support=SupportInterval(
            payload["support"]["lower"],
            payload["support"]["upper"],
            tuple(payload["support"]["excluded"]),
        ),
        imputation=np.array(payload["imputation"]),
        covariate_names=tuple(payload["covariate_names"]),
        seed=payload["seed"],
    )
