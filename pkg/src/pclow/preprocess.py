"""Missing-value imputation and automated variable selection.

Both are rerun from scratch inside every bootstrap replication; the fitted
pipeline carries its selection report and imputation fill values so that
held-out data uses the same columns and fills.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from pclow.cohort import Cohort, CohortError
from pclow.learners import LearnerSpec, _bernoulli_deviance, _irls

PREVALENCE_THRESHOLD = 0.02  # strict: prevalence exactly 0.02 is retained
PVALUE_THRESHOLD = 0.2


@dataclass
class SelectionReport:
    removed_by_prevalence: list[str]
    removed_by_pvalue: list[tuple[str, float]]  # (name, p-value)
    retained: list[str]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "decision", "p_value"])
            for name in self.removed_by_prevalence:
                w.writerow([name, "removed_by_prevalence", ""])
            for name, p in self.removed_by_pvalue:
                w.writerow([name, "removed_by_pvalue", f"{p:.6g}"])
            for name in self.retained:
                w.writerow([name, "retained", ""])


def imputation_values(cohort: Cohort) -> np.ndarray:
    """Per-covariate fill value: mean of observed values for continuous
    covariates, median (ties at 0.5 resolved to 0) for binary ones."""
    is_bin = cohort.schema.is_binary()
    fills = np.empty(len(cohort.schema))
    for j, cov in enumerate(cohort.schema):
        col = cohort.covariates[:, j]
        observed = col[~np.isnan(col)]
        if observed.size == 0:
            raise CohortError(f"covariate {cov.name!r} has no observed values")
        if is_bin[j]:
            fills[j] = 1.0 if observed.mean() > 0.5 else 0.0
        else:
            fills[j] = observed.mean()
    return fills


def apply_imputation(cohort: Cohort, fills: np.ndarray) -> Cohort:
    cov = cohort.covariates.copy()
    mask = np.isnan(cov)
    cov[mask] = np.broadcast_to(fills, cov.shape)[mask]
    return cohort.replace_covariates(cov)


def impute(cohort: Cohort) -> Cohort:
    """Fill missing covariate values; treatment and outcome are never
    altered (the outcome is not imputed)."""
    return apply_imputation(cohort, imputation_values(cohort))


def univariable_pvalue(feature: np.ndarray, outcome: np.ndarray) -> float:
    """Likelihood-ratio p-value (1 df) for logistic regression of the
    outcome on the single feature versus intercept only.

    A constant feature carries no information and returns 1.0 by
    convention.
    """
    feature = np.asarray(feature, dtype=float)
    outcome = np.asarray(outcome, dtype=float)
    if len(feature) != len(outcome):
        raise ValueError("feature and outcome lengths differ")
    if np.unique(outcome).size < 2:
        raise ValueError("outcome is constant; p-value undefined")
    if np.ptp(feature) == 0:
        return 1.0
    n = len(outcome)
    p_null = outcome.mean()
    dev_null = _bernoulli_deviance(outcome, np.full(n, p_null))
    X = np.column_stack([np.ones(n), feature])
    # unpenalized LRT; the solver's internal jitter keeps separation finite
    beta, _ = _irls(X, outcome, LearnerSpec(kind="logistic", ridge=0.0))
    dev_full = _bernoulli_deviance(outcome, 1 / (1 + np.exp(-(X @ beta))))
    stat = max(0.0, dev_null - dev_full)
    return float(chi2.sf(stat, df=1))


def select_variables(cohort: Cohort) -> SelectionReport:
    """Two-step selection on an imputed cohort with outcomes present.

    Step 1 removes binary covariates of any group with prevalence below
    2%. Step 2 removes longitudinal parameters and nephrotoxins whose
    univariable outcome association has p > 0.2; core confounders are
    exempt from step 2.
    """
    observed = ~np.isnan(cohort.outcome)
    if not observed.any():
        raise CohortError("selection requires outcomes")
    y = cohort.outcome[observed]
    X = cohort.covariates[observed]
    if np.isnan(X).any():
        raise CohortError("selection requires an imputed cohort")
    is_bin = cohort.schema.is_binary()
    groups = cohort.schema.groups()
    removed_prev: list[str] = []
    removed_p: list[tuple[str, float]] = []
    retained: list[str] = []
    for j, cov in enumerate(cohort.schema):
        if is_bin[j] and X[:, j].mean() < PREVALENCE_THRESHOLD:
            removed_prev.append(cov.name)
            continue
        if groups[j] in ("longitudinal_parameter", "nephrotoxin"):
            p = univariable_pvalue(X[:, j], y)
            if p > PVALUE_THRESHOLD:
                removed_p.append((cov.name, p))
                continue
        retained.append(cov.name)
    if not retained:
        raise CohortError("variable selection removed every covariate")
    return SelectionReport(removed_prev, removed_p, retained)
