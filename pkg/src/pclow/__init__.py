"""Individualized lower bounds on the probability of causation (PC_low)
for adverse drug events, estimated from observational cohort data.

The pipeline: trial-style eligibility screening, T-learner counterfactual
outcome models, excess-risk-ratio identification of the PC lower bound,
IPTW comparison, cluster-bootstrap confidence intervals, and agreement
metrics against expert causality labels. A built-in synthetic generator
with known potential outcomes serves as the verification oracle.
"""

from pclow.cohort import (
    Admission,
    Cohort,
    Covariate,
    CovariateSchema,
    RawAdmissionRecord,
    apply_eligibility,
    cohort_summary,
    read_cohort,
    write_cohort,
)
from pclow.estimators import (
    EffectEstimate,
    EstimationError,
    MuPair,
    TLearnerModel,
    att_iptw,
    att_tlearner,
    common_support,
    fit_tlearner,
    pc_low,
    pc_low_cases,
    predict_mu,
)
from pclow.learners import (
    FittedLearner,
    LearnerSpec,
    fit_logistic,
    fit_propensity,
    fit_random_forest,
    predict_proba,
    recalibrate,
)
from pclow.resampling import BootstrapResult, cluster_bootstrap, percentile_ci
from pclow.synth import DgpConfig, SyntheticAdmission, generate_cohort, true_att, true_pc

__all__ = [
    "Admission",
    "BootstrapResult",
    "Cohort",
    "Covariate",
    "CovariateSchema",
    "DgpConfig",
    "EffectEstimate",
    "EstimationError",
    "FittedLearner",
    "LearnerSpec",
    "MuPair",
    "RawAdmissionRecord",
    "SyntheticAdmission",
    "TLearnerModel",
    "apply_eligibility",
    "att_iptw",
    "att_tlearner",
    "cluster_bootstrap",
    "cohort_summary",
    "common_support",
    "fit_logistic",
    "fit_propensity",
    "fit_random_forest",
    "fit_tlearner",
    "generate_cohort",
    "pc_low",
    "pc_low_cases",
    "percentile_ci",
    "predict_mu",
    "predict_proba",
    "read_cohort",
    "recalibrate",
    "true_att",
    "true_pc",
    "write_cohort",
]
