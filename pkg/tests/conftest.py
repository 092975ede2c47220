import numpy as np
import pytest

from pclow.cohort import Admission, Covariate, CovariateSchema
from pclow.synth import DgpConfig


def small_schema() -> CovariateSchema:
    return CovariateSchema(
        (
            Covariate("age", "continuous", "core_confounder", "years"),
            Covariate("male", "binary", "core_confounder"),
        )
    )


def make_admission(aid, cluster, covs, treatment, outcome=None):
    return Admission(aid, cluster, np.asarray(covs, dtype=float), treatment, outcome)


def standard_dgp(seed=0, n=2000, coupling="monotone", missingness=0.0, clusters=15):
    """DGP with 2 continuous + 2 binary core confounders + 2 nephrotoxins,
    all moderately associated with treatment and outcome."""
    return DgpConfig(
        n_admissions=n,
        n_clusters=clusters,
        n_continuous=2,
        n_binary_confounders=2,
        n_nephrotoxins=2,
        propensity_coefficients=[0.0, 0.3, -0.3, 0.4, -0.2, 0.2, 0.0],
        baseline_coefficients=[-1.5, 0.5, 0.3, -0.4, 0.3, 0.4, 0.2],
        effect_coefficients=[0.5, 0.0, 0.0, 0.3, 0.0, 0.2, 0.0],
        coupling=coupling,
        missingness_rate=missingness,
        seed=seed,
    )


@pytest.fixture
def schema():
    return small_schema()
