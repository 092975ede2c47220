"""Synthetic cohort generator with materialized potential outcomes.

Covariates are drawn i.i.d., treatment follows a logistic propensity
model, and the two potential-outcome risks come from a logistic baseline
model plus a log-odds treatment shift. Under the monotone coupling a
single shared uniform realizes both potential outcomes, which makes the
individual probability of causation exactly equal to the conditional
excess risk ratio; the independent coupling violates monotonicity and
makes the excess risk ratio a strict lower bound.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.special import expit

from pclow.cohort import Admission, Cohort, Covariate, CovariateSchema
from pclow.estimators import EffectEstimate, effect_from_risks

COUPLINGS = ("monotone", "independent")


class DgpError(ValueError):
    """Invalid generator configuration."""


@dataclass
class DgpConfig:
    n_admissions: int
    n_clusters: int
    n_continuous: int
    n_binary_confounders: int
    n_nephrotoxins: int
    propensity_coefficients: Sequence[float]  # intercept first, then one per covariate
    baseline_coefficients: Sequence[float]
    effect_coefficients: Sequence[float]
    coupling: str = "monotone"
    missingness_rate: float = 0.0
    cluster_effect_scale: float = 0.0  # sd of a cluster-level logit intercept
    binary_prevalences: Sequence[float] | None = None  # default: drawn from seed
    seed: int = 0

    @property
    def n_covariates(self) -> int:
        return self.n_continuous + self.n_binary_confounders + self.n_nephrotoxins

    def validate(self) -> None:
        if self.n_admissions <= 0 or self.n_clusters <= 0:
            raise DgpError("n_admissions and n_clusters must be positive")
        if self.n_clusters > self.n_admissions:
            raise DgpError("n_clusters must not exceed n_admissions")
        if self.coupling not in COUPLINGS:
            raise DgpError(f"unknown coupling {self.coupling!r}")
        if not 0 <= self.missingness_rate < 1:
            raise DgpError("missingness_rate must be in [0, 1)")
        for name in ("propensity_coefficients", "baseline_coefficients",
                     "effect_coefficients"):
            vec = getattr(self, name)
            if len(vec) != 1 + self.n_covariates:
                raise DgpError(
                    f"{name} must have length {1 + self.n_covariates} "
                    f"(intercept + one per covariate), got {len(vec)}"
                )
        if self.binary_prevalences is not None and len(self.binary_prevalences) != (
            self.n_binary_confounders + self.n_nephrotoxins
        ):
            raise DgpError("binary_prevalences length mismatch")
        if self.coupling == "monotone":
            eff = np.asarray(self.effect_coefficients, dtype=float)
            if (eff < 0).any():
                raise DgpError("monotone coupling requires non-negative effect coefficients")
            # continuous covariates take negative values, so any effect
            # loading on them could produce p1 < p0
            if self.n_continuous and (eff[1 : 1 + self.n_continuous] != 0).any():
                raise DgpError(
                    "monotone coupling requires zero effect coefficients on "
                    "continuous covariates"
                )

    def schema(self) -> CovariateSchema:
        covs = [
            Covariate(f"x_cont_{i}", "continuous", "core_confounder")
            for i in range(self.n_continuous)
        ]
        covs += [
            Covariate(f"x_bin_{i}", "binary", "core_confounder")
            for i in range(self.n_binary_confounders)
        ]
        covs += [
            Covariate(f"ntx_{i}", "binary", "nephrotoxin")
            for i in range(self.n_nephrotoxins)
        ]
        return CovariateSchema(tuple(covs))


@dataclass
class SyntheticAdmission:
    """Admission plus its potential outcomes and true conditional risks."""

    admission: Admission
    p0: float  # true P(Y=1 | A=0, X=x)
    p1: float  # true P(Y=1 | A=1, X=x)
    y0: int
    y1: int
    true_propensity: float
    coupling: str


@dataclass
class SyntheticCohort:
    config: DgpConfig
    schema: CovariateSchema
    admissions: list[SyntheticAdmission] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.admissions)

    def __iter__(self) -> Iterator[SyntheticAdmission]:
        return iter(self.admissions)

    def to_cohort(self) -> Cohort:
        return Cohort.from_admissions(self.schema, (sa.admission for sa in self.admissions))

    def oracle_arrays(self) -> dict[str, np.ndarray]:
        return {
            "p0": np.array([sa.p0 for sa in self.admissions]),
            "p1": np.array([sa.p1 for sa in self.admissions]),
            "y0": np.array([sa.y0 for sa in self.admissions]),
            "y1": np.array([sa.y1 for sa in self.admissions]),
            "true_propensity": np.array([sa.true_propensity for sa in self.admissions]),
        }


def _rng_for(seed: int, key: tuple[int, ...]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def generate_cohort(config: DgpConfig) -> SyntheticCohort:
    """Generate a cohort; fully deterministic given the seed.

    Each admission's random stream derives from (seed, admission index),
    so generation order (or parallel generation) cannot change the output.
    """
    config.validate()
    schema = config.schema()
    n, p = config.n_admissions, config.n_covariates
    n_bin = config.n_binary_confounders + config.n_nephrotoxins

    global_rng = _rng_for(config.seed, (1,))
    if config.binary_prevalences is not None:
        prevalences = np.asarray(config.binary_prevalences, dtype=float)
        global_rng.uniform(0.05, 0.5, size=n_bin)  # keep stream alignment
    else:
        prevalences = global_rng.uniform(0.05, 0.5, size=n_bin)
    cluster_labels = [f"icu_{k:03d}" for k in range(config.n_clusters)]
    cluster_assignment = np.arange(n) % config.n_clusters
    global_rng.shuffle(cluster_assignment)
    cluster_effects = (
        global_rng.normal(0.0, config.cluster_effect_scale, size=config.n_clusters)
        if config.cluster_effect_scale > 0
        else np.zeros(config.n_clusters)
    )

    b_prop = np.asarray(config.propensity_coefficients, dtype=float)
    b_base = np.asarray(config.baseline_coefficients, dtype=float)
    b_eff = np.asarray(config.effect_coefficients, dtype=float)

    admissions: list[SyntheticAdmission] = []
    for i in range(n):
        rng = _rng_for(config.seed, (0, i))
        x = np.empty(p)
        x[: config.n_continuous] = rng.standard_normal(config.n_continuous)
        x[config.n_continuous :] = (rng.random(n_bin) < prevalences).astype(float)

        e = float(expit(b_prop[0] + x @ b_prop[1:]))
        a = int(rng.random() < e)
        c = cluster_effects[cluster_assignment[i]]
        base_logit = b_base[0] + x @ b_base[1:] + c
        shift = b_eff[0] + x @ b_eff[1:]
        p0 = float(expit(base_logit))
        p1 = float(expit(base_logit + shift))
        if config.coupling == "monotone":
            if p1 < p0:
                raise DgpError(
                    f"monotone coupling but p1 < p0 for admission index {i}"
                )
            u = rng.random()
            y0, y1 = int(u < p0), int(u < p1)
        else:
            y0 = int(rng.random() < p0)
            y1 = int(rng.random() < p1)

        if config.missingness_rate > 0:
            miss = rng.random(p) < config.missingness_rate
            x = np.where(miss, np.nan, x)

        admissions.append(
            SyntheticAdmission(
                admission=Admission(
                    admission_id=f"adm_{i:06d}",
                    cluster_id=cluster_labels[cluster_assignment[i]],
                    covariates=x,
                    treatment=a,
                    outcome=y1 if a == 1 else y0,
                ),
                p0=p0,
                p1=p1,
                y0=y0,
                y1=y1,
                true_propensity=e,
                coupling=config.coupling,
            )
        )
    return SyntheticCohort(config, schema, admissions)


def true_pc(admission: SyntheticAdmission) -> float:
    """Oracle probability of causation for a treated, outcome-positive
    synthetic admission.

    Monotone coupling (shared uniform): P(Y0=0 | Y1=1, X) = (p1-p0)/p1.
    Independent coupling: P(Y0=0 | X) = 1 - p0.
    """
    if admission.admission.treatment != 1 or admission.admission.outcome != 1:
        raise ValueError("true_pc requires a treated admission with the outcome")
    if admission.coupling == "monotone":
        return (admission.p1 - admission.p0) / admission.p1
    return 1.0 - admission.p0


def true_att(cohort: SyntheticCohort) -> EffectEstimate:
    """Oracle ATT: mean true risks over the treated admissions."""
    treated = [sa for sa in cohort if sa.admission.treatment == 1]
    if not treated:
        raise ValueError("true_att requires at least one treated admission")
    risk0 = float(np.mean([sa.p0 for sa in treated]))
    risk1 = float(np.mean([sa.p1 for sa in treated]))
    return effect_from_risks(risk0, risk1)


# --- oracle sidecar file ---------------------------------------------------

ORACLE_COLUMNS = ("admission_id", "p0", "p1", "y0", "y1", "true_propensity")


def write_oracle(cohort: SyntheticCohort, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ORACLE_COLUMNS)
        for sa in cohort:
            w.writerow(
                [
                    sa.admission.admission_id,
                    repr(sa.p0),
                    repr(sa.p1),
                    sa.y0,
                    sa.y1,
                    repr(sa.true_propensity),
                ]
            )


def read_oracle(path) -> dict[str, dict[str, float]]:
    """Oracle rows keyed by admission id."""
    out: dict[str, dict[str, float]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != ORACLE_COLUMNS:
            raise ValueError(f"unexpected oracle header {header}")
        for row in reader:
            out[row[0]] = {
                "p0": float(row[1]),
                "p1": float(row[2]),
                "y0": float(row[3]),
                "y1": float(row[4]),
                "true_propensity": float(row[5]),
            }
    return out
