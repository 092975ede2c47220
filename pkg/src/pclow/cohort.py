"""Cohort data model, trial eligibility screening and delimited-file IO.

The cohort file is UTF-8 CSV with header
``admission_id,cluster_id,treatment,outcome,<covariate names...>``;
an empty cell encodes a missing value. The schema file lists one
covariate per line as ``name,kind,selection_group,unit``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

KINDS = ("continuous", "binary")
SELECTION_GROUPS = ("core_confounder", "longitudinal_parameter", "nephrotoxin")


class CohortError(ValueError):
    """Invalid cohort data or file contents."""


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str
    selection_group: str
    unit: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CohortError(f"unknown covariate kind {self.kind!r} for {self.name!r}")
        if self.selection_group not in SELECTION_GROUPS:
            raise CohortError(
                f"unknown selection group {self.selection_group!r} for {self.name!r}"
            )


@dataclass(frozen=True)
class CovariateSchema:
    covariates: tuple[Covariate, ...]

    def __post_init__(self):
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise CohortError(f"duplicate covariate names in schema: {dupes}")

    def __len__(self) -> int:
        return len(self.covariates)

    def __iter__(self) -> Iterator[Covariate]:
        return iter(self.covariates)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def is_binary(self) -> np.ndarray:
        return np.array([c.kind == "binary" for c in self.covariates])

    def groups(self) -> tuple[str, ...]:
        return tuple(c.selection_group for c in self.covariates)


@dataclass
class Admission:
    """One ICU admission: covariates, bootstrap cluster, treatment and outcome.

    ``covariates`` is a float vector ordered per schema; NaN encodes a
    missing value. ``outcome`` may be None for prediction-only records.
    """

    admission_id: str
    cluster_id: str
    covariates: np.ndarray
    treatment: int
    outcome: int | None = None


@dataclass
class RawAdmissionRecord:
    """Admission plus the fields the eligibility rules inspect."""

    age_years: float
    dialysis_dependent_at_admission: bool
    aki_at_baseline: bool
    treatment_initiation_hour: float
    other_option_initiated_after: bool
    admission: Admission

    def __post_init__(self):
        if self.age_years <= 0:
            raise CohortError(
                f"{self.admission.admission_id}: age_years must be positive"
            )
        if self.treatment_initiation_hour < 0:
            raise CohortError(
                f"{self.admission.admission_id}: treatment_initiation_hour must be >= 0"
            )


class Cohort:
    """Array-backed ordered collection of admissions conforming to a schema.

    Outcome is stored as float with NaN marking an absent outcome.
    """

    def __init__(
        self,
        schema: CovariateSchema,
        admission_ids: Sequence[str],
        cluster_ids: Sequence[str],
        treatment: np.ndarray,
        outcome: np.ndarray,
        covariates: np.ndarray,
    ):
        n = len(admission_ids)
        self.schema = schema
        self.admission_ids = list(admission_ids)
        self.cluster_ids = list(cluster_ids)
        self.treatment = np.asarray(treatment, dtype=int)
        self.outcome = np.asarray(outcome, dtype=float)
        self.covariates = np.asarray(covariates, dtype=float)
        if not (len(self.cluster_ids) == n == len(self.treatment) == len(self.outcome)):
            raise CohortError("cohort arrays have inconsistent lengths")
        if self.covariates.shape != (n, len(schema)):
            raise CohortError(
                f"covariate matrix shape {self.covariates.shape} does not match "
                f"{n} admissions x {len(schema)} schema covariates"
            )
        if len(set(self.admission_ids)) != n:
            seen: set[str] = set()
            dupes = []
            for a in self.admission_ids:
                if a in seen:
                    dupes.append(a)
                seen.add(a)
            raise CohortError(f"duplicate admission_id: {sorted(set(dupes))}")
        bad = ~np.isin(self.treatment, (0, 1))
        if bad.any():
            raise CohortError(
                f"treatment must be 0 or 1 (admission {self.admission_ids[int(np.flatnonzero(bad)[0])]})"
            )
        observed = ~np.isnan(self.outcome)
        if not np.isin(self.outcome[observed], (0.0, 1.0)).all():
            raise CohortError("outcome must be 0 or 1 when present")

    @classmethod
    def from_admissions(
        cls, schema: CovariateSchema, admissions: Iterable[Admission]
    ) -> "Cohort":
        admissions = list(admissions)
        n = len(admissions)
        cov = np.empty((n, len(schema)))
        outcome = np.empty(n)
        for i, a in enumerate(admissions):
            if len(a.covariates) != len(schema):
                raise CohortError(
                    f"{a.admission_id}: covariate vector length {len(a.covariates)} "
                    f"!= schema length {len(schema)}"
                )
            cov[i] = a.covariates
            outcome[i] = np.nan if a.outcome is None else a.outcome
        return cls(
            schema,
            [a.admission_id for a in admissions],
            [a.cluster_id for a in admissions],
            np.array([a.treatment for a in admissions]),
            outcome,
            cov,
        )

    def __len__(self) -> int:
        return len(self.admission_ids)

    def admission(self, i: int) -> Admission:
        y = self.outcome[i]
        return Admission(
            self.admission_ids[i],
            self.cluster_ids[i],
            self.covariates[i].copy(),
            int(self.treatment[i]),
            None if np.isnan(y) else int(y),
        )

    def __iter__(self) -> Iterator[Admission]:
        return (self.admission(i) for i in range(len(self)))

    def subset(self, indices) -> "Cohort":
        indices = np.asarray(indices)
        if indices.dtype == bool:
            indices = np.flatnonzero(indices)
        return Cohort(
            self.schema,
            [self.admission_ids[i] for i in indices],
            [self.cluster_ids[i] for i in indices],
            self.treatment[indices],
            self.outcome[indices],
            self.covariates[indices],
        )

    def replace_covariates(self, covariates: np.ndarray) -> "Cohort":
        return Cohort(
            self.schema,
            self.admission_ids,
            self.cluster_ids,
            self.treatment,
            self.outcome,
            covariates,
        )

    def equals(self, other: "Cohort") -> bool:
        return (
            self.schema == other.schema
            and self.admission_ids == other.admission_ids
            and self.cluster_ids == other.cluster_ids
            and np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.outcome, other.outcome, equal_nan=True)
            and np.array_equal(self.covariates, other.covariates, equal_nan=True)
        )


# --- eligibility -----------------------------------------------------------

# (rule name, predicate on RawAdmissionRecord); evaluation order is fixed and
# the exclusion log records only the first failing rule.
ELIGIBILITY_RULES = (
    ("adult", lambda r: r.age_years >= 18),
    ("dialysis_dependent", lambda r: not r.dialysis_dependent_at_admission),
    ("baseline_aki", lambda r: not r.aki_at_baseline),
    # boundaries at 24 h and 168 h (7 days) are kept eligible
    ("initiation_window", lambda r: 24 <= r.treatment_initiation_hour <= 168),
    ("treatment_switch", lambda r: not r.other_option_initiated_after),
)


@dataclass
class ExclusionLog:
    """Per-record first-failing rule, in input order."""

    entries: list[tuple[str, str]] = field(default_factory=list)  # (admission_id, rule)

    def rule_for(self, admission_id: str) -> str | None:
        for aid, rule in self.entries:
            if aid == admission_id:
                return rule
        return None

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for aid, rule in self.entries:
                fh.write(f"{aid},{rule}\n")


def apply_eligibility(
    records: Sequence[RawAdmissionRecord], schema: CovariateSchema
) -> tuple[Cohort, ExclusionLog]:
    """Screen raw records against the trial eligibility rules.

    Returns the retained admissions as a Cohort plus an exclusion log with
    each excluded record's first failing rule. Duplicate admission ids are
    rejected up front.
    """
    seen: set[str] = set()
    for r in records:
        aid = r.admission.admission_id
        if aid in seen:
            raise CohortError(f"duplicate admission_id: {aid}")
        seen.add(aid)
    retained: list[Admission] = []
    log = ExclusionLog()
    for r in records:
        failed = next((name for name, ok in ELIGIBILITY_RULES if not ok(r)), None)
        if failed is None:
            retained.append(r.admission)
        else:
            log.entries.append((r.admission.admission_id, failed))
    return Cohort.from_admissions(schema, retained), log


# --- summary ---------------------------------------------------------------


@dataclass
class SummaryTable:
    n_control: int
    n_treated: int
    rows: list[tuple[str, str, str]]  # (characteristic, control cell, treated cell)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["characteristic", f"control (n={self.n_control})",
                        f"treated (n={self.n_treated})"])
            for row in self.rows:
                w.writerow(row)


def _summarize_continuous(values: np.ndarray) -> str:
    observed = values[~np.isnan(values)]
    med, q1, q3 = np.quantile(observed, [0.5, 0.25, 0.75])
    return f"{med:.1f} ({q1:.1f} - {q3:.1f})"


def _summarize_binary(values: np.ndarray, arm_size: int) -> str:
    observed = values[~np.isnan(values)]
    count = int(observed.sum())
    return f"{count} ({100.0 * count / arm_size:.1f})"


def cohort_summary(cohort: Cohort) -> SummaryTable:
    """Per-arm baseline table: median (Q1 - Q3) for continuous covariates,
    count (%) for binary ones. Percentages are against arm size."""
    if len(cohort) == 0:
        raise CohortError("cannot summarize an empty cohort")
    arms = {}
    for label, value in (("control", 0), ("treated", 1)):
        mask = cohort.treatment == value
        if not mask.any():
            raise CohortError(f"empty {label} arm")
        arms[label] = mask
    n0, n1 = int(arms["control"].sum()), int(arms["treated"].sum())
    rows = []
    for j, cov in enumerate(cohort.schema):
        col = cohort.covariates[:, j]
        cells = []
        for label, n_arm in (("control", n0), ("treated", n1)):
            vals = col[arms[label]]
            if cov.kind == "continuous":
                cells.append(_summarize_continuous(vals))
            else:
                cells.append(_summarize_binary(vals, n_arm))
        rows.append((cov.name, cells[0], cells[1]))
    return SummaryTable(n0, n1, rows)


# --- file IO ---------------------------------------------------------------

_FIXED_COLUMNS = ("admission_id", "cluster_id", "treatment", "outcome")


def write_schema(schema: CovariateSchema, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        for c in schema:
            w.writerow([c.name, c.kind, c.selection_group, c.unit])


def read_schema(path) -> CovariateSchema:
    covariates = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 4:
                raise CohortError(f"schema line {lineno}: expected 4 fields, got {len(row)}")
            covariates.append(Covariate(*row))
    return CovariateSchema(tuple(covariates))


def write_cohort(cohort: Cohort, path) -> None:
    """Write a cohort as CSV; missing values become empty cells."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(_FIXED_COLUMNS) + list(cohort.schema.names))
        is_bin = cohort.schema.is_binary()
        for i in range(len(cohort)):
            y = cohort.outcome[i]
            row = [
                cohort.admission_ids[i],
                cohort.cluster_ids[i],
                str(int(cohort.treatment[i])),
                "" if np.isnan(y) else str(int(y)),
            ]
            for j, v in enumerate(cohort.covariates[i]):
                if np.isnan(v):
                    row.append("")
                elif is_bin[j]:
                    row.append(str(int(v)))
                else:
                    row.append(repr(float(v)))
            w.writerow(row)


def _parse_binary(cell: str, rownum: int, column: str) -> float:
    if cell not in ("0", "1"):
        raise CohortError(
            f"row {rownum}, column {column!r}: expected 0 or 1, got {cell!r}"
        )
    return float(cell)


def _parse_number(cell: str, rownum: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise CohortError(
            f"row {rownum}, column {column!r}: malformed number {cell!r}"
        ) from None


def read_cohort(path, schema_path) -> Cohort:
    """Read a cohort CSV against its schema file.

    Round-trips with :func:`write_cohort`. Domain violations are reported
    with their row number (1 = first data row) and column name.
    """
    schema = read_schema(schema_path)
    expected = list(_FIXED_COLUMNS) + list(schema.names)
    is_bin = schema.is_binary()
    ids, clusters, treatment, outcome, cov_rows = [], [], [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CohortError("empty cohort file")
        if header != expected:
            unknown = [c for c in header if c not in expected]
            missing = [c for c in expected if c not in header]
            raise CohortError(
                f"header mismatch: unknown columns {unknown}, missing columns {missing}"
            )
        for rownum, row in enumerate(reader, start=1):
            if len(row) != len(expected):
                raise CohortError(
                    f"row {rownum}: expected {len(expected)} cells, got {len(row)}"
                )
            ids.append(row[0])
            clusters.append(row[1])
            treatment.append(_parse_binary(row[2], rownum, "treatment"))
            outcome.append(
                np.nan if row[3] == "" else _parse_binary(row[3], rownum, "outcome")
            )
            vals = []
            for j, cell in enumerate(row[4:]):
                name = schema.names[j]
                if cell == "":
                    vals.append(np.nan)
                elif is_bin[j]:
                    vals.append(_parse_binary(cell, rownum, name))
                else:
                    vals.append(_parse_number(cell, rownum, name))
            cov_rows.append(vals)
    return Cohort(
        schema,
        ids,
        clusters,
        np.array(treatment, dtype=int),
        np.array(outcome),
        np.array(cov_rows) if cov_rows else np.empty((0, len(schema))),
    )
