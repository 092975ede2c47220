import numpy as np
import pytest
from scipy.stats import kstest

from pclow.cohort import Cohort, CohortError, Covariate, CovariateSchema
from pclow.preprocess import (
    apply_imputation,
    imputation_values,
    impute,
    select_variables,
    univariable_pvalue,
)

from conftest import make_admission


def build_cohort(columns, treatment, outcome, kinds=None, groups=None):
    """columns: dict name -> list of values (np.nan = missing)."""
    names = list(columns)
    kinds = kinds or {n: "continuous" for n in names}
    groups = groups or {n: "core_confounder" for n in names}
    schema = CovariateSchema(
        tuple(Covariate(n, kinds[n], groups[n]) for n in names)
    )
    n = len(treatment)
    admissions = [
        make_admission(
            f"a{i}", "x",
            [columns[name][i] for name in names],
            treatment[i],
            None if outcome[i] is None else outcome[i],
        )
        for i in range(n)
    ]
    return Cohort.from_admissions(schema, admissions)


class TestImpute:
    def test_continuous_mean(self):
        c = build_cohort({"v": [1.0, np.nan, 3.0]}, [0, 1, 0], [0, 1, 0])
        out = impute(c)
        assert out.covariates[1, 0] == 2.0

    def test_binary_median_tie_resolves_to_zero(self):
        c = build_cohort(
            {"b": [0, 0, 1, np.nan]}, [0, 1, 0, 1], [0, 1, 0, 1],
            kinds={"b": "binary"},
        )
        out = impute(c)
        assert out.covariates[3, 0] == 0.0

    def test_binary_median_majority_one(self):
        c = build_cohort(
            {"b": [1, 1, 0, np.nan]}, [0, 1, 0, 1], [0, 1, 0, 1],
            kinds={"b": "binary"},
        )
        out = impute(c)
        assert out.covariates[3, 0] == 1.0

    def test_outcome_never_imputed(self):
        c = build_cohort({"v": [1.0, 2.0]}, [0, 1], [0, None])
        out = impute(c)
        assert np.isnan(out.outcome[1])
        assert np.array_equal(out.treatment, c.treatment)

    def test_observed_values_untouched(self):
        c = build_cohort({"v": [1.25, np.nan, 3.5]}, [0, 1, 0], [0, 1, 0])
        out = impute(c)
        assert out.covariates[0, 0] == 1.25 and out.covariates[2, 0] == 3.5

    def test_idempotent(self):
        c = build_cohort({"v": [1.0, np.nan, 3.0]}, [0, 1, 0], [0, 1, 0])
        once = impute(c)
        twice = impute(once)
        assert twice.equals(once)

    def test_all_missing_errors(self):
        c = build_cohort({"v": [np.nan, np.nan]}, [0, 1], [0, 1])
        with pytest.raises(CohortError, match="'v'"):
            impute(c)

    def test_fill_values_reusable_on_new_data(self):
        train = build_cohort({"v": [2.0, 4.0]}, [0, 1], [0, 1])
        fills = imputation_values(train)
        test = build_cohort({"v": [np.nan]}, [0], [0])
        out = apply_imputation(test, fills)
        assert out.covariates[0, 0] == 3.0


class TestUnivariablePvalue:
    def test_perfect_association(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 2, 200).astype(float)
        assert univariable_pvalue(y, y) < 1e-6

    def test_constant_feature_convention(self):
        y = np.array([0, 1, 0, 1], dtype=float)
        assert univariable_pvalue(np.ones(4), y) == 1.0

    def test_constant_outcome_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            univariable_pvalue(np.array([1.0, 2.0]), np.array([1.0, 1.0]))

    def test_null_pvalues_uniform(self):
        # independent feature: p-values should look uniform across replications
        rng = np.random.default_rng(42)
        ps = []
        for _ in range(200):
            x = rng.standard_normal(400)
            y = (rng.random(400) < 0.3).astype(float)
            ps.append(univariable_pvalue(x, y))
        assert kstest(ps, "uniform").pvalue > 1e-3


class TestSelectVariables:
    def build(self, rare_prev=0.01, seed=0, n=2000):
        rng = np.random.default_rng(seed)
        age = rng.standard_normal(n)
        rare = (rng.random(n) < rare_prev).astype(float)
        null_ntx = (rng.random(n) < 0.3).astype(float)
        real_ntx = (rng.random(n) < 0.3).astype(float)
        logits = -1.0 + 1.2 * age + 1.5 * real_ntx
        y = (rng.random(n) < 1 / (1 + np.exp(-logits))).astype(float)
        t = rng.integers(0, 2, n)
        return build_cohort(
            {"age": age, "rare_bin": rare, "null_ntx": null_ntx, "real_ntx": real_ntx},
            t, y,
            kinds={"age": "continuous", "rare_bin": "binary",
                   "null_ntx": "binary", "real_ntx": "binary"},
            groups={"age": "core_confounder", "rare_bin": "nephrotoxin",
                    "null_ntx": "nephrotoxin", "real_ntx": "nephrotoxin"},
        )

    def test_low_prevalence_removed(self):
        report = select_variables(self.build())
        assert "rare_bin" in report.removed_by_prevalence

    def test_null_nephrotoxin_removed_by_pvalue(self):
        report = select_variables(self.build(seed=1))
        removed = [name for name, _ in report.removed_by_pvalue]
        c = self.build(seed=1)
        y = c.outcome
        p = univariable_pvalue(c.covariates[:, c.schema.index("null_ntx")], y)
        assert ("null_ntx" in removed) == (p > 0.2)

    def test_informative_nephrotoxin_retained(self):
        report = select_variables(self.build())
        assert "real_ntx" in report.retained

    def test_core_confounder_exempt_from_pvalue_step(self):
        # a null core confounder must survive step 2
        rng = np.random.default_rng(3)
        n = 1000
        noise = rng.standard_normal(n)
        y = (rng.random(n) < 0.3).astype(float)
        c = build_cohort({"noise": noise}, rng.integers(0, 2, n), y)
        report = select_variables(c)
        assert report.retained == ["noise"]

    def test_prevalence_boundary_retained(self):
        # prevalence exactly 2% survives step 1 (strict inequality)
        n = 1000
        vals = np.zeros(n)
        vals[:20] = 1.0
        rng = np.random.default_rng(5)
        y = (rng.random(n) < 0.5).astype(float)
        c = build_cohort({"edge": vals}, rng.integers(0, 2, n), y,
                         kinds={"edge": "binary"})
        report = select_variables(c)
        assert "edge" not in report.removed_by_prevalence

    def test_order_invariance(self):
        c = self.build(seed=7)
        perm = np.random.default_rng(8).permutation(len(c))
        a = select_variables(c)
        b = select_variables(c.subset(perm))
        assert a.removed_by_prevalence == b.removed_by_prevalence
        assert [n for n, _ in a.removed_by_pvalue] == [n for n, _ in b.removed_by_pvalue]
        assert a.retained == b.retained

    def test_report_partitions_schema(self):
        c = self.build(seed=9)
        report = select_variables(c)
        all_names = (
            set(report.removed_by_prevalence)
            | {n for n, _ in report.removed_by_pvalue}
            | set(report.retained)
        )
        assert all_names == set(c.schema.names)

    def test_report_serializes(self, tmp_path):
        report = select_variables(self.build())
        report.write(tmp_path / "selection.csv")
        text = (tmp_path / "selection.csv").read_text()
        assert "rare_bin,removed_by_prevalence" in text
