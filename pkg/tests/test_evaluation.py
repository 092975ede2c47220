import numpy as np
import pytest

from pclow.cohort import CohortError
from pclow.estimators import CaseEstimate, fit_tlearner, pc_low_cases
from pclow.evaluation import (
    CATEGORIES,
    EvaluationError,
    ExpertAssessment,
    auc,
    dichotomize_label,
    evaluate_counterfactual,
    evaluate_factual,
    map_expert_label,
    mse,
    pearson,
    ppv,
    propensity_histogram,
    read_assessments,
    write_assessments,
)
from pclow.learners import LearnerSpec
from pclow.synth import generate_cohort

from conftest import standard_dgp


class TestLabelMaps:
    def test_probability_map_verbatim(self):
        expected = {
            "unassessable": 0.5,
            "unlikely": 0.25,
            "possible": 0.5,
            "probable": 0.75,
            "nearly_certain": 0.9,
        }
        for cat in CATEGORIES:
            assert map_expert_label(cat) == expected[cat]

    def test_dichotomy_only_unlikely_negative(self):
        for cat in CATEGORIES:
            assert dichotomize_label(cat) == (0 if cat == "unlikely" else 1)

    def test_unknown_category(self):
        with pytest.raises(EvaluationError, match="probable_ish"):
            map_expert_label("probable_ish")
        with pytest.raises(EvaluationError):
            dichotomize_label("certain")
        with pytest.raises(EvaluationError):
            ExpertAssessment("a", "certain")


class TestAuc:
    @staticmethod
    def brute_force(scores, labels):
        pos = [s for s, l in zip(scores, labels) if l == 1]
        neg = [s for s, l in zip(scores, labels) if l == 0]
        total = 0.0
        for p in pos:
            for n in neg:
                total += 1.0 if p > n else (0.5 if p == n else 0.0)
        return total / (len(pos) * len(neg))

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = rng.integers(5, 40)
            scores = rng.choice([0.1, 0.2, 0.2, 0.5, 0.9], size=n)
            labels = rng.integers(0, 2, n).astype(float)
            if labels.min() == labels.max():
                continue
            assert auc(scores, labels) == pytest.approx(
                self.brute_force(scores, labels), abs=1e-12
            )

    def test_perfect_separation(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_tied_half(self):
        assert auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_complement_identity(self):
        rng = np.random.default_rng(1)
        scores = rng.random(30)
        labels = rng.integers(0, 2, 30).astype(float)
        assert auc(scores, labels) == pytest.approx(1.0 - auc(-scores, labels))

    def test_single_class_error(self):
        with pytest.raises(EvaluationError, match="both classes"):
            auc([0.1, 0.9], [1, 1])


class TestPpv:
    def test_inclusive_threshold(self):
        assert ppv([0.5, 0.4], [1, 0]) == 1.0

    def test_fraction_of_flagged(self):
        assert ppv([0.9, 0.8, 0.7, 0.1], [1, 0, 1, 0]) == pytest.approx(2 / 3)

    def test_none_when_no_score_reaches(self):
        assert ppv([0.1, 0.2], [1, 1]) is None

    def test_custom_threshold(self):
        assert ppv([0.3, 0.1], [1, 1], threshold=0.25) == 1.0


class TestMseAndPearson:
    def test_mse_oracle(self):
        assert mse([1.0, 2.0], [0.0, 4.0]) == pytest.approx((1 + 4) / 2)

    def test_mse_zero_on_identical(self):
        assert mse([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_pearson_perfect(self):
        assert pearson([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)

    def test_pearson_affine_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.random(40)
        y = rng.random(40)
        assert pearson(2 * x - 3, y) == pytest.approx(pearson(x, y), abs=1e-12)

    def test_pearson_constant_none(self):
        assert pearson([1.0, 1.0, 1.0], [1, 2, 3]) is None

    def test_pearson_length_check(self):
        with pytest.raises(EvaluationError):
            pearson([1.0], [2.0])


class TestEvaluateFactual:
    def test_better_than_chance_on_test_data(self):
        synth = generate_cohort(standard_dgp(seed=3, n=6000))
        cohort = synth.to_cohort()
        idx = np.arange(len(cohort))
        model = fit_tlearner(
            cohort.subset(idx[:5000]), LearnerSpec(), LearnerSpec(), seed=1
        )
        scores = evaluate_factual(model, cohort.subset(idx[5000:]))
        assert set(scores) == {"control", "treated"}
        assert scores["control"] > 0.6 and scores["treated"] > 0.6


class TestEvaluateCounterfactual:
    def cases(self):
        return [
            CaseEstimate("a", 0.1, 0.5, 0.8, 0.8, True),
            CaseEstimate("b", 0.4, 0.5, 0.2, 0.2, True),
            CaseEstimate("c", 0.3, 0.4, 0.25, 0.25, True),
            CaseEstimate("d", 0.2, 0.1, None, None, False),  # out of support
        ]

    def assessments(self):
        return [
            ExpertAssessment("a", "probable"),
            ExpertAssessment("b", "unlikely"),
            ExpertAssessment("c", "possible"),
        ]

    def test_report_contents(self):
        report = evaluate_counterfactual(self.cases(), self.assessments())
        assert report.n_cases == 3  # the unsupported case is excluded
        assert report.mse == pytest.approx(
            ((0.8 - 0.75) ** 2 + (0.2 - 0.25) ** 2 + (0.25 - 0.5) ** 2) / 3
        )
        # labels: a=1, b=0, c=1; scores 0.8, 0.2, 0.25
        assert report.auc == 1.0
        assert report.ppv == 1.0  # only "a" reaches 0.5, and it is positive
        assert report.table[0] == ("a", 0.8, 0.75, 1)

    def test_missing_assessment_lists_ids(self):
        with pytest.raises(EvaluationError, match=r"\['c'\]"):
            evaluate_counterfactual(self.cases(), self.assessments()[:2])

    def test_assessments_for_unsupported_cases_not_required(self):
        # no assessment for "d" on purpose: it must not be demanded
        report = evaluate_counterfactual(self.cases(), self.assessments())
        assert all(row[0] != "d" for row in report.table)


class TestPropensityHistogram:
    def test_golden_counts(self):
        scores = np.array([0.02, 0.07, 0.12, 0.52, 0.97])
        treatment = np.array([0, 0, 1, 1, 1])
        edges, c0, c1 = propensity_histogram(scores, treatment)
        assert len(edges) == 21
        assert c0.sum() == 2 and c1.sum() == 3
        assert c0[0] == 1 and c0[1] == 1
        assert c1[2] == 1 and c1[10] == 1 and c1[19] == 1

    def test_counts_sum_to_arms(self):
        rng = np.random.default_rng(4)
        scores = rng.random(500)
        treatment = rng.integers(0, 2, 500)
        _, c0, c1 = propensity_histogram(scores, treatment)
        assert c0.sum() == (treatment == 0).sum()
        assert c1.sum() == (treatment == 1).sum()

    def test_score_of_one_in_last_bin(self):
        _, c0, _ = propensity_histogram(np.array([1.0]), np.array([0]))
        assert c0[-1] == 1


class TestAssessmentIO:
    def test_round_trip(self, tmp_path):
        items = [ExpertAssessment("a", "probable"), ExpertAssessment("b", "unlikely")]
        path = tmp_path / "assessments.csv"
        write_assessments(items, path)
        back = read_assessments(path)
        assert back == {a.admission_id: a for a in items}

    def test_bad_header(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("id,label\na,probable\n")
        with pytest.raises(CohortError, match="header"):
            read_assessments(path)

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("admission_id,category\na,probable\na,unlikely\n")
        with pytest.raises(CohortError, match="duplicate"):
            read_assessments(path)

    def test_unknown_category_in_file(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("admission_id,category\na,certain\n")
        with pytest.raises(EvaluationError, match="certain"):
            read_assessments(path)
