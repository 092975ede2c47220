import numpy as np
import pytest

from pclow.estimators import EstimationError
from pclow.resampling import (
    cluster_bootstrap,
    cluster_bootstrap_multi,
    percentile_ci,
    resample_clusters,
)
from pclow.synth import generate_cohort

from conftest import standard_dgp


def small_cohort(seed=0, n=300, clusters=10):
    return generate_cohort(standard_dgp(seed=seed, n=n, clusters=clusters)).to_cohort()


class TestPercentileCi:
    def test_linear_interpolation_example(self):
        # 1..100 at level 0.95: hand-computed with linear interpolation
        lo, hi = percentile_ci(np.arange(1, 101, dtype=float), 0.95)
        assert lo == pytest.approx(3.475)
        assert hi == pytest.approx(97.525)

    def test_constant_values(self):
        lo, hi = percentile_ci(np.full(50, 4.2), 0.9)
        assert lo == hi == 4.2

    def test_level_zero_is_median(self):
        lo, hi = percentile_ci(np.array([1.0, 2.0, 3.0, 10.0]), 0.0)
        assert lo == hi == 2.5

    def test_too_few_values(self):
        with pytest.raises(ValueError, match="at least 2"):
            percentile_ci(np.array([1.0]), 0.95)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            percentile_ci(np.array([1.0, np.nan, 2.0]), 0.95)

    def test_bad_level(self):
        with pytest.raises(ValueError, match="level"):
            percentile_ci(np.array([1.0, 2.0]), 1.0)


class TestResampleClusters:
    def test_clusters_kept_intact(self):
        cohort = small_cohort()
        sizes = {}
        for cid in set(cohort.cluster_ids):
            sizes[cid] = sum(1 for c in cohort.cluster_ids if c == cid)
        rng = np.random.default_rng(1)
        rep = resample_clusters(cohort, rng)
        # every replicate cluster maps to an original cluster of equal size
        rep_sizes = {}
        for cid in rep.cluster_ids:
            rep_sizes[cid] = rep_sizes.get(cid, 0) + 1
        for cid, size in rep_sizes.items():
            original = cid.rsplit("~", 1)[0]
            assert size == sizes[original]

    def test_same_cluster_count(self):
        cohort = small_cohort()
        rep = resample_clusters(cohort, np.random.default_rng(2))
        assert len(set(rep.cluster_ids)) == len(set(cohort.cluster_ids))

    def test_ids_unique(self):
        cohort = small_cohort()
        rep = resample_clusters(cohort, np.random.default_rng(3))
        assert len(set(rep.admission_ids)) == len(rep)

    def test_rows_copied_verbatim(self):
        cohort = small_cohort()
        rep = resample_clusters(cohort, np.random.default_rng(4))
        lookup = {aid: i for i, aid in enumerate(cohort.admission_ids)}
        for i, aid in enumerate(rep.admission_ids):
            src = lookup[aid.rsplit("~", 1)[0]]
            assert np.array_equal(
                rep.covariates[i], cohort.covariates[src], equal_nan=True
            )
            assert rep.treatment[i] == cohort.treatment[src]


class TestClusterBootstrap:
    @staticmethod
    def treated_fraction(cohort):
        return float(cohort.treatment.mean())

    def test_point_estimate_on_original(self):
        cohort = small_cohort()
        res = cluster_bootstrap(cohort, self.treated_fraction, 30, seed=5)
        assert res.point == self.treated_fraction(cohort)
        assert len(res.replicates) == 30
        assert res.ci_lower <= res.point <= res.ci_upper

    def test_deterministic(self):
        cohort = small_cohort()
        a = cluster_bootstrap(cohort, self.treated_fraction, 40, seed=6)
        b = cluster_bootstrap(cohort, self.treated_fraction, 40, seed=6)
        assert np.array_equal(a.replicates, b.replicates)
        assert (a.ci_lower, a.ci_upper) == (b.ci_lower, b.ci_upper)

    def test_n_jobs_invariant(self):
        cohort = small_cohort()
        a = cluster_bootstrap(cohort, self.treated_fraction, 40, seed=7, n_jobs=1)
        b = cluster_bootstrap(cohort, self.treated_fraction, 40, seed=7, n_jobs=2)
        assert np.array_equal(a.replicates, b.replicates)

    def test_single_cluster_zero_width(self):
        cohort = small_cohort(clusters=1)
        res = cluster_bootstrap(cohort, self.treated_fraction, 25, seed=8)
        assert res.ci_lower == res.ci_upper == res.point

    def test_constant_estimator(self):
        cohort = small_cohort()
        res = cluster_bootstrap(cohort, lambda c: 1.5, 20, seed=9)
        assert res.ci_lower == res.ci_upper == 1.5

    def test_failures_recorded_below_threshold(self):
        cohort = small_cohort()
        calls = {"n": 0}

        def flaky(c):
            calls["n"] += 1
            if calls["n"] % 10 == 0:
                raise EstimationError("synthetic failure")
            return float(c.treatment.mean())

        res = cluster_bootstrap(cohort, flaky, 50, seed=10)
        assert res.n_failed == 5
        assert len(res.replicates) == 45
        assert all(reason == "synthetic failure" for _, reason in res.failures)

    def test_too_many_failures_abort(self):
        cohort = small_cohort()

        def broken(c):
            if len(c.admission_ids[0].split("~")) > 1:  # every replicate
                raise EstimationError("boom")
            return 0.0

        with pytest.raises(EstimationError, match="unstable"):
            cluster_bootstrap(cohort, broken, 20, seed=11)


class TestClusterBootstrapMulti:
    def test_keys_share_replicate_draws(self):
        cohort = small_cohort()

        def both(c):
            return {"frac": float(c.treatment.mean()), "n": float(len(c))}

        multi = cluster_bootstrap_multi(cohort, both, 30, seed=12)
        single = cluster_bootstrap(
            cohort, lambda c: float(c.treatment.mean()), 30, seed=12
        )
        assert np.array_equal(multi["frac"].replicates, single.replicates)
        assert set(multi) == {"frac", "n"}

    def test_none_values_dropped_from_percentiles(self):
        cohort = small_cohort()
        calls = {"n": 0}

        def sometimes_none(c):
            calls["n"] += 1
            return {"v": None if calls["n"] % 4 == 0 else 1.0}

        multi = cluster_bootstrap_multi(cohort, sometimes_none, 20, seed=13)
        res = multi["v"]
        assert res.n_failed == 0
        finite = res.replicates[np.isfinite(res.replicates)]
        assert (res.ci_lower, res.ci_upper) == (1.0, 1.0)
        assert finite.size < len(res.replicates)
