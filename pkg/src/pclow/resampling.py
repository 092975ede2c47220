"""Cluster bootstrap confidence intervals.

Whole clusters are resampled with replacement; every admission of a drawn
cluster enters the replicate cohort, and duplicated clusters get fresh
admission and cluster ids so downstream uniqueness invariants hold. The
supplied estimator runs end-to-end on each replicate (imputation,
selection and recalibration included). Intervals are percentile intervals
with linear interpolation.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from pclow.cohort import Cohort
from pclow.estimators import EstimationError

MAX_FAILED_FRACTION = 0.2


@dataclass
class BootstrapResult:
    point: float
    replicates: np.ndarray  # completed replications only
    ci_lower: float
    ci_upper: float
    n_failed: int
    failures: list[tuple[int, str]]  # (replication index, reason)

    def write_replicates(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for i, v in enumerate(self.replicates):
                fh.write(f"{i},{v!r}\n")


def percentile_ci(values: Sequence[float], level: float) -> tuple[float, float]:
    """Symmetric-tail empirical quantiles with linear interpolation.

    level 0.0 degenerates to (median, median).
    """
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("percentile_ci needs at least 2 values")
    if not np.isfinite(values).all():
        raise ValueError("percentile_ci needs finite values")
    if not 0 <= level < 1:
        raise ValueError("level must be in [0, 1)")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [tail, 1.0 - tail], method="linear")
    return float(lo), float(hi)


def resample_clusters(cohort: Cohort, rng: np.random.Generator) -> Cohort:
    """One cluster-bootstrap replicate: k draws with replacement from the
    k distinct clusters, whole clusters kept intact, fresh ids per copy."""
    clusters = sorted(set(cohort.cluster_ids))
    cluster_arr = np.array(cohort.cluster_ids)
    members = {c: np.flatnonzero(cluster_arr == c) for c in clusters}
    draws = rng.integers(0, len(clusters), size=len(clusters))
    ids, cluster_ids, rows = [], [], []
    for copy, d in enumerate(draws):
        name = clusters[int(d)]
        idx = members[name]
        rows.append(idx)
        cluster_ids.extend([f"{name}~{copy}"] * len(idx))
        ids.extend(f"{cohort.admission_ids[i]}~{copy}" for i in idx)
    rows = np.concatenate(rows)
    return Cohort(
        cohort.schema,
        ids,
        cluster_ids,
        cohort.treatment[rows],
        cohort.outcome[rows],
        cohort.covariates[rows],
    )


def _bootstrap_keys(
    cohort: Cohort,
    estimator: Callable[[Cohort], float | Mapping[str, float]],
    replications: int,
    level: float,
    seed: int,
    n_jobs: int,
) -> tuple[dict[str, float], dict[str, list[float]], list[tuple[int, str]]]:
    def as_map(est, scalar: bool) -> dict[str, float]:
        if scalar:
            return {"value": float(est)}
        # None marks an undefined estimand (e.g. a risk ratio with zero
        # denominator); kept as NaN and dropped from that key's percentiles
        return {k: float("nan") if v is None else float(v) for k, v in est.items()}

    point = estimator(cohort)
    scalar = not isinstance(point, Mapping)
    point_map = as_map(point, scalar)

    def run(rep: int):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(rep,))
        )
        replicate = resample_clusters(cohort, rng)
        return as_map(estimator(replicate), scalar)

    results: list[Mapping[str, float] | None] = [None] * replications
    failures: list[tuple[int, str]] = []
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(run, rep) for rep in range(replications)]
            for rep, fut in enumerate(futures):
                try:
                    results[rep] = fut.result()
                except Exception as exc:  # noqa: BLE001 - recorded per replicate
                    failures.append((rep, str(exc)))
    else:
        for rep in range(replications):
            try:
                results[rep] = run(rep)
            except Exception as exc:  # noqa: BLE001 - recorded per replicate
                failures.append((rep, str(exc)))

    if len(failures) > MAX_FAILED_FRACTION * replications:
        raise EstimationError(
            f"{len(failures)}/{replications} bootstrap replications failed; "
            "estimate deemed unstable"
        )
    replicates: dict[str, list[float]] = {k: [] for k in point_map}
    for r in results:
        if r is None:
            continue
        for k in replicates:
            replicates[k].append(r[k])
    return point_map, replicates, failures


def _ci_of(values: np.ndarray, level: float) -> tuple[float, float]:
    finite = values[np.isfinite(values)]
    if finite.size >= 2:
        return percentile_ci(finite, level)
    if finite.size == 1:
        return float(finite[0]), float(finite[0])
    return float("nan"), float("nan")


def cluster_bootstrap(
    cohort: Cohort,
    estimator: Callable[[Cohort], float],
    replications: int,
    level: float = 0.95,
    seed: int = 0,
    n_jobs: int = 1,
) -> BootstrapResult:
    """Cluster bootstrap of a scalar estimator.

    Per-replication seeds derive from (seed, replication index), so the
    result is independent of execution order and of n_jobs. Replications
    that raise are excluded from the percentiles and counted; more than
    20% failures aborts.
    """
    point, replicates, failures = _bootstrap_keys(
        cohort, estimator, replications, level, seed, n_jobs
    )
    values = np.array(replicates["value"])
    lo, hi = _ci_of(values, level)
    return BootstrapResult(point["value"], values, lo, hi, len(failures), failures)


def cluster_bootstrap_multi(
    cohort: Cohort,
    estimator: Callable[[Cohort], Mapping[str, float]],
    replications: int,
    level: float = 0.95,
    seed: int = 0,
    n_jobs: int = 1,
) -> dict[str, BootstrapResult]:
    """Bootstrap several estimands in one pass over shared replicates."""
    point, replicates, failures = _bootstrap_keys(
        cohort, estimator, replications, level, seed, n_jobs
    )
    out = {}
    for key, vals in replicates.items():
        values = np.array(vals)
        lo, hi = _ci_of(values, level)
        out[key] = BootstrapResult(point[key], values, lo, hi, len(failures), failures)
    return out
