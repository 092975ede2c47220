"""Probabilistic binary classifiers behind one interface.

Two base learners: ridge-penalized logistic regression fit by iteratively
reweighted least squares, and a probability random forest (Gini splits,
bootstrap resamples, leaf positive-class proportions averaged over trees).
Both can carry a sigmoid (Platt) recalibration map fitted on training
predictions. Fitted learners serialize to a versioned text format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from math import ceil, sqrt
from typing import Sequence

import numpy as np
from scipy.special import expit, logit

MAGIC = "CFADE-LEARNER-v1"

_PROB_EPS = 1e-10


class LearnerError(ValueError):
    """Unfittable input or mismatched prediction features."""


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = "logistic"  # "logistic" | "random_forest"
    # logistic
    max_iterations: int = 100
    tolerance: float = 1e-8  # on penalized-deviance change
    ridge: float = 1e-6  # penalty on non-intercept terms
    # random forest
    n_trees: int = 500
    max_features: int | None = None  # None -> ceil(sqrt(p))
    min_leaf: int = 5
    max_depth: int | None = None
    recalibrate: bool = True

    def __post_init__(self):
        if self.kind not in ("logistic", "random_forest"):
            raise LearnerError(f"unknown learner kind {self.kind!r}")
        if self.max_iterations <= 0 or self.n_trees <= 0 or self.min_leaf <= 0:
            raise LearnerError("counts must be positive")
        if self.ridge < 0:
            raise LearnerError("ridge penalty must be >= 0")


@dataclass
class _Tree:
    feature: np.ndarray  # int; -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # leaf positive-class proportion


@dataclass
class FittedLearner:
    kind: str
    spec: LearnerSpec
    feature_names: tuple[str, ...]
    coefficients: np.ndarray | None = None  # logistic: intercept first
    trees: list[_Tree] = field(default_factory=list)
    recalibration: tuple[float, float] | None = None  # (intercept, slope)
    converged: bool = True
    warning: bool = False
    seed: int = 0


# --- logistic regression ---------------------------------------------------


def _bernoulli_deviance(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, _PROB_EPS, 1 - _PROB_EPS)
    return float(-2.0 * np.sum(y * np.log(p) + (1 - y) * np.log(1 - p)))


def penalized_gradient(X: np.ndarray, y: np.ndarray, beta: np.ndarray,
                       ridge: float) -> np.ndarray:
    """Gradient of the ridge-penalized Bernoulli log-likelihood; the
    intercept (first column) is unpenalized."""
    p = expit(X @ beta)
    pen = np.full(len(beta), ridge)
    pen[0] = 0.0
    return X.T @ (y - p) - pen * beta


def _irls(X: np.ndarray, y: np.ndarray, spec: LearnerSpec) -> tuple[np.ndarray, bool]:
    """Ridge-penalized IRLS. Returns (beta, converged). Non-convergence
    returns the last iterate; the caller flags a warning."""
    n, d = X.shape
    pen = np.full(d, spec.ridge)
    pen[0] = 0.0
    beta = np.zeros(d)
    dev = _bernoulli_deviance(y, expit(X @ beta)) + float(pen @ beta**2)
    for _ in range(spec.max_iterations):
        eta = X @ beta
        p = np.clip(expit(eta), _PROB_EPS, 1 - _PROB_EPS)
        w = p * (1 - p)
        z = eta + (y - p) / w
        A = X.T @ (X * w[:, None])
        A[np.diag_indices_from(A)] += pen + 1e-12  # 1e-12 guards singularity
        beta = np.linalg.solve(A, X.T @ (w * z))
        dev_new = _bernoulli_deviance(y, expit(X @ beta)) + float(pen @ beta**2)
        grad = penalized_gradient(X, y, beta, spec.ridge)
        if np.max(np.abs(grad)) < 1e-7 or abs(dev - dev_new) < spec.tolerance:
            break
        dev = dev_new
    converged = bool(np.max(np.abs(penalized_gradient(X, y, beta, spec.ridge))) < 1e-6)
    return beta, converged


def _check_fit_input(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise LearnerError("features must be a 2-d matrix")
    if X.shape[0] != len(y):
        raise LearnerError(f"{X.shape[0]} rows but {len(y)} labels")
    if X.shape[0] == 0:
        raise LearnerError("cannot fit on zero rows")
    if np.unique(y).size < 2:
        raise LearnerError("labels are constant; cannot fit")
    if not np.isin(y, (0.0, 1.0)).all():
        raise LearnerError("labels must be binary 0/1")
    if np.isnan(X).any():
        raise LearnerError("features contain missing values; impute first")
    return X, y


def _default_names(p: int) -> tuple[str, ...]:
    return tuple(f"f{j}" for j in range(p))


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    spec: LearnerSpec | None = None,
    feature_names: Sequence[str] | None = None,
) -> FittedLearner:
    """Main-effects logistic regression via ridge-penalized IRLS."""
    spec = spec or LearnerSpec(kind="logistic")
    X, y = _check_fit_input(X, y)
    Xd = np.column_stack([np.ones(len(X)), X])
    beta, converged = _irls(Xd, y, spec)
    names = tuple(feature_names) if feature_names is not None else _default_names(X.shape[1])
    if len(names) != X.shape[1]:
        raise LearnerError("feature_names length does not match matrix width")
    # near-zero training deviance means (quasi-)separation: the ridge kept
    # the coefficients finite but they are penalty-determined
    separated = _bernoulli_deviance(y, expit(Xd @ beta)) / len(y) < 1e-3
    return FittedLearner(
        kind="logistic",
        spec=spec,
        feature_names=names,
        coefficients=beta,
        converged=converged,
        warning=not converged or separated,
    )


# --- random forest ---------------------------------------------------------


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    m_try: int,
    min_leaf: int,
    max_depth: int | None,
) -> _Tree:
    n, p = X.shape
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(np.nan)
        return len(feature) - 1

    def build(idx: np.ndarray, depth: int) -> int:
        node = new_node()
        ys = y[idx]
        pos = ys.sum()
        n_node = len(idx)
        value[node] = pos / n_node
        if (
            n_node < 2 * min_leaf
            or pos == 0
            or pos == n_node
            or (max_depth is not None and depth >= max_depth)
        ):
            return node
        candidates = rng.choice(p, size=min(m_try, p), replace=False)
        best = (np.inf, -1, np.nan)  # (weighted gini, feature, threshold)
        for f in candidates:
            xs = X[idx, f]
            order = np.argsort(xs, kind="stable")
            xs_sorted = xs[order]
            cum_pos = np.cumsum(ys[order])
            # split after position i: left size i+1, right size n_node-i-1
            i = np.arange(min_leaf - 1, n_node - min_leaf)
            if i.size == 0:
                continue
            distinct = xs_sorted[i] < xs_sorted[i + 1]
            i = i[distinct]
            if i.size == 0:
                continue
            nl = (i + 1).astype(float)
            nr = n_node - nl
            pl = cum_pos[i]
            pr = pos - pl
            gini = (
                nl * (1 - (pl / nl) ** 2 - ((nl - pl) / nl) ** 2)
                + nr * (1 - (pr / nr) ** 2 - ((nr - pr) / nr) ** 2)
            ) / n_node
            k = int(np.argmin(gini))
            if gini[k] < best[0]:
                best = (float(gini[k]), int(f), float((xs_sorted[i[k]] + xs_sorted[i[k] + 1]) / 2))
        if best[1] < 0:
            return node
        _, f, thr = best
        mask = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = build(idx[mask], depth + 1)
        right[node] = build(idx[~mask], depth + 1)
        return node

    build(np.arange(n), 0)
    return _Tree(
        np.array(feature, dtype=int),
        np.array(threshold),
        np.array(left, dtype=int),
        np.array(right, dtype=int),
        np.array(value),
    )


def _tree_predict(tree: _Tree, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X))
    stack = [(0, np.arange(len(X)))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        f = tree.feature[node]
        if f < 0:
            out[idx] = tree.value[node]
            continue
        mask = X[idx, f] <= tree.threshold[node]
        stack.append((tree.left[node], idx[mask]))
        stack.append((tree.right[node], idx[~mask]))
    return out


def _tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    # per-tree stream derived from (seed, tree index): deterministic under
    # any parallel build schedule
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(tree_index,)))


def fit_random_forest(
    X: np.ndarray,
    y: np.ndarray,
    spec: LearnerSpec | None = None,
    feature_names: Sequence[str] | None = None,
    seed: int = 0,
) -> FittedLearner:
    """Probability forest: Gini splits on random feature subsets, one
    bootstrap resample per tree, prediction = mean leaf proportion."""
    spec = spec or LearnerSpec(kind="random_forest")
    X, y = _check_fit_input(X, y)
    n, p = X.shape
    m_try = spec.max_features if spec.max_features is not None else ceil(sqrt(p))
    trees = []
    for t in range(spec.n_trees):
        rng = _tree_rng(seed, t)
        idx = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[idx], y[idx], rng, m_try, spec.min_leaf, spec.max_depth))
    names = tuple(feature_names) if feature_names is not None else _default_names(p)
    if len(names) != p:
        raise LearnerError("feature_names length does not match matrix width")
    return FittedLearner(
        kind="random_forest", spec=spec, feature_names=names, trees=trees, seed=seed
    )


# --- prediction & recalibration -------------------------------------------


def _align_features(
    learner: FittedLearner, X: np.ndarray, feature_names: Sequence[str] | None
) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise LearnerError("features must be a 2-d matrix")
    if feature_names is None:
        if X.shape[1] != len(learner.feature_names):
            raise LearnerError(
                f"expected {len(learner.feature_names)} feature columns, got {X.shape[1]}"
            )
        return X
    names = list(feature_names)
    missing = [n for n in learner.feature_names if n not in names]
    extra = [n for n in names if n not in learner.feature_names]
    if missing or extra:
        raise LearnerError(f"feature mismatch: missing {missing}, extra {extra}")
    return X[:, [names.index(n) for n in learner.feature_names]]


def _raw_predict(learner: FittedLearner, X: np.ndarray) -> np.ndarray:
    if learner.kind == "logistic":
        return expit(learner.coefficients[0] + X @ learner.coefficients[1:])
    preds = np.zeros(len(X))
    for tree in learner.trees:
        preds += _tree_predict(tree, X)
    return preds / len(learner.trees)


def _apply_recalibration(learner: FittedLearner, p: np.ndarray) -> np.ndarray:
    if learner.recalibration is None:
        return p
    a, b = learner.recalibration
    return expit(a + b * logit(np.clip(p, _PROB_EPS, 1 - _PROB_EPS)))


def predict_proba(
    learner: FittedLearner,
    X: np.ndarray,
    feature_names: Sequence[str] | None = None,
) -> np.ndarray:
    """Per-row positive-class probability, recalibrated when fitted.

    When ``feature_names`` is given, columns are matched by name and may
    arrive in any order; a set mismatch raises listing missing/extra names.
    """
    X = _align_features(learner, X, feature_names)
    if np.isnan(X).any():
        raise LearnerError("features contain missing values; impute first")
    return _apply_recalibration(learner, _raw_predict(learner, X))


def recalibrate(
    learner: FittedLearner, predictions: np.ndarray, labels: np.ndarray
) -> FittedLearner:
    """Fit a sigmoid map on the logit of held-in predictions (Platt style)
    and compose it into the learner's predictions. Constant predictions get
    the identity map plus a warning."""
    predictions = np.asarray(predictions, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if np.ptp(predictions) < 1e-12 or np.unique(labels).size < 2:
        return replace(learner, recalibration=(0.0, 1.0), warning=True)
    z = logit(np.clip(predictions, _PROB_EPS, 1 - _PROB_EPS))
    cal = fit_logistic(z[:, None], labels, LearnerSpec(kind="logistic"))
    a, b = float(cal.coefficients[0]), float(cal.coefficients[1])
    return replace(learner, recalibration=(a, b), warning=learner.warning or cal.warning)


def fit_propensity(
    X: np.ndarray,
    treatment: np.ndarray,
    spec: LearnerSpec | None = None,
    feature_names: Sequence[str] | None = None,
    seed: int = 0,
) -> FittedLearner:
    """Treatment-probability model; same contracts as the outcome fits with
    the treatment indicator as the label."""
    spec = spec or LearnerSpec(kind="logistic")
    if spec.kind == "logistic":
        return fit_logistic(X, treatment, spec, feature_names)
    return fit_random_forest(X, treatment, spec, feature_names, seed=seed)


def fit_learner(
    X: np.ndarray,
    y: np.ndarray,
    spec: LearnerSpec,
    feature_names: Sequence[str] | None = None,
    seed: int = 0,
) -> FittedLearner:
    """Dispatch on spec.kind."""
    if spec.kind == "logistic":
        return fit_logistic(X, y, spec, feature_names)
    return fit_random_forest(X, y, spec, feature_names, seed=seed)


# --- serialization ---------------------------------------------------------


def save_learner(learner: FittedLearner, path) -> None:
    payload = {
        "kind": learner.kind,
        "spec": learner.spec.__dict__,
        "feature_names": list(learner.feature_names),
        "coefficients": None
        if learner.coefficients is None
        else learner.coefficients.tolist(),
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
            }
            for t in learner.trees
        ],
        "recalibration": learner.recalibration,
        "converged": learner.converged,
        "warning": learner.warning,
        "seed": learner.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MAGIC + "\n")
        json.dump(payload, fh)
        fh.write("\n")


def load_learner(path) -> FittedLearner:
    with open(path, encoding="utf-8") as fh:
        magic = fh.readline().strip()
        if magic != MAGIC:
            raise LearnerError(f"not a learner file (magic {magic!r})")
        payload = json.load(fh)
    return FittedLearner(
        kind=payload["kind"],
        spec=LearnerSpec(**payload["spec"]),
        feature_names=tuple(payload["feature_names"]),
        coefficients=None
        if payload["coefficients"] is None
        else np.array(payload["coefficients"]),
        trees=[
            _Tree(
                np.array(t["feature"], dtype=int),
                np.array(t["threshold"]),
                np.array(t["left"], dtype=int),
                np.array(t["right"], dtype=int),
                np.array(t["value"]),
            )
            for t in payload["trees"]
        ],
        recalibration=None
        if payload["recalibration"] is None
        else tuple(payload["recalibration"]),
        converged=payload["converged"],
        warning=payload["warning"],
        seed=payload["seed"],
    )
