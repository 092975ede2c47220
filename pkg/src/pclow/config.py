"""Run configuration: one JSON file drives every CLI subcommand."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pclow.learners import LearnerSpec
from pclow.synth import DgpConfig


class ConfigError(ValueError):
    """Invalid run configuration."""


def derive_seed(master: int, index: int) -> int:
    """Stable sub-seed for one pipeline stage."""
    return int(np.random.SeedSequence(entropy=master, spawn_key=(index,)).generate_state(1)[0])


# stage indices for seed derivation
SEED_DGP = 0
SEED_SPLIT = 1
SEED_BOOTSTRAP = 2
SEED_FIT_BASE = 10  # + learner position


@dataclass
class RunConfig:
    output_dir: Path
    seed: int = 0
    cohort_path: Path | None = None
    schema_path: Path | None = None
    assessments_path: Path | None = None
    dgp: DgpConfig | None = None
    learners: dict[str, LearnerSpec] = field(default_factory=dict)
    propensity_overrides: dict = field(default_factory=dict)
    test_fraction: float = 0.1
    split_seed: int | None = None
    replications: int = 500
    level: float = 0.95
    n_jobs: int = 1
    unadjusted_pre_trim: bool = False

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ConfigError("split fraction must be in (0, 1)")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not 0 < self.level < 1:
            raise ConfigError("confidence level must be in (0, 1)")
        if not self.learners:
            raise ConfigError("at least one learner must be configured")
        if self.dgp is None and (self.cohort_path is None or self.schema_path is None):
            raise ConfigError("either a dgp block or cohort_path + schema_path is required")

    def propensity_spec(self, learner_kind: str) -> LearnerSpec:
        """Propensity spec for a pipeline: same kind as the outcome learner
        unless the propensity block pins a kind."""
        opts = dict(self.propensity_overrides)
        kind = opts.pop("kind", None) or learner_kind
        base = self.learners.get(kind)
        merged = dict(base.__dict__) if base is not None else {}
        merged.update(opts)
        merged["kind"] = kind
        return LearnerSpec(**merged)

    def fit_seed(self, learner_kind: str) -> int:
        kinds = list(self.learners)
        return derive_seed(self.seed, SEED_FIT_BASE + kinds.index(learner_kind))


def _learner_spec(kind: str, options: dict) -> LearnerSpec:
    options = dict(options)
    options["kind"] = kind
    try:
        return LearnerSpec(**options)
    except TypeError as exc:
        raise ConfigError(f"invalid learner options for {kind!r}: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    base = path.parent

    def as_path(key):
        return None if raw.get(key) is None else (base / raw[key])

    seed = int(raw.get("seed", 0))
    dgp = None
    if raw.get("dgp") is not None:
        dgp_raw = dict(raw["dgp"])
        dgp_raw.setdefault("seed", derive_seed(seed, SEED_DGP))
        try:
            dgp = DgpConfig(**dgp_raw)
        except TypeError as exc:
            raise ConfigError(f"invalid dgp block: {exc}") from None

    learners_raw = raw.get("learners", {})
    if not isinstance(learners_raw, dict):
        raise ConfigError("learners must map kind -> options")
    learners = {k: _learner_spec(k, v or {}) for k, v in learners_raw.items()}

    split = raw.get("split", {}) or {}
    bootstrap = raw.get("bootstrap", {}) or {}
    try:
        return RunConfig(
            output_dir=base / raw["output_dir"],
            seed=seed,
            cohort_path=as_path("cohort_path"),
            schema_path=as_path("schema_path"),
            assessments_path=as_path("assessments_path"),
            dgp=dgp,
            learners=learners,
            propensity_overrides=raw.get("propensity", {}) or {},
            test_fraction=float(split.get("test_fraction", 0.1)),
            split_seed=None if split.get("seed") is None else int(split["seed"]),
            replications=int(bootstrap.get("replications", 500)),
            level=float(bootstrap.get("level", 0.95)),
            n_jobs=int(bootstrap.get("n_jobs", 1)),
            unadjusted_pre_trim=bool(raw.get("unadjusted_pre_trim", False)),
        )
    except KeyError as exc:
        raise ConfigError(f"missing config key: {exc}") from None
