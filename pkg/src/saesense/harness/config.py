"""Experiment configuration: a flat TOML key/value file plus overrides.

Every key is a field of :class:`ExperimentConfig`; unknown keys are an
error. Overrides use ``key=value`` with TOML value syntax (bare words are
taken as strings), e.g. ``n_perturbations=50`` or ``mode=relative``.
"""
from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError

TARGET_TYPES = (
    "model_generated",
    "random",
    "synthetic_random",
    "synthetic_baseline",
    "synthetic_structured",
    "synthetic_structured_no_cos",
    "sae_reconstruction",
)
SAE_TYPES = frozenset(TARGET_TYPES[2:])
DEFAULT_TYPES = {
    "sensitivity": ("model_generated", "random", "synthetic_baseline", "synthetic_structured"),
    "plateau": ("model_generated", "synthetic_baseline", "synthetic_structured", "random"),
}
KINDS = ("sensitivity", "plateau")

# keys that change where/how fast a run executes but never its results
EXECUTION_KEYS = frozenset({"out_dir", "cache_dir", "workers"})


@dataclass
class ExperimentConfig:
    kind: str = "sensitivity"
    # inputs
    model_path: str | None = None
    model_config: str = "gpt2-small"
    sae_path: str | None = None
    tokens_path: str | None = None
    seq_len: int = 10
    # outputs
    out_dir: str = "runs/default"
    cache_dir: str | None = None
    # sweep
    probe: str = "blocks.1.hook_resid_pre"
    read: str = "blocks.11.hook_resid_post"
    mode: str = "absolute"
    steps: int = 100
    step_size: float = 0.5
    kl: bool = False
    kl_direction: str = "forward"
    # experiment
    n_perturbations: int = 1000
    target_types: tuple[str, ...] = ()
    seed: int = 0
    workers: int = 1
    # moments / compositions
    n_moment_samples: int = 32000
    ridge: float | None = None
    n_cosine_pairs: int = 1000
    top_cos: float | None = None
    pool_size: int = 100
    baseline_k: int = 10
    donor: str = "base"
    # detectors
    ap_threshold: float = 20.0
    nl_fraction: float = 0.10
    nl_fit_steps: int = 1
    auc_area: str = "up_to_step"
    ks_reference: str = "model_generated"
    hist_bin_width: int = 5
    # latent report
    n_latent_report: int = 2000

    def __post_init__(self):
        self.target_types = tuple(self.target_types) or DEFAULT_TYPES.get(self.kind, ())

    def validate(self) -> ExperimentConfig:
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_perturbations < 1:
            raise ConfigError("n_perturbations must be >= 1")
        if not self.target_types:
            raise ConfigError("at least one target type is required")
        unknown = [t for t in self.target_types if t not in TARGET_TYPES]
        if unknown:
            raise ConfigError(f"unknown target types {unknown}; choose from {TARGET_TYPES}")
        if len(set(self.target_types)) != len(self.target_types):
            raise ConfigError("duplicate target types")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.mode not in ("absolute", "relative"):
            raise ConfigError(f"mode must be absolute or relative, got {self.mode!r}")
        if self.donor not in ("base", "other"):
            raise ConfigError(f"donor must be 'base' or 'other', got {self.donor!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.steps < 1 or self.seq_len < 1 or self.n_moment_samples < 2:
            raise ConfigError("steps, seq_len must be >= 1 and n_moment_samples >= 2")
        if self.ks_reference not in self.target_types:
            raise ConfigError(f"KS reference type {self.ks_reference!r} is not among the target types")
        return self

    @property
    def needs_sae(self) -> bool:
        return any(t in SAE_TYPES for t in self.target_types)

    def results_dict(self) -> dict[str, Any]:
        """Fields that determine results (written next to outputs)."""
        d = dataclasses.asdict(self)
        for k in EXECUTION_KEYS:
            d.pop(k)
        d["target_types"] = list(self.target_types)
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, value: Any) -> Any:
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    if key == "target_types":
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        return tuple(value)
    return value


def _parse_override(item: str) -> tuple[str, Any]:
    key, sep, raw = item.partition("=")
    if not sep:
        raise ConfigError(f"override {item!r} is not key=value")
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def load_config(path: str | os.PathLike | None = None, overrides: Iterable[str] = (),
                **fixed: Any) -> ExperimentConfig:
    values: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        base = Path(path).parent
        for k, v in data.items():
            values[k] = _coerce(k, v)
        # relative paths in a config file are relative to that file
        for k in ("model_path", "sae_path", "tokens_path", "out_dir", "cache_dir"):
            if isinstance(values.get(k), str) and not os.path.isabs(values[k]):
                values[k] = str(base / values[k])
        if isinstance(values.get("model_config"), str) and values["model_config"].endswith(".json") \
                and not os.path.isabs(values["model_config"]):
            values["model_config"] = str(base / values["model_config"])
    for item in overrides:
        k, v = _parse_override(item)
        values[k] = _coerce(k, v)
    values.update(fixed)
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
