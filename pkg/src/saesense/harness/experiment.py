"""Sensitivity and plateau experiments.

Every perturbation is an independent job whose random streams derive from
``(seed, job, stream)`` only, so results do not depend on worker count
or scheduling. Run-directory layout:

``config.json``          result-determining config fields
``moments.json``         Gaussian/sparsity/cosine summary used by the run
``curves.csv``           ``job,prompt_id,target_type,step,l2,kl`` (kl empty when off)
``manifest.jsonl``       one record per sweep: job, prompt_id, target_type,
                         base_target_distance, seed
``detections.csv``       per sweep: ``<metric>_step`` and ``<metric>_censored``
                         for ms, auc, nl, ap (and ms_kl with KL on)
``compositions.jsonl``   structured-composition audit records
``results_*.csv|json``, ``plots_*.json``  see :mod:`saesense.harness.reports`
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import composer
from ..composer import GaussianModel, fit_gaussian, sample_random
from ..corpus import Corpus
from ..errors import DataError, InputError
from ..metrics import Metric, StepDetection, StepDistribution, ap_step, auc_step, ms_step, nl_step
from ..model import HookPoint, Model, ModelConfig, load_model
from ..perturb import StepMode, SweepCurve, SweepSpec, plateau_sweep, run_sweep
from ..sae import (LatentVector, SaeParams, SparsityTable, activation_cosine_about_bias, decode, encode,
                   estimate_sparsity, load_sae)
from .config import TARGET_TYPES, ExperimentConfig
from .reports import ResultsTable, emit_tables, results_table

log = logging.getLogger(__name__)

STREAM_BASE = 0
STREAM_TARGET = 100   # + type index: target construction
STREAM_PLATEAU = 200  # + type index: plateau random endpoint
STREAM_MOMENTS = 10_000

L2_METRICS = ("ms", "auc", "nl", "ap")


def job_rng(seed: int, job: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, job, stream]))


@dataclass
class Moments:
    gaussian: GaussianModel
    sparsity: SparsityTable | None
    mean_pair_cosine: float | None
    mean_activation_norm: float
    sample_count: int

    def summary(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "mean_activation_norm": self.mean_activation_norm,
            "mean_pair_cosine_about_b_dec": self.mean_pair_cosine,
            "gaussian_ridge": self.gaussian.ridge,
            "dead_latents": None if self.sparsity is None else int((self.sparsity.firing_frequency == 0).sum()),
        }


@dataclass
class Lab:
    """Loaded inputs shared read-only by all jobs."""

    model: Model
    corpus: Corpus
    sae: SaeParams | None = None
    moments: Moments | None = None
    digest: str | None = None

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> Lab:
        if not cfg.model_path or not cfg.tokens_path:
            raise DataError("model_path and tokens_path are required")
        model = load_model(cfg.model_path, ModelConfig.resolve(cfg.model_config))
        corpus = Corpus.from_file(cfg.tokens_path, cfg.seq_len)
        sae = load_sae(cfg.sae_path) if cfg.sae_path else None
        h = hashlib.sha256()
        for p in (cfg.model_path, cfg.sae_path, cfg.tokens_path):
            h.update(_file_digest(p).encode() if p else b"-")
        return cls(model, corpus, sae, digest=h.hexdigest())

    def probe(self, cfg: ExperimentConfig) -> HookPoint:
        return HookPoint.parse(cfg.probe, self.model.config.n_layers)

    def sweep_spec(self, cfg: ExperimentConfig) -> SweepSpec:
        n = self.model.config.n_layers
        return SweepSpec(StepMode(cfg.mode), cfg.steps, cfg.step_size, HookPoint.parse(cfg.probe, n),
                         HookPoint.parse(cfg.read, n), cfg.kl_direction)


def _file_digest(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return h.hexdigest()


def sample_activations(lab: Lab, cfg: ExperimentConfig, n: int, stream: int) -> tuple[list[str], np.ndarray]:
    probe = lab.probe(cfg)
    rng = job_rng(cfg.seed, 0, stream)
    ids, acts = [], []
    for _ in range(n):
        pid, toks = lab.corpus.sample(rng)
        ids.append(pid)
        acts.append(lab.model.forward(toks, capture=(probe,), logits=False).captured[probe])
    return ids, np.stack(acts)


def compute_moments(lab: Lab, cfg: ExperimentConfig, acts: np.ndarray | None = None) -> Moments:
    if acts is None:
        _, acts = sample_activations(lab, cfg, cfg.n_moment_samples, STREAM_MOMENTS)
    gaussian = fit_gaussian(list(acts), ridge=cfg.ridge)
    sparsity = estimate_sparsity(lab.sae, list(acts)) if lab.sae is not None else None
    mean_cos = None
    if lab.sae is not None and cfg.n_cosine_pairs > 0:
        rng = job_rng(cfg.seed, 0, STREAM_MOMENTS + 1)
        cos = []
        for _ in range(cfg.n_cosine_pairs):
            i, j = rng.choice(len(acts), size=2, replace=False)
            try:
                cos.append(activation_cosine_about_bias(lab.sae, acts[i], acts[j]))
            except InputError:
                continue
        mean_cos = float(np.mean(cos)) if cos else None
    norms = np.linalg.norm(acts.astype(np.float64), axis=1)
    return Moments(gaussian, sparsity, mean_cos, float(norms.mean()), len(acts))


def _moments_key(lab: Lab, cfg: ExperimentConfig) -> str:
    parts = [lab.digest, cfg.probe, cfg.seq_len, cfg.n_moment_samples, cfg.seed, cfg.ridge, cfg.n_cosine_pairs]
    return hashlib.sha256(json.dumps(parts).encode()).hexdigest()[:16]


def save_moments(m: Moments, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    # plain .npy: unlike .npz it carries no timestamps, so caches are byte-stable
    np.save(directory / "gaussian_mean.npy", m.gaussian.mean)
    np.save(directory / "gaussian_factor.npy", m.gaussian.factor)
    if m.sparsity is not None:
        m.sparsity.save(directory / "sparsity.bin")
    (directory / "moments.json").write_text(json.dumps(m.summary(), indent=2, sort_keys=True) + "\n")


def load_moments(directory: Path) -> Moments:
    try:
        summary = json.loads((directory / "moments.json").read_text())
        g = GaussianModel(np.load(directory / "gaussian_mean.npy"), np.load(directory / "gaussian_factor.npy"),
                          float(summary["gaussian_ridge"]))
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load moments from {directory}: {exc}") from exc
    sp = SparsityTable.load(directory / "sparsity.bin") if (directory / "sparsity.bin").exists() else None
    return Moments(g, sp, summary["mean_pair_cosine_about_b_dec"], summary["mean_activation_norm"],
                   summary["sample_count"])


def ensure_moments(lab: Lab, cfg: ExperimentConfig) -> Moments:
    """Moments for ``lab``, from the on-disk cache when the inputs are files."""
    if lab.moments is not None:
        return lab.moments
    if lab.digest is None:
        lab.moments = compute_moments(lab, cfg)
        return lab.moments
    cache = Path(cfg.cache_dir or Path(cfg.out_dir) / "cache") / f"moments-{_moments_key(lab, cfg)}"
    if (cache / "moments.json").exists():
        log.info("using cached moments in %s", cache)
        lab.moments = load_moments(cache)
    else:
        log.info("estimating moments from %d activations", cfg.n_moment_samples)
        save_moments(compute_moments(lab, cfg), cache)
        # reload so cached and fresh runs see identical values
        lab.moments = load_moments(cache)
    return lab.moments


# ---------------------------------------------------------------- jobs

@dataclass
class SweepRecord:
    job: int
    prompt_id: str
    target_type: str
    curve: SweepCurve
    detections: dict[str, StepDetection]
    composition: dict | None = None


def detect(curve: SweepCurve, cfg: ExperimentConfig) -> dict[str, StepDetection]:
    dets = {
        "ms": ms_step(curve.l2),
        "auc": _auc_or_censored(curve.l2, cfg.auc_area),
        "nl": nl_step(curve.l2, cfg.nl_fraction, cfg.nl_fit_steps),
        "ap": ap_step(curve.l2, cfg.ap_threshold),
    }
    if curve.kl is not None:
        dets["ms_kl"] = ms_step(curve.kl)
    return dets


def _auc_or_censored(c, area):
    try:
        return auc_step(c, area)
    except InputError as exc:
        return StepDetection(Metric.AUC, None, note=str(exc))


@dataclass
class _Base:
    prompt_id: str
    tokens: np.ndarray
    cache: object
    activation: np.ndarray
    code: LatentVector | None


def _draw_base(lab: Lab, cfg: ExperimentConfig, rng: np.random.Generator, need_code: bool,
               max_tries: int = 1000) -> _Base:
    probe = lab.probe(cfg)
    for _ in range(max_tries):
        pid, toks = lab.corpus.sample(rng)
        cache = lab.model.prefix_cache(toks, probe)
        code = encode(lab.sae, cache.probe_value) if need_code else None
        if need_code and len(code) == 0:
            continue
        return _Base(pid, toks, cache, cache.probe_value, code)
    raise DataError(f"no prompt with active SAE latents in {max_tries} draws")


def _draw_other(lab: Lab, cfg: ExperimentConfig, rng: np.random.Generator, base: _Base,
                need_code: bool = False, max_tries: int = 1000) -> tuple[str, np.ndarray]:
    probe = lab.probe(cfg)
    for _ in range(max_tries):
        pid, toks = lab.corpus.sample(rng)
        if pid == base.prompt_id:
            continue
        act = lab.model.forward(toks, capture=(probe,), logits=False).captured[probe]
        if np.array_equal(act, base.activation):
            continue
        if need_code and len(encode(lab.sae, act)) == 0:
            continue
        return pid, act
    raise DataError(f"could not draw a distinct model-generated activation in {max_tries} draws")


def _top_cos(cfg: ExperimentConfig, m: Moments) -> float:
    if cfg.top_cos is not None:
        return cfg.top_cos
    return m.mean_pair_cosine if m.mean_pair_cosine is not None else composer.DEFAULT_TOP_COSINE


def build_activation(kind: str, lab: Lab, cfg: ExperimentConfig, base: _Base, donor: LatentVector | None,
                     other: np.ndarray | None, rng: np.random.Generator) -> tuple[np.ndarray, dict | None]:
    """Construct one target (sensitivity) or start (plateau) activation.

    ``other`` is a model-generated activation from a different prompt;
    ``donor`` is the SAE code whose values the synthetic variants re-host.
    """
    m = lab.moments
    if kind == "model_generated":
        return other, None
    if kind == "random":
        return sample_random(m.gaussian, rng), None
    if kind == "sae_reconstruction":
        return composer.reconstruct_target(lab.sae, other), None
    if kind == "synthetic_random":
        code = composer.synthesize_random(donor, lab.sae.n_latents, rng)
        return decode(lab.sae, code), None
    if kind == "synthetic_baseline":
        code = composer.synthesize_baseline(donor, m.sparsity, rng, cfg.baseline_k)
        return decode(lab.sae, code), None
    if kind == "synthetic_structured":
        _, rep = composer.synthesize_structured(donor, lab.sae, m.sparsity, _top_cos(cfg, m),
                                                cfg.pool_size, base.activation)
        return rep.target, rep.to_record()
    if kind == "synthetic_structured_no_cos":
        _, rep = composer.synthesize_structured_no_cos(donor, lab.sae, m.sparsity, cfg.pool_size,
                                                       base.activation)
        return rep.target, rep.to_record()
    raise InputError(f"unknown activation type {kind!r}")


def _job_context(lab: Lab, cfg: ExperimentConfig, job: int, other_role: bool):
    rng = job_rng(cfg.seed, job, STREAM_BASE)
    need_code = cfg.needs_sae
    base = _draw_base(lab, cfg, rng, need_code)
    other = None
    if other_role:
        _, other = _draw_other(lab, cfg, rng, base)
    donor = base.code
    if need_code and cfg.donor == "other":
        _, act = _draw_other(lab, cfg, rng, base, need_code=True)
        donor = encode(lab.sae, act)
    return base, other, donor


def sensitivity_job(lab: Lab, cfg: ExperimentConfig, job: int) -> list[SweepRecord]:
    spec = lab.sweep_spec(cfg)
    needs_other = any(t in ("model_generated", "sae_reconstruction") for t in cfg.target_types)
    base, other, donor = _job_context(lab, cfg, job, needs_other)
    out = []
    for kind in cfg.target_types:
        rng = job_rng(cfg.seed, job, STREAM_TARGET + TARGET_TYPES.index(kind))
        target, comp = build_activation(kind, lab, cfg, base, donor, other, rng)
        curve = run_sweep(lab.model, base.tokens, base.activation, target, spec, cfg.kl,
                          base.prompt_id, kind, cache=base.cache)
        out.append(SweepRecord(job, base.prompt_id, kind, curve, detect(curve, cfg), comp))
    return out


def plateau_job(lab: Lab, cfg: ExperimentConfig, job: int) -> list[SweepRecord]:
    spec = lab.sweep_spec(cfg)
    base, _, donor = _job_context(lab, cfg, job, False)
    out = []
    for kind in cfg.target_types:
        idx = TARGET_TYPES.index(kind)
        rng = job_rng(cfg.seed, job, STREAM_TARGET + idx)
        if kind == "model_generated":
            start, comp = base.activation, None
        elif kind == "sae_reconstruction":
            start, comp = composer.reconstruct_target(lab.sae, base.activation), None
        else:
            start, comp = build_activation(kind, lab, cfg, base, donor, None, rng)
        endpoint = sample_random(lab.moments.gaussian, job_rng(cfg.seed, job, STREAM_PLATEAU + idx))
        curve = plateau_sweep(lab.model, base.tokens, start, endpoint, spec, cfg.kl,
                              base.prompt_id, kind, cache=base.cache)
        out.append(SweepRecord(job, base.prompt_id, kind, curve, detect(curve, cfg), comp))
    return out


# ---------------------------------------------------------------- driver

@dataclass
class ExperimentResults:
    config: ExperimentConfig
    records: list[SweepRecord]
    tables: dict[str, ResultsTable]
    distributions: dict[str, dict[str, StepDistribution]] = field(default_factory=dict)
    moments_summary: dict = field(default_factory=dict)


def aggregate(records: list[SweepRecord], cfg: ExperimentConfig) -> tuple[dict, dict]:
    metrics = list(L2_METRICS) + (["ms_kl"] if records and "ms_kl" in records[0].detections else [])
    dists = {m: {t: StepDistribution(t) for t in cfg.target_types} for m in metrics}
    for r in records:
        for m in metrics:
            dists[m][r.target_type].add(r.detections[m])
    tables = {m: results_table(m, dists[m], cfg.ks_reference) for m in metrics}
    return tables, dists


def run_experiment(cfg: ExperimentConfig, lab: Lab | None = None, write: bool = True) -> ExperimentResults:
    cfg.validate()
    lab = lab or Lab.from_config(cfg)
    if cfg.needs_sae and lab.sae is None:
        raise DataError("target types need an SAE but none was given")
    ensure_moments(lab, cfg)
    job_fn: Callable = sensitivity_job if cfg.kind == "sensitivity" else plateau_job
    jobs = range(cfg.n_perturbations)
    if cfg.workers == 1:
        per_job = [job_fn(lab, cfg, j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            per_job = list(pool.map(lambda j: job_fn(lab, cfg, j), jobs))
    records = [r for recs in per_job for r in recs]
    tables, dists = aggregate(records, cfg)
    res = ExperimentResults(cfg, records, tables, dists, lab.moments.summary())
    if write:
        write_run(res)
    return res


def run_sensitivity(cfg: ExperimentConfig, lab: Lab | None = None, write: bool = True) -> ExperimentResults:
    cfg.kind = "sensitivity"
    return run_experiment(cfg, lab, write)


def run_plateau(cfg: ExperimentConfig, lab: Lab | None = None, write: bool = True) -> ExperimentResults:
    cfg.kind = "plateau"
    return run_experiment(cfg, lab, write)


# ---------------------------------------------------------------- files

def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def detection_columns(metrics) -> list[str]:
    cols = []
    for m in metrics:
        cols += [f"{m}_step", f"{m}_censored"]
    return cols


def write_run(res: ExperimentResults) -> None:
    cfg = res.config
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    (out / "config.json").write_text(json.dumps(cfg.results_dict(), indent=2, sort_keys=True) + "\n")
    (out / "moments.json").write_text(json.dumps(res.moments_summary, indent=2, sort_keys=True) + "\n")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["job", "prompt_id", "target_type", "step", "l2", "kl"])
    for r in res.records:
        kl = r.curve.kl
        for n, v in enumerate(r.curve.l2):
            w.writerow([r.job, r.prompt_id, r.target_type, n, _fmt(v), "" if kl is None else _fmt(kl[n])])
    (out / "curves.csv").write_text(buf.getvalue())

    with open(out / "manifest.jsonl", "w") as fh:
        for r in res.records:
            fh.write(json.dumps({"job": r.job, "prompt_id": r.prompt_id, "target_type": r.target_type,
                                 "base_target_distance": r.curve.base_target_distance,
                                 "seed": cfg.seed}, sort_keys=True) + "\n")
    write_detections(out / "detections.csv", res.records)
    with open(out / "compositions.jsonl", "w") as fh:
        for r in res.records:
            if r.composition is not None:
                fh.write(json.dumps(dict(r.composition, job=r.job, prompt_id=r.prompt_id,
                                         target_type=r.target_type), sort_keys=True) + "\n")
    emit_tables(out, list(res.tables.values()), res.distributions, cfg.steps, cfg.hist_bin_width)


def write_detections(path: Path, records: list[SweepRecord]) -> None:
    metrics = list(records[0].detections) if records else list(L2_METRICS)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["job", "prompt_id", "target_type"] + detection_columns(metrics))
        for r in records:
            row = [r.job, r.prompt_id, r.target_type]
            for m in metrics:
                d = r.detections[m]
                row += ["" if d.censored else d.step, int(d.censored)]
            w.writerow(row)


def read_curves(path: str | Path) -> list[SweepRecord]:
    """Load ``curves.csv`` back into records (detections left empty)."""
    groups: dict[tuple[int, str, str], tuple[list[float], list[float]]] = {}
    try:
        with open(path, newline="") as fh:
            for d in csv.DictReader(fh):
                key = (int(d["job"]), d["prompt_id"], d["target_type"])
                l2, kl = groups.setdefault(key, ([], []))
                if int(d["step"]) != len(l2):
                    raise DataError(f"{path}: steps out of order for {key}")
                l2.append(float(d["l2"]))
                if d["kl"] != "":
                    kl.append(float(d["kl"]))
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read curves {path}: {exc}") from exc
    out = []
    for (job, pid, kind), (l2, kl) in groups.items():
        curve = SweepCurve(np.array(l2), np.array(kl) if kl else None, float("nan"), pid, kind)
        out.append(SweepRecord(job, pid, kind, curve, {}))
    return out


def analyze(cfg: ExperimentConfig, curves_path: str | Path) -> ExperimentResults:
    """Re-run the detectors on saved curves and rewrite detections/tables."""
    records = read_curves(curves_path)
    if not records:
        raise DataError(f"{curves_path}: no curves")
    seen = list(dict.fromkeys(r.target_type for r in records))
    cfg.target_types = tuple(seen)
    if cfg.ks_reference not in seen:
        raise DataError(f"KS reference {cfg.ks_reference!r} absent from saved curves")
    for r in records:
        r.detections = detect(r.curve, cfg)
    tables, dists = aggregate(records, cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_detections(out / "detections.csv", records)
    steps = len(records[0].curve.l2) - 1
    emit_tables(out, list(tables.values()), dists, steps, cfg.hist_bin_width)
    return ExperimentResults(cfg, records, tables, dists)
