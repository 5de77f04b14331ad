"""Target activations for perturbation sweeps.

Synthetic activations are built from the SAE code of a base activation:
its latent values are kept and re-hosted on different latents, chosen at
random, by sparsity, or by sparsity plus decoder-cosine structure.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, NumericalError
from .sae import LatentVector, SaeParams, SparsityTable, decode, encode

F32 = np.float32
DEFAULT_TOP_COSINE = 0.42


@dataclass(frozen=True, eq=False)
class GaussianModel:
    mean: np.ndarray    # float64 [d]
    factor: np.ndarray  # float64 lower-triangular [d, d]
    ridge: float = 0.0

    @property
    def covariance(self) -> np.ndarray:
        return self.factor @ self.factor.T


def fit_gaussian(activations: Sequence[np.ndarray], ridge: float | None = None,
                 relative_ridge: float = 1e-4) -> GaussianModel:
    """Mean and Cholesky factor of ``cov + ridge * I``.

    When ``ridge`` is None it defaults to ``relative_ridge`` times the mean
    diagonal variance.
    """
    X = np.asarray(np.stack(activations), dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InputError("need at least two activations to fit a Gaussian")
    mean = X.mean(axis=0)
    cov = np.cov(X, rowvar=False)
    if ridge is None:
        ridge = relative_ridge * float(np.mean(np.diag(cov)))
    if not ridge > 0:
        raise NumericalError("ridge must be positive (data has zero variance; pass an explicit ridge)")
    try:
        factor = np.linalg.cholesky(cov + ridge * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky failed with ridge {ridge:g}: degenerate data") from exc
    return GaussianModel(mean, factor, float(ridge))


def sample_random(g: GaussianModel, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(g.mean.shape[0])
    return (g.mean + g.factor @ z).astype(F32)


def synthesize_random(base_code: LatentVector, n_latents: int, rng: np.random.Generator) -> LatentVector:
    """Re-host the base values on uniformly drawn distinct latents."""
    if len(base_code) == 0:
        raise InputError("base code has no active latents")
    if len(base_code) > n_latents:
        raise InputError("more active latents than latents available")
    idx = rng.choice(n_latents, size=len(base_code), replace=False)
    return LatentVector(idx, base_code.values.copy())


def _alive(table: SparsityTable) -> np.ndarray:
    return table.firing_frequency > 0


def synthesize_baseline(base_code: LatentVector, table: SparsityTable, rng: np.random.Generator,
                        k: int = 10) -> LatentVector:
    """Replace each base latent by one of its ``k`` nearest-sparsity live latents.

    Latents are processed in descending value order; a candidate is never
    the latent itself nor one already chosen in this composition.
    """
    if len(base_code) == 0:
        raise InputError("base code has no active latents")
    if base_code.indices.max() >= table.n_latents:
        raise InputError("sparsity table does not cover every base latent")
    eligible = _alive(table)
    chosen_idx, chosen_val = [], []
    for i, v in base_code.by_value():
        mask = eligible.copy()
        mask[i] = False
        cands = table.nearest(i, k, mask)
        if cands.size < k:
            raise InputError(f"only {cands.size} candidate latents remain for latent {i}; need {k}")
        pick = int(cands[rng.integers(k)])
        eligible[pick] = False
        chosen_idx.append(pick)
        chosen_val.append(v)
    return LatentVector(np.array(chosen_idx), np.array(chosen_val, dtype=F32))


@dataclass
class CompositionReport:
    """Audit trail of one structured composition."""

    variant: str
    base_latents: list[int]
    chosen_latents: list[int]
    values: list[float]
    target_cosines: list[float | None]
    achieved_cosines: list[float | None]
    target: np.ndarray | None = field(default=None, repr=False)
    distance_from_base: float | None = None

    @property
    def code(self) -> LatentVector:
        return LatentVector(np.array(self.chosen_latents, dtype=np.int64), np.array(self.values, dtype=F32))

    @property
    def cosine_gaps(self) -> list[float | None]:
        return [None if t is None else abs(a - t) for t, a in zip(self.target_cosines, self.achieved_cosines)]

    def to_record(self, **extra) -> dict:
        rec = {
            "variant": self.variant,
            "base_latents": self.base_latents,
            "chosen_latents": self.chosen_latents,
            "values": self.values,
            "target_cosines": self.target_cosines,
            "achieved_cosines": self.achieved_cosines,
            "distance_from_base": self.distance_from_base,
        }
        rec.update(extra)
        return rec

    def to_json(self, **extra) -> str:
        return json.dumps(self.to_record(**extra), sort_keys=True)


def _closest(values: np.ndarray, target: float, mask: np.ndarray) -> int:
    """Index minimising |values - target| over ``mask``; ties by smaller index."""
    gap = np.where(mask, np.abs(values - target), np.inf)
    best = int(np.argmin(gap))
    if not np.isfinite(gap[best]):
        raise InputError("no eligible latent left to choose from")
    return best


def _sparsity_pool(table: SparsityTable, top_base: int, pool_size: int) -> np.ndarray:
    mask = _alive(table)
    mask[top_base] = False
    pool = table.nearest(top_base, pool_size, mask)
    if pool.size == 0:
        raise InputError("empty candidate pool: no live latents")
    if pool.size < pool_size:
        raise InputError(f"pool_size {pool_size} exceeds the {pool.size} live latents available")
    return pool


def _structured(base_code, params, table, top_synth, top_target, variant, base):
    ordered = base_code.by_value()
    top_base, top_value = ordered[0]
    cos_to_top_base = params.cosines_to(top_base)
    cos_to_top_synth = params.cosines_to(top_synth)

    eligible = _alive(table)
    eligible[top_synth] = False
    report = CompositionReport(
        variant=variant,
        base_latents=[top_base],
        chosen_latents=[top_synth],
        values=[float(top_value)],
        target_cosines=[top_target],
        achieved_cosines=[float(cos_to_top_base[top_synth])],
    )
    for l_base, value in ordered[1:]:
        want = float(cos_to_top_base[l_base])
        l_synth = _closest(cos_to_top_synth, want, eligible)
        eligible[l_synth] = False
        report.base_latents.append(l_base)
        report.chosen_latents.append(l_synth)
        report.values.append(float(value))
        report.target_cosines.append(want)
        report.achieved_cosines.append(float(cos_to_top_synth[l_synth]))

    code = LatentVector(np.array(report.chosen_latents, dtype=np.int64),
                        np.array([v for _, v in ordered], dtype=F32))
    report.target = decode(params, code)
    ref = decode(params, base_code) if base is None else np.asarray(base, dtype=F32)
    report.distance_from_base = float(np.linalg.norm(report.target.astype(np.float64) - ref))
    return code, report


def synthesize_structured(base_code: LatentVector, params: SaeParams, table: SparsityTable,
                          target_top_cos: float = DEFAULT_TOP_COSINE, pool_size: int = 100,
                          base: np.ndarray | None = None) -> tuple[LatentVector, CompositionReport]:
    """Sparsity- and cosine-matched re-hosting of a base code.

    The top latent is swapped for the member of its ``pool_size``
    nearest-sparsity live latents whose decoder cosine to it is closest to
    ``target_top_cos``. Every other latent, in descending value order, is
    swapped for the live unchosen latent whose cosine to the new top latent
    best matches its own cosine to the old one. Values travel with their
    latents. ``base`` (the dense activation) only feeds the report's distance.
    """
    if len(base_code) == 0:
        raise InputError("base code has no active latents")
    top_base = base_code.by_value()[0][0]
    pool = _sparsity_pool(table, top_base, pool_size)
    cos = params.cosines_to(top_base)[pool]
    top_synth = int(pool[_closest(cos, target_top_cos, np.ones(pool.size, dtype=bool))])
    return _structured(base_code, params, table, top_synth, float(target_top_cos), "structured", base)


def synthesize_structured_no_cos(base_code: LatentVector, params: SaeParams, table: SparsityTable,
                                 pool_size: int = 100, base: np.ndarray | None = None
                                 ) -> tuple[LatentVector, CompositionReport]:
    """As :func:`synthesize_structured`, but the new top latent is simply the
    live latent nearest in sparsity to the old one."""
    if len(base_code) == 0:
        raise InputError("base code has no active latents")
    top_base = base_code.by_value()[0][0]
    top_synth = int(_sparsity_pool(table, top_base, pool_size)[0])
    return _structured(base_code, params, table, top_synth, None, "structured_no_cos", base)


def reconstruct_target(params: SaeParams, t: np.ndarray) -> np.ndarray:
    return decode(params, encode(params, t))
