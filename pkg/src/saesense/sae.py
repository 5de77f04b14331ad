"""Standard ReLU sparse autoencoder over residual activations.

``encode(a) = relu(W_enc (a - b_dec) + b_enc)``, ``decode(z) = b_dec + z W_dec``.

Weight file schema (same container as the model): ``W_enc`` [d_model,
n_latents] (sae-lens orientation; [n_latents, d_model] is also accepted
when unambiguous), ``b_enc`` [n_latents], ``W_dec`` [n_latents, d_model],
``b_dec`` [d_model].
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, InputError
from .tensorfile import read_tensors, write_tensors

F32 = np.float32


@dataclass(frozen=True, eq=False)
class SaeParams:
    W_enc: np.ndarray  # [n_latents, d_model]
    b_enc: np.ndarray
    W_dec: np.ndarray  # [n_latents, d_model]; rows are latent directions
    b_dec: np.ndarray

    def __post_init__(self):
        for name in ("W_enc", "b_enc", "W_dec", "b_dec"):
            arr = np.array(getattr(self, name), dtype=F32)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        n, d = self.W_dec.shape
        if self.W_enc.shape != (n, d) or self.b_enc.shape != (n,) or self.b_dec.shape != (d,):
            raise DataError(
                f"inconsistent SAE shapes: W_enc {self.W_enc.shape}, b_enc {self.b_enc.shape}, "
                f"W_dec {self.W_dec.shape}, b_dec {self.b_dec.shape}"
            )
        for name in ("W_enc", "b_enc", "W_dec", "b_dec"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"SAE tensor {name} has non-finite entries")
        if np.any(self.decoder_norms == 0):
            raise DataError("SAE decoder has zero-norm rows")

    @property
    def n_latents(self) -> int:
        return self.W_dec.shape[0]

    @property
    def d_model(self) -> int:
        return self.W_dec.shape[1]

    @cached_property
    def decoder_norms(self) -> np.ndarray:
        return np.linalg.norm(self.W_dec.astype(np.float64), axis=1)

    @cached_property
    def unit_decoder(self) -> np.ndarray:
        """Decoder rows normalised to unit length, float64."""
        return self.W_dec.astype(np.float64) / self.decoder_norms[:, None]

    def cosines_to(self, i: int) -> np.ndarray:
        """Cosine of every decoder row with row ``i``."""
        u = self.unit_decoder
        return u @ u[i]


@dataclass(frozen=True, eq=False)
class LatentVector:
    """Sparse SAE code: parallel arrays of latent indices and positive values.

    Entry order is meaningful only as a record of construction order.
    """

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        val = np.asarray(self.values, dtype=F32).reshape(-1)
        if idx.shape != val.shape:
            raise InputError("indices and values differ in length")
        if np.unique(idx).size != idx.size:
            raise InputError("duplicate latent indices")
        if idx.size and idx.min() < 0:
            raise InputError("negative latent index")
        if not np.all(val > 0):
            raise InputError("latent values must be strictly positive")
        idx.flags.writeable = False
        val.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def empty(cls) -> LatentVector:
        return cls(np.zeros(0, np.int64), np.zeros(0, F32))

    @classmethod
    def from_dict(cls, entries: Mapping[int, float]) -> LatentVector:
        keys = list(entries)
        return cls(np.array(keys, dtype=np.int64), np.array([entries[k] for k in keys], dtype=F32))

    def to_dict(self) -> dict[int, float]:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}

    def __len__(self) -> int:
        return self.indices.size

    def __add__(self, other: LatentVector) -> LatentVector:
        merged: dict[int, np.float32] = {}
        for lv in (self, other):
            for i, v in zip(lv.indices.tolist(), lv.values):
                merged[i] = merged.get(i, F32(0)) + v
        return LatentVector.from_dict(merged)

    def by_value(self) -> list[tuple[int, np.float32]]:
        """Entries in descending value order, ties broken by smaller index."""
        order = np.lexsort((self.indices, -self.values.astype(np.float64)))
        return [(int(self.indices[k]), self.values[k]) for k in order]

    def to_dense(self, n_latents: int) -> np.ndarray:
        out = np.zeros(n_latents, dtype=F32)
        out[self.indices] = self.values
        return out


@dataclass(frozen=True, eq=False)
class SparsityTable:
    firing_frequency: np.ndarray  # float64 in [0, 1]
    sample_count: int

    def __post_init__(self):
        f = np.asarray(self.firing_frequency, dtype=np.float64)
        if self.sample_count < 1:
            raise InputError("sample_count must be >= 1")
        if f.ndim != 1 or np.any(~np.isfinite(f)) or np.any(f < 0) or np.any(f > 1):
            raise InputError("firing frequencies must lie in [0, 1]")
        f = f.copy()
        f.flags.writeable = False
        object.__setattr__(self, "firing_frequency", f)

    @property
    def n_latents(self) -> int:
        return self.firing_frequency.size

    @cached_property
    def log_frequency(self) -> np.ndarray:
        eps = 1.0 / (10.0 * self.sample_count)
        return np.log10(self.firing_frequency + eps)

    def sparsity_distance(self, i: int) -> np.ndarray:
        """|log10(f_j + eps) - log10(f_i + eps)| for every latent j."""
        return np.abs(self.log_frequency - self.log_frequency[i])

    def nearest(self, i: int, k: int, eligible: np.ndarray) -> np.ndarray:
        """The ``k`` eligible latents closest to ``i`` in sparsity; ties by index."""
        cand = np.flatnonzero(eligible)
        dist = self.sparsity_distance(i)[cand]
        if 0 < k < cand.size:
            # keep everything tied with the k-th distance, then order exactly
            keep = dist <= np.partition(dist, k - 1)[k - 1]
            cand, dist = cand[keep], dist[keep]
        order = np.lexsort((cand, dist))
        return cand[order[:k]]

    def save(self, path: str | os.PathLike) -> None:
        """Write ``path`` (n_latents little-endian f64) and ``path + '.json'``."""
        path = Path(path)
        path.write_bytes(self.firing_frequency.astype("<f8").tobytes())
        sidecar = {"n_latents": self.n_latents, "sample_count": int(self.sample_count)}
        Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> SparsityTable:
        path = Path(path)
        try:
            meta = json.loads(Path(str(path) + ".json").read_text())
            freq = np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64)
        except (OSError, json.JSONDecodeError, ValueError) as exc:
            raise DataError(f"cannot read sparsity table {path}: {exc}") from exc
        if freq.size != meta.get("n_latents"):
            raise DataError(f"{path}: {freq.size} frequencies but sidecar says {meta.get('n_latents')}")
        return cls(freq, int(meta["sample_count"]))


def _check_activation(params: SaeParams, a) -> np.ndarray:
    a = np.asarray(a, dtype=F32)
    if a.shape != (params.d_model,):
        raise InputError(f"activation shape {a.shape} != ({params.d_model},)")
    return a


def pre_activations(params: SaeParams, a) -> np.ndarray:
    a = _check_activation(params, a)
    return params.W_enc @ (a - params.b_dec) + params.b_enc


def encode(params: SaeParams, a) -> LatentVector:
    pre = pre_activations(params, a)
    idx = np.flatnonzero(pre > 0)
    return LatentVector(idx, pre[idx])


def encode_batch(params: SaeParams, acts: np.ndarray) -> np.ndarray:
    """Dense codes for a stack of activations, shape [N, n_latents]."""
    acts = np.asarray(acts, dtype=F32)
    if acts.ndim != 2 or acts.shape[1] != params.d_model:
        raise InputError(f"activations must have shape (N, {params.d_model})")
    return np.maximum((acts - params.b_dec) @ params.W_enc.T + params.b_enc, F32(0))


def decode(params: SaeParams, z: LatentVector) -> np.ndarray:
    if len(z) and z.indices.max() >= params.n_latents:
        raise InputError(f"latent index {int(z.indices.max())} >= n_latents {params.n_latents}")
    return params.b_dec + z.values @ params.W_dec[z.indices]


def estimate_sparsity(params: SaeParams, activations: Sequence[np.ndarray], chunk: int = 1024) -> SparsityTable:
    if len(activations) == 0:
        raise InputError("need at least one activation")
    counts = np.zeros(params.n_latents, dtype=np.int64)
    for start in range(0, len(activations), chunk):
        block = np.stack([np.asarray(a, dtype=F32) for a in activations[start : start + chunk]])
        counts += (encode_batch(params, block) > 0).sum(axis=0)
    return SparsityTable(counts / len(activations), len(activations))


def dead_latents(table: SparsityTable) -> set[int]:
    return set(np.flatnonzero(table.firing_frequency == 0).tolist())


def latent_cosine(params: SaeParams, i: int, j: int) -> float:
    for k in (i, j):
        if not 0 <= k < params.n_latents:
            raise InputError(f"latent index {k} out of range")
    u = params.unit_decoder
    # the product is commutative elementwise, so the sum is symmetric in (i, j)
    return float(np.clip(np.sum(u[i] * u[j]), -1.0, 1.0))


def activation_cosine_about_bias(params: SaeParams, a, b) -> float:
    """Cosine of ``a - b_dec`` and ``b - b_dec``."""
    da = _check_activation(params, a).astype(np.float64) - params.b_dec
    db = _check_activation(params, b).astype(np.float64) - params.b_dec
    na, nb = np.linalg.norm(da), np.linalg.norm(db)
    if na == 0 or nb == 0:
        raise InputError("activation coincides with the decoder bias")
    return float(np.clip(da @ db / (na * nb), -1.0, 1.0))


def sae_from_tensors(tensors: Mapping[str, np.ndarray]) -> SaeParams:
    for name in ("W_enc", "b_enc", "W_dec", "b_dec"):
        if name not in tensors:
            raise DataError(f"missing SAE tensor {name!r}")
    W_dec = np.asarray(tensors["W_dec"])
    if W_dec.ndim != 2:
        raise DataError("W_dec must be 2-D")
    n, d = W_dec.shape
    W_enc = np.asarray(tensors["W_enc"])
    if W_enc.shape == (d, n):
        W_enc = W_enc.T
    elif W_enc.shape != (n, d):
        raise DataError(f"W_enc has shape {list(W_enc.shape)}, expected {[d, n]}")
    return SaeParams(W_enc, tensors["b_enc"], W_dec, tensors["b_dec"])


def load_sae(path: str | os.PathLike) -> SaeParams:
    tensors, _ = read_tensors(path)
    return sae_from_tensors(tensors)


def save_sae(params: SaeParams, path: str | os.PathLike) -> None:
    write_tensors(path, {"W_enc": params.W_enc.T, "b_enc": params.b_enc,
                         "W_dec": params.W_dec, "b_dec": params.b_dec})
