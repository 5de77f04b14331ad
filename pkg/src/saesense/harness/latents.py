"""Statistics of the SAE codes of model-generated activations."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InputError
from ..model import HookPoint, Model
from ..sae import SaeParams, encode

TOP_RANKS = 10
COS_EDGES = np.linspace(-1.0, 1.0, 41)


def _hist(values: np.ndarray, edges: np.ndarray) -> dict:
    counts, _ = np.histogram(values, bins=edges)
    total = counts.sum()
    probs = counts / total if total else np.zeros(counts.size)
    return {"bin_edges": edges.tolist(), "counts": counts.tolist(), "probability": probs.tolist()}


@dataclass
class LatentPropertyReport:
    sample_count: int
    active_counts: np.ndarray          # per activation
    norm_fraction_l1: np.ndarray       # [n_with_active, 10]; rank r value / sum of values
    norm_fraction_l2: np.ndarray       # [n_with_active, 10]; rank r value^2 / sum of squares
    pairwise_cosines: np.ndarray       # pooled over activations, all unordered active pairs
    top_cosines: np.ndarray            # pooled: each non-top active latent vs the top latent
    activation_norms: np.ndarray

    @property
    def zero_active_count(self) -> int:
        return int((self.active_counts == 0).sum())

    @property
    def mean_active(self) -> float:
        return float(self.active_counts.mean())

    def mean_fraction(self, norm: str = "l1") -> np.ndarray:
        f = self.norm_fraction_l1 if norm == "l1" else self.norm_fraction_l2
        return f.mean(axis=0) if f.size else np.zeros(TOP_RANKS)

    @property
    def mean_pairwise_cosine(self) -> float | None:
        return float(self.pairwise_cosines.mean()) if self.pairwise_cosines.size else None

    @property
    def mean_top_cosine(self) -> float | None:
        return float(self.top_cosines.mean()) if self.top_cosines.size else None

    def histograms(self) -> dict:
        hi = int(self.active_counts.max()) if self.active_counts.size else 0
        return {
            "active_count": _hist(self.active_counts, np.arange(0, hi + 2) - 0.5),
            "pairwise_cosine": _hist(self.pairwise_cosines, COS_EDGES),
            "top_latent_cosine": _hist(self.top_cosines, COS_EDGES),
        }

    def summary(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "zero_active_count": self.zero_active_count,
            "mean_active_latents": self.mean_active,
            "mean_norm_fraction_by_rank_l1": self.mean_fraction("l1").tolist(),
            "mean_norm_fraction_by_rank_l2": self.mean_fraction("l2").tolist(),
            "mean_pairwise_cosine": self.mean_pairwise_cosine,
            "mean_top_latent_cosine": self.mean_top_cosine,
            "mean_activation_norm": float(self.activation_norms.mean()),
        }

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary(), "histograms": self.histograms()},
                          indent=2, sort_keys=True) + "\n"


def latent_properties(sae: SaeParams, activations: Sequence[np.ndarray]) -> LatentPropertyReport:
    if len(activations) == 0:
        raise InputError("need at least one activation")
    counts, f1, f2, pair, top, norms = [], [], [], [], [], []
    u = sae.unit_decoder
    for a in activations:
        norms.append(float(np.linalg.norm(np.asarray(a, np.float64))))
        code = encode(sae, a)
        counts.append(len(code))
        if len(code) == 0:
            continue
        ordered = code.by_value()
        idx = np.array([i for i, _ in ordered])
        vals = np.array([v for _, v in ordered], dtype=np.float64)
        row1, row2 = np.zeros(TOP_RANKS), np.zeros(TOP_RANKS)
        k = min(TOP_RANKS, vals.size)
        row1[:k] = vals[:k] / vals.sum()
        row2[:k] = vals[:k] ** 2 / (vals ** 2).sum()
        f1.append(row1)
        f2.append(row2)
        gram = u[idx] @ u[idx].T
        iu = np.triu_indices(idx.size, k=1)
        pair.append(gram[iu])
        top.append(gram[0, 1:])
    empty = np.zeros((0, TOP_RANKS))
    return LatentPropertyReport(
        sample_count=len(activations),
        active_counts=np.array(counts),
        norm_fraction_l1=np.array(f1) if f1 else empty,
        norm_fraction_l2=np.array(f2) if f2 else empty,
        pairwise_cosines=np.concatenate(pair) if pair else np.zeros(0),
        top_cosines=np.concatenate(top) if top else np.zeros(0),
        activation_norms=np.array(norms),
    )


def latent_property_report(model: Model, sae: SaeParams, prompts: Sequence, hook: HookPoint,
                           n: int = 2000) -> LatentPropertyReport:
    """Collect ``hook`` activations for the first ``n`` prompts and summarise their codes."""
    if n < 1:
        raise InputError("n must be >= 1")
    acts = [model.forward(p, capture=(hook,), logits=False).captured[hook] for p in list(prompts)[:n]]
    return latent_properties(sae, acts)
