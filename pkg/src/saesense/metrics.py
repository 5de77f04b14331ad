"""Step detectors for readout curves and distribution comparison.

All detectors take a 1-D series indexed by perturbation step (index 0 is
the unperturbed point) and return a :class:`StepDetection`. A detector
whose condition never fires returns a censored detection rather than a
sentinel step.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError


class Metric(str, enum.Enum):
    MS = "ms"
    AUC = "auc"
    NL = "nl"
    AP = "ap"


@dataclass(frozen=True)
class StepDetection:
    metric: Metric
    step: int | None
    auxiliary: float = float("nan")
    note: str = ""

    @property
    def censored(self) -> bool:
        return self.step is None


@dataclass
class StepDistribution:
    label: str
    steps: list[int] = field(default_factory=list)
    censored_count: int = 0

    @classmethod
    def from_detections(cls, label: str, detections: Iterable[StepDetection]) -> StepDistribution:
        d = cls(label)
        for det in detections:
            d.add(det)
        return d

    def add(self, det: StepDetection) -> None:
        if det.censored:
            self.censored_count += 1
        else:
            self.steps.append(int(det.step))

    @property
    def total(self) -> int:
        return len(self.steps) + self.censored_count


def _curve(curve, min_len: int) -> np.ndarray:
    c = np.asarray(curve, dtype=np.float64)
    if c.ndim != 1 or c.size < min_len:
        raise InputError(f"curve must be 1-D with at least {min_len} points")
    if not np.all(np.isfinite(c)):
        raise InputError("curve has non-finite entries")
    return c


def ms_step(curve) -> StepDetection:
    """Step with the largest single-step increase (first one on ties)."""
    c = _curve(curve, 2)
    slopes = np.diff(c)
    k = int(np.argmax(slopes))
    return StepDetection(Metric.MS, k + 1, float(slopes[k]))


def auc_step(curve, area: str = "up_to_step") -> StepDetection:
    """Step maximising triangle area over area under the curve.

    ``R(n) = (n * c[n] / 2) / A(n)`` where ``A(n)`` is the trapezoidal
    area from step 0 to ``n`` (``area="up_to_step"``) or over the whole
    curve (``area="full"``). Steps with zero area are skipped.
    """
    c = _curve(curve, 2)
    if np.any(c < 0):
        raise InputError("auc_step needs a non-negative curve")
    n = np.arange(c.size, dtype=np.float64)
    cum = np.concatenate([[0.0], np.cumsum((c[:-1] + c[1:]) / 2.0)])
    if area == "up_to_step":
        denom = cum
    elif area == "full":
        denom = np.full(c.size, cum[-1])
    else:
        raise InputError(f"unknown area mode {area!r}")
    triangle = n * c / 2.0
    valid = denom > 0
    valid[0] = False
    if not valid.any():
        raise InputError("curve has zero area everywhere; AUC ratio undefined")
    ratio = np.full(c.size, -np.inf)
    ratio[valid] = triangle[valid] / denom[valid]
    k = int(np.argmax(ratio))
    return StepDetection(Metric.AUC, k, float(ratio[k]))


def nl_step(curve, deviation_fraction: float = 0.10, fit_steps: int = 1) -> StepDetection:
    """First step whose slope departs from the initial slope by more than
    ``deviation_fraction`` of it.

    The initial slope is the first difference, or with ``fit_steps > 1`` a
    least-squares line through points ``0..fit_steps``; scanning then starts
    at ``fit_steps + 1``.
    """
    c = _curve(curve, max(3, fit_steps + 2))
    if fit_steps < 1:
        raise InputError("fit_steps must be >= 1")
    if fit_steps == 1:
        s0 = c[1] - c[0]
    else:
        s0 = float(np.polyfit(np.arange(fit_steps + 1), c[: fit_steps + 1], 1)[0])
    floor = 1e-9 * float(np.max(np.abs(c)))
    if s0 == 0 or abs(s0) < floor:
        return StepDetection(Metric.NL, None, float(s0), "initial slope below floor")
    dev = np.abs(np.diff(c)[fit_steps:] - s0)
    hits = np.flatnonzero(dev > deviation_fraction * abs(s0))
    if hits.size == 0:
        return StepDetection(Metric.NL, None, float(s0))
    return StepDetection(Metric.NL, int(hits[0]) + fit_steps + 1, float(s0))


def ap_step(curve, threshold: float = 20.0) -> StepDetection:
    """First step where the curve exceeds ``threshold``."""
    c = _curve(curve, 1)
    if not c[0] < threshold:
        raise InputError(f"curve starts at {c[0]:g}, not below threshold {threshold:g}")
    hits = np.flatnonzero(c > threshold)
    if hits.size == 0:
        return StepDetection(Metric.AP, None, float(threshold))
    return StepDetection(Metric.AP, int(hits[0]), float(threshold))


def _samples(x) -> np.ndarray:
    s = np.asarray(x.steps if isinstance(x, StepDistribution) else x, dtype=np.float64)
    if s.size == 0:
        raise InputError("empty distribution")
    return np.sort(s)


def ks_statistic(a: StepDistribution | Sequence[float], b: StepDistribution | Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|."""
    sa, sb = _samples(a), _samples(b)
    grid = np.concatenate([sa, sb])
    fa = np.searchsorted(sa, grid, side="right") / sa.size
    fb = np.searchsorted(sb, grid, side="right") / sb.size
    return float(np.max(np.abs(fa - fb)))


@dataclass(frozen=True)
class DistStats:
    mean: float
    std: float
    count: int
    censored_count: int


def dist_stats(d: StepDistribution) -> DistStats:
    if not d.steps:
        raise InputError(f"distribution {d.label!r} has no uncensored steps")
    s = np.asarray(d.steps, dtype=np.float64)
    return DistStats(float(s.mean()), float(s.std()), int(s.size), d.censored_count)


DETECTORS = {Metric.MS: ms_step, Metric.AUC: auc_step, Metric.NL: nl_step, Metric.AP: ap_step}
