"""Perturbation sweeps from a base activation toward a target.

Each sweep patches ``steps + 1`` points at the probe hook (final token)
and reads the residual at the read hook. The readout curve is the L2
distance to the step-0 readout and, optionally, the KL divergence between
the step-0 and step-n next-token distributions.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError
from .model import HookPoint, Model, PrefixCache, Site

F32 = np.float32


class StepMode(str, enum.Enum):
    ABSOLUTE = "absolute"
    RELATIVE = "relative"


@dataclass(frozen=True)
class SweepSpec:
    mode: StepMode = StepMode.ABSOLUTE
    steps: int = 100
    step_size: float = 0.5
    probe: HookPoint = HookPoint(1, Site.RESID_PRE, -1)
    read: HookPoint = HookPoint(11, Site.RESID_POST, -1)
    # "forward": KL(unperturbed || perturbed); "reverse" swaps the arguments
    kl_direction: str = "forward"

    def __post_init__(self):
        object.__setattr__(self, "mode", StepMode(self.mode))
        if self.steps < 1:
            raise InputError("steps must be >= 1")
        if self.mode is StepMode.ABSOLUTE and not self.step_size > 0:
            raise InputError("step_size must be positive in absolute mode")
        if self.kl_direction not in ("forward", "reverse"):
            raise InputError(f"kl_direction must be 'forward' or 'reverse', got {self.kl_direction!r}")


@dataclass(eq=False)
class SweepCurve:
    l2: np.ndarray
    kl: np.ndarray | None
    base_target_distance: float
    prompt_id: str = ""
    target_type: str = ""
    meta: dict = field(default_factory=dict)


def _direction(base: np.ndarray, target: np.ndarray) -> np.ndarray:
    diff = target.astype(np.float64) - base.astype(np.float64)
    norm = np.linalg.norm(diff)
    if norm == 0:
        raise InputError("target equals base: perturbation direction undefined")
    return diff / norm


def perturbed_points(base, target, spec: SweepSpec) -> np.ndarray:
    """All sweep points, shape ``[steps + 1, d_model]`` float32."""
    base = np.asarray(base, dtype=F32)
    target = np.asarray(target, dtype=F32)
    if base.shape != target.shape or base.ndim != 1:
        raise InputError("base and target must be 1-D of equal length")
    if not (np.isfinite(base).all() and np.isfinite(target).all()):
        raise InputError("base and target must be finite")
    n = np.arange(spec.steps + 1, dtype=np.float64)[:, None]
    b = base.astype(np.float64)
    if spec.mode is StepMode.ABSOLUTE:
        pts = b + (spec.step_size * n) * _direction(base, target)
    else:
        frac = n / spec.steps
        pts = (1.0 - frac) * b + frac * target.astype(np.float64)
    return pts.astype(F32)


def perturbed_point(base, target, spec: SweepSpec, n: int) -> np.ndarray:
    if not 0 <= n <= spec.steps:
        raise InputError(f"step {n} outside [0, {spec.steps}]")
    return perturbed_points(base, target, spec)[n]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    m = x.max(axis=-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def _kl_from_log_probs(lp: np.ndarray, lq: np.ndarray) -> np.ndarray:
    return np.maximum((np.exp(lp) * (lp - lq)).sum(axis=-1), 0.0)


def kl_divergence(p_logits: np.ndarray, q_logits: np.ndarray) -> np.ndarray:
    """KL(softmax(p) || softmax(q)) along the last axis, clamped at 0."""
    return _kl_from_log_probs(log_softmax(p_logits), log_softmax(q_logits))


def sweep_points(model: Model, cache: PrefixCache, points: np.ndarray, spec: SweepSpec,
                 kl: bool = False) -> tuple[np.ndarray, np.ndarray | None]:
    """Readout curves for pre-computed sweep points; row 0 is the reference."""
    reads, logits = model.last_position_batch(cache, points, spec.read, logits=kl)
    diff = reads.astype(np.float64) - reads[0].astype(np.float64)
    l2 = np.sqrt((diff * diff).sum(axis=1))
    kl_curve = None
    if kl:
        # reference row taken from the same batch so step 0 is exactly zero
        lq = log_softmax(logits)
        ref = np.broadcast_to(lq[0], lq.shape)
        kl_curve = _kl_from_log_probs(ref, lq) if spec.kl_direction == "forward" else _kl_from_log_probs(lq, ref)
    bad = ~np.isfinite(l2) if kl_curve is None else ~(np.isfinite(l2) & np.isfinite(kl_curve))
    if bad.any():
        raise NumericalError(f"non-finite readout at step {int(np.flatnonzero(bad)[0])}")
    return l2, kl_curve


def run_sweep(model: Model, prompt, base, target, spec: SweepSpec, kl: bool = False,
              prompt_id: str = "", target_type: str = "", cache: PrefixCache | None = None) -> SweepCurve:
    """Sweep from ``base`` toward ``target`` on ``prompt``.

    The reference readout is the step-0 patch (``base`` itself), which is
    the unpatched run whenever ``base`` was captured at the probe on this
    prompt. ``cache`` lets several sweeps share one prompt prefix.
    """
    if cache is None:
        cache = model.prefix_cache(prompt, spec.probe)
    points = perturbed_points(base, target, spec)
    if (points == points[0]).all():
        # every patch identical; skip BLAS so row-blocking cannot leak in ulps
        n = spec.steps + 1
        return SweepCurve(np.zeros(n), np.zeros(n) if kl else None, 0.0, prompt_id, target_type)
    l2, kl_curve = sweep_points(model, cache, points, spec, kl)
    dist = float(np.linalg.norm(np.asarray(target, np.float64) - np.asarray(base, np.float64)))
    return SweepCurve(l2, kl_curve, dist, prompt_id, target_type)


def plateau_sweep(model: Model, prompt, start, random_target, spec: SweepSpec, kl: bool = False,
                  prompt_id: str = "", target_type: str = "", cache: PrefixCache | None = None) -> SweepCurve:
    """Sweep from an arbitrary (possibly synthetic) start toward a random point.

    ``start`` is installed by patching the probe at step 0, so distances
    are measured from the start-patched run. When ``start`` equals the
    target the curve is identically zero.
    """
    start = np.asarray(start, dtype=F32)
    random_target = np.asarray(random_target, dtype=F32)
    if np.array_equal(start, random_target):
        spec = SweepSpec(StepMode.RELATIVE, spec.steps, spec.step_size, spec.probe, spec.read, spec.kl_direction)
    return run_sweep(model, prompt, start, random_target, spec, kl, prompt_id, target_type, cache)
