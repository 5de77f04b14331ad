import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import PROBE, READ
from saesense.errors import InputError, NumericalError
from saesense.model import PatchSpec
from saesense.perturb import (StepMode, SweepSpec, kl_divergence, log_softmax, perturbed_point, perturbed_points,
                              plateau_sweep, run_sweep, sweep_points)

TOKENS = np.array([3, 17, 42, 5, 9, 60, 1, 33, 8, 21])
ABS = SweepSpec(StepMode.ABSOLUTE, steps=20, step_size=0.25, probe=PROBE, read=READ)
REL = SweepSpec(StepMode.RELATIVE, steps=20, probe=PROBE, read=READ)

vec = arrays(np.float32, 16, elements=st.floats(-50, 50, width=32))


def test_spec_validation():
    with pytest.raises(InputError):
        SweepSpec(steps=0)
    with pytest.raises(InputError):
        SweepSpec(step_size=0.0)
    with pytest.raises(InputError):
        SweepSpec(kl_direction="sideways")
    assert SweepSpec(StepMode.RELATIVE, step_size=0.0).step_size == 0.0


@settings(max_examples=200, deadline=None)
@given(vec, vec)
def test_endpoints(base, target):
    for spec in (ABS, REL):
        if spec is ABS and np.array_equal(base, target):
            continue
        assert np.array_equal(perturbed_point(base, target, spec, 0), base)
    assert np.array_equal(perturbed_point(base, target, REL, REL.steps), target)


def test_absolute_reaches_target_at_distance():
    rng = np.random.default_rng(0)
    base = rng.standard_normal(768).astype(np.float32)
    d = rng.standard_normal(768)
    target = (base + 40 * d / np.linalg.norm(d)).astype(np.float32)
    spec = SweepSpec(steps=100, step_size=0.5)
    p = perturbed_point(base, target, spec, 80)
    dist = np.linalg.norm(target.astype(np.float64) - base)
    assert np.linalg.norm(p.astype(np.float64) - base) == pytest.approx(40.0, rel=1e-5)
    assert np.linalg.norm(p.astype(np.float64) - target) / dist <= 1e-5


def test_absolute_geometry():
    rng = np.random.default_rng(1)
    base, target = rng.standard_normal((2, 16)).astype(np.float32)
    pts = perturbed_points(base, target, ABS).astype(np.float64)
    dist = np.linalg.norm(pts - base, axis=1)
    np.testing.assert_allclose(dist, 0.25 * np.arange(21), rtol=1e-5, atol=1e-5)
    d = (target - base.astype(np.float64))
    cos = (pts[1:] - base) @ d / (dist[1:] * np.linalg.norm(d))
    assert np.all(cos > 1 - 1e-6)


def test_absolute_zero_direction():
    with pytest.raises(InputError):
        perturbed_points(np.ones(4), np.ones(4), ABS)
    with pytest.raises(InputError):
        perturbed_point(np.zeros(4), np.ones(4), ABS, 21)


def test_log_softmax_and_kl():
    x = np.array([1000.0, 0.0, -1000.0])
    assert np.isfinite(log_softmax(x)).all()
    assert kl_divergence(x, x) == 0.0
    p = np.log([0.5, 0.5])
    q = np.log([0.25, 0.75])
    assert kl_divergence(p, q) == pytest.approx(0.5 * np.log(2) + 0.5 * np.log(2 / 3))


def test_sweep_l2_zero_at_start(toy_model):
    clean = toy_model.forward(TOKENS, capture=[PROBE]).captured[PROBE]
    rng = np.random.default_rng(0)
    for _ in range(10):
        target = clean + rng.standard_normal(16).astype(np.float32) * 3
        for spec in (ABS, REL):
            c = run_sweep(toy_model, TOKENS, clean, target, spec, kl=True)
            assert c.l2[0] == 0.0 and c.kl[0] == 0.0
            assert np.all(c.l2 >= 0) and np.all(c.kl >= 0)
            assert len(c.l2) == spec.steps + 1


def test_sweep_matches_full_forward(toy_model):
    clean = toy_model.forward(TOKENS, capture=[READ])
    base = toy_model.forward(TOKENS, capture=[PROBE]).captured[PROBE]
    target = base + np.random.default_rng(2).standard_normal(16).astype(np.float32) * 2
    c = run_sweep(toy_model, TOKENS, base, target, ABS, kl=True)
    for n, p in enumerate(perturbed_points(base, target, ABS)):
        run = toy_model.forward(TOKENS, PatchSpec(PROBE, p), capture=[READ])
        ref = np.linalg.norm(run.captured[READ].astype(np.float64) - clean.captured[READ])
        assert c.l2[n] == pytest.approx(ref, rel=1e-4, abs=1e-5)
        assert c.kl[n] == pytest.approx(kl_divergence(clean.logits, run.logits), rel=1e-3, abs=1e-6)


def test_reverse_kl(toy_model):
    base = toy_model.forward(TOKENS, capture=[PROBE]).captured[PROBE]
    target = base + 3 * np.random.default_rng(5).standard_normal(16).astype(np.float32)
    fwd = run_sweep(toy_model, TOKENS, base, target, REL, kl=True)
    rev = run_sweep(toy_model, TOKENS, base, target,
                    SweepSpec(StepMode.RELATIVE, 20, probe=PROBE, read=READ, kl_direction="reverse"), kl=True)
    assert np.array_equal(fwd.l2, rev.l2)
    assert not np.allclose(fwd.kl[1:], rev.kl[1:])


def test_target_equals_base(toy_model):
    base = toy_model.forward(TOKENS, capture=[PROBE]).captured[PROBE]
    c = run_sweep(toy_model, TOKENS, base, base.copy(), REL, kl=True)
    assert np.all(c.l2 == 0) and np.all(c.kl == 0)
    c = plateau_sweep(toy_model, TOKENS, base, base.copy(), ABS)
    assert np.all(c.l2 == 0)


def test_sweep_deterministic(toy_model):
    base = toy_model.forward(TOKENS, capture=[PROBE]).captured[PROBE]
    target = base - 3
    a = run_sweep(toy_model, TOKENS, base, target, ABS, kl=True)
    b = run_sweep(toy_model, TOKENS, base, target, ABS, kl=True)
    assert np.array_equal(a.l2, b.l2) and np.array_equal(a.kl, b.kl)


def test_plateau_measures_from_start(toy_model):
    start = np.random.default_rng(4).standard_normal(16).astype(np.float32)
    target = start + 4
    c = plateau_sweep(toy_model, TOKENS, start, target, ABS)
    ref = toy_model.forward(TOKENS, PatchSpec(PROBE, start), capture=[READ]).captured[READ]
    end = toy_model.forward(TOKENS, PatchSpec(PROBE, perturbed_point(start, target, ABS, 20)),
                            capture=[READ]).captured[READ]
    assert c.l2[0] == 0.0
    assert c.l2[-1] == pytest.approx(np.linalg.norm(end.astype(np.float64) - ref), rel=1e-4)


def test_non_finite_inputs_rejected():
    with pytest.raises(InputError):
        perturbed_points(np.array([0.0, np.inf]), np.zeros(2), REL)


class _Overflowing:
    """Stands in for a model whose readout overflows from step 3 on."""

    def last_position_batch(self, cache, values, read, logits=False):
        reads = np.zeros((len(values), 4), np.float32)
        reads[3:] = np.inf
        return reads, (np.zeros((len(values), 5)) if logits else None)


def test_non_finite_readout_aborts():
    with pytest.raises(NumericalError, match="step 3"):
        sweep_points(_Overflowing(), None, np.zeros((21, 4), np.float32), REL)
