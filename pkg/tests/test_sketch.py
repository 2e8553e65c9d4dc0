import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_tucker, rel
from tuckersum import memtrack
from tuckersum.kernels import DimensionError, RngSeed
from tuckersum.sketch import (
    SketchPlan,
    Strategy,
    SumRequest,
    _kron_sketch_dims,
    eager_sum,
    effective_subrank,
    kron_sum,
    krp_sum,
    lazy_sum,
    round_sum,
    sum_tucker,
)
from tuckersum.tucker import TuckerTensor, reconstruct

ALL = list(Strategy)


def _instance(rng, dims=(12, 10, 9), ranks=(2, 2, 2), d=5):
    xs = [random_tucker(rng, dims, ranks) for _ in range(d)]
    w = list(rng.standard_normal(d))
    return xs, w, sum(wi * reconstruct(x) for x, wi in zip(xs, w))


@pytest.mark.parametrize("strategy", ALL)
def test_strategies_match_dense_sum(rng, strategy):
    xs, w, dense = _instance(rng)
    y = round_sum(SumRequest(xs, w, 1e-8, 5, strategy, seed=3))
    assert rel(reconstruct(y), dense) < 1e-8
    assert y.ranks == (10, 10, 9)


def test_kron_dims_examples():
    # [DERIVED] C = (prod l)^(1/(N-1)); s_i = ceil(C / l_i)
    assert _kron_sketch_dims((4, 4, 4), (100, 100, 100)) == (2, 2, 2)
    assert _kron_sketch_dims((10, 2, 2), (100, 100, 100)) == (1, 4, 4)
    assert _kron_sketch_dims((5,), (3,)) == (3,)


@given(st.lists(st.integers(1, 30), min_size=2, max_size=5), st.lists(st.integers(1, 40), min_size=5, max_size=5))
def test_kron_dims_feasible(targets, dims):
    dims = dims[: len(targets)]
    s = _kron_sketch_dims(targets, dims)
    for n, l in enumerate(targets):
        width = np.prod([s[j] for j in range(len(s)) if j != n])
        cap = np.prod([dims[j] for j in range(len(s)) if j != n])
        assert width >= min(l, cap)
    assert all(1 <= si <= di for si, di in zip(s, dims))


def test_effective_subrank_recovers_latent_rank(rng):
    q = [np.linalg.qr(rng.standard_normal((30, 4)))[0] for _ in range(3)]
    xs = [TuckerTensor(np.ones((1, 1, 1)), [qk @ rng.standard_normal((4, 1)) for qk in q]) for _ in range(12)]
    # the Gram matrix squares singular values, so eigenvalue roundoff near 1e-16 of the
    # trace limits how small a tolerance can still resolve the latent rank
    plan = effective_subrank(xs, None, 1e-6, (1, 2, 3))
    assert plan.effective_ranks == (4, 4, 4)
    assert plan.targets == (5, 6, 7)
    assert plan.krp_dim == 7
    assert plan.is_feasible((30, 30, 30))
    assert "mode 2" in plan.report()
    with pytest.raises(DimensionError):
        effective_subrank(xs, None, 1e-8, (1, 2))


def test_effective_subrank_ignores_tiny_energy(rng):
    big = random_tucker(rng, (20, 20, 20), (2, 2, 2))
    tiny = random_tucker(rng, (20, 20, 20), (3, 3, 3)).scaled(1e-12)
    plan = effective_subrank([big, tiny], None, 1e-6, 0)
    assert plan.effective_ranks == (2, 2, 2)


def test_zero_weights_dropped(rng):
    xs, _, _ = _instance(rng, d=3)
    y = krp_sum(xs, [1.0, 0.0, 0.0], 1e-10, 2, seed=0)
    assert rel(reconstruct(y), reconstruct(xs[0])) < 1e-10
    assert y.ranks == xs[0].ranks


def test_cancellation_to_exact_zero_is_finite(rng):
    x = random_tucker(rng, (6, 5, 4), (2, 2, 2))
    for fn in (krp_sum, kron_sum):
        y = fn([x, x], [1.0, -1.0], 1e-6, 2, seed=0)
        assert np.all(np.isfinite(reconstruct(y)))
        assert np.linalg.norm(reconstruct(y)) < 1e-12


@pytest.mark.parametrize("fn", [krp_sum, kron_sum])
def test_sketch_sums_deterministic(rng, fn):
    xs, w, _ = _instance(rng)
    a = reconstruct(fn(xs, w, 1e-6, 2, seed=RngSeed(4, (1,))))
    b = reconstruct(fn(xs, w, 1e-6, 2, seed=RngSeed(4, (1,))))
    np.testing.assert_array_equal(a, b)


def test_plan_with_seed_replaces_stream(rng):
    xs, w, _ = _instance(rng)
    plan = effective_subrank(xs, w, 1e-6, 2, seed=0)
    p2 = plan.with_seed(RngSeed(9))
    assert p2.seed == RngSeed(9) and p2.targets == plan.targets
    assert isinstance(plan, SketchPlan)


def test_eager_rank_trace_and_midpoint_swell(rng):
    xs, w, dense = _instance(rng, d=4)
    trace = []
    y = eager_sum(xs, w, 1e-10, rank_trace=trace)
    assert len(trace) == 3
    assert trace[0] == (4, 4, 4)
    assert rel(reconstruct(y), dense) < 1e-9


def test_lazy_and_eager_single_summand(rng):
    x = random_tucker(rng, (5, 4, 3), (2, 2, 2))
    for fn in (lazy_sum, eager_sum):
        assert rel(reconstruct(fn([x], [2.0], 1e-12)), 2 * reconstruct(x)) < 1e-12
        with pytest.raises(ValueError):
            fn([], None, 1e-6)


def test_sum_tucker_shortcut(rng):
    xs, w, dense = _instance(rng)
    y = sum_tucker(xs, w, 1e-8, "kron", oversampling=5, seed=1)
    assert rel(reconstruct(y), dense) < 1e-8


def test_memory_counters_independent_of_count(rng):
    q = [np.linalg.qr(rng.standard_normal((60, 5)))[0] for _ in range(3)]
    pool = [TuckerTensor(rng.standard_normal((2, 2, 2)), [qk @ rng.standard_normal((5, 2)) for qk in q]) for _ in range(30)]
    plan = effective_subrank(pool, None, 1e-8, 2)
    for fn in (krp_sum, kron_sum):
        peaks = []
        for d in (5, 30):
            with memtrack.track_core_allocations() as t:
                fn(pool[:d], None, 1e-8, plan=plan)
            peaks.append(t.peak)
            assert t.peak_for("rounding-phase1") == 0
        assert peaks[0] == peaks[1]
    with memtrack.track_core_allocations() as t:
        lazy_sum(pool[:20], None, 1e-8)
    assert t.peak_for("rounding-phase1") == 40**3


def test_memtrack_inactive_is_noop():
    memtrack.record("x", (3, 3))
    with memtrack.track_core_allocations() as outer:
        with memtrack.track_core_allocations() as inner:
            memtrack.record("a", (2, 5))
        memtrack.record("b", (4,))
    assert inner.events == [("a", 10)]
    assert outer.events == [("a", 10), ("b", 4)]
    assert outer.peak == 10


def test_mismatched_inputs(rng):
    x = random_tucker(rng, (3, 4), (1, 1))
    y = random_tucker(rng, (3, 5), (1, 1))
    with pytest.raises(DimensionError):
        krp_sum([x, y])
    with pytest.raises(DimensionError):
        krp_sum([x], [1.0, 2.0])
    with pytest.raises(ValueError):
        round_sum(SumRequest([x], strategy="nope"))
