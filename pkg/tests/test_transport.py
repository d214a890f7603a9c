"""Matching metrics against brute-force oracles.

emd_exact is checked against enumeration of all n! bijections; emd_approx
against emd_exact. The acceptance module repeats both at full trial
counts and sizes.
"""

import itertools

import numpy as np
import pytest

from lsx import autodiff as ad
from lsx import transport
from lsx.transport import (
    EXACT_LIMIT,
    Matching,
    WarmMatcher,
    batch_matchings,
    chamfer,
    emd_approx,
    emd_exact,
    emd_loss,
)


def emd_factorial(a, b):
    """Try every bijection; the definition, feasible for n <= 8."""
    n = len(a)
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    best = np.inf
    for perm in itertools.permutations(range(n)):
        c = sum(d[i, perm[i]] for i in range(n))
        if c < best:
            best = c
    return best


def test_emd_exact_matches_factorial_enumeration():
    for trial in range(40):
        rng = np.random.default_rng(trial)
        n = int(rng.integers(1, 9))
        dim = int(rng.integers(2, 4))
        a = rng.random((n, dim))
        b = rng.random((n, dim))
        m = emd_exact(a, b)
        m.validate(n)
        assert abs(m.cost - emd_factorial(a, b)) < 1e-9


def test_emd_exact_cost_equals_permutation_sum():
    rng = np.random.default_rng(5)
    a, b = rng.random((30, 2)), rng.random((30, 2))
    m = emd_exact(a, b)
    recomputed = np.sqrt(((a - b[m.permutation]) ** 2).sum(axis=1)).sum()
    assert m.cost == pytest.approx(recomputed, rel=1e-12)


def test_emd_approx_within_one_percent_of_exact():
    worst = 0.0
    for trial in range(30):
        rng = np.random.default_rng(100 + trial)
        n = [32, 64][trial % 2]
        a = rng.random((n, 2))
        b = rng.random((n, 2))
        exact = emd_exact(a, b).cost
        approx = emd_approx(a, b)
        approx.validate(n)
        assert approx.cost >= exact - 1e-9
        worst = max(worst, (approx.cost - exact) / exact)
    assert worst < 0.01


def test_identical_clouds_cost_exactly_zero():
    rng = np.random.default_rng(8)
    a = rng.random((64, 2))
    assert emd_approx(a, a.copy()).cost == 0.0
    perm = rng.permutation(64)
    m = emd_approx(a, a[perm])
    assert m.cost == 0.0
    # the matching must invert the shuffle
    np.testing.assert_array_equal(a[perm][m.permutation], a)


def test_duplicate_points_are_handled():
    # several coincident sources and targets exercise the zero-cost pre-pass
    a = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 2.0]])
    b = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [3.0, 2.0]])
    m = emd_approx(a, b)
    m.validate(4)
    assert m.cost == pytest.approx(1.0)


def test_emd_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        emd_approx(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        emd_exact(np.ones((5, 2)), np.ones((5, 3)))


def test_exact_limit_guards_large_instances():
    n = EXACT_LIMIT + 1
    a = np.random.default_rng(0).random((n, 2))
    with pytest.raises(ValueError):
        emd_exact(a, a)


def test_chamfer_matches_quadratic_definition():
    for trial in range(25):
        rng = np.random.default_rng(trial)
        a = rng.random((int(rng.integers(2, 90)), 2))
        b = rng.random((int(rng.integers(2, 90)), 2))
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        want = d2.min(axis=1).mean() + d2.min(axis=0).mean()
        assert chamfer(a, b) == pytest.approx(want, rel=1e-12)
    assert chamfer(a, a) == 0.0


def test_matching_validate_catches_bad_permutations():
    with pytest.raises(ValueError):
        Matching(np.array([0, 0, 2]), 1.0).validate(3)
    with pytest.raises(ValueError):
        Matching(np.array([0, 1, 2]), -0.5).validate(3)


def test_emd_loss_value_is_mean_matched_distance():
    rng = np.random.default_rng(17)
    pred = rng.random((24, 2))
    gt = rng.random((24, 2))
    loss = emd_loss(ad.param(pred), gt, matcher=emd_exact)
    assert loss.item() == pytest.approx(emd_exact(pred, gt).cost / 24, rel=1e-9)


def test_emd_loss_gradient_for_displaced_point():
    """Moving one point off its partner: that point's gradient is the unit
    displacement direction divided by the point count, everything else 0."""
    rng = np.random.default_rng(23)
    gt = rng.random((16, 2))
    pred = gt.copy()
    shift = np.array([0.03, -0.04])  # length 0.05, small enough to keep pairing
    pred[5] += shift
    v = ad.param(pred)
    loss = emd_loss(v, gt, matcher=emd_exact)
    g = ad.backward(loss, wrt=[v])[v].data
    want = np.zeros_like(pred)
    want[5] = shift / np.linalg.norm(shift) / 16
    np.testing.assert_allclose(g, want, atol=1e-9)


def test_emd_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(29)
    gt = rng.random((10, 2))
    pred0 = rng.random((10, 2))

    def f(x):
        return emd_loss(ad.param(x), gt, matcher=emd_exact).item()

    v = ad.param(pred0.copy())
    loss = emd_loss(v, gt, matcher=emd_exact)
    got = ad.backward(loss, wrt=[v])[v].data
    fd = ad.finite_difference(f, pred0)
    np.testing.assert_allclose(got, fd, rtol=1e-5, atol=1e-8)


def test_emd_loss_batched_matches_singletons():
    rng = np.random.default_rng(31)
    preds = rng.random((3, 12, 2))
    gts = rng.random((3, 12, 2))
    batched = emd_loss(ad.param(preds), gts, matcher=emd_exact).item()
    singles = [emd_loss(ad.param(p), g, matcher=emd_exact).item() for p, g in zip(preds, gts)]
    assert batched == pytest.approx(np.mean(singles), rel=1e-12)


def test_warm_matcher_stays_within_optimality_bound():
    rng = np.random.default_rng(41)
    matcher = WarmMatcher(eps_min=5e-4)
    gt = rng.random((64, 2))
    for step in range(6):
        pred = gt + 0.02 * rng.standard_normal((64, 2))
        m = matcher(pred, gt)
        m.validate(64)
        exact = emd_exact(pred, gt).cost
        assert m.cost <= exact + 64 * 5e-4 + 1e-9


def test_warm_matcher_clear_resets_cache():
    rng = np.random.default_rng(43)
    matcher = WarmMatcher()
    gt = rng.random((16, 2))
    matcher(rng.random((16, 2)), gt)
    assert len(matcher._prices) == 1
    matcher.clear()
    assert len(matcher._prices) == 0


def test_warm_matcher_is_deterministic_given_call_sequence():
    rng = np.random.default_rng(47)
    gt = rng.random((32, 2))
    preds = rng.random((4, 32, 2))

    def run():
        matcher = WarmMatcher()
        return [matcher(p, gt) for p in preds]

    first, second = run(), run()
    for m1, m2 in zip(first, second):
        np.testing.assert_array_equal(m1.permutation, m2.permutation)
        assert m1.cost == m2.cost


def test_batch_matchings_ignores_thread_setting(monkeypatch):
    rng = np.random.default_rng(53)
    preds = rng.random((6, 20, 2))
    gts = rng.random((6, 20, 2))
    monkeypatch.setenv("LSX_THREADS", "1")
    serial = batch_matchings(preds, gts)
    monkeypatch.setenv("LSX_THREADS", "4")
    threaded = batch_matchings(preds, gts)
    for m1, m2 in zip(serial, threaded):
        np.testing.assert_array_equal(m1.permutation, m2.permutation)
        assert m1.cost == m2.cost


def test_batch_matchings_keeps_stateful_matcher_serial(monkeypatch):
    # a WarmMatcher must see calls in index order even when threads are on
    monkeypatch.setenv("LSX_THREADS", "8")
    rng = np.random.default_rng(59)
    gt = rng.random((16, 2))
    preds = rng.random((5, 16, 2))
    gts = np.broadcast_to(gt, (5, 16, 2)).copy()
    matcher = WarmMatcher()
    got = batch_matchings(preds, gts, matcher)
    fresh = WarmMatcher()
    want = [fresh(p, gt) for p in preds]
    for m1, m2 in zip(got, want):
        np.testing.assert_array_equal(m1.permutation, m2.permutation)


def test_transport_error_is_raised_on_tiny_budget():
    rng = np.random.default_rng(61)
    a, b = rng.random((40, 2)), rng.random((40, 2))
    with pytest.raises(transport.TransportError):
        # force the auction into an impossible bid budget via max_bids path
        from lsx import kernels

        cost = np.sqrt(((a[:, None] - b[None]) ** 2).sum(axis=2))
        kernels.auction(np.ascontiguousarray(cost), 1.0, 1e-9, 1.01, 5)
