import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scatterkit import segment, smith
from scatterkit.segment import HyperExp, SegmentTerm, SingularConfiguration


def test_segterm_examples():
    assert SegmentTerm(0.0).add_bounce(-1.0).value() == 1.0
    assert SegmentTerm(0.5).add_bounce(-1.5).value() == 0.5
    st0 = segment.segterm_new(0.3)
    assert st0.n == 0 and st0.m == 1.0


def test_segterm_errors():
    with pytest.raises(ValueError):
        SegmentTerm(0.2).add_bounce(0.0)
    with pytest.raises(ValueError):
        SegmentTerm(0.2).add_bounce(0.4)
    with pytest.raises(ValueError):
        SegmentTerm(-0.1)


def test_two_bounce_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(100):
        l0, l1 = rng.uniform(1, 5, 2)
        l2 = rng.uniform(0, 4)
        ref = 1 / ((l0 + l2) * (l1 + l2))
        assert segment.segterm_recursive_lambdas([-l0, -l1, l2]) == pytest.approx(ref, rel=1e-14)
        assert segment.segterm_dp([-l0, -l1, l2]) == pytest.approx(ref, rel=1e-14)


def test_recursion_from_directions():
    path, r = segment.random_path(4, np.random.default_rng(2))
    lam = smith.lam(path, r)
    assert segment.segterm_recursive(path, r) == segment.segterm_recursive_lambdas(lam)
    bad = path.copy()
    bad[-1, 2] *= -1
    assert segment.segterm_recursive(bad, r) == 0.0


@pytest.mark.parametrize("k", range(1, 9))
def test_dp_matches_recursion(k):
    rng = np.random.default_rng(100 + k)
    for _ in range(400):
        lam = segment.random_lambdas(k, rng)
        rec = segment.segterm_recursive_lambdas(lam)
        dp = segment.segterm_dp(lam)
        assert rec > 0
        assert abs(dp - rec) / rec < 1e-12


@given(st.lists(st.floats(1.0, 8.0), min_size=1, max_size=7),
       st.lists(st.floats(1e-3, 5.0), min_size=1, max_size=7))
@settings(max_examples=300, deadline=None)
def test_dp_matches_recursion_property(down, up):
    lam = [-v for v in down] + up
    rec = segment.segterm_recursive_lambdas(lam)
    assert segment.segterm_dp(lam) == pytest.approx(rec, rel=1e-12)


def test_unreachable_patterns_diverge():
    # An upward direction followed by a downward one cannot occur under
    # reflection. There the recursion vanishes, the DP ignores the later
    # downward bounce and only the height distribution stays physical.
    lam = [-1.5, 0.7, -2.0, 0.3]
    assert not segment.reachable(lam)
    assert segment.segterm_recursive_lambdas(lam) == 0.0
    dp = segment.segterm_dp(lam)
    assert dp == pytest.approx(1 / ((0.3 + 1.5) * (0.7 + 1.5)), rel=1e-14)
    exact = 1 / ((2.0 + 0.3) * (1.5 + 0.7) * (1.5 + 0.3))
    assert segment.pexit_lambdas(lam) / (1.5 * 0.7 * 2.0) == pytest.approx(exact, rel=1e-12)


def test_reflection_keeps_upward_rays_upward():
    rng = np.random.default_rng(4)
    r = smith.Roughness(1.3)
    d = smith.direction(rng.uniform(0, 1.55, 2000), rng.uniform(0, 6.3, 2000))
    h = smith.sample_vndf(d, r, rng.random(2000), rng.random(2000))
    out = d - 2 * np.sum(d * h, axis=1, keepdims=True) * h
    assert np.all(out[:, 2] >= d[:, 2] - 1e-12)


def test_hyperexp_examples():
    h = HyperExp().add_bounce(-1.7)
    assert h.pexit(0.4) == pytest.approx(1.7 / (1.7 + 0.4), rel=1e-15)
    l0, l1, l2 = 1.3, 2.9, 0.6
    h = HyperExp().add_bounce(-l0).add_bounce(-l1)
    assert h.pexit(l2) == pytest.approx(l0 * l1 / ((l2 + l0) * (l2 + l1)), rel=1e-13)


def test_hyperexp_singular():
    h = HyperExp().add_bounce(-1.5)
    with pytest.raises(SingularConfiguration):
        h.add_bounce(-1.5 - 1e-8)
    rep = segment.equivalence_lambdas([-1.5, -1.5, 0.3])
    assert rep["singular"] and rep["reason"]


@pytest.mark.parametrize("k", [2, 3])
def test_equivalence_proved_cases(k):
    rng = np.random.default_rng(k)
    done = 0
    while done < 1000:
        path, r = segment.random_path(k, rng)
        rep = segment.equivalence_check(path, r)
        if rep["singular"]:
            continue
        assert rep["rel_err"] < 1e-9
        done += 1


@pytest.mark.parametrize("k", range(4, 9))
def test_equivalence_higher_orders_measured(k):
    rng = np.random.default_rng(40 + k)
    errs = []
    for _ in range(300):
        rep = segment.equivalence_lambdas(segment.random_lambdas(k, rng))
        if not rep["singular"]:
            errs.append(rep["rel_err"])
    # The hyperexponential sum cancels catastrophically when rates are close,
    # so the agreement is measured with a loose bound here.
    assert np.median(errs) < 1e-9
    assert np.quantile(errs, 0.9) < 1e-6


def test_downward_bounce_decreases_value():
    rng = np.random.default_rng(9)
    for _ in range(200):
        st0 = SegmentTerm(rng.uniform(0, 3))
        prev = 1.0
        for _ in range(rng.integers(1, 8)):
            st0.add_bounce(-rng.uniform(1, 4))
            v = st0.value()
            assert 0 < v < prev
            prev = v


def test_value_bounds():
    rng = np.random.default_rng(10)
    for k in range(1, 9):
        for _ in range(100):
            lam = segment.random_lambdas(k, rng)
            v = segment.segterm_dp(lam)
            assert v > 0
            assert math.prod(abs(x) for x in lam[:-1]) * v <= 1 + 1e-12
            if np.all(lam[:-1] < 0):
                assert v <= 1
    # With upward interior directions the term itself may exceed one.
    assert segment.segterm_recursive_lambdas([-1.0, -1.0, 1e-9, 1e-9]) == pytest.approx(2.0, rel=1e-6)


def test_numba_kernels_agree():
    rng = np.random.default_rng(12)
    lams = np.array([segment.random_lambdas(3, rng) for _ in range(200)])
    vals = segment._final_values(lams)
    for row, (prod_form, pexit) in zip(lams, vals):
        ref = math.prod(abs(v) for v in row[:-1]) * segment.segterm_dp(row)
        assert prod_form == pytest.approx(ref, rel=1e-13)
        if np.isfinite(pexit):
            assert pexit == pytest.approx(segment.pexit_lambdas(list(row)), rel=1e-9)


def test_bench_reports_agreement():
    rep = segment.bench_segterm(8, paths=300, reps=2, seed=1)
    assert rep["segterm_ns"] > 0 and rep["hyperexp_ns"] > 0
    assert rep["median_rel_diff"] < 1e-9
