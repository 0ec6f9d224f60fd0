import math

import numpy as np
import pytest

from scatterkit import masking, smith, specfun
from scatterkit.masking import masking_lambdas

from oracles import height_masking

# fixed magnitudes for downward directions and Λ values for upward ones
L0, L1, L2, L3 = 1.7, 2.3, 1.4, 3.1
U1, U2, U3 = 0.6, 0.35, 0.8


def path(kind, s1, s2=None):
    lam = [-L0, -L1 if s1 < 0 else U1]
    if s2 is not None:
        lam.append(-L2 if s2 < 0 else U2)
        lam.append(U3 if masking.exit_side(kind) == "out" else -L3)
    else:
        lam.append(U2 if masking.exit_side(kind) == "out" else -L2)
    return lam


BRANCHES = [(k, s1, None) for k in ("tr", "rt", "tt") for s1 in (-1, 1)]
BRANCHES += [(k, s1, s2) for k in ("trr", "rtr", "ttr", "trt", "ttt") for s1 in (-1, 1) for s2 in (-1, 1)]


@pytest.mark.parametrize("kind,s1,s2", BRANCHES)
def test_branch_matches_height_integral(kind, s1, s2):
    lam = path(kind, s1, s2)
    res = masking_lambdas(kind, lam)
    assert res.branch == "".join("D" if v < 0 else "U" for v in lam[1:-1])
    ref = height_masking(kind.upper(), lam, epsrel=1e-10)
    assert res.value == pytest.approx(ref, rel=1e-8)


def test_substitution_examples():
    res = masking_lambdas("tr", [-L0, 0.0, -L2])
    assert res.value == pytest.approx(specfun.beta(L2, L0) / L2, rel=1e-14)
    res = masking_lambdas("trr", [-L0, 0.0, 0.0, -L3])
    assert res.value == pytest.approx(specfun.beta(L3, L0) / L3 ** 2, rel=1e-14)


def test_rtr_expression_tree():
    # the up/up branch coded a second time from its printed form
    lam = [-2.2, 0.4, 0.9, -1.3]
    a0, a3 = 2.2, 1.3
    ref = math.gamma(a3) * math.gamma(a0) / math.gamma(a3 + a0) / ((a3 + 0.9) * (a0 + 0.4))
    assert masking_lambdas("rtr", lam).value == pytest.approx(ref, rel=1e-14)


def test_ttt_mixed_branch_forms():
    # Where its pieces converge, the printed d1-down/d2-up expression
    # B(|Λ0|,-Λ1) B²(Λ1+1,|Λ3|;Λ2+1,-Λ2) - B³(-Λ1,Λ1+1,|Λ3|;|Λ0|,Λ2+1,-Λ2)
    # agrees with the split form.
    l0, l1, l2, l3 = -L0, -L1, U2, -L3
    printed = (specfun.beta(L0, -l1) * specfun.gen_beta([l1 + 1, L3], [l2 + 1, -l2])
               - specfun.gen_beta([-l1, l1 + 1, L3], [L0, l2 + 1, -l2]))
    assert masking_lambdas("ttt", [l0, l1, l2, l3]).value == pytest.approx(printed, rel=1e-6)
    # With |Λ1| > |Λ3| + 1 the B² piece leaves the convergence domain while
    # the split form stays finite.
    with pytest.raises(ValueError):
        specfun.gen_beta([-4.5 + 1, 1.2], [U2 + 1, -U2])
    lam = [-L0, -4.5, U2, -1.2]
    v = masking_lambdas("ttt", lam).value
    assert v == pytest.approx(height_masking("TTT", lam, epsrel=1e-10), rel=1e-8)
    # The printed d1-up/d2-down form needs B(|Λ0|, -Λ1) with -Λ1 < 0.
    with pytest.raises(ValueError):
        specfun.beta(L0, -U1)


def test_tt_symmetry_consistency():
    lam = [-L0, -L1, U2]
    direct = masking_lambdas("tt", lam).value
    mirrored = specfun.gen_beta([1 - L1, L1], [U2 + 1, L0])
    assert direct == pytest.approx(mirrored, rel=1e-6)


def test_tt_horizon_probe():
    r = smith.Roughness(0.5)
    d0, d2 = smith.direction(2.6), smith.direction(0.7)
    vals = []
    for z in (-1e-3, 1e-3):
        d1 = np.array([math.sqrt(1 - z * z), 0.0, z])
        vals.append(masking.s_tt(d0, d1, d2, r))
    assert all(np.isfinite(vals)) and min(vals) >= 0
    print(f"TT across the horizon: below {vals[0]:.6g}, above {vals[1]:.6g}")


LIMIT_CASES = [
    ("tr", [-L0, -L1, -L1]),
    ("rt", [-L0, -L0, -L2]),
    ("trr", [-L0, -L1, -L1, -L1]),
    ("trr", [-L0, -L1, -L1, -L3]),
    ("trr", [-L0, U1, -L2, -L2]),
    ("trr", [-L0, -L1, U2, -L1]),
    ("rtr", [-L0, -L0, -L2, -L2]),
    ("rtr", [-L0, -L0, U2, -L3]),
    ("rtr", [-L0, U1, -L2, -L2]),
    ("ttr", [-L0, -L1, U2, U2]),
    ("ttr", [-L0, U1, U3, U3]),
    ("trt", [-L0, -L1, -L1, U3]),
    ("trt", [-L0, U1, U1, U3]),
]


@pytest.mark.parametrize("kind,lam", LIMIT_CASES)
def test_confluent_limits(kind, lam):
    res = masking_lambdas(kind, lam)
    assert res.limit and res.method.endswith("+limit")
    ref = height_masking(kind.upper(), lam, epsrel=1e-10)
    assert res.value == pytest.approx(ref, rel=1e-4)
    # approaching the coincidence through the direct difference quotient
    bumped = list(lam)
    bumped[-1] = lam[-1] * (1 + 3e-3) if kind not in ("rt",) else lam[-1]
    if kind == "rt":
        bumped[1] = lam[1] * (1 + 3e-3)
    near = masking_lambdas(kind, bumped)
    assert np.isfinite(near.value) and near.value > 0


def test_tr_limit_is_beta_derivative():
    a = 2.3
    h = 1e-5
    fd = (specfun.beta(a + h, L0) - specfun.beta(a - h, L0)) / (2 * h)
    assert masking_lambdas("tr", [-L0, -a, -a]).value == pytest.approx(-fd, rel=1e-4)
    for eps in (1e-3, 1e-5, 1e-7, 1e-10):
        v = masking_lambdas("tr", [-L0, -a, -a - eps]).value
        assert v == pytest.approx(-fd, rel=2e-3)


def test_limit_is_continuous_across_switch():
    # the value just inside the switch matches the linear extrapolation of
    # two direct evaluations just outside it
    tol = masking.CONFLUENT_TOL
    for kind, scale, build in [("tr", 2.0, lambda e: [-L0, -2.0, -2.0 - e]),
                               ("ttr", 1.0, lambda e: [-L0, -L1, U2, U2 + e])]:
        f = lambda c: masking_lambdas(kind, build(c * tol * scale)).value
        inside = f(0.99)
        assert masking_lambdas(kind, build(0.99 * tol * scale)).limit
        extrap = 2 * f(1.01) - f(1.03)
        assert inside == pytest.approx(extrap, rel=1e-7)


@pytest.mark.parametrize("kind", masking.KINDS)
def test_random_configs_finite_nonnegative(kind):
    rng = np.random.default_rng(hash(kind) % 2 ** 32)
    for _ in range(20):
        res = masking_lambdas(kind, masking.random_lambdas(kind, rng))
        assert np.isfinite(res.value) and res.value >= 0


@pytest.mark.parametrize("kind", ["tt", "ttr", "trt", "ttt"])
def test_quadrature_backend_agrees(kind):
    rng = np.random.default_rng(5)
    for _ in range(5):
        lam = masking.random_lambdas(kind, rng)
        a = masking_lambdas(kind, lam)
        q = masking_lambdas(kind, lam, backend="quadrature")
        assert q.value == pytest.approx(a.value, rel=1e-6)


def test_spot_check_mode():
    res = masking_lambdas("ttr", [-L0, -L1, U2, U3], spot_check=True)
    assert res.oracle_rel_err < 1e-6


def test_direction_api():
    r = smith.Roughness(0.6, 0.9)
    d = [smith.direction(2.7, 0.2), smith.direction(2.0, 1.1), smith.direction(2.4, 0.6)]
    lam = smith.lam(np.array(d), r)
    assert masking.s_tr(*d, r) == masking_lambdas("tr", lam).value
    d3 = d + [smith.direction(0.4, 2.0)]
    lam3 = smith.lam(np.array(d3), r)
    assert masking.s_ttr(*d3, r) == masking_lambdas("ttr", lam3).value


def test_validation():
    with pytest.raises(ValueError):
        masking_lambdas("tr", [-L0, -L1, U2])  # must leave below the surface
    with pytest.raises(ValueError):
        masking_lambdas("tt", [-L0, -L1, -L2])
    with pytest.raises(ValueError):
        masking_lambdas("tr", [0.4, -L1, -L2])
    with pytest.raises(ValueError):
        masking_lambdas("tr", [-L0, -0.5, -L2])
    with pytest.raises(ValueError):
        masking_lambdas("trr", [-L0, -L1, -L2])
    with pytest.raises(ValueError):
        masking_lambdas("xyz", [-L0, -L1, -L2])
