import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from scatterkit import smith
from scatterkit.smith import Fresnel, Roughness, direction

# (sqrt(2) - 1) / 2, confirmed against the slope-space integral below.
LAMBDA_A1_45 = 0.20710678118654752


def test_lambda_examples():
    r = Roughness(0.7)
    assert smith.lam([0, 0, 1], r) == 0.0
    assert smith.lam([0, 0, -1], r) == -1.0
    assert smith.lam(direction(math.pi / 4), Roughness(1.0)) == pytest.approx(LAMBDA_A1_45, rel=1e-14)


def test_lambda_matches_slope_integral():
    rng = np.random.default_rng(11)
    for _ in range(100):
        r = Roughness(rng.uniform(0.05, 2.0), rng.uniform(0.05, 2.0))
        d = direction(rng.uniform(0.01, 1.5), rng.uniform(0, 2 * np.pi))
        ref = smith.slope_lambda(d, r)
        assert smith.lam(d, r) == pytest.approx(ref, rel=1e-6, abs=1e-12)


@given(st.floats(0.01, 3.0), st.floats(0.01, 3.0), st.floats(-1.0, 1.0), st.floats(0, 2 * np.pi))
@settings(max_examples=200, deadline=None)
def test_lambda_identity(ax, ay, z, phi):
    if abs(z) < 1e-6:
        z = 1e-6
    s = math.sqrt(1 - z * z)
    d = np.array([s * math.cos(phi), s * math.sin(phi), z])
    r = Roughness(ax, ay)
    a, b = smith.lam(d, r), smith.lam(-d, r)
    assert a + b == pytest.approx(-1.0, abs=1e-12 * max(1.0, abs(a)))
    if z > 0:
        assert a >= 0 and b <= -1


def test_lambda_grazing_is_finite():
    r = Roughness(1.0)
    v = smith.lam([1.0, 0.0, 0.0], r)
    assert np.isfinite(v) and v > 1e6


def test_g1_examples():
    assert smith.g1([0, 0, 1], Roughness(0.5)) == 1.0
    assert smith.g1(direction(math.pi / 4), Roughness(1.0)) == pytest.approx(1 / (1 + LAMBDA_A1_45), rel=1e-14)
    assert smith.g1(direction(1.2), Roughness(1e-9)) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        smith.g1([0, 0, -1], Roughness(0.5))


def test_g1_monotone():
    th = np.linspace(0, 1.55, 200)
    for a in (0.1, 0.5, 1.5):
        g = smith.g1(direction(th), Roughness(a))
        assert np.all(np.diff(g) <= 1e-15)
        assert np.all((g > 0) & (g <= 1))
    alphas = np.linspace(0.05, 3, 50)
    g = [smith.g1(direction(1.0), Roughness(a)) for a in alphas]
    assert np.all(np.diff(g) < 0)


@pytest.mark.parametrize("ax,ay", [(0.3, 0.3), (1.0, 1.0), (0.2, 0.9)])
def test_ndf_normalization(ax, ay):
    r = Roughness(ax, ay)

    def integrand(ct, phi):
        s = math.sqrt(1 - ct * ct)
        return float(smith.ndf([s * math.cos(phi), s * math.sin(phi), ct], r)) * ct

    val, _ = integrate.dblquad(integrand, 0, 2 * np.pi, 0, 1, epsabs=1e-9, epsrel=1e-9)
    assert val == pytest.approx(1.0, rel=5e-3)


def _bin_probabilities(view, r, n_ct, n_phi, order=10):
    """Gauss-Legendre integral of the visible normal density over (cos, phi) bins."""
    x, w = np.polynomial.legendre.leggauss(order)
    ct_edges = np.linspace(0, 1, n_ct + 1)
    ph_edges = np.linspace(0, 2 * np.pi, n_phi + 1)
    ct = (ct_edges[:-1, None] + (x[None, :] + 1) / 2 * np.diff(ct_edges)[:, None])
    ph = (ph_edges[:-1, None] + (x[None, :] + 1) / 2 * np.diff(ph_edges)[:, None])
    C = ct[:, None, :, None]
    P = ph[None, :, None, :]
    C, P = np.broadcast_arrays(C, P)
    s = np.sqrt(1 - C ** 2)
    h = np.stack([s * np.cos(P), s * np.sin(P), C], axis=-1)
    dens = smith.vndf(np.broadcast_to(view, h.shape), h, r)
    ww = w[:, None] * w[None, :] / 4 * (1.0 / n_ct) * (2 * np.pi / n_phi)
    return (dens * ww).sum(axis=(2, 3))


def _histogram(h, n_ct, n_phi):
    phi = np.mod(np.arctan2(h[:, 1], h[:, 0]), 2 * np.pi)
    hist, _, _ = np.histogram2d(h[:, 2], phi, bins=[n_ct, n_phi], range=[[0, 1], [0, 2 * np.pi]])
    return hist


def test_sample_vndf_histogram_l1():
    r = Roughness(0.5)
    view = direction(math.radians(40))
    n = 10_000_000
    u = np.random.default_rng(5).random((n, 2))
    h = smith.sample_vndf(-view, r, u[:, 0], u[:, 1])
    assert np.all(h[:, 2] > 0)
    expected = _bin_probabilities(view, r, 64, 64)
    assert expected.sum() == pytest.approx(1.0, abs=2e-3)
    hist = _histogram(h, 64, 64) / n
    assert np.abs(hist - expected).sum() < 0.02


def test_sample_vndf_chi_square():
    r = Roughness(0.5)
    view = direction(math.radians(55), 0.4)
    n = 1_000_000
    u = np.random.default_rng(6).random((n, 2))
    h = smith.sample_vndf(-view, r, u[:, 0], u[:, 1])
    expected = _bin_probabilities(view, r, 16, 16, order=16).ravel()
    expected /= expected.sum()
    observed = _histogram(h, 16, 16).ravel()
    keep = expected * n > 20
    obs, exp = observed[keep], expected[keep] * n
    exp *= obs.sum() / exp.sum()
    _, p = stats.chisquare(obs, exp)
    assert p > 0.01


def test_sample_vndf_mean_cosine():
    r = Roughness(1.0)
    view = direction(math.radians(60))

    def integrand(ct, phi):
        s = math.sqrt(1 - ct * ct)
        return ct * float(smith.vndf(view, [s * math.cos(phi), s * math.sin(phi), ct], r))

    ref, _ = integrate.dblquad(integrand, 0, 2 * np.pi, 0, 1, epsabs=1e-10, epsrel=1e-10)
    u = np.random.default_rng(7).random((1_000_000, 2))
    h = smith.sample_vndf(-view, r, u[:, 0], u[:, 1])
    assert h[:, 2].mean() == pytest.approx(ref, rel=5e-3)


def test_sample_vndf_smooth_limit():
    h = smith.sample_vndf(direction(2.5), Roughness(1e-9), 0.3, 0.7)
    assert np.allclose(h, [0, 0, 1], atol=1e-7)


def test_sample_vndf_from_below_horizon():
    # Upward travelling rays see the surface from below; the sampler must
    # still return visible normals with positive density.
    r = Roughness(0.8)
    d = direction(math.radians(80))
    u = np.random.default_rng(1).random((10000, 2))
    h = smith.sample_vndf(d, r, u[:, 0], u[:, 1])
    assert np.all(h[:, 2] >= 0)
    assert np.all(h @ -d >= -1e-12)


@pytest.mark.parametrize("alpha,theta", [(0.5, 0.3), (1.0, 1.2), (0.3, 0.9)])
def test_phase_normalized_over_sphere(alpha, theta):
    r = Roughness(alpha)
    wi = direction(theta)
    n_ct, n_ph = 4000, 720
    ct = -1 + (np.arange(n_ct) + 0.5) * 2 / n_ct
    ph = (np.arange(n_ph) + 0.5) * 2 * np.pi / n_ph
    C, P = np.meshgrid(ct, ph, indexing="ij")
    s = np.sqrt(1 - C * C)
    wo = np.stack([s * np.cos(P), s * np.sin(P), C], axis=-1)
    val = smith.smith_phase(np.broadcast_to(wi, wo.shape), wo, r)[..., 0]
    assert np.all(val >= 0)
    total = val.sum() * (2 / n_ct) * (2 * np.pi / n_ph)
    assert total == pytest.approx(1.0, rel=1e-2)


def test_vertex_term_relations():
    rng = np.random.default_rng(3)
    f = Fresnel.dielectric(1.5)
    for _ in range(50):
        r = Roughness(rng.uniform(0.1, 1.5), rng.uniform(0.1, 1.5))
        d_in = direction(rng.uniform(0.05, 1.5), rng.uniform(0, 6.3))
        d_in = d_in * np.array([1, 1, -1 if rng.random() < 0.7 else 1])
        d_out = direction(rng.uniform(0, 3.1), rng.uniform(0, 6.3))
        v = smith.vertex_term(d_in, d_out, r, f)
        ref = smith.smith_phase(-d_in, d_out, r, f) * abs(smith.lam(d_in, r))
        assert np.allclose(v, ref, rtol=1e-12, atol=1e-300)
        assert np.all(v >= 0)
    r = Roughness(0.4)
    d_in = np.array([0.0, 0.0, -1.0])
    d_out = direction(0.3)
    assert np.allclose(smith.vertex_term(d_in, d_out, r), smith.smith_phase(-d_in, d_out, r), rtol=1e-14)
    # backfacing micronormal
    assert np.all(smith.vertex_term(direction(0.2), direction(0.2) * [1, 1, -1], r) == 0)


def test_fresnel_modes():
    f = Fresnel.dielectric(1.5)
    assert f(1.0)[0] == pytest.approx(0.04, rel=1e-12)
    assert np.all(Fresnel.dielectric(1 / 1.5)(0.1) == 1.0)
    # conductor with k = 0 coincides with the dielectric formula
    c = np.linspace(0.05, 1, 20)
    assert np.allclose(Fresnel.conductor(1.7, 0.0)(c), Fresnel.dielectric(1.7)(c), rtol=1e-10)
    g = Fresnel.conductor([0.2, 0.9, 1.1], [3.9, 2.4, 2.2])(1.0)
    n, k = np.array([0.2, 0.9, 1.1]), np.array([3.9, 2.4, 2.2])
    assert np.allclose(g, ((n - 1) ** 2 + k ** 2) / ((n + 1) ** 2 + k ** 2), rtol=1e-12)
    assert np.all(Fresnel.constant([0.1, 0.5, 0.9])(0.3) == [0.1, 0.5, 0.9])
    with pytest.raises(ValueError):
        Fresnel.constant(1.5)


def test_roughness_validation():
    assert Roughness(0.3).alpha_y == 0.3
    with pytest.raises(ValueError):
        Roughness(0.0)
