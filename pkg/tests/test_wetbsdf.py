import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from scatterkit import medium as md
from scatterkit import wetbsdf as wb
from scatterkit.phase import ParticleSpec, PhaseFit

FIT = PhaseFit(0.48, 0.0, 0.42, 0.12, 3.1, 1.1)
GRAIN = ParticleSpec(0.8, 0.3, 1.5, (0.9, 0.8, 0.7))


def direction(theta_deg, phi=0.0):
    t = math.radians(theta_deg)
    return np.array([math.sin(t) * math.cos(phi), math.sin(t) * math.sin(phi), math.cos(t)])


def params(**kw):
    base = dict(thickness=2.0, porosity=0.6, saturation=0.5, density=8.0,
                sigma_l=(0.1, 0.3, 0.6), particles=(GRAIN,))
    base.update(kw)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", wb.MeanFreePathWarning)
        return wb.WetBsdfParams(md.MediumSpec(**base), [FIT])


def test_derived_quantities():
    p = params()
    s = p.spec
    assert np.allclose(p.tau, s.thickness * (s.k * s.sigma_t + np.array(s.sigma_l) * s.saturation))
    assert np.all(p.lam >= 0) and np.all(p.lam <= s.k ** 2 * np.asarray(s.albedo))


def test_empty_slab_scatters_nothing():
    p = params(thickness=0.0)
    assert np.all(p.tau == 0)
    assert np.all(wb.eval_single_r(direction(30), direction(50, 1.0), p) == 0)
    assert np.all(wb.eval_single_t(direction(30), -direction(50, 1.0), p) == 0)


def test_semi_infinite_reflection():
    p = params(thickness=math.inf)
    wi, wo = direction(25), direction(60, 2.0)
    ref = p.lam * p.phase_at(wi, wo) / (wi[2] + wo[2])
    assert np.allclose(wb.eval_single_r(wi, wo, p), ref, rtol=1e-15)
    thick = params(thickness=1e4)
    assert np.allclose(wb.eval_single_r(wi, wo, thick), ref, rtol=1e-12)
    assert np.all(wb.eval_single_t(wi, -wo, p) == 0)


def test_reflection_reciprocity():
    p = params()
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = direction(rng.uniform(0, 89), rng.uniform(0, 6.28)), direction(rng.uniform(0, 89), rng.uniform(0, 6.28))
        assert np.allclose(wb.eval_single_r(a, b, p), wb.eval_single_r(b, a, p), rtol=1e-14)
        assert np.all(np.isfinite(wb.eval_single_r(a, b, p)))


def test_transmission_is_the_depth_integral():
    p = params()
    s = p.spec
    wi, wo = direction(30), -direction(55, 1.0)
    ci, ao = wi[2], -wo[2]
    f = p.phase_at(wi, wo)
    sig_s = s.sigma_t * np.asarray(s.albedo)
    for c in range(3):
        se = s.sigma_eff[c]
        g = lambda t: math.exp(-se * t / ci - se * (s.thickness - t) / ao)
        ref = s.k ** 2 * sig_s[c] * f / (ci * ao) * integrate.quad(g, 0, s.thickness, epsrel=1e-13)[0]
        assert wb.eval_single_t(wi, wo, p)[c] == pytest.approx(ref, rel=1e-10)


def test_transmission_removable_singularity():
    p = params()
    wi = direction(40)
    ci = wi[2]

    def at(c_out):
        wo = np.array([math.sqrt(1 - c_out ** 2), 0.0, -c_out])
        return wb.eval_single_t(wi, wo, p)

    limit = at(ci)
    # two-sided limit from direct evaluations outside the switch, Richardson-combined
    h = 1e-3 * ci
    s1 = 0.5 * (at(ci + h) + at(ci - h))
    s2 = 0.5 * (at(ci + 2 * h) + at(ci - 2 * h))
    numeric = (4 * s1 - s2) / 3
    assert np.allclose(limit, numeric, rtol=1e-6)
    f = p.phase_at(wi, np.array([wi[0], 0.0, -ci]))
    closed = p.tau * np.exp(-p.tau / ci) / ci ** 2 * p.lam * f
    assert np.allclose(limit, closed, rtol=1e-12)
    # continuity across the switch
    tol = wb.LIMIT_TOL * ci
    assert np.allclose(at(ci + 0.99 * tol), at(ci + 1.01 * tol), rtol=1e-6)


def test_delta_transmission_limits():
    zero = params(thickness=0.0)
    assert np.allclose(wb.delta_transmission(direction(30), zero), zero.spec.k, rtol=1e-15)
    thick = params(thickness=500.0)
    assert np.all(wb.delta_transmission(direction(30), thick) < 1e-100)
    airy = params(porosity=1 - 1e-13, saturation=0.0)
    assert np.allclose(wb.delta_transmission(direction(30), airy), 1.0, atol=1e-6)
    assert np.all(wb.delta_transmission(direction(30), params(thickness=math.inf)) == 0)


def test_mean_free_path_warning():
    spec = md.MediumSpec(0.1, 0.6, 0.5, 8.0, (0.1, 0.3, 0.6), particles=(GRAIN,))
    with pytest.warns(wb.MeanFreePathWarning):
        wb.WetBsdfParams(spec, [FIT])


def test_sample_weight_and_pdf():
    p = params()
    rng = np.random.default_rng(3)
    wi = direction(35)
    for _ in range(50):
        s = wb.sample(wi, p, rng)
        assert s.pdf == pytest.approx(wb.pdf(wi, s.direction, p), rel=1e-9)
        ref = wb.eval_single(wi, s.direction, p) * abs(s.direction[2]) / s.pdf
        assert np.allclose(s.weight, ref, rtol=1e-12)


def test_sampled_estimate_of_albedo():
    # mean sample weight = integral of the single-scattering BSDF times |cos|
    p = params()
    wi = direction(35)
    rng = np.random.default_rng(4)
    w = np.array([wb.sample(wi, p, rng).weight for _ in range(20_000)])
    mc = w.mean(axis=0)
    err = w.std(axis=0) / math.sqrt(len(w))
    n = 96
    quad = np.zeros(3)
    for a in range(n):
        mu = (a + 0.5) / n
        for b in range(n):
            phi = (b + 0.5) * 2 * math.pi / n
            s = math.sqrt(1 - mu * mu)
            for sign in (1, -1):
                wo = np.array([s * math.cos(phi), s * math.sin(phi), sign * mu])
                quad += wb.eval_single(wi, wo, p) * mu / n * 2 * math.pi / n
    assert np.all(np.abs(mc - quad) < 4 * err + 2e-3 * quad)


def test_full_bsdf_matches_oracle():
    p = params()
    for ti, to in [(20, 35), (60, 70)]:
        wi, wo = direction(ti), direction(to, 2.0)
        multi, err = wb.eval_multi_stats(wi, wo, p, spp=300_000, seed=1, max_collisions=8)
        full = wb.eval_single_r(wi, wo, p) + multi
        ref = md.rte_oracle(p.spec, p.phase, wi, wo, 8, 300_000, 2)
        assert np.all(np.abs(full - ref.refl) < 4 * np.hypot(err, ref.refl_err))


def test_wet_darkening():
    wi, wo = direction(30), direction(40, 2.5)
    vals = []
    for s in (0.0, 0.5, 1.0):
        p = params(saturation=s)
        m, e = wb.eval_multi_stats(wi, wo, p, spp=200_000, seed=9)
        vals.append((wb.eval_single_r(wi, wo, p) + m, e))
    for (a, ea), (b, eb) in zip(vals, vals[1:]):
        assert np.all(a - b > 3 * np.hypot(ea, eb))
