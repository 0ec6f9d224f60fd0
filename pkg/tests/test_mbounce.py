import math

import numpy as np
import pytest

from scatterkit import mbounce, smith
from scatterkit.mbounce import EvalConfig
from scatterkit.smith import Fresnel, Roughness, direction


@pytest.mark.parametrize("ti,to,po", [(0.2, 0.4, 2.0), (0.9, 1.1, 3.0), (1.3, 0.2, 0.5)])
def test_single_bounce_reduction_is_exact(ti, to, po):
    # With one bounce and no roulette the estimator is deterministic.
    r = Roughness(0.6, 0.35)
    f = Fresnel.conductor([0.2, 0.9, 1.1], [3.9, 2.4, 2.2])
    wi, wo = direction(ti, 0.3), direction(to, po)
    est = mbounce.eval_stats(wi, wo, r, f, EvalConfig(max_bounce=1, spp=64))
    ref = smith.single_scatter_brdf(wi, wo, r, f)
    assert np.allclose(est.mean, ref, rtol=1e-12)
    assert np.all(est.stderr < 1e-6 * ref)


def test_invalid_hemisphere_returns_zero():
    r = Roughness(0.5)
    assert np.all(mbounce.eval(direction(0.3), direction(2.0), r) == 0)


def test_deterministic_for_seed():
    r = Roughness(0.7)
    cfg = EvalConfig(spp=20000, seed=42)
    a = mbounce.eval(direction(0.5), direction(0.8, 1.0), r, cfg=cfg)
    b = mbounce.eval(direction(0.5), direction(0.8, 1.0), r, cfg=cfg)
    assert np.array_equal(a, b)
    c = mbounce.eval(direction(0.5), direction(0.8, 1.0), r, cfg=EvalConfig(spp=20000, seed=43))
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("alpha,ti,to,po", [(1.0, 1.2, 1.2, math.pi), (0.5, 0.5, 1.0, 2.0), (0.8, 0.0, 0.6, 0.0)])
def test_eval_matches_height_random_walk(alpha, ti, to, po):
    r = Roughness(alpha)
    cfg = EvalConfig(max_bounce=32, spp=400_000, seed=3)
    wi, wo = direction(ti), direction(to, po)
    a = mbounce.eval_stats(wi, wo, r, cfg=cfg)
    b = mbounce.random_walk_stats(wi, wo, r, cfg=cfg)
    sig = math.hypot(a.stderr[0], b.stderr[0])
    assert abs(a.mean[0] - b.mean[0]) < 4 * sig


def test_dp_and_hyperexp_paths_agree():
    r = Roughness(1.0)
    cfg = EvalConfig(spp=50_000, seed=5)
    wi, wo = direction(1.1), direction(0.9, 2.5)
    a = mbounce.eval_stats(wi, wo, r, cfg=cfg, segterm="dp").mean
    b = mbounce.eval_stats(wi, wo, r, cfg=cfg, segterm="hyperexp").mean
    assert np.allclose(a, b, rtol=1e-9)


def test_furnace_half_roughness():
    m, s = mbounce.furnace_stats(math.radians(30), Roughness(0.5), EvalConfig(max_bounce=10, spp=400_000))
    assert 0.99 <= m <= 1.01
    assert s < 3e-3


def test_furnace_grows_with_bounces():
    r = Roughness(1.0)
    vals = [mbounce.furnace_albedo(math.radians(60), r, EvalConfig(max_bounce=b, spp=200_000, seed=1))
            for b in (1, 2, 4, 16)]
    assert vals[0] < vals[1] < vals[2] < vals[3]
    assert vals[0] < 0.95


def test_colored_fresnel_reduces_albedo_channelwise():
    r = Roughness(0.5)
    f = Fresnel.constant([0.2, 0.6, 1.0])
    cfg = EvalConfig(spp=100_000, seed=9)
    wi, wo = direction(0.4), direction(0.7, 2.8)
    v = mbounce.eval(wi, wo, r, f, cfg)
    assert v[0] < v[1] < v[2]
    assert v[2] == pytest.approx(mbounce.eval(wi, wo, r, cfg=cfg)[0], rel=1e-12)


def test_reciprocity_measured():
    rng = np.random.default_rng(8)
    r = Roughness(0.8)
    cfg = EvalConfig(spp=100_000, seed=11)
    for _ in range(5):
        wi = direction(rng.uniform(0.1, 1.3), rng.uniform(0, 6.28))
        wo = direction(rng.uniform(0.1, 1.3), rng.uniform(0, 6.28))
        a = mbounce.eval_stats(wi, wo, r, cfg=cfg)
        b = mbounce.eval_stats(wo, wi, r, cfg=cfg)
        assert abs(a.mean[0] - b.mean[0]) < 4 * math.hypot(a.stderr[0], b.stderr[0])


def test_sample_smooth_limit():
    r = Roughness(1e-6)
    wi = direction(0.7, 0.4)
    f = Fresnel.dielectric(1.5)
    s = mbounce.sample(wi, r, f, EvalConfig(seed=2))
    assert s.bounces == 1
    assert np.allclose(s.direction, wi * [-1, -1, 1], atol=1e-5)
    assert np.allclose(s.weight, f(math.cos(0.7)), rtol=1e-4)


def test_sample_mean_weight_is_albedo():
    r = Roughness(0.5)
    th = math.radians(30)
    _, w, _ = mbounce.sample_many(direction(th), r, cfg=EvalConfig(max_bounce=16, seed=4), n=400_000)
    alb, _ = mbounce.furnace_stats(th, r, EvalConfig(max_bounce=16, spp=400_000, seed=4))
    assert w[:, 0].mean() == pytest.approx(alb, rel=1e-2)


def test_sample_exhausted_bounces_have_zero_weight():
    r = Roughness(2.0)
    d, w, k = mbounce.sample_many(direction(1.4), r, cfg=EvalConfig(max_bounce=2, seed=1), n=20000)
    stuck = d[:, 2] <= 0
    assert stuck.any()
    assert np.all(w[stuck] == 0)
    assert np.all(k <= 2)


def test_pdf_examples():
    assert mbounce.hapke_h(1.0, 1.0) == 3.0
    r1 = Roughness(1.0)
    up = np.array([0, 0, 1.0])
    assert mbounce.pdf_multiple(up, up, r1) == pytest.approx(1 / math.pi, rel=1e-14)
    tiny = Roughness(1e-12)
    assert mbounce.pdf_multiple(direction(0.3), direction(0.8, 1), tiny) == pytest.approx(0, abs=1e-10)
    wi, wo = direction(0.4), direction(0.9, 2.0)
    assert mbounce.pdf(wi, wo, r1) == pytest.approx(
        float(mbounce.pdf_single(wi, wo, r1) + mbounce.pdf_multiple(wi, wo, r1)), rel=1e-14)


def test_pdf_normalization_reported():
    # The proxy is not a normalized density: its integral exceeds one for
    # rough surfaces and approaches the single-bounce mass for smooth ones.
    wi = direction(math.radians(30))
    assert mbounce.pdf_normalization(wi, Roughness(1.0)) > 1.5
    assert mbounce.pdf_normalization(wi, Roughness(0.05)) == pytest.approx(1.0, abs=0.02)
