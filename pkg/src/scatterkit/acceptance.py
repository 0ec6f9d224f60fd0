"""Acceptance suite: every primary criterion as a callable check.

Each check runs at the sample sizes and tolerances of its criterion and
returns an :class:`Outcome`. ``run`` executes a selection and prints one
PASS/FAIL line per criterion.
"""
import math
import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from . import masking, mbounce, medium, phase, segment, smith, specfun, wetbsdf
from .mbounce import EvalConfig
from .phase import ParticleSpec, PhaseFit
from .smith import Roughness, direction


@dataclass
class Outcome:
    key: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.key:<16} {self.seconds:8.1f}s  {self.detail}"


# particle presets for the phase-fit criterion: (name, particle, liquid index or None)
PRESETS = [
    ("quartz-dry", ParticleSpec(0.8, 0.3, 1.55, 0.9), None),
    ("quartz-water", ParticleSpec(0.8, 0.3, 1.55, 0.9), 1.333),
    ("flat-grain", ParticleSpec(0.5, 0.2, 1.5, 0.95), None),
    ("rough-sphere", ParticleSpec(1.0, 0.6, 1.6, 0.9), None),
    ("high-index", ParticleSpec(0.7, 0.1, 2.4, 0.8), None),
]

WET_FIT = PhaseFit(0.483, 0.0, 0.422, 0.123, 3.1, 1.107)
WET_GRAIN = ParticleSpec(0.8, 0.3, 1.55, (0.9, 0.8, 0.7))


def wet_medium(**kw):
    base = dict(thickness=2.0, porosity=0.6, saturation=0.5, density=8.0,
                sigma_l=(0.1, 0.3, 0.6), eta_l=1.333, particles=(WET_GRAIN,))
    base.update(kw)
    return medium.MediumSpec(**base)


def wet_params(**kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", wetbsdf.MeanFreePathWarning)
        return wetbsdf.WetBsdfParams(wet_medium(**kw), [WET_FIT])


def _dir(theta_deg, phi=0.0):
    return direction(math.radians(theta_deg), phi)


# ---------------------------------------------------------------------------
# microfacet criteria


def check_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for k in (2, 3):
        done = 0
        while done < 1000:
            path, r = segment.random_path(k, rng)
            rep = segment.equivalence_check(path, r)
            if rep["singular"]:
                continue
            worst = max(worst, rep["rel_err"])
            done += 1
    dt = time.perf_counter() - t0
    return worst < 1e-9 and dt < 1.0, f"k=2,3 x1000 paths: max rel err {worst:.2e} (<1e-9), {dt:.2f}s (<1s)"


def check_dp():
    rng = np.random.default_rng(2025)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(10_000):
        lam = segment.random_lambdas(1 + i % 8, rng)
        a = segment.segterm_dp(lam)
        b = segment.segterm_recursive_lambdas(lam)
        worst = max(worst, abs(a - b) / abs(b))
    dt = time.perf_counter() - t0
    return worst < 1e-12 and dt < 5.0, f"1e4 paths k<=8: max rel err {worst:.2e} (<1e-12), {dt:.2f}s (<5s)"


def check_single_bounce():
    r = Roughness(0.5)
    cfg = EvalConfig(max_bounce=1, spp=1_000_000, seed=7)
    grid = [(0, 20, 0.0), (15, 45, 1.0), (30, 30, math.pi), (45, 70, 2.0), (60, 10, 0.5), (75, 60, 3.0)]
    worst = 0.0
    ok = True
    for ti, to, po in grid:
        wi, wo = _dir(ti), _dir(to, po)
        est = mbounce.eval_stats(wi, wo, r, cfg=cfg)
        ref = smith.single_scatter_brdf(wi, wo, r)
        diff = np.abs(est.mean - ref)
        # 3 sigma, with a floating-point floor: the one-bounce estimator has no variance
        ok &= bool(np.all(diff <= 3 * est.stderr + 1e-12 * ref))
        worst = max(worst, float(np.max(diff / ref)))
    return ok, f"6 angles, 1e6 spp: max rel diff {worst:.1e} (within 3 sigma + 1e-12 rel)"


def check_furnace():
    t0 = time.perf_counter()
    vals = []
    for a in (0.1, 0.5, 1.0):
        for th in (0, 30, 60):
            m, s = mbounce.furnace_stats(math.radians(th), Roughness(a),
                                         EvalConfig(max_bounce=16, spp=10_000_000, seed=11))
            vals.append(m)
    dt = time.perf_counter() - t0
    ok = all(0.99 <= v <= 1.01 for v in vals) and dt < 120
    return ok, f"albedo range [{min(vals):.4f}, {max(vals):.4f}] (in [0.99,1.01]), 9x1e7 samples {dt:.0f}s (<120s)"


def check_sampler():
    r = Roughness(1.0)
    wi = _dir(45)
    hs = mbounce.sample_histogram(wi, r, cfg=EvalConfig(max_bounce=16, spp=10_000_000, seed=3))
    he = mbounce.eval_histogram(wi, r, cfg=EvalConfig(max_bounce=16, spp=5_000, seed=4))
    d = mbounce.l1_shape(hs, he)
    return d < 0.05, f"alpha=1, theta_i=45: L1 {d:.4f} (<0.05), 32x32 bins, 1e7 samples"


def _pdf_l1(r, theta, spp=4_000_000):
    wi = _dir(theta)
    ref = mbounce.sample_histogram(wi, r, cfg=EvalConfig(max_bounce=16, spp=spp, seed=5))
    ours = mbounce.density_histogram(lambda x, y: mbounce.pdf(x, y, r), wi)
    base = mbounce.density_histogram(lambda x, y: mbounce.lambertian_baseline(x, y, r), wi)
    mu = mbounce.grid_centers()[0][..., 2]
    return (mbounce.l1_shape(ref, ours), mbounce.l1_shape(ref, base),
            mbounce.l1_shape(ref / mu, ours), mbounce.l1_shape(ref / mu, base))


def check_pdf_claim():
    ok = True
    parts = []
    for th in (30, 60):
        a, b, c, d = _pdf_l1(Roughness(1.0), th)
        ok &= a < b
        parts.append(f"{th}deg: ours {a:.3f} vs baseline {b:.3f} [vs f: {c:.3f}/{d:.3f}]")
    a, b, _, _ = _pdf_l1(Roughness(0.1, 1.0), 30)
    parts.append(f"aniso(0.1,1.0) 30deg: {a:.3f} vs {b:.3f} (reported)")
    return ok, "L1 to outgoing density; " + "; ".join(parts)


def check_benchmark():
    ok = True
    rows = []
    for k in (4, 8, 16):
        rep = segment.bench_segterm(k, paths=2000, reps=5, seed=k)
        ok &= rep["segterm_vs_exact"] < 1e-12 and rep["median_rel_diff"] < 1e-9
        rows.append(f"k={k}: segterm {rep['segterm_ns']:.0f}ns hyperexp {rep['hyperexp_ns']:.0f}ns "
                    f"exact-err {rep['segterm_vs_exact']:.1e} median-diff {rep['median_rel_diff']:.1e} "
                    f">1e-9 {100 * rep['frac_above_1e-9']:.1f}%")
    return ok, " | ".join(rows)


# ---------------------------------------------------------------------------
# special functions and masking


def _dblquad_b2(a1, a2, b1, b2):
    f = lambda u2, u1: u1 ** (a1 - 1) * (1 - u1) ** (b1 - 1) * u2 ** (a2 - 1) * (1 - u2) ** (b2 - 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return integrate.dblquad(f, 0, 1, 0, lambda u1: u1, epsabs=0, epsrel=1e-10)[0]


def check_specfun():
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    e_beta = 0.0
    for a, b in rng.uniform(0.05, 30, (500, 2)):
        ref = special.gamma(a) * special.gamma(b) / special.gamma(a + b)
        e_beta = max(e_beta, abs(specfun.beta(a, b) / ref - 1))
    e_b2 = 0.0
    for _ in range(50):
        a1, a2, b1, b2 = rng.uniform(0.2, 5, 4)
        ref = _dblquad_b2(a1, a2, b1, b2)
        e_b2 = max(e_b2, abs(specfun.gen_beta([a1, a2], [b1, b2]) / ref - 1))
    e_sym = 0.0
    for k in (2, 3):
        for _ in range(10):
            a = list(rng.uniform(0.3, 4, k))
            b = list(rng.uniform(0.3, 4, k))
            e_sym = max(e_sym, specfun.gen_beta_symmetry_check(a, b)["rel_err"])
    dt = time.perf_counter() - t0
    ok = e_beta < 1e-12 and e_b2 < 1e-6 and e_sym < 1e-6 and dt < 30
    return ok, (f"B vs Gamma {e_beta:.1e} (<1e-12); B2 vs quadrature {e_b2:.1e} (<1e-6); "
                f"symmetry {e_sym:.1e} (<1e-6); {dt:.1f}s (<30s)")


# (kind, Λ at the coincidence, index perturbed for the two-sided probe)
LIMIT_PROBES = [
    ("tr", [-1.7, -2.3, -2.3], 2),
    ("rt", [-1.7, -1.7, -1.4], 1),
    ("trr", [-1.7, -2.3, -2.3, -3.1], 2),
    ("trr", [-1.7, 0.6, -1.4, -1.4], 3),
    ("trr", [-1.7, -2.3, 0.35, -2.3], 3),
    ("rtr", [-1.7, -1.7, 0.35, -3.1], 1),
    ("rtr", [-1.7, 0.6, -1.4, -1.4], 3),
    ("ttr", [-1.7, -2.3, 0.35, 0.35], 3),
    ("ttr", [-1.7, 0.6, 0.8, 0.8], 3),
    ("trt", [-1.7, -2.3, -2.3, 0.8], 2),
    ("trt", [-1.7, 0.6, 0.6, 0.8], 2),
]


def limit_probe(kind, lam, idx, h=3e-3):
    """Relative gap between the limit branch and a two-sided Richardson limit."""
    at = masking.masking_lambdas(kind, lam)

    def val(eps):
        bumped = list(lam)
        bumped[idx] = lam[idx] * (1 + eps)
        return masking.masking_lambdas(kind, bumped).value

    s1 = 0.5 * (val(h) + val(-h))
    s2 = 0.5 * (val(2 * h) + val(-2 * h))
    numeric = (4 * s1 - s2) / 3
    return at.limit, abs(at.value / numeric - 1)


def check_masking():
    rng = np.random.default_rng(77)
    bad = 0
    for kind in masking.KINDS:
        for _ in range(200):
            v = masking.masking_lambdas(kind, masking.random_lambdas(kind, rng)).value
            bad += not (np.isfinite(v) and v >= 0)
    e_lim = 0.0
    all_limit = True
    for kind, lam, idx in LIMIT_PROBES:
        used, err = limit_probe(kind, lam, idx)
        all_limit &= used
        e_lim = max(e_lim, err)
    e_sub = 0.0
    for kind in ("tt", "ttr", "trt", "ttt"):
        for _ in range(5):
            lam = masking.random_lambdas(kind, rng)
            a = masking.masking_lambdas(kind, lam).value
            q = masking.masking_lambdas(kind, lam, backend="quadrature").value
            e_sub = max(e_sub, abs(q / a - 1))
    v = masking.masking_lambdas("tr", [-1.7, 0.0, -1.4]).value
    e_sub = max(e_sub, abs(v / (specfun.beta(1.4, 1.7) / 1.4) - 1))
    ok = bad == 0 and all_limit and e_lim < 1e-4 and e_sub < 1e-6
    return ok, (f"{200 * len(masking.KINDS)} random configs, {bad} invalid; limit probes max {e_lim:.1e} "
                f"(<1e-4); quadrature-B substitution {e_sub:.1e} (<1e-6)")


# ---------------------------------------------------------------------------
# wet criteria


def check_phase_fit():
    t0 = time.perf_counter()
    nested = True
    wins = 0
    rows = []
    for name, spec, liquid in PRESETS:
        h = phase.simulate_particle(spec, liquid, samples=1_000_000, seed=17)
        two = phase.fit_two_gaussian(h)
        one = phase.fit_one_gaussian(h)
        hg = phase.fit_two_hg_baseline(h)
        nested &= two.rss <= one.rss
        wins += two.rss <= hg.rss
        rows.append(f"{name} 2G {two.rss:.2e} 1G {one.rss:.2e} HG {hg.rss:.2e}")
    truth = PhaseFit(0.6, 0.35, 0.3, 0.25, 2.6, 0.45)
    edges = np.linspace(0, math.pi, 181)
    theta = 0.5 * (edges[1:] + edges[:-1])
    syn = phase.PhaseHistogram(edges, truth(theta), np.ones(180, dtype=int), 180, 0, 0.0)
    p = phase.fit_two_gaussian(syn).params
    if p[1] > p[4]:
        p = np.r_[p[3:], p[:3]]
    rec = float(np.max(np.abs(p / truth.as_array() - 1)))
    dt = time.perf_counter() - t0
    ok = nested and wins >= 4 and rec < 0.01 and dt < 180
    return ok, (f"2G<=1G on all: {nested}; 2G<=2HG on {wins}/5; synthetic recovery {rec:.1e} (<1%); "
                f"{dt:.0f}s (<180s); " + "; ".join(rows))


def check_wet_single():
    p = wet_params()
    worst_r = worst_t = 0.0
    for ti in (10, 30, 45, 60, 75):
        for to in (15, 35, 50, 65, 80):
            wi, wo = _dir(ti), _dir(to, 2.0)
            est = medium.rte_oracle(p.spec, p.phase, wi, wo, 1, 10_000_000, seed=ti * 100 + to)
            fr = wetbsdf.eval_single_r(wi, wo, p)
            ft = wetbsdf.eval_single_t(wi, wo * [1, 1, -1], p)
            worst_r = max(worst_r, float(np.max(np.abs(est.refl / fr - 1))))
            worst_t = max(worst_t, float(np.max(np.abs(est.trans / ft - 1))))
    wi = _dir(40)
    ci = wi[2]

    def at(c):
        return wetbsdf.eval_single_t(wi, np.array([math.sqrt(1 - c * c), 0.0, -c]), p)

    h = 1e-3 * ci
    s1 = 0.5 * (at(ci + h) + at(ci - h))
    s2 = 0.5 * (at(ci + 2 * h) + at(ci - 2 * h))
    probe = float(np.max(np.abs(at(ci) / ((4 * s1 - s2) / 3) - 1)))
    ok = worst_r < 0.01 and worst_t < 0.01 and probe < 1e-6
    return ok, (f"5x5 grid, 1e7 spp: f_r max rel err {worst_r:.2e}, f_t {worst_t:.2e} (<1%); "
                f"singularity probe {probe:.1e} (<1e-6)")


def check_wet_full():
    p = wet_params()
    worst = 0.0
    for ti in (15, 35, 55, 75):
        for to in (20, 40, 60, 80):
            wi, wo = _dir(ti), _dir(to, 2.0)
            m, _ = wetbsdf.eval_multi_stats(wi, wo, p, spp=1_000_000, seed=ti * 100 + to,
                                            max_collisions=8)
            ref = medium.rte_oracle(p.spec, p.phase, wi, wo, 8, 1_000_000, seed=ti * 100 + to + 50_000)
            full = wetbsdf.eval_single_r(wi, wo, p) + m
            worst = max(worst, float(np.max(np.abs(full / ref.refl - 1))))
    dark = True
    for ti, to in ((20, 40), (60, 30)):
        wi, wo = _dir(ti), _dir(to, 2.5)
        vals = []
        for s in (0.0, 0.25, 0.5, 0.75, 1.0):
            q = wet_params(saturation=s)
            m, e = wetbsdf.eval_multi_stats(wi, wo, q, spp=400_000, seed=int(100 * s) + ti)
            vals.append((wetbsdf.eval_single_r(wi, wo, q) + m, e))
        for (a, ea), (b, eb) in zip(vals, vals[1:]):
            dark &= bool(np.all(a - b > 3 * np.hypot(ea, eb)))
    return worst < 0.03 and dark, (f"4x4 grid: max rel err {worst:.2e} (<3%); darkening in S at 3 sigma: {dark}")


def check_limits():
    k_small = medium.hapke_k_of(1e-12)
    k_por = medium.hapke_k(wet_medium(porosity=1 - 1e-15))
    e_k = max(abs(k_small - 1), abs(k_por - 1))
    wi = _dir(30)
    zero = wet_params(thickness=0.0)
    d0 = wetbsdf.delta_transmission(wi, zero)
    thick = wetbsdf.delta_transmission(wi, wet_params(thickness=1e3))
    airy = wetbsdf.delta_transmission(wi, wet_params(porosity=1 - 1e-13, saturation=0.0))
    inf = wetbsdf.delta_transmission(wi, wet_params(thickness=math.inf))
    ok = (e_k < 1e-9 and np.allclose(d0, zero.spec.k, rtol=1e-14) and np.all(thick < 1e-100)
          and np.allclose(airy, 1.0, atol=1e-6) and np.all(inf == 0))
    return ok, (f"|K-1| {e_k:.1e} (<1e-9); delta(T=0)={d0[0]:.6f}=K; delta(T=1e3)={thick.max():.1e}; "
                f"delta(P->1,S=0)={airy[0]:.8f}; delta(T=inf)=0")


CRITERIA = [
    ("equivalence", check_equivalence),
    ("dp", check_dp),
    ("single-bounce", check_single_bounce),
    ("furnace", check_furnace),
    ("sampler", check_sampler),
    ("pdf-claim", check_pdf_claim),
    ("benchmark", check_benchmark),
    ("special-funcs", check_specfun),
    ("masking", check_masking),
    ("phase-fit", check_phase_fit),
    ("wet-single", check_wet_single),
    ("wet-full", check_wet_full),
    ("limits", check_limits),
]


def run_one(key):
    fn = dict(CRITERIA)[key]
    t0 = time.perf_counter()
    passed, detail = fn()
    return Outcome(key, bool(passed), detail, time.perf_counter() - t0)


def run(keys=None, echo=print):
    out = []
    for key, _ in CRITERIA:
        if keys and key not in keys:
            continue
        res = run_one(key)
        if echo:
            echo(res.line())
        out.append(res)
    return out
