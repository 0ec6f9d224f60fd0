"""BSDF of a wet particle layer.

Single scattering in the slab is integrated analytically over the depth of
the scattering vertex, multiple scattering is estimated with the depth-only
random walk of :mod:`scatterkit.medium`, and light crossing the slab without
any collision forms a delta transmission lobe.

Directions point away from the surface: ``wi`` toward the light,
``wo`` toward the viewer. The phase function is evaluated at the deflection
angle between the propagation directions -wi and wo.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import medium
from .phase import BlendedPhase

LIMIT_TOL = 1e-4


class MeanFreePathWarning(UserWarning):
    """The slab is thinner than two mean free paths."""


@dataclass
class BsdfSample:
    direction: np.ndarray
    pdf: float
    weight: np.ndarray


class WetBsdfParams:
    """Medium description, blended phase and the derived optical depth and
    single-scattering amplitude per channel.

    ``fits`` holds one PhaseFit per particle of ``spec``; the blend weights
    come from the particles.
    """

    def __init__(self, spec, fits):
        if not spec.particles:
            raise ValueError("the medium needs at least one particle")
        if len(fits) != len(spec.particles):
            raise ValueError("need one phase fit per particle")
        self.spec = spec
        self.phase = BlendedPhase(list(fits), [p.blend_weight for p in spec.particles])
        sig_e = spec.sigma_eff
        self.tau = spec.thickness * sig_e
        self.lam = spec.k ** 2 * spec.sigma_t * spec.albedo / sig_e
        if np.any(spec.thickness < 2.0 / sig_e):
            warnings.warn(f"thickness {spec.thickness} is below two mean free paths "
                          f"({2.0 / sig_e.max():.4g}..{2.0 / sig_e.min():.4g})",
                          MeanFreePathWarning, stacklevel=2)

    def phase_at(self, wi, wo):
        c = -float(np.dot(wi, wo))
        return float(self.phase.normalized(math.acos(min(1.0, max(-1.0, c)))))


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def eval_single_r(wi, wo, params):
    """Single-scattering reflection lambda f (1 - exp(-tau (1/ci + 1/co))) / (ci + co)."""
    wi, wo = _unit(wi), _unit(wo)
    ci, co = wi[2], wo[2]
    if ci <= 0 or co <= 0:
        return np.zeros(3)
    f = params.phase_at(wi, wo)
    tau = params.tau
    if math.isinf(params.spec.thickness):
        sat = np.ones(3)
    else:
        sat = -np.expm1(-tau * (1.0 / ci + 1.0 / co))
    return params.lam * f / (ci + co) * sat


def _t_factor(tau, ci, ao):
    """(exp(-tau/ao) - exp(-tau/ci)) / (ao - ci) with its confluent limit."""
    d = ao - ci
    if abs(d) < LIMIT_TOL * ci:
        # expand g(c) = exp(-tau/c) about the midpoint; odd terms cancel
        m = 0.5 * (ao + ci)
        g = np.exp(-tau / m)
        g1 = g * tau / m ** 2
        g3 = g * tau * (tau * tau - 6 * tau * m + 6 * m * m) / m ** 6
        return g1 + g3 * d * d / 24.0
    return (np.exp(-tau / ao) - np.exp(-tau / ci)) / d


def eval_single_t(wi, wo, params):
    """Single-scattering transmission through the slab (wo below the surface).

    Equals lambda f (exp(-tau/|co|) - exp(-tau/ci)) / (|co| - ci); at
    |co| = ci the removable singularity evaluates to
    lambda f tau exp(-tau/ci) / ci^2.
    """
    wi, wo = _unit(wi), _unit(wo)
    ci, co = wi[2], wo[2]
    if ci <= 0 or co >= 0 or math.isinf(params.spec.thickness):
        return np.zeros(3)
    f = params.phase_at(wi, wo)
    return params.lam * f * _t_factor(params.tau, ci, -co)


def eval_single(wi, wo, params):
    return eval_single_r(wi, wo, params) if _unit(wo)[2] > 0 else eval_single_t(wi, wo, params)


def eval_multi(wi, wo, params, spp=100_000, seed=0, max_collisions=64):
    """Contribution of paths with two or more collisions (Monte Carlo)."""
    est = medium.walk_estimate(params.spec, params.phase, wi, wo, 2, max_collisions, spp, seed)
    return est.refl if _unit(wo)[2] > 0 else est.trans


def eval_multi_stats(wi, wo, params, spp=100_000, seed=0, max_collisions=64):
    est = medium.walk_estimate(params.spec, params.phase, wi, wo, 2, max_collisions, spp, seed)
    if _unit(wo)[2] > 0:
        return est.refl, est.refl_err
    return est.trans, est.trans_err


def eval_full(wi, wo, params, spp=100_000, seed=0, max_collisions=64):
    """Diffuse BSDF: analytic single scattering plus Monte Carlo multiple scattering."""
    return eval_single(wi, wo, params) + eval_multi(wi, wo, params, spp, seed, max_collisions)


def delta_transmission(wi, params):
    """Weight of the unscattered lobe K exp(-sigma_eff T / cos_i); zero for an infinite slab."""
    ci = _unit(wi)[2]
    spec = params.spec
    if math.isinf(spec.thickness) or ci <= 0:
        return np.zeros(3)
    return spec.k * np.exp(-spec.sigma_eff * spec.thickness / ci)


def _direction(wi, theta, phi):
    from .phase import scatter

    return np.array(scatter(-wi[0], -wi[1], -wi[2], theta, phi))


def sample(wi, params, rng):
    """Draw wo by sampling the normalized blended phase around -wi.

    ``rng`` is a numpy Generator. The weight is the single-scattering value
    times |cos wo| over the pdf.
    """
    wi = _unit(wi)
    u1, u2 = rng.random(2)
    theta = float(params.phase.sample_theta(u1))
    wo = _direction(wi, theta, 2 * math.pi * u2)
    pdf = float(params.phase.pdf(theta))
    if pdf <= 0 or wo[2] == 0:
        return BsdfSample(wo, 0.0, np.zeros(3))
    return BsdfSample(wo, pdf, eval_single(wi, wo, params) * abs(wo[2]) / pdf)


def pdf(wi, wo, params):
    """Solid-angle density of ``sample`` at wo."""
    c = -float(np.dot(_unit(wi), _unit(wo)))
    return float(params.phase.pdf(math.acos(min(1.0, max(-1.0, c)))))
