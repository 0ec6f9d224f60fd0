"""Porous, partially saturated particle media.

The medium is a slab of particles with porosity P. Hapke's porosity
correction turns the extinction of the particle cloud into
T_H(t) = K exp(-K sigma_t t) and the liquid filling a fraction S of the pores
adds exp(-sigma_l S t). A depth-only random walk through the slab gives a
Monte Carlo reference for the resulting BSDF.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from . import phase, rng

BLOCK = 4096
_HAPKE_C = (3.0 * math.sqrt(math.pi) / 4.0) ** (2.0 / 3.0)


def _channels(v):
    return np.broadcast_to(np.asarray(v, float), (3,)).copy()


def filling_factor_term(porosity):
    """sigma_t * l as a function of porosity alone."""
    return _HAPKE_C * (1.0 - porosity) ** (2.0 / 3.0)


def hapke_k_of(x):
    """K = -ln(1 - x) / x for x = sigma_t * l in [0, 1)."""
    if not 0.0 <= x < 1.0:
        raise ValueError("sigma_t * l must lie in [0, 1)")
    if x == 0.0:
        return 1.0
    return -math.log1p(-x) / x


@dataclass(frozen=True)
class MediumSpec:
    """Slab of particles; ``thickness`` may be ``math.inf``.

    ``density`` is the particle count per unit volume, ``sigma_l`` the
    extinction of the liquid per channel.
    """

    thickness: float
    porosity: float
    saturation: float
    density: float
    sigma_l: tuple = (0.0, 0.0, 0.0)
    eta_l: float = 1.333
    particles: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.thickness >= 0:
            raise ValueError("thickness must be >= 0")
        if not 0 < self.porosity < 1:
            raise ValueError("porosity must lie in (0, 1)")
        if not 0 <= self.saturation <= 1:
            raise ValueError("saturation must lie in [0, 1]")
        if not self.density > 0:
            raise ValueError("density must be > 0")
        sl = tuple(float(v) for v in _channels(self.sigma_l))
        if any(v < 0 for v in sl):
            raise ValueError("sigma_l must be >= 0")
        object.__setattr__(self, "sigma_l", sl)
        object.__setattr__(self, "particles", tuple(self.particles))
        x = filling_factor_term(self.porosity)
        if not x < 1:
            raise ValueError(f"porosity {self.porosity} gives sigma_t*l = {x:.4f} >= 1; K undefined")
        if self.particles:
            w = sum(p.blend_weight for p in self.particles)
            if not math.isclose(w, 1.0, rel_tol=1e-9):
                raise ValueError("particle blend weights must sum to 1")

    @property
    def spacing(self):
        """Mean particle spacing l = n^(-1/3)."""
        return self.density ** (-1.0 / 3.0)

    @property
    def sigma_t(self):
        return filling_factor_term(self.porosity) / self.spacing

    @property
    def k(self):
        return hapke_k(self)

    @property
    def sigma_eff(self):
        """Per-channel total attenuation K sigma_t + sigma_l S."""
        return self.k * self.sigma_t + np.asarray(self.sigma_l) * self.saturation

    @property
    def albedo(self):
        """Blend-weighted particle albedo per channel (1 without particles)."""
        if not self.particles:
            return np.ones(3)
        return sum(p.blend_weight * np.asarray(p.albedo) for p in self.particles)

    def replace(self, **kw):
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return MediumSpec(**d)


def hapke_k(spec):
    return hapke_k_of(filling_factor_term(spec.porosity))


def transmittance(spec, t):
    """T_W(t) = exp(-sigma_l S t) K exp(-K sigma_t t) per channel; T_W(0) = K."""
    k = spec.k
    return k * np.exp(-k * spec.sigma_t * t) * np.exp(-np.asarray(spec.sigma_l) * spec.saturation * t)


# ---------------------------------------------------------------------------
# depth-only random walk


@njit(cache=True)
def _walk(wi, wr, wt, k, sig_s, sig_e, sig_h, depth, lobes, knots, min_col, max_col, st, out):
    """One walk from the top surface; adds BSDF contributions toward wr and wt.

    In a finite slab the free-flight distance is drawn from an even mixture
    of the exponential with rate sig_h and a uniform distance up to the
    boundary (the uniform half keeps deep collisions, which dominate grazing
    transmission, well sampled); a semi-infinite slab uses the exponential
    alone. Every collision carries K sigma_s exp(-sigma_eff s) / pdf(s), and a
    next-event leg toward each outgoing direction carries
    K exp(-sigma_eff d) / |cos|.
    """
    dx, dy, dz = -wi[0], -wi[1], -wi[2]
    z = 0.0
    thr = np.ones(3)
    finite = depth < np.inf
    for col in range(1, max_col + 1):
        if dz < 0.0:
            smax = (depth - z) / -dz
        elif dz > 0.0:
            smax = z / dz
        else:
            smax = np.inf
        mixed = finite and smax < np.inf
        u = rng.next_float(st)
        if mixed and rng.next_float(st) < 0.5:
            s = u * smax
        else:
            s = -math.log(1.0 - u) / sig_h
            if s >= smax:
                return
        pdf = sig_h * math.exp(-sig_h * s)
        if mixed:
            pdf = 0.5 * pdf + 0.5 / smax
        z = min(max(z - dz * s, 0.0), depth)
        for c in range(3):
            thr[c] *= k * sig_s[c] * math.exp(-sig_e[c] * s) / pdf
        if col >= min_col:
            fr = phase.eval_lobes(dx * wr[0] + dy * wr[1] + dz * wr[2], lobes)
            for c in range(3):
                out[c] += thr[c] * fr * k * math.exp(-sig_e[c] * z / wr[2]) / wr[2]
            if finite:
                ft = phase.eval_lobes(dx * wt[0] + dy * wt[1] + dz * wt[2], lobes)
                lt = (depth - z) / -wt[2]
                for c in range(3):
                    out[3 + c] += thr[c] * ft * k * math.exp(-sig_e[c] * lt) / -wt[2]
        if col == max_col:
            return
        theta, ratio = phase.sample_deflection(rng.next_float(st), knots)
        phi = 2.0 * math.pi * rng.next_float(st)
        dx, dy, dz = phase.scatter(dx, dy, dz, theta, phi)
        wgt = phase.eval_lobes(math.cos(theta), lobes) * ratio
        for c in range(3):
            thr[c] *= wgt


@njit(cache=True, parallel=True)
def _walk_batch(wi, wr, wt, k, sig_s, sig_e, depth, lobes, knots, min_col, max_col, spp, seed):
    nblocks = (spp + BLOCK - 1) // BLOCK
    sums = np.zeros((nblocks, 12))
    sig_h = sig_e.min()
    for b in prange(nblocks):
        st = np.empty(1, dtype=np.uint64)
        out = np.zeros(6)
        for i in range(b * BLOCK, min(spp, (b + 1) * BLOCK)):
            st[0] = rng.stream_key(seed, i)
            out[:] = 0.0
            _walk(wi, wr, wt, k, sig_s, sig_e, sig_h, depth, lobes, knots, min_col, max_col, st, out)
            for c in range(6):
                sums[b, c] += out[c]
                sums[b, 6 + c] += out[c] * out[c]
    return sums


@dataclass
class OracleEstimate:
    """Reflection and transmission BSDF estimates per channel with standard errors."""

    refl: np.ndarray
    trans: np.ndarray
    refl_err: np.ndarray
    trans_err: np.ndarray


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def walk_estimate(spec, blended, wi, wo, min_collisions=1, max_collisions=8, spp=1_000_000, seed=0):
    """Monte Carlo BSDF of the slab counting collisions in [min, max].

    ``wo`` may point up or down; its mirror image through the surface is used
    for the other hemisphere, so both reflection and transmission come out
    of the same walks.
    """
    wi = _unit(wi)
    wo = _unit(wo)
    if wi[2] <= 0 or wo[2] == 0:
        raise ValueError("wi must point up and wo must not be horizontal")
    wr = wo.copy()
    wr[2] = abs(wo[2])
    wt = wo.copy()
    wt[2] = -abs(wo[2])
    sig_e = np.asarray(spec.sigma_eff, float)
    sig_s = spec.sigma_t * np.asarray(spec.albedo, float)
    if spp <= 0 or max_collisions < min_collisions or spec.thickness == 0 or sig_e.min() <= 0:
        z = np.zeros(3)
        return OracleEstimate(z, z.copy(), z.copy(), z.copy())
    sums = _walk_batch(wi, wr, wt, spec.k, sig_s, sig_e, float(spec.thickness), blended.lobes,
                       blended.knots, int(min_collisions), int(max_collisions), int(spp),
                       np.uint64(seed))
    tot = sums.sum(axis=0)
    mean = tot[:6] / spp
    err = np.sqrt(np.maximum(tot[6:] / spp - mean ** 2, 0.0) / spp)
    return OracleEstimate(mean[:3], mean[3:], err[:3], err[3:])


def rte_oracle(spec, blended, wi, wo, max_bounce=8, spp=1_000_000, seed=0, min_bounce=1):
    """Volumetric reference of the porosity/saturation-modified transport in the slab.

    Returns the reflection (toward ``wo`` mirrored upward) and transmission
    (mirrored downward) BSDF estimates over paths with ``min_bounce`` to
    ``max_bounce`` collisions. Restricted to one collision its expectation is
    the analytic single-scattering BSDF.
    """
    return walk_estimate(spec, blended, wi, wo, min_bounce, max_bounce, spp, seed)


def energy_report(spec, blended, theta_i, spp=200_000, seed=0, n_theta=16, n_phi=16, max_bounce=64):
    """Hemispherical reflectance and transmittance of the scattered light at theta_i.

    Integrates the oracle BSDF times |cos| over outgoing directions with a
    midpoint rule in (cos theta, phi).
    """
    wi = np.array([math.sin(theta_i), 0.0, math.cos(theta_i)])
    r = np.zeros(3)
    t = np.zeros(3)
    dmu = 1.0 / n_theta
    dphi = 2 * math.pi / n_phi
    for a in range(n_theta):
        mu = (a + 0.5) * dmu
        s = math.sqrt(1 - mu * mu)
        for b in range(n_phi):
            phi = (b + 0.5) * dphi
            wo = np.array([s * math.cos(phi), s * math.sin(phi), mu])
            est = rte_oracle(spec, blended, wi, wo, max_bounce, spp, seed + a * n_phi + b)
            r += est.refl * mu * dmu * dphi
            t += est.trans * mu * dmu * dphi
    return r, t
