"""Multiple-bounce Smith GGX BRDF.

The unidirectional evaluator walks VNDF-sampled bounces and adds a
next-event contribution towards ``wo`` at every vertex, weighted by the
incremental segment term. A height-explicit random walk provides an
independent reference, and a Hapke-style closed form gives a cheap proxy
density for multiple importance sampling.

Monte Carlo entry points take ``spp`` and ``seed``; every sample owns a
counter-based stream and partial sums are reduced over fixed blocks, so the
result does not depend on the thread count.
"""
import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from . import rng, segment, smith
from .smith import Fresnel, Roughness

BLOCK = 4096
_FM = {"nsz", "arcp", "contract", "afn", "reassoc"}

SEG_DP = 0
SEG_HYPEREXP = 1


@dataclass(frozen=True)
class EvalConfig:
    """Control of the path estimators."""

    max_bounce: int = 16
    rr_depth: int = 4
    rr_q: float = 0.9
    spp: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.max_bounce < 1:
            raise ValueError("max_bounce must be >= 1")
        if self.rr_depth < 1:
            raise ValueError("rr_depth must be >= 1")
        if not 0 < self.rr_q <= 1:
            raise ValueError("rr_q must lie in (0, 1]")


@dataclass
class BsdfSample:
    direction: np.ndarray
    weight: np.ndarray
    pdf_proxy: float
    bounces: int


@dataclass
class Estimate:
    """Per-channel Monte Carlo mean with its standard error."""

    mean: np.ndarray
    stderr: np.ndarray


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True, fastmath=_FM, inline="always")
def _reflect(dx, dy, dz, hx, hy, hz):
    c = dx * hx + dy * hy + dz * hz
    x = dx - 2.0 * c * hx
    y = dy - 2.0 * c * hy
    z = dz - 2.0 * c * hz
    n = math.sqrt(x * x + y * y + z * z)
    return x / n, y / n, z / n, -c


@njit(cache=True, fastmath=_FM)
def _eval_path(wi, wo, ax, ay, fmode, fvals, max_bounce, rr_depth, q, seg, st, out, e, g, l, vbuf):
    """One path of the evaluator; writes f * cos(theta_o) into ``out``."""
    lo = smith.lambda_xyz(wo[0], wo[1], wo[2], ax, ay)
    n, m, up = 0, 1.0, False
    ok = True
    prod = 1.0
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    w0 = 1.0
    w1 = 1.0
    w2 = 1.0
    dx = -wi[0]
    dy = -wi[1]
    dz = -wi[2]
    k = 0
    while True:
        ld = smith.lambda_xyz(dx, dy, dz, ax, ay)
        if seg == SEG_DP:
            n, m, up = segment.st_add(n, m, up, lo, e, g, l, ld)
        elif ok:
            n, ok = segment.he_add(n, e, g, ld)
            prod *= abs(ld)
        k += 1
        if k >= rr_depth:
            if rng.next_float(st) > q:
                break
            w0 /= q
            w1 /= q
            w2 /= q
        if seg == SEG_DP:
            s = segment.st_value(n, m, up, e, g)
        elif ok:
            s = segment.he_pexit(n, e, g, lo) / prod
        else:
            s = 0.0
        smith.vertex_xyz(dx, dy, dz, wo[0], wo[1], wo[2], ax, ay, fmode, fvals, vbuf)
        out[0] += w0 * vbuf[0] * s
        out[1] += w1 * vbuf[1] * s
        out[2] += w2 * vbuf[2] * s
        if k >= max_bounce:
            break
        hx, hy, hz = smith.sample_vndf_xyz(-dx, -dy, -dz, ax, ay, rng.next_float(st), rng.next_float(st))
        nx, ny, nz, ch = _reflect(dx, dy, dz, hx, hy, hz)
        if ch <= 0.0:
            break
        lmag = abs(ld)
        if fmode == smith.FRESNEL_CONSTANT:
            w0 *= fvals[0, 0] * lmag
            w1 *= fvals[0, 1] * lmag
            w2 *= fvals[0, 2] * lmag
        else:
            w0 *= smith.fresnel_scalar(ch, fmode, fvals[0, 0], fvals[1, 0]) * lmag
            w1 *= smith.fresnel_scalar(ch, fmode, fvals[0, 1], fvals[1, 1]) * lmag
            w2 *= smith.fresnel_scalar(ch, fmode, fvals[0, 2], fvals[1, 2]) * lmag
        dx = nx
        dy = ny
        dz = nz


@njit(cache=True)
def _walk_path(wi, wo, ax, ay, fmode, fvals, max_bounce, st, out):
    """Height-explicit random walk in the uniform height space u in (0, 1]."""
    lo = smith.lambda_xyz(wo[0], wo[1], wo[2], ax, ay)
    for c in range(3):
        out[c] = 0.0
    w = np.ones(3)
    dx = -wi[0]
    dy = -wi[1]
    dz = -wi[2]
    u = 1.0
    for _ in range(max_bounce):
        ld = smith.lambda_xyz(dx, dy, dz, ax, ay)
        x = rng.next_float(st)
        if dz < 0.0:
            u = u * (1.0 - x) ** (1.0 / -ld)
        else:
            if x >= 1.0 - u ** ld:
                break
            u = u / (1.0 - x) ** (1.0 / ld)
            if u >= 1.0:
                break
        p = smith.phase_nofresnel_xyz(-dx, -dy, -dz, wo[0], wo[1], wo[2], ax, ay)
        if p > 0.0:
            hx, hy, hz = smith.half_vector(-dx, -dy, -dz, wo[0], wo[1], wo[2])
            ch = -(dx * hx + dy * hy + dz * hz)
            esc = u ** lo
            for c in range(3):
                out[c] += w[c] * p * esc * smith.fresnel_scalar(ch, fmode, fvals[0, c], fvals[1, c])
        hx, hy, hz = smith.sample_vndf_xyz(-dx, -dy, -dz, ax, ay, rng.next_float(st), rng.next_float(st))
        nx, ny, nz, ch = _reflect(dx, dy, dz, hx, hy, hz)
        if ch <= 0.0:
            break
        for c in range(3):
            w[c] *= smith.fresnel_scalar(ch, fmode, fvals[0, c], fvals[1, c])
        dx = nx
        dy = ny
        dz = nz


@njit(cache=True, parallel=True)
def _eval_batch(wi, wo, ax, ay, fmode, fvals, max_bounce, rr_depth, q, seg, spp, seed, walk):
    """Per-block sums (and sums of squares) of the path estimates."""
    nblocks = (spp + BLOCK - 1) // BLOCK
    sums = np.zeros((nblocks, 6))
    cap = max_bounce + 2
    for b in prange(nblocks):
        st = np.empty(1, dtype=np.uint64)
        out = np.empty(3)
        vbuf = np.empty(3)
        e = np.empty(cap)
        g = np.empty(cap)
        l = np.empty(cap)
        lo = b * BLOCK
        hi = min(spp, lo + BLOCK)
        for i in range(lo, hi):
            st[0] = rng.stream_key(seed, i)
            if walk:
                _walk_path(wi, wo, ax, ay, fmode, fvals, max_bounce, st, out)
            else:
                _eval_path(wi, wo, ax, ay, fmode, fvals, max_bounce, rr_depth, q, seg, st, out,
                           e, g, l, vbuf)
            for c in range(3):
                sums[b, c] += out[c]
                sums[b, 3 + c] += out[c] * out[c]
    return sums


def _reduce(sums, spp, scale):
    tot = sums.sum(axis=0)
    mean = tot[:3] / spp
    var = np.maximum(tot[3:] / spp - mean ** 2, 0.0)
    return Estimate(mean * scale, np.sqrt(var / spp) * scale)


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def eval_stats(wi, wo, r, f=None, cfg=EvalConfig(), segterm="dp"):
    """Evaluator estimate of f(wi, wo) with its standard error.

    ``segterm`` selects the path shadowing factor: ``"dp"`` (incremental
    segment term) or ``"hyperexp"`` (exit probability of the height
    distribution divided by the Lambda product).
    """
    f = f or Fresnel.one()
    wi = _unit(wi)
    wo = _unit(wo)
    if wi[2] <= 0 or wo[2] <= 0:
        return Estimate(np.zeros(3), np.zeros(3))
    seg = {"dp": SEG_DP, "hyperexp": SEG_HYPEREXP}[segterm]
    sums = _eval_batch(wi, wo, r.alpha_x, r.alpha_y, f.mode, f.values, cfg.max_bounce,
                       cfg.rr_depth, cfg.rr_q, seg, cfg.spp, np.uint64(cfg.seed), False)
    return _reduce(sums, cfg.spp, 1.0 / wo[2])


def eval(wi, wo, r, f=None, cfg=EvalConfig()):
    """Multiple-bounce BRDF value f(wi, wo) per channel (Monte Carlo)."""
    return eval_stats(wi, wo, r, f, cfg).mean


def random_walk_reference(wi, wo, r, f=None, cfg=EvalConfig()):
    """Independent estimate of f(wi, wo) from an explicit height random walk."""
    return random_walk_stats(wi, wo, r, f, cfg).mean


def random_walk_stats(wi, wo, r, f=None, cfg=EvalConfig()):
    f = f or Fresnel.one()
    wi = _unit(wi)
    wo = _unit(wo)
    if wi[2] <= 0 or wo[2] <= 0:
        return Estimate(np.zeros(3), np.zeros(3))
    sums = _eval_batch(wi, wo, r.alpha_x, r.alpha_y, f.mode, f.values, cfg.max_bounce,
                       cfg.rr_depth, cfg.rr_q, SEG_DP, cfg.spp, np.uint64(cfg.seed), True)
    return _reduce(sums, cfg.spp, 1.0 / wo[2])


# ---------------------------------------------------------------------------
# sampling


@njit(cache=True)
def _sample_path(wi, ax, ay, fmode, fvals, max_bounce, st, lams, res):
    """One sampled path; writes [dx, dy, dz, w0, w1, w2, bounces] into ``res``.

    Weight is zero when the walk reaches ``max_bounce`` without leaving.
    """
    dx = -wi[0]
    dy = -wi[1]
    dz = -wi[2]
    w0 = 1.0
    w1 = 1.0
    w2 = 1.0
    p = 1.0
    lams[0] = smith.lambda_xyz(dx, dy, dz, ax, ay)
    k = 0
    exited = False
    while True:
        hx, hy, hz = smith.sample_vndf_xyz(-dx, -dy, -dz, ax, ay, rng.next_float(st), rng.next_float(st))
        nx, ny, nz, ch = _reflect(dx, dy, dz, hx, hy, hz)
        if ch <= 0.0:
            break
        lmag = abs(lams[k])
        w0 *= smith.fresnel_scalar(ch, fmode, fvals[0, 0], fvals[1, 0]) * lmag
        w1 *= smith.fresnel_scalar(ch, fmode, fvals[0, 1], fvals[1, 1]) * lmag
        w2 *= smith.fresnel_scalar(ch, fmode, fvals[0, 2], fvals[1, 2]) * lmag
        dx = nx
        dy = ny
        dz = nz
        k += 1
        lams[k] = smith.lambda_xyz(dx, dy, dz, ax, ay)
        if dz > 0.0:
            g1 = 1.0 / (1.0 + lams[k])
            if rng.next_float(st) < g1:
                p *= g1
                exited = True
                break
            p *= 1.0 - g1
        if k >= max_bounce:
            break
    res[0] = dx
    res[1] = dy
    res[2] = dz
    res[6] = k
    if not exited:
        res[3] = 0.0
        res[4] = 0.0
        res[5] = 0.0
        return
    e = np.empty(k + 1)
    g = np.empty(k + 1)
    l = np.empty(k + 1)
    n, m, up = 0, 1.0, False
    for j in range(k):
        n, m, up = segment.st_add(n, m, up, lams[k], e, g, l, lams[j])
    s = segment.st_value(n, m, up, e, g) / p
    res[3] = w0 * s
    res[4] = w1 * s
    res[5] = w2 * s


@njit(cache=True, parallel=True)
def _sample_batch(wi, ax, ay, fmode, fvals, max_bounce, n, seed):
    out = np.empty((n, 7))
    nblocks = (n + BLOCK - 1) // BLOCK
    for b in prange(nblocks):
        st = np.empty(1, dtype=np.uint64)
        lams = np.empty(max_bounce + 2)
        for i in range(b * BLOCK, min(n, (b + 1) * BLOCK)):
            st[0] = rng.stream_key(seed, i)
            _sample_path(wi, ax, ay, fmode, fvals, max_bounce, st, lams, out[i])
    return out


def sample_many(wi, r, f=None, cfg=EvalConfig(), n=None):
    """Draw ``n`` (default ``cfg.spp``) samples; returns (directions, weights, bounces).

    Weights estimate f * cos(theta_o) / p(direction); zero-weight rows mark
    walks that did not leave within ``max_bounce`` bounces.
    """
    f = f or Fresnel.one()
    wi = _unit(wi)
    n = cfg.spp if n is None else n
    if wi[2] <= 0:
        raise ValueError("wi must point upward")
    out = _sample_batch(wi, r.alpha_x, r.alpha_y, f.mode, f.values, cfg.max_bounce, n, np.uint64(cfg.seed))
    return out[:, :3], out[:, 3:6], out[:, 6].astype(np.int64)


def sample(wi, r, f=None, cfg=EvalConfig(), index=0):
    """Single sample using the stream ``(cfg.seed, index)``."""
    f = f or Fresnel.one()
    wi = _unit(wi)
    if wi[2] <= 0:
        raise ValueError("wi must point upward")
    st = np.array([rng.stream_key(np.uint64(cfg.seed), index)], dtype=np.uint64)
    lams = np.empty(cfg.max_bounce + 2)
    res = np.empty(7)
    _sample_path(wi, r.alpha_x, r.alpha_y, f.mode, f.values, cfg.max_bounce, st, lams, res)
    d = res[:3].copy()
    pdf_val = float(pdf(wi, d, r)) if d[2] > 0 else 0.0
    return BsdfSample(d, res[3:6].copy(), pdf_val, int(res[6]))


# ---------------------------------------------------------------------------
# proxy density


def hapke_h(mu, a):
    """Isotropic-scattering H function approximation (1 + 2mu)/(1 + 2 sqrt(1 - a) mu)."""
    mu = np.asarray(mu, float)
    return (1 + 2 * mu) / (1 + 2 * math.sqrt(max(0.0, 1.0 - a)) * mu)


def pdf_multiple(wi, wo, r, normal=(0.0, 0.0, 1.0)):
    """Multiple-bounce part of the proxy density (isotropic Hapke term)."""
    a = min(r.mean, 1.0)
    n = np.asarray(normal, float)
    mi = np.abs(np.asarray(wi, float) @ n)
    mo = np.abs(np.asarray(wo, float) @ n)
    return a / (4 * math.pi) * (hapke_h(mi, a) * hapke_h(mo, a) - 1) / (mi + mo)


def pdf_single(wi, wo, r):
    """Single-bounce VNDF reflection density D_wi(h) / (4 |h.wi|)."""
    return smith.smith_phase(wi, wo, r)[..., 0]


def pdf(wi, wo, r, normal=(0.0, 0.0, 1.0)):
    """Proxy density of outgoing directions: single bounce + Hapke multiple term.

    It is a proxy, not a normalized density; see :func:`pdf_normalization`.
    """
    return pdf_single(wi, wo, r) + pdf_multiple(wi, wo, r, normal)


def pdf_normalization(wi, r, n_theta=256, n_phi=256):
    """Integral of :func:`pdf` over the upper hemisphere (midpoint in cos, phi)."""
    mu = (np.arange(n_theta) + 0.5) / n_theta
    phi = (np.arange(n_phi) + 0.5) / n_phi * 2 * np.pi
    M, P = np.meshgrid(mu, phi, indexing="ij")
    s = np.sqrt(1 - M * M)
    wo = np.stack([s * np.cos(P), s * np.sin(P), M], axis=-1)
    vals = pdf(np.broadcast_to(wi, wo.shape), wo, r)
    return float(vals.sum() * (1.0 / n_theta) * (2 * np.pi / n_phi))


def lambertian_baseline(wi, wo, r):
    """Single bounce density plus a cosine lobe, the comparison proxy."""
    return pdf_single(wi, wo, r) + np.maximum(np.asarray(wo, float)[..., 2], 0.0) / math.pi


# ---------------------------------------------------------------------------
# white furnace


@njit(cache=True, parallel=True, fastmath=_FM)
def _furnace_batch(wi, ax, ay, max_bounce, rr_depth, q, seg, spp, seed):
    nblocks = (spp + BLOCK - 1) // BLOCK
    sums = np.zeros((nblocks, 2))
    fvals = np.ones((2, 3))
    cap = max_bounce + 2
    for b in prange(nblocks):
        st = np.empty(1, dtype=np.uint64)
        out = np.empty(3)
        vbuf = np.empty(3)
        e = np.empty(cap)
        g = np.empty(cap)
        l = np.empty(cap)
        wo = np.empty(3)
        for i in range(b * BLOCK, min(spp, (b + 1) * BLOCK)):
            st[0] = rng.stream_key(seed, i)
            u0 = rng.next_float(st)
            u1 = rng.next_float(st)
            u2 = rng.next_float(st)
            if u0 < 0.5:
                hx, hy, hz = smith.sample_vndf_xyz(wi[0], wi[1], wi[2], ax, ay, u1, u2)
                x, y, z, ch = _reflect(-wi[0], -wi[1], -wi[2], hx, hy, hz)
            else:
                rr = math.sqrt(u1)
                phi = 2.0 * math.pi * u2
                x = rr * math.cos(phi)
                y = rr * math.sin(phi)
                z = math.sqrt(max(0.0, 1.0 - u1))
            if z <= 0.0:
                continue
            wo[0] = x
            wo[1] = y
            wo[2] = z
            pm = 0.5 * smith.phase_nofresnel_xyz(wi[0], wi[1], wi[2], x, y, z, ax, ay) + 0.5 * z / math.pi
            if pm <= 0.0:
                continue
            _eval_path(wi, wo, ax, ay, 0, fvals, max_bounce, rr_depth, q, seg, st, out, e, g, l, vbuf)
            val = out[0] / pm
            sums[b, 0] += val
            sums[b, 1] += val * val
    return sums


def furnace_stats(theta_i, r, cfg=EvalConfig(), segterm="dp"):
    """Directional albedo with F = 1 and its standard error."""
    wi = np.array([math.sin(theta_i), 0.0, math.cos(theta_i)])
    seg = {"dp": SEG_DP, "hyperexp": SEG_HYPEREXP}[segterm]
    sums = _furnace_batch(wi, r.alpha_x, r.alpha_y, cfg.max_bounce, cfg.rr_depth, cfg.rr_q, seg,
                          cfg.spp, np.uint64(cfg.seed))
    tot = sums.sum(axis=0)
    mean = tot[0] / cfg.spp
    var = max(tot[1] / cfg.spp - mean * mean, 0.0)
    return mean, math.sqrt(var / cfg.spp)


def furnace_albedo(theta_i, r, cfg=EvalConfig()):
    """Cosine-weighted hemispherical integral of eval with F = 1 (radians in)."""
    return furnace_stats(theta_i, r, cfg)[0]


# ---------------------------------------------------------------------------
# outgoing-direction histograms on equal-solid-angle bins (cos theta, phi)


def grid_centers(n_mu=32, n_phi=32):
    """Bin-center directions (n_mu, n_phi, 3) and the common bin solid angle."""
    mu = (np.arange(n_mu) + 0.5) / n_mu
    phi = (np.arange(n_phi) + 0.5) / n_phi * 2 * np.pi
    M, P = np.meshgrid(mu, phi, indexing="ij")
    s = np.sqrt(1 - M * M)
    return np.stack([s * np.cos(P), s * np.sin(P), M], axis=-1), 2 * np.pi / (n_mu * n_phi)


def sample_histogram(wi, r, f=None, cfg=EvalConfig(), n_mu=32, n_phi=32, channel=0):
    """Sum of sample weights per bin divided by the sample count."""
    d, w, _ = sample_many(wi, r, f, cfg)
    up = d[:, 2] > 0
    mu = d[up, 2]
    phi = np.mod(np.arctan2(d[up, 1], d[up, 0]), 2 * np.pi)
    h, _, _ = np.histogram2d(mu, phi, bins=[n_mu, n_phi], range=[[0, 1], [0, 2 * np.pi]],
                             weights=w[up, channel])
    return h / len(d)


def eval_histogram(wi, r, f=None, cfg=EvalConfig(), n_mu=32, n_phi=32, channel=0):
    """Midpoint estimate of the integral of f cos over each bin (evaluator)."""
    dirs, omega = grid_centers(n_mu, n_phi)
    out = np.empty((n_mu, n_phi))
    for a in range(n_mu):
        for b in range(n_phi):
            c = EvalConfig(cfg.max_bounce, cfg.rr_depth, cfg.rr_q, cfg.spp, cfg.seed + a * n_phi + b)
            out[a, b] = eval(wi, dirs[a, b], r, f, c)[channel] * dirs[a, b, 2] * omega
    return out


def density_histogram(func, wi, n_mu=32, n_phi=32):
    """Midpoint bin masses of a solid-angle density ``func(wi, wo)``."""
    dirs, omega = grid_centers(n_mu, n_phi)
    wib = np.broadcast_to(np.asarray(wi, float), dirs.shape)
    return np.asarray(func(wib, dirs), float) * omega


def l1_shape(p, q):
    """L1 distance between two histograms after normalizing each to unit mass."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    return float(np.abs(p / p.sum() - q / q.sum()).sum())
