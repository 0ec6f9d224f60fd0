"""Angular scattering of single particles and two-Gaussian phase functions.

A Monte Carlo simulator traces rays through an ellipsoidal particle with a
rough dielectric (GGX) interface and records the deflection angle between
the incident and exiting propagation directions. The resulting density per
unit solid angle is fitted with a mixture of two Gaussians in the
deflection angle, with a two-lobe Henyey-Greenstein fit as a baseline.

Fitted curves approximate the raw simulated density, which carries the
particle's absorption. ``BlendedPhase`` mixes several fits and derives a
copy normalized over the sphere together with an inverse-CDF table for
sampling.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from scipy import integrate, optimize, special

from . import rng, smith

BLOCK = 4096
N_BINS = 180
N_KNOTS = 2048
MAX_EVENTS = 256
_SQRT2PI = math.sqrt(2.0 * math.pi)


class FitDiverged(RuntimeError):
    """No start of the two-Gaussian fit reached the single-Gaussian baseline."""


@dataclass(frozen=True)
class ParticleSpec:
    """Particle shape and material.

    ``psi`` is the minor/major axis ratio of an ellipsoid with two equal
    minor axes, ``roughness`` the GGX alpha of its surface.
    """

    psi: float
    roughness: float
    eta_p: float
    albedo: tuple = (1.0, 1.0, 1.0)
    blend_weight: float = 1.0

    def __post_init__(self):
        if not 0 < self.psi <= 1:
            raise ValueError("psi must lie in (0, 1]")
        if self.roughness < 0:
            raise ValueError("roughness must be >= 0")
        if self.eta_p <= 1:
            raise ValueError("eta_p must exceed 1")
        alb = tuple(float(a) for a in np.broadcast_to(np.asarray(self.albedo, float), (3,)))
        if any(a < 0 or a > 1 for a in alb):
            raise ValueError("albedo must lie in [0, 1]")
        object.__setattr__(self, "albedo", alb)
        if not 0 <= self.blend_weight <= 1:
            raise ValueError("blend_weight must lie in [0, 1]")


@dataclass
class PhaseHistogram:
    """Deflection-angle histogram as a density per steradian."""

    edges: np.ndarray
    density: np.ndarray
    counts: np.ndarray
    hits: int
    misses: int
    energy: float

    @property
    def theta(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def solid_angle(self):
        return 2.0 * math.pi * (np.cos(self.edges[:-1]) - np.cos(self.edges[1:]))

    @property
    def integral(self):
        """Integral of the density over the sphere (scattered energy per hit)."""
        return float(np.sum(self.density * self.solid_angle))


# ---------------------------------------------------------------------------
# simulator


@njit(cache=True)
def _basis(x, y, z):
    if z < -0.9999999:
        return 0.0, -1.0, 0.0, -1.0, 0.0, 0.0
    a = 1.0 / (1.0 + z)
    b = -x * y * a
    return 1.0 - x * x * a, b, -x, b, 1.0 - y * y * a, -y


@njit(cache=True)
def _ellipsoid_hit(ox, oy, oz, dx, dy, dz, psi, far):
    # axes (1, psi, psi): scale to the unit sphere
    sy = oy / psi
    sz = oz / psi
    ey = dy / psi
    ez = dz / psi
    a = dx * dx + ey * ey + ez * ez
    b = ox * dx + sy * ey + sz * ez
    c = ox * ox + sy * sy + sz * sz - 1.0
    disc = b * b - a * c
    if disc <= 0.0:
        return -1.0
    r = math.sqrt(disc)
    if far:
        return (-b + r) / a
    return (-b - r) / a


@njit(cache=True)
def _trace(dx0, dy0, dz0, ox, oy, oz, psi, rough, eta, albedo, st):
    """Weight and exit direction cosine of one ray; weight < 0 on a miss."""
    t = _ellipsoid_hit(ox, oy, oz, dx0, dy0, dz0, psi, False)
    if t <= 0.0:
        return -1.0, 0.0
    px, py, pz = ox + t * dx0, oy + t * dy0, oz + t * dz0
    dx, dy, dz = dx0, dy0, dz0
    inside = False
    w = 1.0
    p2 = psi * psi
    for _ in range(MAX_EVENTS):
        nx, ny, nz = px, py / p2, pz / p2
        nn = math.sqrt(nx * nx + ny * ny + nz * nz)
        nx /= nn
        ny /= nn
        nz /= nn
        # microsurface walk at this point until the ray leaves it
        for _ in range(MAX_EVENTS):
            fx, fy, fz = (-nx, -ny, -nz) if inside else (nx, ny, nz)
            if dx * fx + dy * fy + dz * fz > 0.0:
                break
            tx, ty, tz, bx, by, bz = _basis(fx, fy, fz)
            vx = -(dx * tx + dy * ty + dz * tz)
            vy = -(dx * bx + dy * by + dz * bz)
            vz = max(-(dx * fx + dy * fy + dz * fz), 1e-9)
            mx, my, mz = smith.sample_vndf_xyz(vx, vy, vz, rough, rough, rng.next_float(st),
                                               rng.next_float(st))
            hx = mx * tx + my * bx + mz * fx
            hy = mx * ty + my * by + mz * fy
            hz = mx * tz + my * bz + mz * fz
            c = -(dx * hx + dy * hy + dz * hz)
            rel = 1.0 / eta if inside else eta
            w *= albedo
            f = smith.fresnel_scalar(c, smith.FRESNEL_DIELECTRIC, rel, 0.0)
            if rng.next_float(st) < f:
                dx, dy, dz = dx + 2.0 * c * hx, dy + 2.0 * c * hy, dz + 2.0 * c * hz
            else:
                k = 1.0 / rel
                ct = math.sqrt(max(0.0, 1.0 - k * k * (1.0 - c * c)))
                g = k * c - ct
                dx, dy, dz = k * dx + g * hx, k * dy + g * hy, k * dz + g * hz
                inside = not inside
            dn = math.sqrt(dx * dx + dy * dy + dz * dz)
            dx /= dn
            dy /= dn
            dz /= dn
        else:
            return 0.0, 1.0
        if not inside:
            return w, dx * dx0 + dy * dy0 + dz * dz0
        t = _ellipsoid_hit(px, py, pz, dx, dy, dz, psi, True)
        if t <= 0.0:
            return 0.0, 1.0
        px, py, pz = px + t * dx, py + t * dy, pz + t * dz
    return 0.0, 1.0


@njit(cache=True, parallel=True)
def _simulate(psi, rough, eta, albedo, n, seed, nbins):
    nblocks = (n + BLOCK - 1) // BLOCK
    hist = np.zeros((nblocks, nbins))
    counts = np.zeros((nblocks, nbins), dtype=np.int64)
    hits = np.zeros(nblocks, dtype=np.int64)
    for b in prange(nblocks):
        st = np.empty(1, dtype=np.uint64)
        for i in range(b * BLOCK, min(n, (b + 1) * BLOCK)):
            st[0] = rng.stream_key(seed, i)
            z = 1.0 - 2.0 * rng.next_float(st)
            phi = 2.0 * math.pi * rng.next_float(st)
            s = math.sqrt(max(0.0, 1.0 - z * z))
            dx, dy, dz = s * math.cos(phi), s * math.sin(phi), z
            tx, ty, tz, bx, by, bz = _basis(dx, dy, dz)
            r = math.sqrt(rng.next_float(st))
            a = 2.0 * math.pi * rng.next_float(st)
            u, v = r * math.cos(a), r * math.sin(a)
            ox = -2.0 * dx + u * tx + v * bx
            oy = -2.0 * dy + u * ty + v * by
            oz = -2.0 * dz + u * tz + v * bz
            w, c = _trace(dx, dy, dz, ox, oy, oz, psi, rough, eta, albedo, st)
            if w < 0.0:
                continue
            hits[b] += 1
            if w == 0.0:
                continue
            theta = math.acos(min(1.0, max(-1.0, c)))
            k = min(int(theta / math.pi * nbins), nbins - 1)
            hist[b, k] += w
            counts[b, k] += 1
    return hist, counts, hits


def simulate_particle(spec, liquid_eta=None, samples=1_000_000, seed=0, bins=N_BINS):
    """Deflection-angle histogram of a particle in air or in a liquid.

    Incident directions are uniform on the sphere and ray origins uniform on
    a disk covering the particle. Each interface event samples a visible GGX
    normal and chooses reflection with the Fresnel probability; the albedo
    (mean over channels) multiplies the weight at every event.
    """
    if samples < 100_000:
        raise ValueError("samples must be >= 1e5")
    eta = spec.eta_p / (liquid_eta if liquid_eta else 1.0)
    albedo = float(np.mean(spec.albedo))
    hist, counts, hits = _simulate(float(spec.psi), float(spec.roughness), float(eta), albedo,
                                   int(samples), np.uint64(seed), int(bins))
    edges = np.linspace(0.0, math.pi, bins + 1)
    nhit = int(hits.sum())
    sums = hist.sum(axis=0)
    omega = 2.0 * math.pi * (np.cos(edges[:-1]) - np.cos(edges[1:]))
    density = sums / (max(nhit, 1) * omega)
    return PhaseHistogram(edges, density, counts.sum(axis=0), nhit, int(samples) - nhit,
                          float(sums.sum()))


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class PhaseFit:
    """Two Gaussians in the deflection angle (radians)."""

    w1: float
    mu1: float
    sigma1: float
    w2: float
    mu2: float
    sigma2: float

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("weights must be >= 0")
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise ValueError("sigmas must be > 0")

    def __call__(self, theta):
        return two_gaussian(theta, self.as_array())

    def as_array(self):
        return np.array([self.w1, self.mu1, self.sigma1, self.w2, self.mu2, self.sigma2])

    def integral(self):
        """Integral over the sphere, int f 2 pi sin(theta) d theta."""
        return _sphere_integral(self)


def gaussian(theta, mu, sigma):
    z = (np.asarray(theta, float) - mu) / sigma
    return np.exp(-0.5 * z * z) / (sigma * _SQRT2PI)


def two_gaussian(theta, p):
    return p[0] * gaussian(theta, p[1], p[2]) + p[3] * gaussian(theta, p[4], p[5])


def henyey_greenstein(theta, g):
    c = np.cos(theta)
    return (1 - g * g) / (4 * math.pi * (1 + g * g - 2 * g * c) ** 1.5)


def two_hg(theta, p):
    return p[0] * henyey_greenstein(theta, p[1]) + p[2] * henyey_greenstein(theta, p[3])


def _sphere_integral(f):
    val, _ = integrate.quad(lambda t: f(t) * 2 * math.pi * math.sin(t), 0.0, math.pi,
                            epsabs=0.0, epsrel=1e-12, limit=400)
    return val


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FitResult:
    params: np.ndarray
    rss: float
    model: str
    starts: int = 1
    fit: PhaseFit = None


def _lm(residual, jac, x0):
    res = optimize.least_squares(residual, x0, jac=jac, method="lm", ftol=1e-9, xtol=1e-12,
                                 gtol=1e-15, max_nfev=500 * (len(x0) + 1))
    return res.x, 2.0 * res.cost


def _gauss_unpack(x):
    n = len(x) // 3
    out = np.empty(3 * n)
    for j in range(n):
        a, q, s = x[3 * j:3 * j + 3]
        out[3 * j:3 * j + 3] = (math.exp(min(a, 700.0)), math.pi * special.expit(q),
                                math.exp(min(max(s, -40.0), 40.0)))
    return out


def _gauss_pack(p):
    x = np.empty(len(p))
    for j in range(len(p) // 3):
        w, mu, sig = p[3 * j:3 * j + 3]
        x[3 * j] = math.log(max(w, 1e-300))
        mu = min(max(mu, 1e-4), math.pi - 1e-4)
        x[3 * j + 1] = math.log(mu / (math.pi - mu))
        x[3 * j + 2] = math.log(sig)
    return x


def _gauss_fit(theta, y, p0):
    """Least squares over n Gaussian lobes; weights and sigmas stay positive, mu in [0, pi]."""
    n = len(p0) // 3

    def model_parts(x):
        p = _gauss_unpack(x)
        return p, [gaussian(theta, p[3 * j + 1], p[3 * j + 2]) for j in range(n)]

    def residual(x):
        p, g = model_parts(x)
        return sum(p[3 * j] * g[j] for j in range(n)) - y

    def jac(x):
        p, g = model_parts(x)
        out = np.empty((len(theta), 3 * n))
        for j in range(n):
            w, mu, sig = p[3 * j:3 * j + 3]
            d = theta - mu
            out[:, 3 * j] = w * g[j]
            out[:, 3 * j + 1] = w * g[j] * d / sig ** 2 * mu * (1 - mu / math.pi)
            out[:, 3 * j + 2] = w * g[j] * (d * d / sig ** 2 - 1.0)
        return out

    x, rss = _lm(residual, jac, _gauss_pack(np.asarray(p0, float)))
    return _gauss_unpack(x), rss


def _data(hist):
    mask = hist.counts > 0
    if mask.sum() < 32:
        raise ValueError("histogram needs at least 32 nonempty bins")
    return hist.theta, hist.density


def _rss(model, theta, y):
    r = model - y
    return float(r @ r)


def _mass_split(theta, y, cut=0.5 * math.pi):
    dth = theta[1] - theta[0]
    fwd = float(np.sum(y[theta < cut]) * dth)
    back = float(np.sum(y[theta >= cut]) * dth)
    return max(fwd, 1e-12), max(back, 1e-12)


def fit_one_gaussian(hist):
    theta, y = _data(hist)
    total = sum(_mass_split(theta, y))
    best = None
    for mu in (0.0, math.pi / 6, 2 * math.pi / 3, math.pi):
        for sig in (0.2, 0.6):
            p, rss = _gauss_fit(theta, y, [total, mu, sig])
            rss = _rss(two_gaussian(theta, np.r_[p, 0.0, 0.0, 1.0]), theta, y)
            if np.isfinite(rss) and (best is None or rss < best.rss):
                best = FitResult(p, rss, "one-gaussian", 8)
    return best


def default_starts(hist):
    """Eight starting points: mu1 in {0, pi/6}, mu2 in {2pi/3, pi}, sigma in {0.2, 0.6}."""
    theta, y = hist.theta, hist.density
    w1, w2 = _mass_split(theta, y)
    return [PhaseFit(w1, m1, s, w2, m2, s)
            for m1 in (0.0, math.pi / 6) for m2 in (2 * math.pi / 3, math.pi) for s in (0.2, 0.6)]


def fit_two_gaussian(hist, init=None):
    """Multi-start damped least-squares fit of the two-Gaussian phase function.

    ``init`` (a PhaseFit or list of them) replaces the default starts. The
    single-Gaussian optimum is always added as a start with a vanishing
    second lobe, so the result never has a larger RSS than that baseline.
    """
    theta, y = _data(hist)
    one = fit_one_gaussian(hist)
    if init is None:
        starts = default_starts(hist)
    else:
        starts = [init] if isinstance(init, PhaseFit) else list(init)
    tiny = 1e-9 * max(one.params[0], 1e-300)
    candidates = [s.as_array() for s in starts]
    candidates.append(np.r_[one.params, tiny, math.pi - one.params[1], 0.5])
    best = None
    for p0 in candidates:
        try:
            p, _ = _gauss_fit(theta, y, p0)
        except (ValueError, FloatingPointError):
            continue
        rss = _rss(two_gaussian(theta, p), theta, y)
        if np.isfinite(rss) and (best is None or rss < best.rss):
            best = FitResult(p, rss, "two-gaussian", len(candidates))
    slack = 1e-9 * one.rss + 1e-12 * float(y @ y)
    if best is None or best.rss > one.rss + slack:
        raise FitDiverged("no start reached the single-Gaussian RSS")
    if best.rss > one.rss:
        # the baseline itself, as a two-Gaussian with an empty second lobe
        best.params = np.r_[one.params, 0.0, math.pi, 1.0]
        best.rss = one.rss
    best.fit = PhaseFit(*best.params)
    return best


def fit_two_hg_baseline(hist, init=None):
    """Same optimizer over w1 HG(g1) + w2 HG(g2), each lobe normalized per steradian."""
    theta, y = _data(hist)
    omega = hist.solid_angle
    fwd = float(np.sum((y * omega)[theta < 0.5 * math.pi]))
    back = float(np.sum((y * omega)[theta >= 0.5 * math.pi]))
    if init is None:
        starts = [[max(fwd, 1e-12), g1, max(back, 1e-12), g2]
                  for g1 in (0.3, 0.7) for g2 in (-0.3, -0.7)]
    else:
        starts = [list(init)]

    def unpack(x):
        return np.array([math.exp(min(x[0], 700.0)), math.tanh(x[1]), math.exp(min(x[2], 700.0)),
                         math.tanh(x[3])])

    def residual(x):
        return two_hg(theta, unpack(x)) - y

    best = None
    for p0 in starts:
        x0 = [math.log(p0[0]), math.atanh(p0[1]), math.log(p0[2]), math.atanh(p0[3])]
        x, _ = _lm(residual, "2-point", np.array(x0))
        p = unpack(x)
        rss = _rss(two_hg(theta, p), theta, y)
        if np.isfinite(rss) and (best is None or rss < best.rss):
            best = FitResult(p, rss, "two-hg", len(starts))
    return best


# ---------------------------------------------------------------------------
# blending and sampling tables


@dataclass
class BlendedPhase:
    """Weighted mixture of two-Gaussian fits and its normalized sampling copy."""

    fits: list
    weights: list
    knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.fits = list(self.fits)
        w = np.asarray(self.weights, float)
        if len(w) != len(self.fits) or len(w) == 0:
            raise ValueError("need one weight per fit")
        if np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
            raise ValueError("blend weights must be >= 0 and sum to 1")
        self.weights = list(w)
        self.norm = _sphere_integral(self.raw)
        if not self.norm > 0:
            raise ValueError("phase function integrates to zero")
        lobes = [(wb * f.w1, f.mu1, f.sigma1) for wb, f in zip(w, self.fits)]
        lobes += [(wb * f.w2, f.mu2, f.sigma2) for wb, f in zip(w, self.fits)]
        self.lobes = np.array(lobes, float)
        self.lobes[:, 0] /= self.norm
        self.knots = _inverse_cdf(self.normalized, N_KNOTS)

    def raw(self, theta):
        return sum(wb * f(theta) for wb, f in zip(self.weights, self.fits))

    def __call__(self, theta):
        return self.raw(theta)

    def normalized(self, theta):
        return self.raw(theta) / self.norm

    def pdf(self, theta):
        """Density per steradian of the tabulated sampler."""
        return _table_pdf_arr(np.atleast_1d(np.asarray(theta, float)), self.knots).reshape(np.shape(theta))

    def sample_theta(self, u):
        u = np.asarray(u, float)
        pos = u * (len(self.knots) - 1)
        k = np.minimum(pos.astype(int), len(self.knots) - 2)
        fr = pos - k
        return self.knots[k] + fr * (self.knots[k + 1] - self.knots[k])


def _inverse_cdf(f, n):
    grid = np.linspace(0.0, math.pi, 1 << 16)
    dens = f(grid) * 2 * math.pi * np.sin(grid)
    cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    cdf /= cdf[-1]
    u = np.linspace(0.0, 1.0, n)
    knots = np.interp(u, cdf, grid)
    knots[0], knots[-1] = 0.0, math.pi
    return np.maximum.accumulate(knots)


def _table_pdf_arr(theta, knots):
    n = len(knots) - 1
    k = np.clip(np.searchsorted(knots, theta, side="right") - 1, 0, n - 1)
    width = knots[k + 1] - knots[k]
    s = np.sin(theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where((width > 0) & (s > 0), 1.0 / (n * width * 2 * math.pi * s), 0.0)
    return out


@njit(cache=True)
def eval_lobes(cos_t, lobes):
    """Normalized blended phase at the deflection cosine ``cos_t``."""
    t = math.acos(min(1.0, max(-1.0, cos_t)))
    v = 0.0
    for j in range(lobes.shape[0]):
        z = (t - lobes[j, 1]) / lobes[j, 2]
        v += lobes[j, 0] * math.exp(-0.5 * z * z) / (lobes[j, 2] * 2.5066282746310002)
    return v


@njit(cache=True)
def sample_deflection(u, knots):
    """Deflection angle from the table and the ratio phase/pdf of that draw."""
    n = knots.shape[0] - 1
    pos = u * n
    k = min(int(pos), n - 1)
    width = knots[k + 1] - knots[k]
    t = knots[k] + (pos - k) * width
    return t, n * width * 2.0 * math.pi * math.sin(t)


@njit(cache=True)
def scatter(dx, dy, dz, theta, phi):
    """Rotate the unit vector d by the polar angle theta about azimuth phi."""
    tx, ty, tz, bx, by, bz = _basis(dx, dy, dz)
    st = math.sin(theta)
    ct = math.cos(theta)
    cp = math.cos(phi) * st
    sp = math.sin(phi) * st
    x = ct * dx + cp * tx + sp * bx
    y = ct * dy + cp * ty + sp * by
    z = ct * dz + cp * tz + sp * bz
    n = math.sqrt(x * x + y * y + z * z)
    return x / n, y / n, z / n
