"""Smith GGX microsurface: Lambda, masking, NDF, visible normals, Fresnel.

Sign convention for Lambda: upward directions (z > 0) carry the usual
non-negative value, downward ones satisfy ``lam(-w) = -1 - lam(w)`` so that
``lam(w) <= -1`` whenever ``w.z < 0``.

Direction arguments are arrays with a trailing axis of length 3 (z-up
shading frame). The ``*_xyz`` kernels are scalar numba functions used by the
Monte Carlo estimators.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

Z_EPS = 1e-7
_FM = {"nsz", "arcp", "contract", "afn", "reassoc"}

FRESNEL_CONSTANT = 0
FRESNEL_DIELECTRIC = 1
FRESNEL_CONDUCTOR = 2


@dataclass(frozen=True)
class Roughness:
    """GGX roughness; ``alpha_y`` defaults to ``alpha_x`` (isotropic)."""

    alpha_x: float
    alpha_y: float = None

    def __post_init__(self):
        if self.alpha_y is None:
            object.__setattr__(self, "alpha_y", self.alpha_x)
        if not (self.alpha_x > 0 and self.alpha_y > 0):
            raise ValueError("roughness must be positive")

    @property
    def mean(self):
        return 0.5 * (self.alpha_x + self.alpha_y)


@dataclass(frozen=True)
class Fresnel:
    """Per-channel Fresnel term.

    ``values`` is a (2, 3) array: row 0 holds F0 (constant mode) or the real
    index eta, row 1 holds the extinction k (conductor mode only).
    """

    mode: int = FRESNEL_CONSTANT
    values: np.ndarray = field(default_factory=lambda: np.array([[1.0] * 3, [0.0] * 3]))

    @classmethod
    def one(cls):
        return cls()

    @classmethod
    def constant(cls, f0):
        f0 = np.broadcast_to(np.asarray(f0, float), (3,))
        if np.any(f0 < 0) or np.any(f0 > 1):
            raise ValueError("F0 must lie in [0, 1]")
        return cls(FRESNEL_CONSTANT, np.array([f0, np.zeros(3)]))

    @classmethod
    def dielectric(cls, eta):
        eta = np.broadcast_to(np.asarray(eta, float), (3,))
        return cls(FRESNEL_DIELECTRIC, np.array([eta, np.zeros(3)]))

    @classmethod
    def conductor(cls, eta, k):
        eta = np.broadcast_to(np.asarray(eta, float), (3,))
        k = np.broadcast_to(np.asarray(k, float), (3,))
        return cls(FRESNEL_CONDUCTOR, np.array([eta, k]))

    def __call__(self, cos_theta):
        c = np.asarray(cos_theta, float)
        out = _fresnel_arr(c.ravel(), self.mode, self.values)
        return out.reshape(c.shape + (3,))


# ---------------------------------------------------------------------------
# scalar kernels


@njit(cache=True, fastmath=_FM, inline="always")
def lambda_xyz(x, y, z, ax, ay):
    az = max(abs(z), Z_EPS)
    t = (ax * ax * x * x + ay * ay * y * y) / (az * az)
    up = 0.5 * t / (1.0 + math.sqrt(1.0 + t))
    if z >= 0.0:
        return up
    return -1.0 - up


@njit(cache=True, fastmath=_FM)
def proj_area_xyz(x, y, z, ax, ay):
    """Projected area of the microsurface seen from w, i.e. w.z (1 + lam(w))."""
    s2 = ax * ax * x * x + ay * ay * y * y
    r = math.sqrt(z * z + s2)
    if z >= 0.0:
        return 0.5 * (z + r)
    if r - z == 0.0:
        return 0.0
    return 0.5 * s2 / (r - z)


@njit(cache=True, fastmath=_FM, inline="always")
def ggx_d_xyz(x, y, z, ax, ay):
    if z <= 0.0:
        return 0.0
    a = x * x / (ax * ax) + y * y / (ay * ay) + z * z
    return 1.0 / (math.pi * ax * ay * a * a)


@njit(cache=True, fastmath=_FM)
def vndf_xyz(vx, vy, vz, hx, hy, hz, ax, ay):
    """Density of visible normals h seen from the view direction v."""
    c = vx * hx + vy * hy + vz * hz
    if c <= 0.0:
        return 0.0
    sig = proj_area_xyz(vx, vy, vz, ax, ay)
    if sig <= 0.0:
        return 0.0
    return c * ggx_d_xyz(hx, hy, hz, ax, ay) / sig


@njit(cache=True, fastmath=_FM, inline="always")
def sample_vndf_xyz(vx, vy, vz, ax, ay, u1, u2):
    """Visible normal for view v (any hemisphere), spherical-cap method."""
    sx = ax * vx
    sy = ay * vy
    n = math.sqrt(sx * sx + sy * sy + vz * vz)
    sx /= n
    sy /= n
    sz = vz / n
    phi = 2.0 * math.pi * u1
    z = (1.0 - u2) * (1.0 + sz) - sz
    st = math.sqrt(max(0.0, 1.0 - z * z))
    hx = st * math.cos(phi) + sx
    hy = st * math.sin(phi) + sy
    hz = z + sz
    mx = ax * hx
    my = ay * hy
    mz = max(hz, 0.0)
    m = math.sqrt(mx * mx + my * my + mz * mz)
    if m == 0.0:
        return 0.0, 0.0, 1.0
    return mx / m, my / m, mz / m


@njit(cache=True, fastmath=_FM)
def fresnel_scalar(c, mode, v0, v1):
    if mode == FRESNEL_CONSTANT:
        return v0
    c = min(max(c, 0.0), 1.0)
    if mode == FRESNEL_DIELECTRIC:
        eta = v0
        s2t = (1.0 - c * c) / (eta * eta)
        if s2t >= 1.0:
            return 1.0
        ct = math.sqrt(1.0 - s2t)
        rs = (c - eta * ct) / (c + eta * ct)
        rp = (eta * c - ct) / (eta * c + ct)
        return 0.5 * (rs * rs + rp * rp)
    eta = v0
    k = v1
    c2 = c * c
    s2 = 1.0 - c2
    t0 = eta * eta - k * k - s2
    a2b2 = math.sqrt(t0 * t0 + 4.0 * eta * eta * k * k)
    t1 = a2b2 + c2
    a = math.sqrt(max(0.0, 0.5 * (a2b2 + t0)))
    t2 = 2.0 * c * a
    rs = (t1 - t2) / (t1 + t2)
    t3 = c2 * a2b2 + s2 * s2
    t4 = t2 * s2
    rp = rs * (t3 - t4) / (t3 + t4)
    return 0.5 * (rs + rp)


@njit(cache=True, fastmath=_FM)
def half_vector(ix, iy, iz, ox, oy, oz):
    hx = ix + ox
    hy = iy + oy
    hz = iz + oz
    n = math.sqrt(hx * hx + hy * hy + hz * hz)
    if n == 0.0:
        return 0.0, 0.0, 0.0
    return hx / n, hy / n, hz / n


@njit(cache=True, fastmath=_FM)
def phase_nofresnel_xyz(ix, iy, iz, ox, oy, oz, ax, ay):
    """Reflection phase function with F = 1; ``i`` points away from the
    scattering point towards where light arrives from."""
    hx, hy, hz = half_vector(ix, iy, iz, ox, oy, oz)
    c = ix * hx + iy * hy + iz * hz
    if c <= 0.0:
        return 0.0
    return vndf_xyz(ix, iy, iz, hx, hy, hz, ax, ay) / (4.0 * c)


@njit(cache=True, fastmath=_FM, inline="always")
def vertex_xyz(dx, dy, dz, ox, oy, oz, ax, ay, fmode, fvals, out):
    """Vertex term v(d, o) = f_p(-d, o) |lam(d)| written into ``out[0:3]``.

    The projected area in f_p cancels against |lam(d)|, leaving
    F D(h) / (4 |d.z|).
    """
    # Unnormalized half vector: D(h) is homogeneous of degree -4 in its
    # argument once rescaled by |H|^4, which saves a square root.
    hx = ox - dx
    hy = oy - dy
    hz = oz - dz
    if hz <= 0.0 or -(dx * hx + dy * hy + dz * hz) <= 0.0:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        return
    n2 = hx * hx + hy * hy + hz * hz
    a = hx * hx / (ax * ax) + hy * hy / (ay * ay) + hz * hz
    base = n2 * n2 / (4.0 * math.pi * ax * ay * a * a * max(abs(dz), Z_EPS))
    if fmode == FRESNEL_CONSTANT:
        out[0] = base * fvals[0, 0]
        out[1] = base * fvals[0, 1]
        out[2] = base * fvals[0, 2]
        return
    c = -(dx * hx + dy * hy + dz * hz) / math.sqrt(n2)
    for ch in range(3):
        out[ch] = base * fresnel_scalar(c, fmode, fvals[0, ch], fvals[1, ch])


# ---------------------------------------------------------------------------
# array loops


@njit(cache=True)
def _lambda_arr(d, ax, ay):
    out = np.empty(d.shape[0])
    for i in range(d.shape[0]):
        out[i] = lambda_xyz(d[i, 0], d[i, 1], d[i, 2], ax, ay)
    return out


@njit(cache=True)
def _ndf_arr(h, ax, ay):
    out = np.empty(h.shape[0])
    for i in range(h.shape[0]):
        out[i] = ggx_d_xyz(h[i, 0], h[i, 1], h[i, 2], ax, ay)
    return out


@njit(cache=True)
def _vndf_arr(v, h, ax, ay):
    out = np.empty(h.shape[0])
    for i in range(h.shape[0]):
        out[i] = vndf_xyz(v[i, 0], v[i, 1], v[i, 2], h[i, 0], h[i, 1], h[i, 2], ax, ay)
    return out


@njit(cache=True)
def _sample_vndf_arr(d, ax, ay, u1, u2):
    out = np.empty((u1.shape[0], 3))
    for i in range(u1.shape[0]):
        x, y, z = sample_vndf_xyz(-d[i, 0], -d[i, 1], -d[i, 2], ax, ay, u1[i], u2[i])
        out[i, 0] = x
        out[i, 1] = y
        out[i, 2] = z
    return out


@njit(cache=True)
def _fresnel_arr(c, mode, vals):
    out = np.empty((c.shape[0], 3))
    for i in range(c.shape[0]):
        for ch in range(3):
            out[i, ch] = fresnel_scalar(c[i], mode, vals[0, ch], vals[1, ch])
    return out


@njit(cache=True)
def _phase_arr(wi, wo, ax, ay, mode, vals):
    out = np.empty((wi.shape[0], 3))
    for i in range(wi.shape[0]):
        p = phase_nofresnel_xyz(wi[i, 0], wi[i, 1], wi[i, 2], wo[i, 0], wo[i, 1], wo[i, 2], ax, ay)
        hx, hy, hz = half_vector(wi[i, 0], wi[i, 1], wi[i, 2], wo[i, 0], wo[i, 1], wo[i, 2])
        c = wi[i, 0] * hx + wi[i, 1] * hy + wi[i, 2] * hz
        for ch in range(3):
            out[i, ch] = p * fresnel_scalar(c, mode, vals[0, ch], vals[1, ch])
    return out


@njit(cache=True)
def _vertex_arr(d, o, ax, ay, mode, vals):
    out = np.empty((d.shape[0], 3))
    buf = np.empty(3)
    for i in range(d.shape[0]):
        vertex_xyz(d[i, 0], d[i, 1], d[i, 2], o[i, 0], o[i, 1], o[i, 2], ax, ay, mode, vals, buf)
        out[i, :] = buf
    return out


def _flat(d):
    d = np.asarray(d, dtype=float)
    if d.shape[-1] != 3:
        raise ValueError("directions need a trailing axis of length 3")
    return np.ascontiguousarray(d.reshape(-1, 3)), d.shape[:-1]


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    fa, shape = _flat(a)
    fb, _ = _flat(b)
    return fa, fb, shape


def _shaped(values, shape):
    values = values.reshape(shape + values.shape[1:])
    return values[()] if values.ndim == 0 else values


# ---------------------------------------------------------------------------
# public API


def direction(theta, phi=0.0):
    """Unit vector from polar angle ``theta`` and azimuth ``phi`` (radians)."""
    theta = np.asarray(theta, float)
    phi = np.asarray(phi, float)
    st = np.sin(theta)
    return np.stack(np.broadcast_arrays(st * np.cos(phi), st * np.sin(phi), np.cos(theta)), axis=-1)


def lam(d, r):
    """Signed Smith Lambda of direction(s) ``d``."""
    flat, shape = _flat(d)
    return _shaped(_lambda_arr(flat, r.alpha_x, r.alpha_y), shape)


def g1(d, r):
    """Masking G1 = 1 / (1 + Lambda) for upward directions."""
    flat, shape = _flat(d)
    if np.any(flat[:, 2] <= 0):
        raise ValueError("g1 is defined for upward directions only")
    return _shaped(1.0 / (1.0 + _lambda_arr(flat, r.alpha_x, r.alpha_y)), shape)


def ndf(h, r):
    """GGX normal distribution D(h), per steradian."""
    flat, shape = _flat(h)
    return _shaped(_ndf_arr(flat, r.alpha_x, r.alpha_y), shape)


def vndf(view, h, r):
    """Visible normal density D_view(h) = <view, h> D(h) / proj_area(view)."""
    v, hh, shape = _pair(view, h)
    return _shaped(_vndf_arr(v, hh, r.alpha_x, r.alpha_y), shape)


def sample_vndf(d, r, u1, u2):
    """Sample a visible micronormal for a ray travelling along ``d``.

    ``d`` usually points downward; the sampler also handles rays travelling
    upward (seen from below the horizon), which the multiple-bounce walk needs.
    """
    u1 = np.asarray(u1, float)
    u2 = np.asarray(u2, float)
    u1, u2 = np.broadcast_arrays(u1, u2)
    dd = np.broadcast_to(np.asarray(d, float), u1.shape + (3,))
    flat, _ = _flat(dd)
    out = _sample_vndf_arr(flat, r.alpha_x, r.alpha_y, u1.ravel(), u2.ravel())
    return _shaped(out, u1.shape)


def smith_phase(wi, wo, r, f=None):
    """Microsurface reflection phase function F D_wi(h) / (4 |h.wi|), per channel.

    ``wi`` points away from the scattering point, opposite to the travel
    direction of the incoming ray.
    """
    f = f or Fresnel.one()
    a, b, shape = _pair(wi, wo)
    return _shaped(_phase_arr(a, b, r.alpha_x, r.alpha_y, f.mode, f.values), shape)


def vertex_term(d_in, d_out, r, f=None):
    """Path vertex term v(d_in, d_out) = f_p(-d_in, d_out) |Lambda(d_in)|."""
    f = f or Fresnel.one()
    a, b, shape = _pair(d_in, d_out)
    return _shaped(_vertex_arr(a, b, r.alpha_x, r.alpha_y, f.mode, f.values), shape)


def single_scatter_brdf(wi, wo, r, f=None):
    """Closed-form height-correlated Smith GGX BRDF F D G2 / (4 cos_i cos_o)."""
    f = f or Fresnel.one()
    wi = np.asarray(wi, float)
    wo = np.asarray(wo, float)
    h = wi + wo
    h = h / np.linalg.norm(h, axis=-1, keepdims=True)
    g2 = 1.0 / (1.0 + lam(wi, r) + lam(wo, r))
    d = ndf(h, r)
    fr = f(np.sum(wi * h, axis=-1))
    val = d * g2 / (4.0 * wi[..., 2] * wo[..., 2])
    return fr * np.asarray(val)[..., None]


def slope_lambda(d, r, n=4000):
    """Lambda from its slope-space integral definition (reference path).

    Lambda(w) = (1 / cos) * integral over slopes of max(0, -w.m_slope) P22,
    written as a 1-D integral over the slope along the azimuth of ``w``.
    """
    from scipy import integrate

    d = np.asarray(d, float)
    x, y, z = d
    if z <= 0:
        raise ValueError("slope_lambda expects an upward direction")
    sin = math.hypot(x, y)
    if sin == 0:
        return 0.0
    cphi, sphi = x / sin, y / sin
    alpha = math.sqrt(r.alpha_x ** 2 * cphi ** 2 + r.alpha_y ** 2 * sphi ** 2)
    mu = z / sin  # cot(theta)
    # Marginal GGX slope density along one axis for roughness alpha.
    p2 = lambda q: 1.0 / (2 * alpha * (1 + (q / alpha) ** 2) ** 1.5)
    val, _ = integrate.quad(lambda q: (q - mu) * p2(q), mu, np.inf, epsabs=0, epsrel=1e-12, limit=400)
    return val / mu
