"""Shadowing-masking factors of short microfacet paths with refraction.

A path d0, d1, ..., dn starts above the surface travelling downward (d0)
and carries one event per vertex: reflection ``R`` keeps the ray on its side
of the interface, refraction ``T`` moves it across. Each factor is written
in signed Smith Λ values, one per direction, with Λ <= -1 for downward and
Λ >= 0 for upward travel. Branches are selected by the vertical direction of
the interior segments: ``D`` for downward, ``U`` for upward.

Differences of Beta-type terms over nearly equal Λ magnitudes are removable
singularities. Below a relative separation of :data:`CONFLUENT_TOL` they are
replaced by the derivative at the midpoint (analytic for plain Beta
functions, central differences for the order-two generalized Beta).
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import smith
from .specfun import beta, d2beta_da2, dbeta_da, gen_beta_full, gen_beta_quad

KINDS = ("tr", "rt", "tt", "trr", "rtr", "ttr", "trt", "ttt")
EVENTS = {k: k.upper() for k in KINDS}

CONFLUENT_TOL = 1e-4
FD_STEP = 1e-4


class NearDegenerate(ArithmeticError):
    """Two Λ magnitudes are too close for a direct difference quotient."""


@dataclass
class MaskingResult:
    value: float
    branch: str
    method: str
    limit: bool = False
    oracle_rel_err: float = field(default=float("nan"))


class _Backend:
    """Beta-type evaluations with bookkeeping of the methods used."""

    def __init__(self, mode="analytic", spot_check=False):
        if mode not in ("analytic", "quadrature"):
            raise ValueError(f"unknown backend {mode!r}")
        self.mode = mode
        self.spot = spot_check
        self.methods = set()
        self.limit = False
        self.max_rel = 0.0

    def b(self, a, b):
        self.methods.add("beta")
        return beta(a, b)

    def bk(self, a, b):
        if self.mode == "quadrature":
            res = gen_beta_quad(a, b)
        else:
            res = gen_beta_full(a, b)
        self.methods.add(res.method)
        if self.spot and res.method != "quadrature":
            ref = gen_beta_quad(a, b).value
            self.max_rel = max(self.max_rel, abs(res.value - ref) / abs(ref))
        return res.value

    def method(self):
        for m in ("quadrature", "series", "beta"):
            if m in self.methods:
                return m + ("+limit" if self.limit else "")
        return "beta+limit" if self.limit else "closed"


def _close(x, y):
    return abs(y - x) <= CONFLUENT_TOL * max(1.0, abs(x), abs(y))


def _fd(f, x):
    h = FD_STEP * max(1.0, abs(x))
    return (f(x + h) - f(x - h)) / (2 * h)


def _dd2(be, f, x, y, df=None):
    """Divided difference f[x, y], switching to f'((x+y)/2) when confluent."""
    if not _close(x, y):
        return (f(y) - f(x)) / (y - x)
    be.limit = True
    m = 0.5 * (x + y)
    return df(m) if df is not None else _fd(f, m)


def _dd3(be, f, x, y, z, df, d2f):
    """Second divided difference f[x, y, z] with confluent handling."""
    x, y, z = sorted((x, y, z))
    if _close(x, z):
        be.limit = True
        return 0.5 * d2f((x + y + z) / 3)
    return (_dd2(be, f, y, z, df) - _dd2(be, f, x, y, df)) / (z - x)


_dbeta_dx = dbeta_da
_d2beta_dx2 = d2beta_da2


def _d2beta_dxdy(x, y):
    p = special.digamma(x + y)
    return beta(x, y) * ((special.digamma(x) - p) * (special.digamma(y) - p) - special.polygamma(1, x + y))


def _dir(lam):
    return "D" if lam < 0 else "U"


# ---------------------------------------------------------------------------
# two-vertex paths


def _tr(be, L):
    l0, l1, l2 = L
    a0, a2 = -l0, -l2
    if l1 < 0:
        # -(B(|Λ2|, |Λ0|) - B(|Λ1|, |Λ0|)) / (|Λ2| - |Λ1|)
        return -_dd2(be, lambda x: be.b(x, a0), -l1, a2, lambda x: _dbeta_dx(x, a0))
    return be.b(a2, a0) / (a2 + l1)


def _rt(be, L):
    l0, l1, l2 = L
    a0, a2 = -l0, -l2
    if l1 < 0:
        return -_dd2(be, lambda x: be.b(x, a2), -l1, a0, lambda x: _dbeta_dx(x, a2))
    return be.b(a0, a2) / (a0 + l1)


def _tt(be, L):
    l0, l1, l2 = L
    a0 = -l0
    if l1 < 0:
        return be.bk([a0, l2 + 1], [-l1, l1 + 1])
    return be.bk([l2 + 1, a0], [l1 + 1, -l1])


# ---------------------------------------------------------------------------
# three-vertex paths


def _trr(be, L):
    l0, l1, l2, l3 = L
    a0, a3 = -l0, -l3
    beta0 = lambda x: be.b(x, a0)
    dbeta0 = lambda x: _dbeta_dx(x, a0)
    if l1 < 0 and l2 < 0:
        return _dd3(be, beta0, -l1, -l2, a3, dbeta0, lambda x: _d2beta_dx2(x, a0))
    if l1 > 0 and l2 < 0:
        rho = lambda x: be.b(x, a0) / (x + l1)
        drho = lambda x: (_dbeta_dx(x, a0) * (x + l1) - beta(x, a0)) / (x + l1) ** 2
        return -_dd2(be, rho, -l2, a3, drho)
    if l1 < 0 and l2 > 0:
        return -_dd2(be, beta0, -l1, a3, dbeta0) / (a3 + l2)
    return be.b(a3, a0) / ((a3 + l2) * (a3 + l1))


def _rtr(be, L):
    l0, l1, l2, l3 = L
    a0, a3 = -l0, -l3
    if l1 < 0 and l2 < 0:
        # mixed divided difference of B(x, y) over x in {|Λ1|, |Λ0|}, y in {|Λ2|, |Λ3|}
        a1, a2 = -l1, -l2

        def g(y):
            return _dd2(be, lambda x: be.b(x, y), a1, a0, lambda x: _dbeta_dx(x, y))

        def dg(y):
            return _dd2(be, lambda x: _dbeta_dx(y, x), a1, a0, lambda x: _d2beta_dxdy(x, y))

        return _dd2(be, g, a2, a3, dg)
    if l1 < 0 and l2 > 0:
        return -_dd2(be, lambda x: be.b(x, a3), -l1, a0, lambda x: _dbeta_dx(x, a3)) / (a3 + l2)
    if l1 > 0 and l2 < 0:
        return -_dd2(be, lambda x: be.b(x, a0), -l2, a3, lambda x: _dbeta_dx(x, a0)) / (a0 + l1)
    return be.b(a3, a0) / ((a3 + l2) * (a0 + l1))


def _ttr(be, L):
    l0, l1, l2, l3 = L
    a0 = -l0
    if l1 < 0:
        g = lambda x: be.bk([l1 + 1, -l1], [x + 1, a0])
    else:
        g = lambda x: be.bk([-l1, l1 + 1], [a0, x + 1])
    if l2 < 0:
        return g(l3) / (l3 - l2)
    return -_dd2(be, g, l2, l3)


def _trt(be, L):
    l0, l1, l2, l3 = L
    a0 = -l0
    down = lambda x: be.bk([x + 1, -x], [l3 + 1, a0])
    up = lambda x: be.bk([-x, x + 1], [a0, l3 + 1])
    if l1 < 0 and l2 < 0:
        return _dd2(be, down, l2, l1)
    if l1 > 0 and l2 > 0:
        return -_dd2(be, up, l2, l1)
    if l1 > 0 and l2 < 0:
        return (down(l2) + up(l1)) / (l1 - l2)
    # d1 down, d2 up: split on the order of the first and last heights
    return (be.bk([a0, l3 + 1], [-l1, 1 + l1]) + be.bk([l3 + 1, a0], [l2 + 1, -l2])
            - be.b(a0, -l1) * be.b(l3 + 1, l2 + 1)) / (l2 - l1)


def _ttt(be, L):
    l0, l1, l2, l3 = L
    a0, a3 = -l0, -l3
    if l1 < 0 and l2 < 0:
        return be.bk([a0, l2 + 1, -l2], [-l1, l1 + 1, a3])
    if l1 > 0 and l2 > 0:
        return be.bk([-l1, l1 + 1, a3], [a0, l2 + 1, -l2])
    # mixed branches: split on the order of the first and last heights so
    # that each term is a convergent simplex integral
    if l1 < 0:
        return (be.bk([a0, -l2, l2 + 1], [-l1, a3, 1 + l1])
                + be.bk([-l2, a0, l2 + 1], [a3, -l1, 1 + l1]))
    return (be.bk([l2 + 1, a0, -l2], [l1 + 1, -l1, a3])
            + be.bk([l2 + 1, -l2, a0], [l1 + 1, a3, -l1]))


_IMPL = {"tr": _tr, "rt": _rt, "tt": _tt, "trr": _trr, "rtr": _rtr, "ttr": _ttr, "trt": _trt, "ttt": _ttt}


def exit_side(kind):
    side = "out"
    for e in EVENTS[kind]:
        if e == "T":
            side = "in" if side == "out" else "out"
    return side


def validate_lambdas(kind, lams):
    if kind not in _IMPL:
        raise ValueError(f"unknown masking kind {kind!r}; choose from {', '.join(KINDS)}")
    n = len(EVENTS[kind]) + 1
    lams = [float(v) for v in lams]
    if len(lams) != n:
        raise ValueError(f"{kind} needs {n} Λ values, got {len(lams)}")
    for i, v in enumerate(lams):
        if not np.isfinite(v) or -1.0 < v < 0.0:
            raise ValueError(f"Λ{i} = {v} is not a valid Smith Λ (need Λ <= -1 or Λ >= 0)")
    if lams[0] >= 0:
        raise ValueError("d0 must travel downward (Λ0 <= -1)")
    last = lams[-1]
    if exit_side(kind) == "out" and last < 0:
        raise ValueError(f"{kind} paths leave above the surface: last direction must travel upward")
    if exit_side(kind) == "in" and last >= 0:
        raise ValueError(f"{kind} paths leave below the surface: last direction must travel downward")
    return lams


def masking_lambdas(kind, lams, backend="analytic", spot_check=False):
    """Masking factor of a ``kind`` path from its signed Λ values."""
    lams = validate_lambdas(kind, lams)
    be = _Backend(backend, spot_check)
    value = float(_IMPL[kind](be, lams))
    branch = "".join(_dir(v) for v in lams[1:-1])
    return MaskingResult(value, branch, be.method(), be.limit,
                         be.max_rel if spot_check else float("nan"))


def masking(kind, dirs, r, **kw):
    """Masking factor from the path directions d0..dn (travel directions)."""
    d = np.asarray(dirs, float)
    if np.any(d[:, 2] == 0.0):
        raise ValueError("horizontal path directions are not supported")
    lams = smith.lam(d, r)
    return masking_lambdas(kind, lams, **kw)


def s_tr(d0, d1, d2, r):
    return masking("tr", [d0, d1, d2], r).value


def s_rt(d0, d1, d2, r):
    return masking("rt", [d0, d1, d2], r).value


def s_tt(d0, d1, d2, r):
    return masking("tt", [d0, d1, d2], r).value


def s_trr(d0, d1, d2, d3, r):
    return masking("trr", [d0, d1, d2, d3], r).value


def s_rtr(d0, d1, d2, d3, r):
    return masking("rtr", [d0, d1, d2, d3], r).value


def s_ttr(d0, d1, d2, d3, r):
    return masking("ttr", [d0, d1, d2, d3], r).value


def s_trt(d0, d1, d2, d3, r):
    return masking("trt", [d0, d1, d2, d3], r).value


def s_ttt(d0, d1, d2, d3, r):
    return masking("ttt", [d0, d1, d2, d3], r).value


def random_lambdas(kind, rng, alpha_range=(0.1, 2.0), z_min=0.05):
    """Signed Λ values of a random valid ``kind`` path on a GGX surface."""
    n = len(EVENTS[kind]) + 1
    alpha = rng.uniform(*alpha_range)
    r = smith.Roughness(alpha)
    z = rng.uniform(z_min, 1.0, n)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    sign[0] = -1.0
    sign[-1] = 1.0 if exit_side(kind) == "out" else -1.0
    s = np.sqrt(1 - z * z)
    phi = rng.uniform(0, 2 * np.pi, n)
    d = np.stack([s * np.cos(phi), s * np.sin(phi), sign * z], axis=1)
    return [float(v) for v in smith.lam(d, r)]
