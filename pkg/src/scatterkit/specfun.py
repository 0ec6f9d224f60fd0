"""Beta, generalized Beta and generalized hypergeometric functions.

The generalized Beta function of order k is the nested simplex integral

    B^k(a; b) = int_0^1 du_1 w_1(u_1) int_0^{u_1} du_2 w_2(u_2) ... int_0^{u_{k-1}} du_k w_k(u_k)

with w_n(u) = u^(a_n - 1) (1 - u)^(b_n - 1). It converges whenever every
suffix sum a_n + ... + a_k and every prefix sum b_1 + ... + b_n is positive,
which admits the negative exponents produced by masking terms of paths with
refraction. Order one is the Beta function, order two has a closed form in
3F2 at unit argument, higher orders are integrated numerically.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special


class NotConverged(ArithmeticError):
    """A hypergeometric series did not reach its tolerance."""


class QuadratureBudgetExceeded(ArithmeticError):
    """Nested quadrature could not meet the requested accuracy."""


def gamma(x):
    return math.gamma(x)


def beta(a, b):
    """Euler Beta function B(a, b) = Gamma(a) Gamma(b) / Gamma(a + b) for a, b > 0."""
    if not (a > 0 and b > 0):
        raise ValueError("beta needs a > 0 and b > 0")
    if a + b < 170:
        return math.gamma(a) * math.gamma(b) / math.gamma(a + b)
    return math.exp(math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))


def log_beta(a, b):
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


# ---------------------------------------------------------------------------
# hypergeometric series


@dataclass
class SeriesResult:
    value: float
    converged: bool
    terms: int
    method: str
    error: float


def _is_nonpos_int(x):
    return x <= 0 and float(x).is_integer()


def hypergeom_pfq(a, b, z, max_terms=100_000, tol=1e-14, extrap_tol=1e-11, strict=True):
    """Generalized hypergeometric series pFq(a; b; z) for 0 <= z <= 1.

    Terms are summed with compensated summation. At z = 1 the terms decay
    only algebraically, like k^-(s+1) with s = sum(b) - sum(a) > 0; when the
    direct sum has not met ``tol`` after ``max_terms`` terms, the tail is
    removed by Richardson extrapolation on the known exponents
    s, s + 1, s + 2, ... of the partial sums.

    Returns a :class:`SeriesResult`; raises :class:`NotConverged` (when
    ``strict``) if neither route reaches its tolerance.
    """
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    z = float(z)
    if not 0.0 <= z <= 1.0:
        raise ValueError("z must lie in [0, 1]")
    terminating = [int(-v) for v in a if _is_nonpos_int(v)]
    stop = min(terminating) if terminating else None
    for v in b:
        if _is_nonpos_int(v) and (stop is None or -v < stop):
            raise ValueError("lower parameter is a nonpositive integer")
    if z == 0.0 or stop == 0:
        return SeriesResult(1.0, True, 1, "series", 0.0)
    s = sum(b) - sum(a)
    if z == 1.0 and stop is None and s <= 0:
        raise NotConverged(f"series at z=1 diverges (sum(b) - sum(a) = {s} <= 0)")

    n_max = max_terms if stop is None else min(max_terms, stop + 1)
    k = np.arange(n_max, dtype=float)
    ratio = np.full(n_max, z)
    for v in a:
        ratio *= v + k
    for v in b:
        ratio /= v + k
    ratio /= k + 1.0
    terms = np.empty(n_max)
    terms[0] = 1.0
    terms[1:] = np.cumprod(ratio[:-1])
    if stop is not None:
        val = math.fsum(terms)
        return SeriesResult(val, True, n_max, "series", 0.0)

    partial = np.cumsum(terms)
    absp = np.abs(partial)
    if z < 1.0:
        r = np.abs(ratio)
        tail = np.where(r < 1, np.abs(terms) * r / np.maximum(1 - r, 1e-300), np.inf)
    else:
        tail = np.abs(terms) * (k + 1.0) / s
    ok = np.nonzero(tail <= tol * np.maximum(absp, 1e-300))[0]
    if ok.size:
        n = int(ok[0]) + 1
        return SeriesResult(math.fsum(terms[:n]), True, n, "series", float(tail[n - 1]))
    if z < 1.0:
        res = SeriesResult(math.fsum(terms), False, n_max, "series", float(tail[-1]))
        if strict:
            raise NotConverged(f"pFq did not converge in {n_max} terms")
        return res

    # Richardson extrapolation of S_N = S - sum_j C_j N^-(s + j).
    ns = []
    n = n_max
    while n >= 1000 and len(ns) < 8:
        ns.append(n)
        n //= 2
    ns = ns[::-1]
    sums = [math.fsum(terms[:n]) for n in ns]
    best = None
    prev = None
    for order in range(1, len(ns)):
        sel_n = np.array(ns[-(order + 1):], float)
        sel_s = np.array(sums[-(order + 1):])
        x = sel_n / sel_n[-1]
        mat = np.empty((order + 1, order + 1))
        mat[:, 0] = 1.0
        for j in range(order):
            mat[:, j + 1] = -x ** (-(s + j))
        est = np.linalg.solve(mat, sel_s)[0]
        if prev is not None:
            err = abs(est - prev)
            if best is None or err < best[1]:
                best = (est, err)
        prev = est
    val, err = best
    conv = err <= extrap_tol * abs(val)
    res = SeriesResult(float(val), bool(conv), n_max, "series+richardson", float(err))
    if strict and not conv:
        raise NotConverged(f"pFq at z=1 extrapolation error {err:.3g} exceeds tolerance")
    return res


def hyp(a, b, z, **kw):
    """Value of :func:`hypergeom_pfq`."""
    return hypergeom_pfq(a, b, z, **kw).value


# ---------------------------------------------------------------------------
# incomplete Beta with negative second parameter


def incomplete_beta(x, a, b):
    """Unnormalized lower incomplete Beta int_0^x u^(a-1) (1-u)^(b-1) du.

    Needs a > 0 and x < 1 when b <= 0; negative b is handled by the upward
    recurrence in b.
    """
    if not a > 0:
        raise ValueError("incomplete_beta needs a > 0")
    if x <= 0:
        return 0.0
    if b > 0:
        if x >= 1:
            return beta(a, b)
        return float(special.betainc(a, b, x)) * beta(a, b)
    if x >= 1:
        raise ValueError("integral diverges at x = 1 for b <= 0")
    if b == 0:
        return x ** a / a * float(special.hyp2f1(a, 1.0, a + 1.0, x))
    # B_x(a, b) = ((a + b) B_x(a, b + 1) - x^a (1 - x)^b) / b
    return ((a + b) * incomplete_beta(x, a, b + 1) - x ** a * (1 - x) ** b) / b


def upper_incomplete_beta(x, a, b):
    """int_x^1 u^(a-1) (1-u)^(b-1) du, needs b > 0 (a may be negative)."""
    return incomplete_beta(1.0 - x, b, a)


# ---------------------------------------------------------------------------
# generalized Beta


@dataclass
class GenBetaResult:
    value: float
    method: str
    error: float


def check_gen_beta_domain(a, b):
    if len(a) != len(b) or not a:
        raise ValueError("a and b need the same nonzero length")
    for i in range(len(a)):
        if not sum(a[i:]) > 0:
            raise ValueError(f"suffix sum of a from index {i} must be positive")
        if not sum(b[: i + 1]) > 0:
            raise ValueError(f"prefix sum of b up to index {i} must be positive")


def _b2_series(a1, a2, b1, b2, **kw):
    res = hypergeom_pfq([a2, 1 - b2, a1 + a2], [a2 + 1, a1 + a2 + b1], 1.0, **kw)
    return beta(a1 + a2, b1) / a2 * res.value, res


def gen_beta2(a1, a2, b1, b2):
    """Closed form B^2 = B(a1 + a2, b1) / a2 * 3F2(a2, 1 - b2, a1 + a2; a2 + 1, a1 + a2 + b1; 1)."""
    check_gen_beta_domain([a1, a2], [b1, b2])
    if not a2 > 0 or not b1 > 0:
        raise ValueError("closed form needs a2 > 0 and b1 > 0")
    return _b2_series(a1, a2, b1, b2)[0]


def _quad(f, lo, hi, epsrel):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=epsrel, limit=400)
        except integrate.IntegrationWarning as exc:
            raise QuadratureBudgetExceeded(str(exc)) from None
    return val, err


def _weight(u, a, b):
    return u ** (a - 1) * (1 - u) ** (b - 1)


def _inner(x, a, b, level, epsrel):
    """F_level(x) = int_0^x w_level(u) F_{level+1}(u) du, innermost in closed form."""
    k = len(a)
    if level == k - 1:
        return incomplete_beta(x, a[level], b[level])
    f = lambda u: _weight(u, a[level], b[level]) * _inner(u, a, b, level + 1, epsrel)
    return _quad(f, 0.0, x, epsrel)[0]


def gen_beta_quad(a, b, rtol=1e-6):
    """B^k by nested adaptive quadrature (k >= 2).

    The outermost and innermost levels are done in closed form through
    incomplete Beta functions, leaving k - 2 nested quadratures.
    """
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    check_gen_beta_domain(a, b)
    k = len(a)
    if k == 1:
        return GenBetaResult(beta(a[0], b[0]), "analytic", 0.0)
    if k == 2:
        # swap the order of integration: int_0^1 w_2(u) int_u^1 w_1(t) dt du
        f = lambda u: _weight(u, a[1], b[1]) * upper_incomplete_beta(u, a[0], b[0])
        val, err = _quad(f, 0.0, 1.0, 1e-11)
    else:
        inner_tol = max(min(1e-10, rtol * 1e-3), 1e-13)
        f = lambda u: (_weight(u, a[1], b[1]) * upper_incomplete_beta(u, a[0], b[0])
                       * _inner(u, a, b, 2, inner_tol))
        val, err = _quad(f, 0.0, 1.0, max(min(1e-9, rtol * 1e-2), 1e-13))
    if not np.isfinite(val) or err > rtol * abs(val):
        raise QuadratureBudgetExceeded(f"estimated error {err:.3g} exceeds {rtol:g} relative")
    return GenBetaResult(val, "quadrature", err)


def gen_beta_full(a, b, rtol=1e-6):
    """B^k with the method tag: analytic (k=1), series (k=2) or quadrature."""
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    check_gen_beta_domain(a, b)
    k = len(a)
    if k == 1:
        return GenBetaResult(beta(a[0], b[0]), "analytic", 0.0)
    if k == 2 and a[1] > 0 and b[0] > 0:
        val, res = _b2_series(a[0], a[1], b[0], b[1], strict=False)
        if res.converged:
            return GenBetaResult(val, "series", res.error * abs(val / res.value) if res.value else 0.0)
        return gen_beta_quad(a, b, rtol)
    return gen_beta_quad(a, b, rtol)


def gen_beta(a, b, rtol=1e-6):
    """Generalized Beta function B^k(a_1..a_k; b_1..b_k)."""
    return gen_beta_full(a, b, rtol).value


def gen_beta_symmetry_check(a, b, rtol=1e-6):
    """Compare B^k(a; b) with B^k(b_k..b_1; a_k..a_1)."""
    lhs = gen_beta(a, b, rtol)
    rhs = gen_beta(list(b)[::-1], list(a)[::-1], rtol)
    return {"lhs": lhs, "rhs": rhs, "rel_err": abs(lhs - rhs) / abs(lhs)}


def dbeta_da(a, b):
    """Partial derivative of B(a, b) in its first argument."""
    return beta(a, b) * (special.digamma(a) - special.digamma(a + b))


def d2beta_da2(a, b):
    """Second partial derivative of B(a, b) in its first argument."""
    d = special.digamma(a) - special.digamma(a + b)
    return beta(a, b) * (d * d + special.polygamma(1, a) - special.polygamma(1, a + b))
