"""Command-line interface: ``scatterkit <subcommand> [flags]``.

Every CSV starts with a ``#`` line holding the subcommand and its full,
normalized flag set, followed by a header row. Exit codes: 0 success,
1 failed acceptance criteria, 2 invalid flags or parameters, 3 numeric
failures (series not converged, quadrature budget exceeded).
"""
import argparse
import csv
import io
import math
import os
import sys
import warnings

import numpy as np

from . import acceptance, masking, mbounce, medium, phase, segment, specfun, wetbsdf
from .mbounce import EvalConfig
from .smith import Fresnel, Roughness, direction


class FlagError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parsing helpers


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _channels(text):
    v = _floats(text)
    if len(v) not in (1, 3):
        raise argparse.ArgumentTypeError(f"expected 1 or 3 values, got {text!r}")
    return tuple(v * 3) if len(v) == 1 else tuple(v)


def _positive_int(text):
    try:
        v = int(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _length(text):
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def _deg(v):
    return math.radians(v)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _config_line(args):
    skip = {"func", "out", "threads", "hist"}
    items = []
    for k in sorted(vars(args)):
        if k in skip or k == "command":
            continue
        v = getattr(args, k)
        if isinstance(v, (list, tuple)):
            v = ",".join(_fmt(x) for x in v)
        items.append(f"--{k.replace('_', '-')}={_fmt(v)}")
    return f"# scatterkit {args.command} " + " ".join(items)


def _write_csv(args, header, rows, path=None):
    buf = io.StringIO()
    buf.write(_config_line(args) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    path = path if path is not None else args.out
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _roughness(args):
    if args.alpha_y is None:
        args.alpha_y = args.alpha_x
    return Roughness(args.alpha_x, args.alpha_y)


# ---------------------------------------------------------------------------
# params files


MEDIUM_KEYS = {"thickness", "porosity", "saturation", "n", "density", "sigma_l", "eta_l"}
PARTICLE_KEYS = {"psi", "roughness", "eta_p", "albedo", "blend_weight", "phase", "phase_file"}


def read_fit_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if not rows:
        raise FlagError(f"{path}: no fit row")
    r = rows[0]
    try:
        return phase.PhaseFit(*(float(r[k]) for k in ("w1", "mu1", "sigma1", "w2", "mu2", "sigma2")))
    except KeyError as e:
        raise FlagError(f"{path}: missing column {e}")


def read_params(path):
    """Medium spec and per-particle phase fits from a key=value file."""
    kv = {}
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FlagError(f"{path}:{no}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            kv[k] = v
    base = os.path.dirname(os.path.abspath(path))
    med = {}
    parts = {}
    for k, v in kv.items():
        if k.startswith("particle."):
            try:
                _, idx, field = k.split(".", 2)
                idx = int(idx)
            except ValueError:
                raise FlagError(f"{path}: bad particle key {k!r}")
            if field not in PARTICLE_KEYS:
                raise FlagError(f"{path}: unknown particle field {field!r}")
            parts.setdefault(idx, {})[field] = v
        elif k in MEDIUM_KEYS:
            med[k] = v
        else:
            raise FlagError(f"{path}: unknown key {k!r}")
    try:
        particles = []
        fits = []
        for idx in sorted(parts):
            p = parts[idx]
            particles.append(phase.ParticleSpec(
                float(p.get("psi", 1.0)), float(p.get("roughness", 0.3)), float(p.get("eta_p", 1.5)),
                _channels(p.get("albedo", "1")), float(p.get("blend_weight", 1.0))))
            if "phase" in p:
                fits.append(phase.PhaseFit(*_floats(p["phase"])))
            elif "phase_file" in p:
                fits.append(read_fit_csv(os.path.join(base, p["phase_file"])))
            else:
                raise FlagError(f"{path}: particle.{idx} needs phase or phase_file")
        spec = medium.MediumSpec(
            thickness=_length(med.get("thickness", "inf")),
            porosity=float(med["porosity"]),
            saturation=float(med.get("saturation", 0.0)),
            density=float(med.get("n", med.get("density", 1.0))),
            sigma_l=_channels(med.get("sigma_l", "0")),
            eta_l=float(med.get("eta_l", 1.333)),
            particles=tuple(particles))
    except KeyError as e:
        raise FlagError(f"{path}: missing key {e}")
    except (TypeError, argparse.ArgumentTypeError) as e:
        raise FlagError(f"{path}: {e}")
    return spec, fits


# ---------------------------------------------------------------------------
# subcommands


def cmd_eval(args):
    r = _roughness(args)
    f = Fresnel.constant(args.f0)
    wi = direction(_deg(args.theta_i), _deg(args.phi_i))
    rows = []
    for po in args.phi_o:
        for j in range(args.n_theta):
            to = (j + 0.5) * 90.0 / args.n_theta
            cfg = EvalConfig(args.max_bounce, spp=args.spp, seed=args.seed + len(rows))
            est = mbounce.eval_stats(wi, direction(_deg(to), _deg(po)), r, f, cfg)
            rows.append((to, po, est.mean[0], est.stderr[0]))
    _write_csv(args, ["theta_o", "phi_o", "value", "stderr"], rows)


def cmd_sample_hist(args):
    r = _roughness(args)
    wi = direction(_deg(args.theta_i))
    n = args.bins
    hs = mbounce.sample_histogram(wi, r, cfg=EvalConfig(args.max_bounce, spp=args.samples, seed=args.seed),
                                  n_mu=n, n_phi=n)
    if args.eval_spp > 0:
        he = mbounce.eval_histogram(wi, r, cfg=EvalConfig(args.max_bounce, spp=args.eval_spp,
                                                          seed=args.seed + 1), n_mu=n, n_phi=n)
        print(f"L1 = {mbounce.l1_shape(hs, he):.6f}", file=sys.stderr)
    else:
        he = np.full_like(hs, np.nan)
    rows = [((a + 0.5) / n, (b + 0.5) * 2 * math.pi / n, hs[a, b], he[a, b])
            for a in range(n) for b in range(n)]
    _write_csv(args, ["mu", "phi", "sample_mass", "eval_mass"], rows)


def cmd_pdf_curve(args):
    r = _roughness(args)
    wi = direction(_deg(args.theta_i))
    n = args.bins
    ref = mbounce.sample_histogram(wi, r, cfg=EvalConfig(args.max_bounce, spp=args.samples, seed=args.seed),
                                   n_mu=n, n_phi=n)
    ours = mbounce.density_histogram(lambda x, y: mbounce.pdf(x, y, r), wi, n, n)
    base = mbounce.density_histogram(lambda x, y: mbounce.lambertian_baseline(x, y, r), wi, n, n)
    print(f"L1 pdf = {mbounce.l1_shape(ref, ours):.6f}  L1 baseline = {mbounce.l1_shape(ref, base):.6f}",
          file=sys.stderr)
    ref, ours, base = (h / h.sum() for h in (ref, ours, base))
    rows = [((a + 0.5) / n, (b + 0.5) * 2 * math.pi / n, ref[a, b], ours[a, b], base[a, b])
            for a in range(n) for b in range(n)]
    _write_csv(args, ["mu", "phi", "reference", "pdf", "baseline"], rows)


def cmd_furnace(args):
    r = _roughness(args)
    rows = []
    for th in args.theta_i:
        m, s = mbounce.furnace_stats(_deg(th), r, EvalConfig(args.max_bounce, spp=args.spp, seed=args.seed))
        rows.append((th, m, s))
    _write_csv(args, ["theta_i", "albedo", "stderr"], rows)


def cmd_equiv_check(args):
    rng = np.random.default_rng(args.seed)
    r = Roughness(args.alpha) if args.alpha is not None else None
    rows = []
    for pid in range(args.trials):
        path, rr = segment.random_path(args.bounces, rng, r)
        rep = segment.equivalence_check(path, rr)
        rows.append((pid, args.bounces, rep["p_exit"], rep["product_form"], rep["rel_err"], rep["singular"]))
    _write_csv(args, ["path_id", "k", "p_exit", "product_form", "rel_err", "singular_flag"], rows)


def cmd_bench_segterm(args):
    keys = ["k", "paths", "segterm_ns", "hyperexp_ns", "max_rel_diff", "median_rel_diff",
            "frac_above_1e-9", "singular_paths", "segterm_vs_exact"]
    rows = []
    for k in args.bounces:
        rep = segment.bench_segterm(int(k), paths=args.paths, reps=args.reps, seed=args.seed)
        rows.append([rep[c] for c in keys])
    _write_csv(args, keys, rows)


def cmd_beta(args):
    if len(args.a) != args.order or len(args.b) != args.order:
        raise FlagError(f"--a and --b need {args.order} values each (--order)")
    res = specfun.gen_beta_full(args.a, args.b, rtol=args.rtol)
    _write_csv(args, ["value", "method"], [(res.value, res.method)])


def cmd_smask(args):
    res = masking.masking_lambdas(args.kind, args.lambdas,
                                  backend="quadrature" if args.quadrature else "analytic")
    _write_csv(args, ["value", "branch_id", "method"], [(res.value, res.branch, res.method)])


def cmd_fit_phase(args):
    spec = phase.ParticleSpec(args.psi, args.rough, args.eta_p, args.albedo)
    hist = phase.simulate_particle(spec, args.eta_l, samples=args.samples, seed=args.seed)
    fit = phase.fit_two_gaussian(hist)
    one = phase.fit_one_gaussian(hist)
    hg = phase.fit_two_hg_baseline(hist)
    print(f"RSS two-gaussian {fit.rss:.6g}  one-gaussian {one.rss:.6g}  two-hg {hg.rss:.6g}",
          file=sys.stderr)
    _write_csv(args, ["w1", "mu1", "sigma1", "w2", "mu2", "sigma2", "rss"], [list(fit.params) + [fit.rss]])
    if args.hist:
        rows = zip(hist.theta, hist.density, hist.counts)
        _write_csv(args, ["theta_mid", "density", "count"], rows, path=args.hist)


def _theta_o_grid(n):
    return [(j + 0.5) * 180.0 / n for j in range(n)]


def cmd_wet_eval(args):
    spec, fits = read_params(args.params)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", wetbsdf.MeanFreePathWarning)
        p = wetbsdf.WetBsdfParams(spec, fits)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    wi = direction(_deg(args.theta_i))
    delta = wetbsdf.delta_transmission(wi, p)
    rows = []
    for j, to in enumerate(_theta_o_grid(args.grid)):
        if abs(to - 90.0) < 1e-9:
            continue
        wo = direction(_deg(to), _deg(args.phi_o))
        sr = wetbsdf.eval_single_r(wi, wo, p)
        st = wetbsdf.eval_single_t(wi, wo, p)
        multi = wetbsdf.eval_multi(wi, wo, p, spp=args.spp, seed=args.seed + j,
                                   max_collisions=args.max_bounce)
        for c, name in enumerate("rgb"):
            rows.append((to, name, sr[c], st[c], multi[c], delta[c], sr[c] + st[c] + multi[c]))
    _write_csv(args, ["theta_o", "channel", "single_r", "single_t", "multi", "delta", "total"], rows)


def cmd_wet_oracle(args):
    fit = read_fit_csv(args.phase)
    particle = phase.ParticleSpec(1.0, 0.3, 1.5, args.albedo)
    spec = medium.MediumSpec(args.thickness, args.porosity, args.saturation, args.n, args.sigma_l,
                             args.eta_l, (particle,))
    blended = phase.BlendedPhase([fit], [1.0])
    wi = direction(_deg(args.theta_i))
    rows = []
    for j in range(args.grid):
        to = (j + 0.5) * 90.0 / args.grid
        wo = direction(_deg(to), _deg(args.phi_o))
        est = medium.rte_oracle(spec, blended, wi, wo, args.max_bounce, args.spp, args.seed + j)
        for c, name in enumerate("rgb"):
            rows.append((to, name, est.refl[c], est.trans[c]))
    _write_csv(args, ["theta_o", "channel", "refl", "trans"], rows)


def cmd_accept(args):
    if args.suite != "primary":
        raise FlagError("--suite: only 'primary' is available")
    keys = args.only or None
    if keys:
        known = {k for k, _ in acceptance.CRITERIA}
        bad = [k for k in keys if k not in known]
        if bad:
            raise FlagError(f"--only: unknown criteria {bad}; choose from {sorted(known)}")
    results = acceptance.run(keys, echo=lambda s: print(s, flush=True))
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed")
    return 0 if n_pass == len(results) else 1


# ---------------------------------------------------------------------------
# parser


def _common(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads (default: all hardware threads); never changes results")
    p.add_argument("--out", default="-", help="output CSV path (default: stdout)")


def _microfacet(p):
    p.add_argument("--alpha-x", type=float, default=0.5, help="GGX roughness along x (default 0.5)")
    p.add_argument("--alpha-y", type=float, default=None, help="GGX roughness along y (default: alpha-x)")
    p.add_argument("--max-bounce", type=_positive_int, default=16, help="bounce limit (default 16)")


def build_parser():
    ap = argparse.ArgumentParser(prog="scatterkit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, metavar="subcommand")

    p = sub.add_parser("eval", help="multiple-bounce BRDF values over outgoing angles")
    p.add_argument("--theta-i", type=float, required=True, help="incident polar angle, degrees")
    p.add_argument("--phi-i", type=float, default=0.0, help="incident azimuth, degrees (default 0)")
    _microfacet(p)
    p.add_argument("--f0", type=float, default=1.0, help="constant Fresnel reflectance (default 1)")
    p.add_argument("--spp", type=_positive_int, default=100_000, help="paths per value (default 1e5)")
    p.add_argument("--n-theta", type=_positive_int, default=9, help="outgoing polar samples (default 9)")
    p.add_argument("--phi-o", type=_floats, default=[0.0, 180.0],
                   help="outgoing azimuths, degrees (default 0,180)")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample-hist", help="histogram of sampled directions against the evaluator")
    p.add_argument("--theta-i", type=float, required=True, help="incident polar angle, degrees")
    _microfacet(p)
    p.add_argument("--samples", type=_positive_int, default=1_000_000, help="samples (default 1e6)")
    p.add_argument("--bins", type=_positive_int, default=32, help="bins in cos(theta) and phi (default 32)")
    p.add_argument("--eval-spp", type=int, default=5_000,
                   help="evaluator paths per bin; 0 skips the evaluator (default 5000)")
    _common(p)
    p.set_defaults(func=cmd_sample_hist)

    p = sub.add_parser("pdf-curve", help="proxy pdf and baseline against the sampled density")
    p.add_argument("--theta-i", type=float, required=True, help="incident polar angle, degrees")
    _microfacet(p)
    p.add_argument("--samples", type=_positive_int, default=1_000_000, help="reference samples (default 1e6)")
    p.add_argument("--bins", type=_positive_int, default=32, help="bins in cos(theta) and phi (default 32)")
    _common(p)
    p.set_defaults(func=cmd_pdf_curve)

    p = sub.add_parser("furnace", help="white-furnace directional albedo with F = 1")
    p.add_argument("--theta-i", type=_floats, default=[0.0, 30.0, 60.0],
                   help="incident polar angles, degrees (default 0,30,60)")
    _microfacet(p)
    p.add_argument("--spp", type=_positive_int, default=1_000_000, help="samples per angle (default 1e6)")
    _common(p)
    p.set_defaults(func=cmd_furnace)

    p = sub.add_parser("equiv-check", help="exit probability against the segment-term product form")
    p.add_argument("--bounces", type=_positive_int, required=True, help="bounces k per path")
    p.add_argument("--trials", type=_positive_int, default=1000, help="random paths (default 1000)")
    p.add_argument("--alpha", type=float, default=None,
                   help="isotropic roughness (default: random per path)")
    _common(p)
    p.set_defaults(func=cmd_equiv_check)

    p = sub.add_parser("bench-segterm", help="time the segment term against the height distribution")
    p.add_argument("--bounces", type=_floats, default=[4, 8, 16], help="path lengths (default 4,8,16)")
    p.add_argument("--paths", type=_positive_int, default=2000, help="paths per length (default 2000)")
    p.add_argument("--reps", type=_positive_int, default=5, help="timing repetitions (default 5)")
    _common(p)
    p.set_defaults(func=cmd_bench_segterm)

    p = sub.add_parser("beta", help="generalized Beta function B^k(a; b)")
    p.add_argument("--order", type=_positive_int, required=True, help="order k")
    p.add_argument("--a", type=_floats, required=True, help="k comma-separated a values")
    p.add_argument("--b", type=_floats, required=True, help="k comma-separated b values")
    p.add_argument("--rtol", type=float, default=1e-10, help="quadrature tolerance (default 1e-10)")
    _common(p, seed=False)
    p.set_defaults(func=cmd_beta)

    p = sub.add_parser("smask", help="masking factor of a refraction path")
    p.add_argument("--kind", required=True, choices=masking.KINDS, help="event string")
    p.add_argument("--lambdas", type=_floats, required=True,
                   help="signed Lambda values of the path directions, comma-separated "
                        "(write --lambdas=-1.2,... when the first is negative)")
    p.add_argument("--quadrature", action="store_true", help="evaluate B^k by quadrature")
    _common(p, seed=False)
    p.set_defaults(func=cmd_smask)

    p = sub.add_parser("fit-phase", help="simulate a particle and fit the two-Gaussian phase function")
    p.add_argument("--psi", type=float, default=0.8, help="minor/major axis ratio (default 0.8)")
    p.add_argument("--rough", type=float, default=0.3, help="GGX roughness of the surface (default 0.3)")
    p.add_argument("--eta-p", type=float, default=1.5, help="particle refractive index (default 1.5)")
    p.add_argument("--eta-l", type=float, default=None,
                   help="surrounding liquid index (default: none, particle in air)")
    p.add_argument("--albedo", type=float, default=1.0, help="particle albedo (default 1)")
    p.add_argument("--samples", type=_positive_int, default=1_000_000, help="simulated rays (default 1e6)")
    p.add_argument("--hist", default=None, help="also write the histogram CSV here")
    _common(p)
    p.set_defaults(func=cmd_fit_phase)

    p = sub.add_parser("wet-eval", help="wet BSDF terms over outgoing angles")
    p.add_argument("--params", required=True, help="key=value medium and particle file")
    p.add_argument("--theta-i", type=float, required=True, help="incident polar angle, degrees")
    p.add_argument("--phi-o", type=float, default=180.0, help="outgoing azimuth, degrees (default 180)")
    p.add_argument("--grid", type=_positive_int, default=18,
                   help="outgoing polar samples over 0..180 degrees (default 18)")
    p.add_argument("--spp", type=_positive_int, default=100_000, help="walks for the multiple term (default 1e5)")
    p.add_argument("--max-bounce", type=_positive_int, default=64, help="collision limit (default 64)")
    _common(p)
    p.set_defaults(func=cmd_wet_eval)

    p = sub.add_parser("wet-oracle", help="random-walk reference of the wet slab")
    p.add_argument("--thickness", type=_length, required=True, help="slab thickness (inf allowed)")
    p.add_argument("--porosity", type=float, required=True, help="porosity P")
    p.add_argument("--saturation", type=float, default=0.0, help="saturation S (default 0)")
    p.add_argument("--n", type=float, required=True, help="particles per unit volume")
    p.add_argument("--sigma-l", type=_channels, default=(0.0, 0.0, 0.0),
                   help="liquid extinction, 1 or 3 values (default 0)")
    p.add_argument("--eta-l", type=float, default=1.333, help="liquid index (default 1.333)")
    p.add_argument("--albedo", type=_channels, default=(1.0, 1.0, 1.0),
                   help="particle albedo, 1 or 3 values (default 1)")
    p.add_argument("--phase", required=True, help="fit CSV written by fit-phase")
    p.add_argument("--theta-i", type=float, required=True, help="incident polar angle, degrees")
    p.add_argument("--phi-o", type=float, default=180.0, help="outgoing azimuth, degrees (default 180)")
    p.add_argument("--grid", type=_positive_int, default=9, help="outgoing polar samples (default 9)")
    p.add_argument("--max-bounce", type=_positive_int, default=8, help="collision limit (default 8)")
    p.add_argument("--spp", type=_positive_int, default=1_000_000, help="walks per angle (default 1e6)")
    _common(p)
    p.set_defaults(func=cmd_wet_oracle)

    p = sub.add_parser("accept", help="run the acceptance suite")
    p.add_argument("--suite", default="primary", help="suite name (default primary)")
    p.add_argument("--only", type=lambda s: [k for k in s.split(",") if k], default=None,
                   help="comma-separated criterion keys (default: all)")
    p.add_argument("--threads", type=_positive_int, default=None, help="worker threads")
    p.set_defaults(func=cmd_accept)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "threads", None):
        import numba

        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        return args.func(args) or 0
    except (specfun.NotConverged, specfun.QuadratureBudgetExceeded) as e:
        print(f"scatterkit {args.command}: numeric failure: {e}", file=sys.stderr)
        return 3
    except (FlagError, ValueError, OSError) as e:
        print(f"scatterkit {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
