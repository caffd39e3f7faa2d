"""Scenario pipelines: construct, certify and simulate, collecting every
result into a Report."""

from __future__ import annotations

import dataclasses
import math
import time
from contextlib import contextmanager
from functools import cached_property

import numpy as np

from . import config as cfgmod
from .bump import BumpProfile, compute_m, forward_modification_infeasibility
from .config import RunConfig
from .construct import (
    apply,
    apply_inverse,
    inverse_system,
    jacobian,
    make_mixed_params,
    make_pve_params,
    mixed_system,
    pve_system,
)
from .errors import BudgetError, DaForgeError, NumericalError
from .report import Report
from .torus import (
    C_MATRIX,
    D_MATRIX,
    eigen_decompose,
    fixed_points,
    from_local,
    in_inner_box,
    to_local,
    torus_matmul,
)
from . import umeasure as um
from . import verify as vf


class Context:
    """Lazily built systems shared by the parts of a run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg

    @cached_property
    def pve(self):
        c = self.cfg
        return make_pve_params(c.pve_n, c.pve_k, c.pve_delta, c.pve_kappa, c.pve_epsilon, c.pve_shape)

    @cached_property
    def mixed(self):
        c = self.cfg
        return make_mixed_params(c.mixed_n, c.mixed_k, c.mixed_delta, c.mixed_kappa2, c.mixed_epsilon, c.mixed_shape)

    @cached_property
    def f(self):
        return pve_system(self.pve)

    @cached_property
    def g(self):
        return inverse_system(self.f)

    @cached_property
    def G(self):
        return mixed_system(self.mixed)

    @cached_property
    def m(self):
        return compute_m(BumpProfile(self.cfg.pve_delta, self.cfg.pve_shape), self.cfg.bump_grid).m

    def seeds(self, count: int) -> np.ndarray:
        return np.random.default_rng(self.cfg.seed).random((count, 3))


@contextmanager
def _timed(report: Report, name: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        report.timings[name] = time.perf_counter() - t0


def _cert(report: Report, rep, name=None):
    d = rep.as_dict()
    report.add(name or d.get("kind") or d.get("name"), rep.passed, **{k: v for k, v in d.items() if k != "passed"})


# ---------------------------------------------------------------------------
# structural checks


def check_eigen(report: Report) -> None:
    for M in (D_MATRIX, C_MATRIX):
        e = M.entries
        tr = sum(e[i][i] for i in range(3))
        minors = sum(e[i][i] * e[j][j] - e[i][j] * e[j][i] for i in range(3) for j in range(i + 1, 3))
        roots = np.sort(np.real(np.roots([1, -tr, minors, -M.det()])))
        vals = np.sort(np.array(eigen_decompose(M).values))
        err = float(np.max(np.abs(roots - vals)))
        prod = float(abs(abs(np.prod(vals)) - 1.0))
        report.add(f"eigen-{M.name}", err <= 1e-10 and prod <= 1e-10, root_error=err, product_error=prod,
                   eigenvalues=vals.tolist())
    ident = (C_MATRIX @ D_MATRIX).entries == ((1, 0, 0), (0, 1, 0), (0, 0, 1))
    report.add("inverse-exact", ident, product=[list(r) for r in (C_MATRIX @ D_MATRIX).entries])


def check_fixed_points(report: Report) -> None:
    for M in (D_MATRIX, C_MATRIX):
        n = M.matrix - np.eye(3, dtype=np.int64)
        expected = abs(int(round(np.linalg.det(n))))
        pts = fixed_points(M)
        exact = all(np.array_equal(torus_matmul(M.matrix, np.asarray(p, dtype=float)), np.asarray(p, dtype=float)) for p in pts)
        report.add(f"fixed-points-{M.name}", len(pts) == expected and exact, count=len(pts), expected=expected,
                   points=[list(p.coords) for p in pts])


def check_spectra(report: Report, ctx: Context) -> None:
    pve, mix = ctx.pve, ctx.mixed
    cases = [
        ("f-at-p", ctx.f, np.zeros(3), [pve.lambda_uu, 2.0, pve.lambda_ss], 2),
        ("G-at-q1", ctx.G, np.asarray(mix.charts[0].center, dtype=float), [mix.lambda_uu, 0.5, mix.lambda_ss], 1),
        ("G-at-q2", ctx.G, np.asarray(mix.charts[1].center, dtype=float), [mix.lambda_uu, mix.lambda_u, 2.0], 3),
    ]
    for name, system, x, diag, index in cases:
        J = jacobian(system, x)
        err = float(np.max(np.abs(J - np.diag(diag)) / np.maximum(1.0, np.abs(np.diag(diag)))))
        fixed = float(np.max(np.abs(((apply(system, x) - x + 0.5) % 1.0) - 0.5)))
        got = int(np.sum(np.abs(np.linalg.eigvals(J)) > 1.0))
        report.add(f"spectrum-{name}", err <= 1e-10 and got == index and fixed <= 1e-12,
                   relative_error=err, unstable_index=got, expected_index=index, diagonal=diag)


def _face_samples(rng, count: int, half: float) -> np.ndarray:
    abc = rng.uniform(-half, half, (count, 3))
    ax = rng.integers(0, 3, count)
    abc[np.arange(count), ax] = half * rng.choice([-1.0, 1.0], count)
    return abc


def check_box_preservation(report: Report, ctx: Context, samples: int = 10_000) -> None:
    rng = np.random.default_rng(ctx.cfg.seed)
    cases = [("I_k", ctx.f, ctx.pve.chart, ctx.f.deform_steps[0])]
    for i, (chart, step) in enumerate(zip(ctx.mixed.charts, ctx.G.deform_steps)):
        cases.append((f"J_k-q{i + 1}", ctx.G, chart, step))
    for name, system, chart, step in cases:
        hw = chart.half_width_inner
        B = from_local(_face_samples(rng, samples, hw), chart)
        img = to_local(step.forward(B), chart)
        boundary_err = float(np.max(np.abs(np.max(np.abs(img), axis=1) - hw)))
        # exterior: half in the shell between the boxes, half anywhere
        shell = rng.uniform(-chart.half_width_outer, chart.half_width_outer, (samples, 3))
        shell = shell[np.max(np.abs(shell), axis=1) >= hw][: samples // 2]
        X = np.concatenate([from_local(shell, chart), rng.random((samples, 3))])
        X = X[~in_inner_box(X, chart)][:samples]
        same = bool(np.array_equal(apply(system, X), apply(system.linearized(), X)))
        report.add(f"box-preservation-{name}", boundary_err <= 1e-9 and same, boundary_error=boundary_err,
                   exterior_samples=int(len(X)), exterior_bitwise=same)


def check_round_trip(report: Report, ctx: Context, samples: int = 10_000) -> None:
    rng = np.random.default_rng(ctx.cfg.seed)
    X = rng.random((samples, 3))
    for system in (ctx.f, ctx.G):
        err = float(np.max(np.abs(((apply_inverse(system, apply(system, X)) - X + 0.5) % 1.0) - 0.5)))
        report.add(f"round-trip-{system.variant}", err <= 1e-8, max_error=err)


def check_bump(report: Report, ctx: Context) -> None:
    prof = BumpProfile(ctx.cfg.pve_delta, ctx.cfg.pve_shape)
    d = prof.delta
    rng = np.random.default_rng(ctx.cfg.seed)
    x = rng.uniform(-2 * d, 2 * d, 10_000)
    v, dv = prof.evaluate(x)
    plateau = bool(np.all(v[np.abs(x) <= d / 2] == 1.0))
    zero = bool(np.all(v[np.abs(x) >= d] == 0.0) and np.all(dv[np.abs(x) >= d] == 0.0))
    sym = bool(np.array_equal(prof.psi(-x), v))
    mono = bool(np.all(x * dv <= 0.0))
    bound = compute_m(prof, ctx.cfg.bump_grid)
    g = np.linspace(-d, d, 1000)
    wv, wd = prof.evaluate(g)
    prod = np.multiply.outer(g * wd + wv, prof.psi(g))
    viol = int(np.count_nonzero((prod < -bound.m) | (prod > 1.0)))
    report.add("bump-contract", plateau and zero and sym and mono and viol == 0, plateau=plateau, zero=zero,
               symmetric=sym, monotone=mono, m=bound.m, grid_points=int(prod.size), violations=viol)


def check_infeasibility(report: Report, ctx: Context) -> None:
    prof = BumpProfile(ctx.cfg.pve_delta, ctx.cfg.pve_shape)
    v = forward_modification_infeasibility(ctx.m, ctx.pve.lambda_ss, prof, ctx.cfg.pve_k)
    report.add("forward-modification-infeasible", v.fails and v.witness_c is not None, **dataclasses.asdict(v),
               m=ctx.m, lambda_ss=ctx.pve.lambda_ss)


# ---------------------------------------------------------------------------
# certification


def run_appendix(report: Report, ctx: Context) -> None:
    eps0, M = vf.lemma_tuilun_constants(ctx.cfg.gamma)
    rep = vf.ratio_grid_check(ctx.cfg.gamma, ctx.cfg.appendix_per_axis)
    report.add("appendix-ratio", rep.passed, eps0=eps0, M=M, gamma=ctx.cfg.gamma, min_margin=rep.min_margin,
               samples=rep.samples, witness=rep.witness)


def run_cones(report: Report, ctx: Context) -> None:
    c = ctx.cfg
    fwd, bwd = vf.pve_cones(ctx.pve)
    for cone, direction, name in ((fwd, "forward", "cone-unstable-forward"), (bwd, "inverse", "cone-stable-inverse")):
        _cert(report, vf.cone_invariance(ctx.f, cone, direction, resolution=c.resolution, directions=c.directions,
                                         workers=c.workers, kind=name), f"pve-{name}")
    reps = vf.mixed_checks(ctx.G, c.resolution, c.workers)
    for name, rep in reps.items():
        _cert(report, rep, name if name.startswith("mixed-") else f"mixed-{name}")
    # empirical bound on the starred entries of DG in the boxes; not certified
    report.add("mixed-starred-entry-sup", None, **vf.starred_entry_sup(ctx.G, c.resolution))


def run_pve(report: Report, ctx: Context) -> None:
    c = ctx.cfg
    vol = vf.pve_volume_reports(ctx.f, resolution=c.resolution, c_samples=c.c_samples, workers=c.workers)
    for key in ("exact", "grid", "small", "large"):
        _cert(report, vol[key])
    side = vol["proof_side"]
    report.add("pve-proof-side-conditions", None, **side.as_dict())


def run_construct(report: Report, ctx: Context) -> None:
    with _timed(report, "structure"):
        check_eigen(report)
        check_fixed_points(report)
        check_spectra(report, ctx)
        check_box_preservation(report, ctx)
        check_round_trip(report, ctx)
    with _timed(report, "pve-certificates"):
        reps = vf.pve_checks(ctx.f, ctx.cfg.resolution, ctx.cfg.c_samples, ctx.cfg.workers)
        for name, rep in reps.items():
            if name.startswith("_"):
                report.add("pve-proof-side-conditions", None, **rep.as_dict())
            else:
                _cert(report, rep, f"pve-{name}" if name.startswith("cone") else name)
        if "pve-all-planes" not in reps:
            report.add("pve-all-planes", False, reason="skipped: forward cone failed")


def searched_parameters(ctx: Context, report: Report | None = None) -> RunConfig:
    """Run every parameter search and return the pinned configuration."""
    c = ctx.cfg
    log = report.add if report is not None else (lambda *a, **k: None)
    fd, fc = eigen_decompose(D_MATRIX), eigen_decompose(C_MATRIX)
    m = vf.profile_m(1.0 / 64.0, c.pve_shape, c.bump_grid)
    n1 = vf.search_n(m, fd, "pve", c.gamma)
    n2 = vf.search_n(m, fc, "mixed", c.gamma)
    v1 = vf.power_eigen(fd, 2 * n1.value).values
    v2 = vf.power_eigen(fc, 2 * n2.value).values
    k1 = vf.search_kappa("pve", lambda_s=v1[1])
    k2 = vf.search_kappa("mixed", lambda_u=v2[1], lambda_ss=v2[2])
    e1 = vf.default_epsilon(k1.value, "pve")
    e2 = vf.default_epsilon(k2.value, "mixed")
    d1 = vf.slope_delta_search(fd, fixed_points(D_MATRIX)[:1], fd.e_ss)
    d2 = vf.slope_delta_search(fc, fixed_points(C_MATRIX)[:2], fc.e_uu)
    for r, tag in ((n1, "pve"), (n2, "mixed"), (k1, "pve"), (k2, "mixed"), (d1, "pve"), (d2, "mixed")):
        log(f"search-{r.name}-{tag}", r.passed, value=r.value, margins=r.margins)
    s1 = vf.search_k(make_pve_params(n1.value, 1, d1.value, k1.value, e1, c.pve_shape), c.resolution, c.c_samples,
                     c.workers, c.k_cap_exp)
    s2 = vf.search_k(make_mixed_params(n2.value, 1, d2.value, k2.value, e2, c.mixed_shape), c.resolution,
                     c.c_samples, c.workers, c.k_cap_exp)
    for r, tag in ((s1, "pve"), (s2, "mixed")):
        log(f"search-k-{tag}", r.passed, value=r.value, margins=r.margins,
            details={k: v for k, v in r.details.items() if k != "proof_side"})
    if "proof_side" in s1.details:
        log("search-k-pve-proof-side", None, **s1.details["proof_side"])
    pins = [
        vf.PinnedParameters("pve", n1.value, s1.value, d1.value, k1.value, e1, m, c.pve_shape),
        vf.PinnedParameters("mixed", n2.value, s2.value, d2.value, k2.value, e2, m, c.mixed_shape),
    ]
    for pin, frame in zip(pins, (fd, fc)):
        margins = vf.revalidate(pin, frame, c.gamma)
        log(f"revalidate-{pin.variant}", all(v > 0 for v in margins.values()), margins=margins)
    return RunConfig().replace(
        pve_n=n1.value, pve_k=s1.value, pve_delta=d1.value, pve_kappa=k1.value, pve_epsilon=e1,
        mixed_n=n2.value, mixed_k=s2.value, mixed_delta=d2.value, mixed_kappa2=k2.value, mixed_epsilon=e2,
    )


def run_search(report: Report, ctx: Context) -> str:
    pinned = searched_parameters(ctx, report)
    text = cfgmod.emit(pinned)
    report.add("pinned-matches-shipped", None, matches=text == cfgmod.pinned_text(), pinned=text)
    report.artifacts["pinned.ini"] = text
    return text


# ---------------------------------------------------------------------------
# u-measure experiments


def _chord_cone_violations(curve, kappa: float) -> int:
    t = curve.tangents_frame()
    ax = curve.system.unstable_axis
    core = np.abs(t[:, ax])
    comp = np.linalg.norm(np.delete(t, ax, axis=1), axis=1)
    return int(np.count_nonzero(comp > kappa * core))


def run_gibbs(report: Report, ctx: Context) -> None:
    c = ctx.cfg
    kappa = c.pve_kappa
    g = ctx.g
    curves = um.seed_curves(g, ctx.seeds(c.seed_curves), c.seed_length, c.seed_max_seg_len)
    viol = 0
    worst = 0.0
    cone_viol = 0
    for cur in curves:
        env = um.length_envelope_violations(cur, c.envelope_n, kappa)
        viol += env["violations"]
        worst = max(worst, env["max_abs_log_deviation"])
        cone_viol += _chord_cone_violations(cur, kappa)
    report.add("length-envelope", viol == 0 and cone_viol == 0, violations=viol, chord_cone_violations=cone_viol,
               max_abs_log_deviation=worst, allowed=0.5 * math.log1p(kappa * kappa), curves=len(curves),
               n_max=c.envelope_n)

    rate = um.strong_unstable_rate(g)
    N = um.mass_threshold_n(kappa, rate, c.seed_length)
    n_max = max(c.mass_n_max, N)
    bound = um.mass_bound(kappa)
    region = ctx.pve.chart
    worst_excess = -math.inf
    agree_fail = 0
    compared = 0
    all_series = []
    for i, cur in enumerate(curves):
        series = um.mass_series(cur, n_max, region, c.mass_samples, c.seed + i)
        all_series.append([s.region_mass for s in series])
        for s in series[N:]:
            worst_excess = max(worst_excess, s.region_mass - bound - 3 * s.confidence_halfwidth)
        st = um.pushforward_mass(cur, N, region, c.mass_samples, c.seed + i)
        if st.quadrature_mass is not None:
            compared += 1
            if abs(st.quadrature_mass - st.region_mass) > 3 * st.confidence_halfwidth:
                agree_fail += 1
    report.add("gibbs-mass-bound", worst_excess <= 0, N=N, n_max=n_max, bound=bound,
               worst_excess=worst_excess, curves=len(curves), samples=c.mass_samples)
    report.add("mass-quadrature-agreement", agree_fail == 0 and compared > 0, compared=compared,
               disagreements=agree_fail, n=N)
    mean = np.mean(np.array(all_series), axis=0)
    report.add_series("mass-vs-n", "n", "mass", list(enumerate(mean.tolist())))


def run_center(report: Report, ctx: Context) -> None:
    c = ctx.cfg
    g = ctx.g
    curves = um.seed_curves(g, ctx.seeds(c.seed_curves), c.seed_length, c.seed_max_seg_len)
    est = um.center_exponent(g, curves[0], c.ell, c.samples, c.seed)
    gamma_u = 1.0 / ctx.pve.lambda_s
    lb = um.center_exponent_lower_bound(c.pve_kappa, gamma_u)
    report.add("center-exponent", est.value > 0 and est.value >= lb - 3 * est.stderr, estimate=est.value,
               stderr=est.stderr, lower_bound=lb, ell=c.ell, samples=c.samples)
    report.add_series("center-exponent-vs-ell", "ell", "estimate", [(i + 1, v) for i, v in enumerate(est.partial)])

    sub = max(2, c.samples // 10)
    ests = [um.center_exponent(g, cur, c.ell, sub, c.seed + i) for i, cur in enumerate(curves)]
    pooled = float(np.mean([e.value for e in ests]))
    worst = max(abs(e.value - pooled) - 3 * e.stderr - 1e-12 for e in ests)
    report.add("center-exponent-seed-invariance", worst <= 0, estimates=[e.value for e in ests],
               stderrs=[e.stderr for e in ests], worst_excess=worst)

    lin = um.center_exponent(g.linearized(), curves[0], min(c.ell, 20), 1000, c.seed)
    err = abs(lin.value - math.log(gamma_u))
    report.add("center-exponent-linear", err <= 1e-9, estimate=lin.value, exact=math.log(gamma_u), error=err)

    trip = um.exponent_triplet(g, curves[0], min(c.ell, 200), min(c.samples, 2000), c.seed)
    res = trip["residual"]
    report.add("exponent-decomposition", abs(res.value) <= 3 * res.stderr + 1e-9,
               **{k: v.value for k, v in trip.items()})


def run_mixed(report: Report, ctx: Context) -> None:
    c = ctx.cfg
    G = ctx.G
    mix = ctx.mixed
    curve = um.seed_curves(G, ctx.seeds(1), c.seed_length, c.seed_max_seg_len)[0]
    ex = um.mixed_exponents(G, curve, c.ell, c.bundle_iters, c.mixed_samples, c.seed)
    lo, hi = um.mixed_exponent_bounds(c.mixed_kappa2, mix.lambda_u, mix.lambda_ss)
    cu, cs = ex.cu, ex.cs
    report.add("mixed-exponent-cu", cu.value > 0 and abs(cu.value) > 3 * cu.stderr and cu.value >= lo - 3 * cu.stderr,
               estimate=cu.value, stderr=cu.stderr, lower_bound=lo)
    report.add("mixed-exponent-cs", cs.value < 0 and abs(cs.value) > 3 * cs.stderr and cs.value <= hi + 3 * cs.stderr,
               estimate=cs.value, stderr=cs.stderr, upper_bound=hi)
    report.add_series("lambda-cu-vs-ell", "ell", "estimate", [(i + 1, v) for i, v in enumerate(cu.partial)])
    report.add_series("lambda-cs-vs-ell", "ell", "estimate", [(i + 1, v) for i, v in enumerate(cs.partial)])

    rates = um.fixed_point_rates(G)
    report.add("non-uniformity-witnesses",
               abs(rates["cu_rate_q1"] - 0.5) <= 1e-10 and abs(rates["cs_rate_q2"] - 2.0) <= 1e-10, **rates)

    X = np.random.default_rng(c.seed).random((2000, 3))
    X = X[~in_inner_box(X, mix.charts[0])]
    r = um.cu_one_step_rates(G, X, c.bundle_iters)
    floor = mix.lambda_u / math.sqrt(1.0 + c.mixed_kappa2**2)
    report.add("cu-rate-off-q1", bool(np.min(r) >= floor * (1 - 1e-12)), min_rate=float(np.min(r)), floor=floor)


# ---------------------------------------------------------------------------
# orchestration

PARTS = {
    "construct-pve": [("construct", run_construct), ("bump", lambda r, c: check_bump(r, c))],
    "verify-cones": [("cones", run_cones)],
    "verify-pve": [("pve", run_pve)],
    "search-params": [("search", run_search)],
    "gibbs-mass": [("gibbs", run_gibbs)],
    "center-exponent": [("center", run_center)],
    "mixed-exponents": [("mixed", run_mixed)],
    "appendix-check": [("appendix", run_appendix)],
}


def _full_structure(report, ctx):
    check_eigen(report)
    check_fixed_points(report)
    check_spectra(report, ctx)
    check_box_preservation(report, ctx)
    check_round_trip(report, ctx)
    check_bump(report, ctx)
    check_infeasibility(report, ctx)


PARTS["full-paper"] = [
    ("structure", _full_structure),
    ("appendix", run_appendix),
    ("search", run_search),
    ("cones", run_cones),
    ("pve", run_pve),
    ("gibbs", run_gibbs),
    ("center", run_center),
    ("mixed", run_mixed),
]

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3


def run(cfg: RunConfig) -> Report:
    report = Report(cfg.scenario, dataclasses.asdict(cfg))
    ctx = Context(cfg)
    start = time.perf_counter()
    for name, part in PARTS[cfg.scenario]:
        try:
            with _timed(report, name):
                part(report, ctx)
        except DaForgeError as exc:
            report.error = {
                "type": type(exc).__name__,
                "message": str(exc),
                "part": name,
                "exit": EXIT_NUMERICAL if isinstance(exc, (NumericalError, BudgetError)) else EXIT_FAIL,
            }
            break
    report.timings["total"] = time.perf_counter() - start
    return report


def exit_code(report: Report) -> int:
    if report.error is not None:
        return report.error["exit"]
    return EXIT_PASS if report.passed else EXIT_FAIL
