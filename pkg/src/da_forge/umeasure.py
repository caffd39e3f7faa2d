"""Strong-unstable curves, their pushforwards, and Birkhoff-average
estimators for region masses and centre exponents.

Orbits always use the exact map.  Expansion along the strong-unstable
direction is large (about 5e4 per step for g), so image curves can only be
refined for a step or two; longer horizons use tangent pushforward along
exact orbits (lengths) and stratified Monte Carlo over the seed curve
(masses and exponents).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .construct import (
    DaSystem,
    MixedParams,
    apply,
    apply_inverse,
    center_derivative,
    jacobian,
)
from .errors import BudgetError, NumericalError, ParameterError
from .torus import BoxChart, in_inner_box, nearest_offset, wrap_array
from .verify import estimate_unstable_direction

VERTEX_BUDGET = 10**8
FIELD_ITERS = 24


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True, eq=False)
class UnstableCurve:
    """Polyline in a strong-unstable leaf, stored as a continuous lift.

    ``params`` are arclength positions on the seed curve; an iterated curve
    has vertices ``system^steps(seed.point_at(params))``.
    """

    system: DaSystem
    lifted: np.ndarray
    params: np.ndarray
    steps: int = 0
    seed: "UnstableCurve | None" = None

    @property
    def vertices(self) -> np.ndarray:
        return wrap_array(self.lifted)

    @property
    def chords(self) -> np.ndarray:
        return np.diff(self.lifted, axis=0)

    @property
    def arclength(self) -> float:
        return float(np.linalg.norm(self.chords, axis=1).sum())

    @property
    def root(self) -> "UnstableCurve":
        return self if self.seed is None else self.seed

    def point_at(self, s) -> np.ndarray:
        """Points at seed arclength s (linear between vertices)."""
        c = self.root
        lens = np.concatenate([[0.0], np.cumsum(np.linalg.norm(c.chords, axis=1))])
        s = np.clip(np.asarray(s, dtype=float), 0.0, lens[-1])
        out = np.empty(s.shape + (3,))
        for i in range(3):
            out[..., i] = np.interp(s, lens, c.lifted[:, i])
        return wrap_array(out)

    def tangents_frame(self) -> np.ndarray:
        """Unit chord directions in the system's eigenframe basis."""
        ch = self.chords
        ch = ch / np.linalg.norm(ch, axis=1, keepdims=True)
        return ch @ self.system.frame.vectors


def _lift_chain(points: np.ndarray, start=None) -> np.ndarray:
    steps = nearest_offset(np.diff(points, axis=0))
    base = points[:1] if start is None else start[None, :]
    return np.concatenate([base, base + np.cumsum(steps, axis=0)])


def unstable_field(system: DaSystem, X, iters: int = FIELD_ITERS) -> np.ndarray:
    """Strong-unstable unit vectors in standard coordinates."""
    v = estimate_unstable_direction(system, X, iters=iters)
    return np.atleast_2d(v) @ system.frame.vectors.T


def seed_curves(system: DaSystem, xs, length: float, max_seg_len: float = 0.01) -> list[UnstableCurve]:
    """Integrate the strong-unstable field through each x by RK4, length/2
    in each direction, with step at most max_seg_len/4."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    n_steps = max(1, int(math.ceil(length / 2 / (max_seg_len / 4))))
    h = length / 2 / n_steps
    ref = unstable_field(system, xs)

    def field(P, prev):
        v = unstable_field(system, wrap_array(P))
        sign = np.sign(np.einsum("ij,ij->i", v, prev))
        return v * np.where(sign == 0, 1.0, sign)[:, None]

    halves = []
    for direction in (1.0, -1.0):
        P = xs.copy()
        prev = direction * ref
        path = [P]
        for _ in range(n_steps):
            k1 = field(P, prev)
            k2 = field(P + 0.5 * h * k1, k1)
            k3 = field(P + 0.5 * h * k2, k2)
            k4 = field(P + h * k3, k3)
            step = h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
            P = P + step
            prev = k4
            path.append(P)
        halves.append(np.stack(path, axis=1))
    out = []
    for i in range(len(xs)):
        lifted = np.concatenate([halves[1][i][::-1], halves[0][i][1:]])
        base = lifted[0] - np.floor(lifted[0])
        lifted = lifted - lifted[0] + base
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(lifted, axis=0), axis=1))])
        out.append(UnstableCurve(system, lifted, s))
    return out


def seed_curve(system: DaSystem, x, length: float, max_seg_len: float = 0.01) -> UnstableCurve:
    return seed_curves(system, np.atleast_2d(x), length, max_seg_len)[0]


def iterate_curve(
    curve: UnstableCurve, steps: int, max_seg_len: float, budget: int = VERTEX_BUDGET
) -> UnstableCurve:
    """Image of the curve under system^steps, refined by bisecting seed
    parameters until every image chord is at most max_seg_len.  Midpoints
    are mapped by the true map, never interpolated."""
    system = curve.system
    root = curve.root
    total_steps = curve.steps + steps

    def image(s):
        return _iterate(system, root.point_at(s), total_steps)

    s = np.asarray(curve.params, dtype=float)
    Y = image(s)
    while True:
        d = np.linalg.norm(nearest_offset(np.diff(Y, axis=0)), axis=1)
        long = np.flatnonzero(d > max_seg_len)
        if long.size == 0:
            break
        if len(s) + long.size > budget:
            raise BudgetError(
                f"refinement needs more than {budget} vertices; use fewer steps or a shorter curve"
            )
        mids = 0.5 * (s[long] + s[long + 1])
        if np.any(mids <= s[long]) or np.any(mids >= s[long + 1]):
            raise NumericalError("seed parameter spacing underflow during refinement")
        Ym = image(mids)
        s = np.insert(s, long + 1, mids)
        Y = np.insert(Y, long + 1, Ym, axis=0)
    return UnstableCurve(system, _lift_chain(Y), s, total_steps, root)


def _iterate(system: DaSystem, X, steps: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    for _ in range(steps):
        X = apply(system, X)
    return X


# ---------------------------------------------------------------------------
# lengths


def strong_unstable_rate(system: DaSystem) -> float:
    return float(np.max(np.abs(system.linear_rates)))


def length_log_ratios(curve0: UnstableCurve, n_max: int, nodes_per_segment: int = 4) -> np.ndarray:
    """log(length(system^n L) / length(L)) for n = 0..n_max.

    Quadrature of the tangent pushforward: nodes inside each seed segment
    carry the segment's direction, and ||D system^n tau|| is accumulated in
    log space along the exact orbit.
    """
    system = curve0.system
    ch = curve0.chords
    seg_len = np.linalg.norm(ch, axis=1)
    t = (np.arange(nodes_per_segment) + 0.5) / nodes_per_segment
    starts = curve0.lifted[:-1]
    X = wrap_array((starts[:, None, :] + t[None, :, None] * ch[:, None, :]).reshape(-1, 3))
    V = np.repeat(curve0.tangents_frame(), nodes_per_segment, axis=0)
    w = np.repeat(seg_len / nodes_per_segment, nodes_per_segment)
    logw = np.log(w)
    total = float(w.sum())
    logs = np.zeros(len(X))
    out = [0.0]
    for _ in range(n_max):
        J = jacobian(system, X)
        V = np.einsum("nij,nj->ni", J, V)
        nv = np.linalg.norm(V, axis=1)
        logs += np.log(nv)
        V /= nv[:, None]
        X = apply(system, X)
        a = logw + logs
        mx = a.max()
        out.append(float(mx + np.log(np.exp(a - mx).sum()) - math.log(total)))
    return np.array(out)


def length_envelope_violations(curve0: UnstableCurve, n_max: int, kappa: float) -> dict:
    """Count n <= n_max where the length ratio leaves
    [rate^n / sqrt(1+kappa^2), sqrt(1+kappa^2) rate^n]."""
    lr = length_log_ratios(curve0, n_max)
    rate = strong_unstable_rate(curve0.system)
    n = np.arange(n_max + 1)
    dev = lr - n * math.log(rate)
    half = 0.5 * math.log1p(kappa * kappa)
    bad = np.abs(dev) > half
    return {
        "violations": int(bad.sum()),
        "max_abs_log_deviation": float(np.abs(dev).max()),
        "allowed": half,
        "log_ratios": lr.tolist(),
    }


# ---------------------------------------------------------------------------
# masses


@dataclass(frozen=True)
class PushforwardStats:
    n: int
    region_mass: float  # Monte Carlo estimate
    samples: int
    confidence_halfwidth: float  # one standard error
    quadrature_mass: float | None = None
    total_length: float | None = None

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "region_mass": self.region_mass,
            "samples": self.samples,
            "confidence_halfwidth": self.confidence_halfwidth,
            "quadrature_mass": self.quadrature_mass,
            "total_length": self.total_length,
        }


def stratified_samples(curve0: UnstableCurve, samples: int, rng: np.random.Generator) -> np.ndarray:
    """One arclength-uniform point per equal-length stratum of the curve."""
    L = curve0.root.arclength
    s = (np.arange(samples) + rng.random(samples)) * (L / samples)
    return curve0.root.point_at(s)


def _region_test(region):
    charts = region if isinstance(region, (list, tuple)) else [region]
    for ch in charts:
        if not isinstance(ch, BoxChart):
            raise ParameterError("regions must be box charts (their open inner boxes)")

    def inside(X):
        m = np.zeros(len(X), dtype=bool)
        for ch in charts:
            m |= in_inner_box(X, ch)
        return m

    return charts, inside


def _binomial_stderr(hits: np.ndarray, n: int) -> np.ndarray:
    p = (hits + 1.0) / (n + 2.0)
    return np.sqrt(p * (1.0 - p) / n)


def mass_series(
    curve0: UnstableCurve, n_max: int, region, samples: int = 100_000, seed: int = 0
) -> list[PushforwardStats]:
    """Monte Carlo g^n_*(m_L)(region)/m_L(L) for n = 0..n_max from one set
    of stratified orbits."""
    _, inside = _region_test(region)
    rng = np.random.default_rng(seed)
    X = stratified_samples(curve0, samples, rng)
    out = []
    for n in range(n_max + 1):
        if n:
            X = apply(curve0.system, X)
        hits = int(np.count_nonzero(inside(X)))
        out.append(PushforwardStats(n, hits / samples, samples, float(_binomial_stderr(np.array(hits), samples))))
    return out


def quadrature_mass(curve_n: UnstableCurve, region) -> float:
    """Seed-measure fraction of the image curve inside the region.

    Each image chord carries the seed length of its parameter interval, and
    the fraction of the chord inside the box is transferred to that
    interval.  This is the discrete form of weighting image arclength by the
    inverse Jacobian determinant along the leaf.  Chords are short, so only
    the nearest translate of each box can meet a chord.
    """
    charts, _ = _region_test(region)
    ch = curve_n.chords
    ds = np.diff(curve_n.params)
    frac = np.zeros(len(ch))
    for chart in charts:
        E = chart.frame.vectors
        hw = chart.half_width_inner
        rel = curve_n.lifted[:-1] - np.asarray(chart.center)
        rel = rel - np.round(rel)
        o = rel @ E
        dl = ch @ E
        t0 = np.zeros(len(ch))
        t1 = np.ones(len(ch))
        for i in range(3):
            nz = dl[:, i] != 0
            ta = np.where(nz, (-hw - o[:, i]) / np.where(nz, dl[:, i], 1.0), -np.inf)
            tb = np.where(nz, (hw - o[:, i]) / np.where(nz, dl[:, i], 1.0), np.inf)
            lo_i = np.where(nz, np.minimum(ta, tb), np.where(np.abs(o[:, i]) < hw, -np.inf, np.inf))
            hi_i = np.where(nz, np.maximum(ta, tb), np.where(np.abs(o[:, i]) < hw, np.inf, -np.inf))
            t0 = np.maximum(t0, lo_i)
            t1 = np.minimum(t1, hi_i)
        frac += np.clip(t1 - t0, 0.0, 1.0)
    return float((ds * np.minimum(frac, 1.0)).sum() / curve_n.root.arclength)


def pushforward_mass(
    curve0: UnstableCurve,
    n: int,
    region,
    samples: int = 100_000,
    seed: int = 0,
    max_seg_len: float | None = None,
    budget: int = 10_000_000,
) -> PushforwardStats:
    """Normalized mass of the region under the pushed leaf measure.

    Monte Carlo over stratified seed samples, and (when the refined image
    fits the vertex budget) quadrature along the image curve.
    """
    charts, _ = _region_test(region)
    mc = mass_series(curve0, n, region, samples, seed)[-1]
    if max_seg_len is None:
        max_seg_len = min(ch.half_width_inner for ch in charts)
    quad = None
    length = None
    predicted = math.exp(length_log_ratios(curve0, n)[-1]) * curve0.arclength / max_seg_len
    if predicted > budget:
        return PushforwardStats(n, mc.region_mass, samples, mc.confidence_halfwidth, None, None)
    try:
        img = curve0 if n == 0 else iterate_curve(curve0, n, max_seg_len, budget)
        quad = quadrature_mass(img, charts)
        length = img.arclength
    except BudgetError:
        pass
    return PushforwardStats(n, mc.region_mass, samples, mc.confidence_halfwidth, quad, length)


def mass_bound(kappa: float) -> float:
    return (1.0 + kappa**2) ** 1.5 / 100.0 + 0.01


def mass_decay_term(kappa: float, rate: float, n: int, length: float) -> float:
    """Second term of the pushforward mass bound; inf until it is defined."""
    den = rate**n * length - (1.0 + kappa**2) / 2.0
    return math.inf if den <= 0 else ((1.0 + kappa**2) / 2.0) / den


def mass_threshold_n(kappa: float, rate: float, length: float, target: float = 0.01, cap: int = 1000) -> int:
    """Smallest N with decay term <= target (default 1/100)."""
    for n in range(cap + 1):
        if mass_decay_term(kappa, rate, n, length) <= target:
            return n
    raise ParameterError("mass decay term never drops below the target")


# ---------------------------------------------------------------------------
# Birkhoff averages and exponents


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    samples: int
    partial: list  # running averages over ell, for plots

    def as_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "samples": self.samples}


def _orbit_average(system: DaSystem, X, ell: int, per_point) -> tuple[np.ndarray, list]:
    """Per-sample time averages of per_point(X_n) over n < ell."""
    acc = np.zeros(len(X))
    partial = []
    for n in range(ell):
        vals = per_point(X)
        acc += vals
        partial.append(float(acc.mean() / (n + 1)))
        if n + 1 < ell:
            X = apply(system, X)
    return acc / ell, partial


def _summarize(per_sample: np.ndarray, partial: list) -> Estimate:
    m = float(np.mean(per_sample))
    se = float(np.std(per_sample, ddof=1) / math.sqrt(len(per_sample))) if len(per_sample) > 1 else 0.0
    return Estimate(m, se, int(len(per_sample)), partial)


def birkhoff_average(
    curve0: UnstableCurve, ell: int, observable, samples: int = 100_000, seed: int = 0
) -> Estimate:
    """(1/ell) sum_{n<ell} of the pushed leaf measure's mean of observable."""
    rng = np.random.default_rng(seed)
    X = stratified_samples(curve0, samples, rng)
    per, partial = _orbit_average(curve0.system, X, ell, lambda Y: np.asarray(observable(Y), dtype=float))
    return _summarize(per, partial)


def center_exponent(system: DaSystem, curve0: UnstableCurve, ell: int, samples: int = 100_000, seed: int = 0) -> Estimate:
    """Birkhoff average of log(centre derivative) for the inverse pve system."""
    return birkhoff_average(curve0, ell, lambda Y: np.log(center_derivative(system, Y)), samples, seed)


def center_exponent_lower_bound(kappa: float, gamma_u: float) -> float:
    a = (1.0 + kappa**2) ** 1.5 / 100.0
    return (a + 0.01) * math.log(0.5) + (0.99 - a) * math.log(gamma_u)


def mixed_exponent_bounds(kappa2: float, lambda_u: float, lambda_ss: float) -> tuple[float, float]:
    """(lower bound for the cu exponent, upper bound for the cs exponent)."""
    a = (1.0 + kappa2**2) ** 1.5 / 100.0
    lo = (a + 0.01) * math.log(0.5 - kappa2) + (0.99 - a) * math.log(lambda_u / math.sqrt(1 + kappa2**2))
    hi = (a + 0.01) * math.log(2.0 + kappa2) + (0.99 - a) * math.log(math.sqrt(1 + kappa2**2) * lambda_ss)
    return lo, hi


def _push(J, V):
    V = np.einsum("nij,nj->ni", J, V)
    nv = np.linalg.norm(V, axis=1)
    return V / nv[:, None], nv


def _pull(J, W):
    W = np.linalg.solve(J, W[..., None])[..., 0]
    nw = np.linalg.norm(W, axis=1)
    return W / nw[:, None], nw


@dataclass(frozen=True)
class MixedExponents:
    cu: Estimate
    cs: Estimate
    unconverged_fraction: float

    def as_dict(self) -> dict:
        return {"lambda_cu": self.cu.as_dict(), "lambda_cs": self.cs.as_dict(), "unconverged_fraction": self.unconverged_fraction}


def mixed_exponents(
    system: DaSystem,
    curve0: UnstableCurve,
    ell: int,
    bundle_iters: int = 30,
    samples: int = 100_000,
    seed: int = 0,
    tol: float = 1e-8,
    max_unconverged: float = 1e-3,
) -> MixedExponents:
    """Centre-unstable and centre-stable exponents along pushed leaf samples.

    E^u + E^s is invariant, so both centre bundles live in that plane.  F^cu
    at each sample comes from pushing cone vectors forward from
    ``bundle_iters`` preimages; F^cs along the orbit comes from pulling
    E^s back from ``bundle_iters`` steps past the horizon.
    """
    if system.variant != "mixed-G":
        raise ParameterError("mixed exponents need the mixed-G system")
    params: MixedParams = system.params
    rng = np.random.default_rng(seed)
    X0 = stratified_samples(curve0, samples, rng)
    eps = params.epsilon

    # F^cu at X0, two cone vectors must agree
    pre = [X0]
    for _ in range(bundle_iters):
        pre.append(apply_inverse(system, pre[-1]))
    A = np.zeros((samples, 3)); A[:, 1], A[:, 2] = 1.0, eps
    B = np.zeros((samples, 3)); B[:, 1], B[:, 2] = 1.0, -eps
    for j in range(bundle_iters, 0, -1):
        J = jacobian(system, pre[j])
        A, _ = _push(J, A)
        B, _ = _push(J, B)
    spread = np.linalg.norm(A - B, axis=1)

    # forward orbit, cu rates on the fly
    horizon = ell + bundle_iters
    orbit = [X0]
    Js = []
    cu_acc = np.zeros(samples)
    cu_partial = []
    V = A
    X = X0
    for n in range(horizon):
        J = jacobian(system, X)
        Js.append(J)
        if n < ell:
            V, nv = _push(J, V)
            cu_acc += np.log(nv)
            cu_partial.append(float(cu_acc.mean() / (n + 1)))
        X = apply(system, X)
        orbit.append(X)

    # F^cs by pulling back, two cone vectors must agree by time ell
    W1 = np.zeros((samples, 3)); W1[:, 2], W1[:, 1] = 1.0, eps
    W2 = np.zeros((samples, 3)); W2[:, 2], W2[:, 1] = 1.0, -eps
    rates = np.zeros((ell, samples))
    for n in range(horizon - 1, -1, -1):
        W1n, nw = _pull(Js[n], W1)
        W2n, _ = _pull(Js[n], W2)
        if n < ell:
            # rate of DG on the unit vector W1n is 1/||DG^-1 W1||
            rates[n] = -np.log(nw)
        W1, W2 = W1n, W2n
        if n == ell - 1:
            spread_cs = np.linalg.norm(W1 - W2, axis=1)
    bad = float(np.mean((spread > tol) | (spread_cs > tol)))
    if bad > max_unconverged:
        raise NumericalError(f"centre bundles did not converge at {bad:.2%} of samples")
    cs_partial = list(np.cumsum(rates.mean(axis=1)) / np.arange(1, ell + 1))
    cu = _summarize(cu_acc / ell, cu_partial)
    cs = _summarize(rates.mean(axis=0), [float(v) for v in cs_partial])
    return MixedExponents(cu, cs, bad)


def fixed_point_rates(system: DaSystem) -> dict:
    """One-step centre rates at q1 (centre-unstable) and q2 (centre-stable)."""
    params: MixedParams = system.params
    q1, q2 = (np.asarray(c.center, dtype=float) for c in params.charts)
    J1 = jacobian(system, q1)
    J2 = jacobian(system, q2)
    return {
        "cu_rate_q1": float(np.linalg.norm(J1 @ np.array([0.0, 1.0, 0.0]))),
        "cs_rate_q2": float(np.linalg.norm(J2 @ np.array([0.0, 0.0, 1.0]))),
    }


def cu_one_step_rates(system: DaSystem, X, bundle_iters: int = 30) -> np.ndarray:
    """||DG v|| for unit v in F^cu at each point."""
    pre = [np.atleast_2d(X)]
    for _ in range(bundle_iters):
        pre.append(apply_inverse(system, pre[-1]))
    V = np.zeros((len(pre[0]), 3)); V[:, 1] = 1.0
    for j in range(bundle_iters, 0, -1):
        V, _ = _push(jacobian(system, pre[j]), V)
    _, nv = _push(jacobian(system, pre[0]), V)
    return nv


def exponent_triplet(system: DaSystem, curve0: UnstableCurve, ell: int, samples: int = 2000, seed: int = 0, tail: int = 30) -> dict:
    """Strong-unstable, centre and strong-stable exponents of the inverse pve
    system along pushed leaf samples, with the time average of log|det|.

    The centre bundle is the fixed axis E^s; the strong-unstable bundle is
    pushed forward from the seed tangent; the strong-stable one is pulled
    back from ``tail`` steps past the horizon.
    """
    if system.variant != "pve-inverse-g":
        raise ParameterError("exponent triplet is defined for pve-inverse-g")
    rng = np.random.default_rng(seed)
    X = stratified_samples(curve0, samples, rng)
    ax_uu = system.unstable_axis
    ax_c = 1
    ax_ss = 3 - ax_uu - ax_c
    V = np.zeros((samples, 3)); V[:, ax_uu] = 1.0
    Js = []
    uu = np.zeros(samples)
    cen = np.zeros(samples)
    det = np.zeros(samples)
    for n in range(ell + tail):
        J = jacobian(system, X)
        Js.append(J)
        if n < ell:
            V, nv = _push(J, V)
            uu += np.log(nv)
            cen += np.log(np.abs(J[:, ax_c, ax_c]))
            det += np.log(np.abs(np.linalg.det(J)))
        X = apply(system, X)
    W = np.zeros((samples, 3)); W[:, ax_ss] = 1.0
    ss = np.zeros(samples)
    for n in range(ell + tail - 1, -1, -1):
        W, nw = _pull(Js[n], W)
        if n < ell:
            ss -= np.log(nw)
    per = {"uu": uu / ell, "c": cen / ell, "ss": ss / ell, "logdet": det / ell}
    out = {k: _summarize(v, []) for k, v in per.items()}
    total = per["uu"] + per["c"] + per["ss"] - per["logdet"]
    out["residual"] = _summarize(total, [])
    return out
