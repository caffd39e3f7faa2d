"""Certification: parameter searches, cone invariance, partial volume
expansion, fixed-point spectra and the appendix constants.

All vectors and Jacobians here are in the eigenframe basis of the system's
linear part.  Margins are floating-point quantities, not interval bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bump import compute_m, BumpProfile
from .construct import (
    DaSystem,
    DeformStep,
    MixedParams,
    PveParams,
    apply,
    apply_inverse,
    inverse_system,
    jacobian,
    make_mixed_params,
    make_pve_params,
    mixed_system,
    pve_system,
)
from .errors import NumericalError, ParameterError
from .parallel import chunked_map
from .torus import (
    EigenFrame,
    TorusPoint,
    fixed_points,
    power_eigen,
    segment_box_lengths,
    torus_distance,
    wrap_array,
)

N_CAP = 64
K_CAP_EXP = 20
KAPPA_RESOLUTION = 1e-6
RATIO_REL_TOL = 1e-12


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class CertReport:
    kind: str
    min_margin: float
    witness: dict
    samples: int

    @property
    def passed(self) -> bool:
        return bool(self.min_margin > 0)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "passed": self.passed,
            "min_margin": self.min_margin,
            "samples": self.samples,
            "witness": self.witness,
        }


@dataclass(frozen=True)
class SearchResult:
    """A searched parameter with the margins of its defining inequalities."""

    name: str
    value: float | int
    margins: dict
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v > 0 for v in self.margins.values())

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "passed": self.passed,
            "margins": self.margins,
            "details": self.details,
        }


@dataclass(frozen=True)
class ConeSpec:
    """Vectors with ||v_comp|| <= alpha ||v_core||."""

    alpha: float
    core_axes: tuple[int, ...]
    complement_axes: tuple[int, ...]

    def __post_init__(self):
        if not self.alpha > 0:
            raise ParameterError("cone aperture must be positive")
        if set(self.core_axes) & set(self.complement_axes):
            raise ParameterError("core and complement axes overlap")

    def contains(self, v, tol: float = 0.0) -> np.ndarray:
        v = np.atleast_2d(v)
        core = np.linalg.norm(v[:, list(self.core_axes)], axis=1)
        comp = np.linalg.norm(v[:, list(self.complement_axes)], axis=1)
        return comp <= self.alpha * core * (1 + tol)

    def boundary_vectors(self, directions: int = 64) -> np.ndarray:
        """Unit-core vectors on the cone boundary.

        Only the first core axis is used; every cone here has a 1-D core.
        A 1-D complement has just the two boundary directions.
        """
        c0 = self.core_axes[0]
        out = []
        if len(self.complement_axes) == 1:
            (j,) = self.complement_axes
            for s in (1.0, -1.0):
                v = np.zeros(3)
                v[c0], v[j] = 1.0, s * self.alpha
                out.append(v)
        else:
            j0, j1 = self.complement_axes[:2]
            for th in np.linspace(0.0, 2 * np.pi, directions, endpoint=False):
                v = np.zeros(3)
                v[c0] = 1.0
                v[j0], v[j1] = self.alpha * np.cos(th), self.alpha * np.sin(th)
                out.append(v)
        return np.array(out)


# ---------------------------------------------------------------------------
# appendix constants


def lemma_tuilun_constants(gamma: float) -> tuple[float, float]:
    """(eps0, M) such that (c^2 + c u)/((1 + e^2 + c^2)(1 + e^2)) >= M
    whenever |u|, |e| <= eps0 and |c| >= gamma."""
    if not gamma > 0:
        raise ParameterError("gamma must be positive")
    eps0 = gamma / 10.0
    M = 0.9 / ((1.0 / gamma**2 + 1.01) * (1.0 + gamma**2 / 100.0))
    return eps0, M


def perturbed_ratio(c, u, e):
    return (c * c + c * u) / ((1.0 + e * e + c * c) * (1.0 + e * e))


def ratio_grid_check(gamma: float, per_axis: int = 100, c_max: float = 10.0) -> CertReport:
    """Brute-force the ratio inequality on a per_axis^3 grid.

    The bound is attained at c = gamma, u = -eps0, |e| = eps0, so a
    relative rounding tolerance is allowed at equality.
    """
    eps0, M = lemma_tuilun_constants(gamma)
    u = np.linspace(-eps0, eps0, per_axis)
    e = np.linspace(-eps0, eps0, per_axis)
    half = per_axis // 2
    cpos = np.geomspace(gamma, c_max, per_axis - half)
    c = np.concatenate([-cpos[::-1][: half], cpos]) if half else cpos
    C, U, E = np.meshgrid(c, u, e, indexing="ij")
    r = perturbed_ratio(C, U, E)
    rel = (r - M) / M
    i = np.unravel_index(int(np.argmin(rel)), rel.shape)
    violations = int(np.count_nonzero(rel < -RATIO_REL_TOL))
    margin = float(rel[i]) + RATIO_REL_TOL
    return CertReport(
        kind="appendix-ratio",
        min_margin=margin if violations == 0 else -float(violations),
        witness={
            "c": float(C[i]),
            "u": float(U[i]),
            "e": float(E[i]),
            "ratio": float(r[i]),
            "M": M,
            "eps0": eps0,
            "violations": violations,
            "min_relative_slack": float(rel[i]),
        },
        samples=int(r.size),
    )


# ---------------------------------------------------------------------------
# inequality searches


def pve_n_margins(values, m: float, M: float) -> dict:
    """Margins of the ordering and the relation fixing A = D^{2n}."""
    luu, ls, lss = values
    return {
        "order_ss_s": ls - lss,
        "order_s_1": 1.0 - ls,
        "order_2_uu": luu - 2.0,
        "product_is_one": 1e-10 - abs(luu * ls * lss - 1.0),
        "M_over_lambda_s_sq": M / ls**2 - 2.0,
        "center_derivative_cap": 1.0 / (2.0 * lss) - (-m * (0.5 - 1.0 / ls) + 1.0 / ls),
    }


def mixed_n_margins(values, m: float) -> dict:
    luu, lu, lss = values
    return {
        "order_ss_half": 0.5 - lss,
        "order_2_u": lu - 2.0,
        "order_u_uu": luu - lu,
        "product_is_one": 1e-10 - abs(luu * lu * lss - 1.0),
        "center_derivative_cap": luu / 2.0 - (-m * (0.5 - lu) + lu),
    }


def search_n(m: float, base_frame: EigenFrame, variant: str, gamma: float = 0.01) -> SearchResult:
    """Smallest n whose powered eigenvalues satisfy the variant's relation."""
    _, M = lemma_tuilun_constants(gamma)
    for n in range(1, N_CAP + 1):
        vals = power_eigen(base_frame, 2 * n).values
        if variant == "pve":
            margins = pve_n_margins(vals, m, M)
        elif variant == "mixed":
            margins = mixed_n_margins(vals, m)
        else:
            raise ParameterError(f"unknown variant {variant!r}")
        if all(v > 0 for v in margins.values()):
            return SearchResult("n", n, margins, {"eigenvalues": list(vals), "m": m, "M": M})
    raise ParameterError(f"no n <= {N_CAP} satisfies the {variant} relation")


def _weights(kappa):
    w = (1.0 + kappa * kappa) ** 1.5 / 100.0
    return w + 0.01, 0.99 - w


def kappa_pve_lhs(kappa: float, lambda_s: float) -> float:
    """Left side of the centre-exponent relation (must be > 0)."""
    a, b = _weights(kappa)
    return a * math.log(0.5) + b * math.log(1.0 / lambda_s)


def kappa2_lhs(kappa2: float, lambda_u: float) -> float:
    """Centre-unstable relation (must be > 0); needs kappa2 < 1/2."""
    if kappa2 >= 0.5:
        return -math.inf
    a, b = _weights(kappa2)
    return a * math.log(0.5 - kappa2) + b * math.log(lambda_u / math.sqrt(1 + kappa2**2))


def kappa33_lhs(kappa2: float, lambda_ss: float) -> float:
    """Centre-stable relation (must be < 0)."""
    a, b = _weights(kappa2)
    return a * math.log(2.0 + kappa2) + b * math.log(math.sqrt(1 + kappa2**2) * lambda_ss)


def kappa_margins(kappa: float, variant: str, lambdas: dict) -> dict:
    if variant == "pve":
        return {"centre_exponent": kappa_pve_lhs(kappa, lambdas["lambda_s"])}
    return {
        "centre_unstable": kappa2_lhs(kappa, lambdas["lambda_u"]),
        "centre_stable": -kappa33_lhs(kappa, lambdas["lambda_ss"]),
    }


def search_kappa(variant: str, resolution: float = KAPPA_RESOLUTION, **lambdas) -> SearchResult:
    """Largest kappa on the grid resolution*Z satisfying the variant's relations.

    pve needs ``lambda_s``; mixed needs ``lambda_u`` and ``lambda_ss``.
    Bisection is over integer grid indices, so the result is reproducible.
    """
    if variant not in ("pve", "mixed"):
        raise ParameterError(f"unknown variant {variant!r}")

    scale = round(1.0 / resolution)
    exact = abs(scale * resolution - 1.0) < 1e-12

    def value(j):
        # j / 10^6 is the correctly rounded decimal; j * 1e-6 is not
        return j / scale if exact else j * resolution

    def ok(j):
        return all(v > 0 for v in kappa_margins(value(j), variant, lambdas).values())

    if not ok(0):
        raise ParameterError("the kappa = 0 instance fails; n is too small")
    # the weights turn negative past (1+k^2)^1.5 = 99, and kappa2 < 1/2
    top = math.sqrt(99.0 ** (2.0 / 3.0) - 1.0) if variant == "pve" else 0.5
    lo, hi = 0, int(math.ceil(top / resolution)) + 1
    if ok(hi):
        raise ParameterError("kappa relation holds past its natural range")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    kappa = value(lo)
    return SearchResult("kappa" if variant == "pve" else "kappa2", kappa, kappa_margins(kappa, variant, lambdas))


def default_epsilon(kappa: float, variant: str, cap: float = 0.05) -> float:
    return min(kappa, cap) if variant == "pve" else min(kappa / math.sqrt(2.0), cap)


# ---------------------------------------------------------------------------
# slope / delta


def segment_mass_grid(
    centers,
    frame: EigenFrame,
    direction,
    delta: float,
    radius: float = 0.25,
    grid: int = 64,
    refine: int = 8,
):
    """Max over a grid of base points of the segment length inside the
    inner boxes (half width 2 delta) around ``centers``; the worst grid
    points are refined on a finer local lattice.
    """
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    g = np.arange(grid) / grid
    X = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    # base points whose segments run through a box centre along its axis
    t = np.linspace(-radius, radius, 257)
    X = np.concatenate([X] + [wrap_array(np.asarray(c) + np.outer(t, d)) for c in centers])

    def total(P):
        s = np.zeros(len(P))
        for c in centers:
            s += segment_box_lengths(P, d, -radius, radius, np.asarray(c), frame.vectors, 2 * delta)
        return s

    vals = total(X)
    order = np.argsort(vals)[::-1][:refine]
    best = float(vals[order[0]])
    witness = X[order[0]]
    h = 1.0 / grid
    off = np.linspace(-h / 2, h / 2, 7)
    local = np.stack(np.meshgrid(off, off, off, indexing="ij"), axis=-1).reshape(-1, 3)
    for i in order:
        P = wrap_array(X[i] + local)
        v = total(P)
        j = int(np.argmax(v))
        if v[j] > best:
            best, witness = float(v[j]), P[j]
    return best, witness, int(len(X) + refine * len(local))


def slope_delta_search(
    frame: EigenFrame,
    fixed_point_list,
    direction,
    radius: float = 0.25,
    threshold: float = 1.0 / 200.0,
    start: float = 1.0 / 64.0,
    floor: float = 1e-5,
    grid: int = 64,
) -> SearchResult:
    """Largest delta on start * 2^-j with segment mass <= threshold.

    With two fixed points the 5-delta boxes must also be disjoint.
    """
    centers = [np.asarray(p, dtype=float) for p in fixed_point_list]
    delta = start
    rejected = []
    while delta >= floor:
        reason = None
        if 4 * delta > threshold:
            reason = "central chord exceeds threshold"
        elif 8 * (4 * delta) * math.sqrt(3.0) >= 1.0:
            reason = "chart not injective"
        elif len(centers) > 1 and torus_distance(centers[0], centers[1]) <= 10 * delta * math.sqrt(3.0):
            reason = "5-delta boxes intersect"
        if reason is None:
            worst, witness, samples = segment_mass_grid(centers, frame, direction, delta, radius, grid)
            if worst <= threshold:
                margins = {
                    "segment_mass": threshold - worst,
                    "chart_injective": 1.0 - 32 * delta * math.sqrt(3.0),
                }
                if len(centers) > 1:
                    margins["boxes_disjoint"] = float(torus_distance(centers[0], centers[1])) - 10 * delta * math.sqrt(3.0)
                return SearchResult(
                    "delta",
                    delta,
                    margins,
                    {"worst_mass": worst, "witness": [float(v) for v in witness], "samples": samples, "rejected": rejected},
                )
            reason = f"segment mass {worst:.6g}"
        rejected.append({"delta": delta, "reason": reason})
        delta /= 2.0
    raise ParameterError(f"no admissible delta above {floor}")


# ---------------------------------------------------------------------------
# sampling grids


def _support_lattice(dfm, resolution: int, pad: float, zero_axis: int | None = None) -> np.ndarray:
    d = dfm.profile.delta * pad
    axes = [np.linspace(-d, d, resolution)] * 3
    axes[dfm.axis] = np.linspace(-d / dfm.k, d / dfm.k, resolution)
    if zero_axis is not None:
        axes[zero_axis] = np.zeros(1)
    abc = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return wrap_array(dfm.center + abc @ dfm.vectors.T)


def support_points(system: DaSystem, resolution: int = 40, pad: float = 1.05, revisits: bool = True) -> np.ndarray:
    """Points whose orbit enters each deformation support at its step.

    For the deformation at step i, a resolution^3 lattice over its support
    (in local coordinates) is pulled back through the preceding steps.
    With ``revisits``, a resolution^2 slice with zero strong-unstable
    coordinate is pushed through the whole map: those images enter the
    support again, so both their past and present derivatives are deformed.
    """
    out = []
    uu = system.unstable_axis
    for i, step in enumerate(system.steps):
        if not isinstance(step, DeformStep):
            continue
        dfm = step.deformation
        Y = _support_lattice(dfm, resolution, pad)
        for prev in reversed(system.steps[:i]):
            Y = prev.backward(Y)
        out.append(Y)
        if revisits and uu != dfm.axis:
            Z = _support_lattice(dfm, resolution, pad, zero_axis=uu)
            for prev in reversed(system.steps[:i]):
                Z = prev.backward(Z)
            out.append(apply(system, Z))
    return np.concatenate(out) if out else np.zeros((0, 3))


def torus_grid(resolution: int) -> np.ndarray:
    g = (np.arange(resolution) + 0.5) / resolution
    return np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)


def verification_points(system: DaSystem, resolution: int = 40, uniform: int | None = None) -> np.ndarray:
    """Support lattices plus a coarse uniform grid of the torus."""
    u = resolution // 4 if uniform is None else uniform
    parts = [support_points(system, resolution)]
    if u > 0:
        parts.append(torus_grid(u))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# cones


def _cone_margins(J: np.ndarray, cone: ConeSpec, V: np.ndarray) -> np.ndarray:
    W = np.einsum("nij,dj->ndi", J, V)
    core = np.linalg.norm(W[..., list(cone.core_axes)], axis=-1)
    comp = np.linalg.norm(W[..., list(cone.complement_axes)], axis=-1)
    return cone.alpha * core - comp


def cone_invariance(
    system: DaSystem,
    cone: ConeSpec,
    direction: str = "forward",
    points=None,
    resolution: int = 40,
    directions: int = 64,
    workers: int = 1,
    kind: str | None = None,
) -> CertReport:
    """Check that the derivative maps the cone boundary strictly inside.

    ``direction='inverse'`` uses the Jacobian of the inverse system, with
    sample points taken from the inverse system's deformation supports.
    """
    sysj = system if direction == "forward" else inverse_system(system)
    X = verification_points(sysj, resolution) if points is None else np.atleast_2d(points)
    V = cone.boundary_vectors(directions)

    def work(chunk):
        mg = _cone_margins(jacobian(sysj, chunk), cone, V)
        i, j = np.unravel_index(int(np.argmin(mg)), mg.shape)
        return float(mg[i, j]), chunk[i], V[j]

    parts = chunked_map(work, X, workers)
    best = min(parts, key=lambda t: t[0])
    return CertReport(
        kind=kind or f"cone-{direction}",
        min_margin=best[0],
        witness={"point": [float(v) for v in best[1]], "vector": [float(v) for v in best[2]], "k": system.params.k},
        samples=int(len(X) * len(V)),
    )


def pve_cones(params: PveParams) -> tuple[ConeSpec, ConeSpec]:
    """Unstable cone around E^uu with complement E^c + E^ss (forward) and
    stable cone around E^ss with complement E^uu + E^c (inverse)."""
    return ConeSpec(params.epsilon, (0,), (1, 2)), ConeSpec(params.epsilon, (2,), (0, 1))


def mixed_cones(params: MixedParams) -> tuple[ConeSpec, ConeSpec, ConeSpec]:
    """Strong-unstable cone, centre-unstable cone (both forward) and the
    centre-stable cone (inverse)."""
    e = params.epsilon
    return ConeSpec(e, (0,), (1, 2)), ConeSpec(e, (1,), (2,)), ConeSpec(e, (2,), (1,))


# ---------------------------------------------------------------------------
# unstable direction and partial volume expansion


def estimate_unstable_direction(
    system: DaSystem, x, iters: int = 40, tol: float = 1e-10, return_steps: bool = False
):
    """Push the linear strong-unstable axis forward along the preimage orbit.

    Two starting vectors (the axis and a tilted copy) are pushed through the
    same derivative cocycle; the estimate is accepted when they agree to
    ``tol``, which is the Cauchy criterion in the preimage depth.  Returns
    unit vectors (frame basis).  Raises NumericalError otherwise.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.ndim(x) == 1
    ax = system.unstable_axis
    orbit = [X]
    for _ in range(iters):
        orbit.append(apply_inverse(system, orbit[-1]))
    V = np.zeros((len(X), 2, 3))
    V[:, :, ax] = 1.0
    V[:, 1, :] += 0.5 * (1.0 - np.eye(3)[ax])
    V /= np.linalg.norm(V, axis=2, keepdims=True)
    history = []
    for j in range(iters, 0, -1):
        V = np.einsum("nij,nkj->nki", jacobian(system, orbit[j]), V)
        V /= np.linalg.norm(V, axis=2, keepdims=True)
        history.append(float(np.max(np.linalg.norm(V[:, 0] - V[:, 1], axis=1))))
    if history and history[-1] >= tol:
        raise NumericalError(f"unstable direction not converged after {iters} steps; spread {history[-1]:.3g}")
    v = V[:, 0]
    out = v[0] if single else v
    if return_steps:
        return out, history
    return out


@dataclass(frozen=True)
class PlaneDetSummary:
    """Squared area expansion of Df on planes containing E^uu_k."""

    min_det_sq: float  # exact minimum over all planes
    grid_min_det_sq: float  # minimum over the sampled angles
    regime_small_c: float  # |c| <= 1/100
    regime_large_c: float  # |c| >= 1/100 and the pole
    worst_index: int
    worst_c: float


def plane_forms(J: np.ndarray, vuu: np.ndarray):
    """2x2 quadratic forms S with det(Df|V)^2 = w^T S w for V = span(vuu, w),
    w a unit vector of the orthogonal complement written in the basis
    (w1, w2), w1 = (-v1, v0, 0)/norm, w2 = vuu x w1.
    """
    n = len(vuu)
    w1 = np.zeros((n, 3))
    w1[:, 0], w1[:, 1] = -vuu[:, 1], vuu[:, 0]
    nrm = np.linalg.norm(w1, axis=1)
    bad = nrm < 1e-12
    w1[bad] = np.array([0.0, 1.0, 0.0]) - vuu[bad] * vuu[bad, 1:2]
    w1 /= np.linalg.norm(w1, axis=1, keepdims=True)
    w2 = np.cross(vuu, w1)
    a = np.einsum("nij,nj->ni", J, vuu)
    B = np.stack([np.einsum("nij,nj->ni", J, w1), np.einsum("nij,nj->ni", J, w2)], axis=2)  # n,3,2
    aa = np.einsum("ni,ni->n", a, a)
    G = np.einsum("nia,nib->nab", B, B)
    ab = np.einsum("ni,nia->na", a, B)
    S = aa[:, None, None] * G - ab[:, :, None] * ab[:, None, :]
    return S, w1, w2


def _arc_min(S: np.ndarray, t0: np.ndarray, t1: np.ndarray) -> np.ndarray:
    """Min over theta in [t0, t1] of (cos, sin) S (cos, sin)^T."""

    def q(t):
        c, s = np.cos(t), np.sin(t)
        return S[:, 0, 0] * c * c + 2 * S[:, 0, 1] * c * s + S[:, 1, 1] * s * s

    best = np.minimum(q(t0), q(t1))
    # critical angles of the form: tan(2 t) = 2 S01 / (S00 - S11)
    base = 0.5 * np.arctan2(2 * S[:, 0, 1], S[:, 0, 0] - S[:, 1, 1])
    for shift in (-np.pi, -np.pi / 2, 0.0, np.pi / 2, np.pi):
        t = base + shift
        inside = (t >= t0) & (t <= t1)
        best = np.where(inside, np.minimum(best, q(t)), best)
    return best


def plane_det_expansion(lam_uu, lam_ss, Pb, Qa, Qc, eps, c):
    """det(Df|V)^2 from the five-term expansion, V = span((1, eps, 0), (-eps, 1, c))."""
    y = (1.0 + eps * Qa - c * Qc) / Pb
    w = (-Qa + eps) / Pb
    z = lam_ss * c
    s = (
        y * y * lam_uu**2
        + z * z * lam_uu**2
        + (lam_uu * eps) ** 2 * w * w
        + z * z * w * w
        + 2 * lam_uu**2 * eps * y * w
    )
    return s / ((1.0 + eps * eps + c * c) * (1.0 + eps * eps))


def pve_min_det(
    system: DaSystem, x, c_samples: int = 181, vuu=None, regime_split: float = 0.01
) -> PlaneDetSummary | list:
    """Minimum of det(Df|V)^2 over planes V containing E^uu_k.

    ``c_samples`` angles sweep [-pi/2, pi/2]; the exact minimum over all
    planes and over the two regimes |c| <= 1/100, |c| >= 1/100 are computed
    from the quadratic form.  Returns one summary per point (or a single
    summary for a single point).
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.ndim(x) == 1
    v = estimate_unstable_direction(system, X) if vuu is None else np.atleast_2d(vuu)
    arr = pve_det_arrays(system, X, v, c_samples, regime_split)
    res = [
        PlaneDetSummary(
            float(arr["exact"][i]),
            float(arr["grid"][i]),
            float(arr["small"][i]),
            float(arr["large"][i]),
            int(arr["grid_arg"][i]),
            float(arr["grid_c"][i]),
        )
        for i in range(len(X))
    ]
    return res[0] if single else res


def pve_det_arrays(system: DaSystem, X, vuu, c_samples: int = 181, regime_split: float = 0.01) -> dict:
    J = jacobian(system, X)
    S, w1, w2 = plane_forms(J, vuu)
    exact = np.linalg.eigvalsh(S)[:, 0]
    th = np.linspace(-np.pi / 2, np.pi / 2, c_samples)
    c, s = np.cos(th), np.sin(th)
    grid = (
        S[:, 0, 0, None] * c * c + 2 * S[:, 0, 1, None] * c * s + S[:, 1, 1, None] * s * s
    )
    # plane parameter c: v proportional to (-eps, 1, c) in the uu-s-ss frame
    scale = np.abs(vuu[:, 0])
    split = np.arctan(regime_split * np.maximum(scale, 1e-300))
    small = _arc_min(S, -split, split)
    large = np.minimum(_arc_min(S, split, np.full_like(split, np.pi / 2)), _arc_min(S, -np.full_like(split, np.pi / 2), -split))
    arg = np.argmin(grid, axis=1)
    tan = np.tan(th[arg])
    with np.errstate(divide="ignore"):
        grid_c = np.where(np.abs(np.cos(th[arg])) < 1e-15, np.inf, tan / np.maximum(scale, 1e-300))
    return {
        "exact": exact,
        "grid": grid.min(axis=1),
        "small": small,
        "large": large,
        "grid_arg": arg,
        "grid_c": grid_c,
        "J": J,
    }


def proof_side_quantities(J: np.ndarray, vuu: np.ndarray, lam_ss: float, lam_uu: float) -> dict:
    """The small quantities of the volume argument: eps, u, w per point."""
    Pb = 1.0 / J[:, 1, 1]
    Qa = -J[:, 1, 0] * Pb
    Qc = -J[:, 1, 2] * Pb
    eps = vuu[:, 1] / vuu[:, 0]
    u = 8 * eps * (-Qc) * (-Qa + eps)
    w = 8 * eps * (1 + eps * Qa) * (-Qa + eps)
    return {"Pb": Pb, "Qa": Qa, "Qc": Qc, "eps": eps, "u": u, "w": w}


def pve_volume_reports(system: DaSystem, points=None, resolution: int = 40, c_samples: int = 181, workers: int = 1):
    """Determinant reports for the full family and for each proof regime,
    plus the proof-side sufficient conditions."""
    X = verification_points(system, resolution) if points is None else np.atleast_2d(points)
    params: PveParams = system.params

    def work(chunk):
        v = estimate_unstable_direction(system, chunk)
        arr = pve_det_arrays(system, chunk, v, c_samples)
        side = proof_side_quantities(arr["J"], v, params.lambda_ss, params.lambda_uu)
        out = {}
        for key in ("exact", "grid", "small", "large"):
            i = int(np.argmin(arr[key]))
            out[key] = (float(arr[key][i]), [float(t) for t in chunk[i]])
        out["side"] = {k: float(np.max(np.abs(side[k]))) for k in ("eps", "u", "w")}
        return out

    parts = chunked_map(work, X, workers)
    eps0, _ = lemma_tuilun_constants(0.01)
    reports = {}
    names = {
        "exact": "pve-all-planes",
        "grid": "pve-angle-grid",
        "small": "pve-regime-small-c",
        "large": "pve-regime-large-c",
    }
    for key, name in names.items():
        val, pt = min((p[key] for p in parts), key=lambda t: t[0])
        reports[key] = CertReport(
            kind=name,
            min_margin=val - 1.0,
            witness={"point": pt, "det_sq": val, "k": params.k},
            samples=int(len(X) * (c_samples if key == "grid" else 1)),
        )
    side = {k: max(p["side"][k] for p in parts) for k in ("eps", "u", "w")}
    side_margins = {
        "eps_le_eps0": eps0 - side["eps"],
        "u_le_eps0": eps0 - side["u"],
        "w_le_half_lambda_s_sq": params.lambda_s**2 / 2 - side["w"],
    }
    reports["proof_side"] = SearchResult("volume-proof-conditions", params.k, side_margins, side)
    return reports


# ---------------------------------------------------------------------------
# mixed-case rates and the starred entries


def cone_rates(J: np.ndarray, core: int, comp: int, alpha: float, samples: int = 65):
    """Min and max of ||J v|| / ||v|| over v = e_core + t e_comp, |t| <= alpha."""
    t = np.linspace(-alpha, alpha, samples)
    V = np.zeros((samples, 3))
    V[:, core] = 1.0
    V[:, comp] = t
    W = np.einsum("nij,dj->ndi", J, V)
    r = np.linalg.norm(W, axis=-1) / np.linalg.norm(V, axis=1)
    return r.min(axis=1), r.max(axis=1)


def _box_support_points(system: DaSystem, which: int, resolution: int) -> np.ndarray:
    """Support lattice of the given deformation step, pulled back to inputs of G."""
    idx = [i for i, s in enumerate(system.steps) if isinstance(s, DeformStep)][which]
    Y = _support_lattice(system.steps[idx].deformation, resolution, 1.05)
    for prev in reversed(system.steps[:idx]):
        Y = prev.backward(Y)
    return Y


def mixed_det_bounds(system: DaSystem, resolution: int = 40, samples: int = 65) -> tuple[CertReport, CertReport]:
    """Centre-unstable rate >= 1/2 - kappa2 on the q1 box and centre-stable
    rate <= 2 + kappa2 on the q2 box."""
    params: MixedParams = system.params
    e = params.epsilon
    X1 = _box_support_points(system, 0, resolution)
    lo, _ = cone_rates(jacobian(system, X1), 1, 2, e, samples)
    i = int(np.argmin(lo))
    r1 = CertReport(
        "mixed-cu-rate-q1",
        float(lo[i] - (0.5 - params.kappa2)),
        {"point": [float(v) for v in X1[i]], "rate": float(lo[i]), "bound": 0.5 - params.kappa2, "k": params.k},
        int(lo.size * samples),
    )
    X2 = _box_support_points(system, 1, resolution)
    _, hi = cone_rates(jacobian(system, X2), 2, 1, e, samples)
    j = int(np.argmax(hi))
    r2 = CertReport(
        "mixed-cs-rate-q2",
        float((2.0 + params.kappa2) - hi[j]),
        {"point": [float(v) for v in X2[j]], "rate": float(hi[j]), "bound": 2.0 + params.kappa2, "k": params.k},
        int(hi.size * samples),
    )
    return r1, r2


def starred_entry_sup(system: DaSystem, resolution: int = 24) -> dict:
    """Empirical sup of the coefficients c1, c2, b1, b2, d1, d2 that relate
    the starred Jacobian entries to the deformation partials."""
    params: MixedParams = system.params
    q1, q2 = params.deformations
    inv = inverse_system(system)

    def ratio(entries, partials):
        ok = np.abs(partials) > 1e-12 * np.max(np.abs(partials)) if np.any(partials) else np.zeros_like(partials, bool)
        return float(np.max(np.abs(entries[ok] / partials[ok]))) if ok.any() else 0.0

    # G on the q2 box: row 3 entries = Q2_a c1, Q2_b c2, partials at the preimage
    X2 = _box_support_points(system, 1, resolution)
    J2 = jacobian(system, X2)
    Y2 = system.steps[0].forward(X2)
    abc = q2.local(Y2)
    abc[:, 2] = q2.solve(abc)
    _, g2 = q2.value_and_grad(abc)
    c1, c2 = ratio(J2[:, 2, 0], g2[:, 0]), ratio(J2[:, 2, 1], g2[:, 1])
    # G^-1 on G(q1 box): row 2 entries = Q1_a b1, Q1_c b2
    X1 = _box_support_points(system, 0, resolution)
    Z1 = apply(system, X1)
    Ji = jacobian(inv, Z1)
    _, g1 = q1.value_and_grad(q1.local(X1))
    b1, b2 = ratio(Ji[:, 1, 0], g1[:, 0]), ratio(Ji[:, 1, 2], g1[:, 2])
    # G^-1 on G(q2 box): row 3 entries = Q2_a d1, Q2_b d2
    Z2 = apply(system, X2)
    Ji2 = jacobian(inv, Z2)
    d1, d2 = ratio(Ji2[:, 2, 0], g2[:, 0]), ratio(Ji2[:, 2, 1], g2[:, 1])
    parts = {"c1": c1, "c2": c2, "b1": b1, "b2": b2, "d1": d1, "d2": d2}
    return {"xi": float(sum(parts.values())), **parts}


# ---------------------------------------------------------------------------
# fixed points


@dataclass(frozen=True)
class FixedPointSpectrum:
    point: TorusPoint
    eigenvalues: tuple[float, float, float]
    unstable_index: int

    def as_dict(self) -> dict:
        return {"point": list(self.point.coords), "eigenvalues": list(self.eigenvalues), "unstable_index": self.unstable_index}


def fixed_point_spectrum(system: DaSystem, tol: float = 1e-12) -> list[FixedPointSpectrum]:
    """Spectra at the base matrix's fixed points that the system fixes.

    Fixed points of the base matrix are fixed by every power of it; the full
    fixed set of D^{2n} is far too large to enumerate.
    """
    out = []
    for p in fixed_points(system.params.base):
        x = np.asarray(p, dtype=float)
        if float(torus_distance(apply(system, x), x)) > tol:
            continue
        mu = np.linalg.eigvals(jacobian(system, x))
        mu = mu[np.argsort(-np.abs(mu))]
        vals = tuple(float(np.real(v)) for v in mu)
        out.append(FixedPointSpectrum(p, vals, int(np.sum(np.abs(mu) > 1.0))))
    return out


# ---------------------------------------------------------------------------
# k search


def pve_checks(system: DaSystem, resolution: int = 40, c_samples: int = 181, workers: int = 1) -> dict:
    params: PveParams = system.params
    fwd, bwd = pve_cones(params)
    reps = {
        "cone-unstable-forward": cone_invariance(system, fwd, "forward", resolution=resolution, workers=workers, kind="cone-unstable-forward"),
        "cone-stable-inverse": cone_invariance(system, bwd, "inverse", resolution=resolution, workers=workers, kind="cone-stable-inverse"),
    }
    if reps["cone-unstable-forward"].passed:
        vol = pve_volume_reports(system, resolution=resolution, c_samples=c_samples, workers=workers)
        reps["pve-regime-small-c"] = vol["small"]
        reps["pve-regime-large-c"] = vol["large"]
        reps["pve-all-planes"] = vol["exact"]
        reps["pve-angle-grid"] = vol["grid"]
        reps["_proof_side"] = vol["proof_side"]
    return reps


def mixed_checks(system: DaSystem, resolution: int = 40, workers: int = 1) -> dict:
    params: MixedParams = system.params
    c_uu, c_cu, c_cs = mixed_cones(params)
    reps = {
        "cone-strong-unstable-forward": cone_invariance(system, c_uu, "forward", resolution=resolution, workers=workers, kind="cone-strong-unstable-forward"),
        "cone-centre-unstable-forward": cone_invariance(system, c_cu, "forward", resolution=resolution, workers=workers, kind="cone-centre-unstable-forward"),
        "cone-centre-stable-inverse": cone_invariance(system, c_cs, "inverse", resolution=resolution, workers=workers, kind="cone-centre-stable-inverse"),
    }
    r1, r2 = mixed_det_bounds(system, resolution)
    reps[r1.kind] = r1
    reps[r2.kind] = r2
    return reps


def _passed(reps: dict, keys=None) -> bool:
    keys = [k for k in reps if not k.startswith("_")] if keys is None else keys
    return all(k in reps and reps[k].passed for k in keys)


def search_k(params, resolution: int = 40, c_samples: int = 181, workers: int = 1, cap_exp: int = K_CAP_EXP) -> SearchResult:
    """Doubling search for the smallest k = 2^j at which every check passes.

    For pve the thresholds are recorded separately: K_eps (both cones),
    K1 (small-|c| regime), K2 (adds the pole), K3 (all planes).  The final
    k is the first where every check passes.
    """
    is_pve = isinstance(params, PveParams)
    history = []
    firsts: dict = {}
    pve_stages = {
        "K_eps": ["cone-unstable-forward", "cone-stable-inverse"],
        "K1": ["cone-unstable-forward", "cone-stable-inverse", "pve-regime-small-c"],
        "K2": ["cone-unstable-forward", "cone-stable-inverse", "pve-regime-small-c", "pve-regime-large-c"],
        "K3": ["cone-unstable-forward", "cone-stable-inverse", "pve-regime-small-c", "pve-regime-large-c", "pve-all-planes"],
    }
    last = None
    for j in range(cap_exp + 1):
        k = 2**j
        p = params.with_k(k)
        if is_pve:
            reps = pve_checks(pve_system(p), resolution, c_samples, workers)
        else:
            reps = mixed_checks(mixed_system(p), resolution, workers)
        last = reps
        history.append({"k": k, **{name: r.min_margin for name, r in reps.items() if isinstance(r, CertReport)}})
        if is_pve:
            for stage, keys in pve_stages.items():
                if stage not in firsts and _passed(reps, keys):
                    firsts[stage] = k
        if _passed(reps):
            margins = {name: r.min_margin for name, r in reps.items() if isinstance(r, CertReport)}
            details = {"history": history, **firsts}
            if is_pve and "_proof_side" in reps:
                details["proof_side"] = reps["_proof_side"].as_dict()
            return SearchResult("k", k, margins, details)
    failing = {n: r.as_dict() for n, r in (last or {}).items() if isinstance(r, CertReport) and not r.passed}
    raise ParameterError(f"no k <= 2^{cap_exp} passes; failing checks at the cap: {failing}")


# ---------------------------------------------------------------------------
# full parameter pipeline


@dataclass(frozen=True)
class PinnedParameters:
    variant: str
    n: int
    k: int
    delta: float
    kappa: float
    epsilon: float
    m: float
    shape: str

    def build(self):
        if self.variant == "pve":
            return make_pve_params(self.n, self.k, self.delta, self.kappa, self.epsilon, self.shape)
        return make_mixed_params(self.n, self.k, self.delta, self.kappa, self.epsilon, self.shape)


def _le_margin(a: float, b: float) -> float:
    """Margin for the non-strict a <= b: b - a, or one ulp when equal."""
    return b - a if a != b else math.ulp(b)


def revalidate(pinned: PinnedParameters, base_frame: EigenFrame, gamma: float = 0.01) -> dict:
    """Recompute every defining inequality at pinned values; all margins must be > 0."""
    vals = power_eigen(base_frame, 2 * pinned.n).values
    out = {}
    if pinned.variant == "pve":
        _, M = lemma_tuilun_constants(gamma)
        out.update({f"n:{k}": v for k, v in pve_n_margins(vals, pinned.m, M).items()})
        out.update({f"kappa:{k}": v for k, v in kappa_margins(pinned.kappa, "pve", {"lambda_s": vals[1]}).items()})
        out["epsilon_le_kappa"] = _le_margin(pinned.epsilon, pinned.kappa)
    else:
        out.update({f"n:{k}": v for k, v in mixed_n_margins(vals, pinned.m).items()})
        lam = {"lambda_u": vals[1], "lambda_ss": vals[2]}
        out.update({f"kappa2:{k}": v for k, v in kappa_margins(pinned.kappa, "mixed", lam).items()})
        out["two_eps_sq_le_kappa2_sq"] = _le_margin(2 * pinned.epsilon**2, pinned.kappa**2)
    out["epsilon_positive"] = pinned.epsilon
    out["delta_chart"] = 1.0 - 32 * pinned.delta * math.sqrt(3.0)
    return out


def profile_m(delta: float, shape: str = "smoothstep-exp", grid_resolution: int = 10_000) -> float:
    return compute_m(BumpProfile(delta, shape), grid_resolution).m
