"""The three derived-from-Anosov systems.

Every system is a short chain of steps acting on T^3: integer linear maps
(``A``, ``A^-1``, ``B``) and local deformations inside box charts.  A
deformation is known in closed form in one direction,

    s' = scale * Q(a, b, c),   Q = psi(k s) psi(r) (1/2 - slope) s + slope s,

where ``s`` is the modified local coordinate and ``r`` the radius in the
other two; ``scale * slope == 1`` so the map is the identity off the support.
The other direction is computed by 1-D safeguarded Newton.

Systems:

* ``pve-f``          f = I_k o A           (deformation P, inverted)
* ``pve-inverse-g``  g = A^-1 o I_k^-1     (deformation P, closed form)
* ``mixed-G``        G = B o J_k           (Q1 closed form at q1, Q2 inverted at q2)

Jacobians are returned in the eigenframe basis of the linear part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .bump import BumpProfile
from .errors import NumericalError, ParameterError, UnsupportedVariantError
from .torus import (
    C_MATRIX,
    D_MATRIX,
    BoxChart,
    EigenFrame,
    LatticeAutomorphism,
    TorusPoint,
    eigen_decompose,
    fixed_points,
    local_coords,
    power_eigen,
    torus_distance,
    torus_matmul,
    wrap_array,
)

NEWTON_TOL = 1e-13
NEWTON_MAXITER = 60

VARIANTS = ("pve-f", "pve-inverse-g", "mixed-G")


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class PveParams:
    base: LatticeAutomorphism
    n: int
    k: int
    bump: BumpProfile
    kappa: float
    epsilon: float
    chart: BoxChart = field(repr=False)
    eigen: EigenFrame = field(repr=False)

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ParameterError("n and k must be positive")
        if not 0 < self.epsilon <= self.kappa:
            raise ParameterError("need 0 < epsilon <= kappa")
        lam = self.eigen.values
        if not (0 < lam[2] < lam[1] < 1 < lam[0]):
            raise ParameterError(f"powered eigenvalues out of order: {lam}")

    @property
    def delta(self) -> float:
        return self.bump.delta

    @property
    def lambda_uu(self) -> float:
        return self.eigen.values[0]

    @property
    def lambda_s(self) -> float:
        return self.eigen.values[1]

    @property
    def lambda_ss(self) -> float:
        return self.eigen.values[2]

    @cached_property
    def linear(self) -> LatticeAutomorphism:
        return self.base.power(2 * self.n)

    @cached_property
    def deformation(self) -> "Deformation":
        return Deformation(
            center=np.asarray(self.chart.center, dtype=float),
            vectors=self.eigen.vectors,
            axis=1,
            slope=1.0 / self.lambda_s,
            scale=self.lambda_s,
            k=self.k,
            profile=self.bump,
        )

    def with_k(self, k: int) -> "PveParams":
        return replace(self, k=k)


def _chart(center, frame, delta: float) -> BoxChart:
    try:
        return BoxChart.around(center, frame, delta)
    except ValueError as exc:
        raise ParameterError(f"delta = {delta}: {exc}") from exc


def make_pve_params(
    n: int,
    k: int,
    delta: float,
    kappa: float,
    epsilon: float | None = None,
    shape: str = "smoothstep-exp",
    base: LatticeAutomorphism = D_MATRIX,
) -> PveParams:
    frame = power_eigen(eigen_decompose(base), 2 * n)
    p = fixed_points(base)[0]
    eps = min(kappa, 0.05) if epsilon is None else epsilon
    return PveParams(
        base=base,
        n=n,
        k=k,
        bump=BumpProfile(delta, shape),
        kappa=kappa,
        epsilon=eps,
        chart=_chart(p, frame, delta),
        eigen=frame,
    )


@dataclass(frozen=True)
class MixedParams:
    base: LatticeAutomorphism
    n: int
    k: int
    bump: BumpProfile
    kappa2: float
    epsilon: float
    charts: tuple[BoxChart, BoxChart] = field(repr=False)
    eigen: EigenFrame = field(repr=False)

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ParameterError("n and k must be positive")
        if not 0 < self.epsilon or 2 * self.epsilon**2 > self.kappa2**2 * (1 + 1e-12):
            raise ParameterError("need 0 < epsilon and 2 epsilon^2 <= kappa2^2")
        lam = self.eigen.values
        if not (0 < lam[2] < 0.5 and 2 < lam[1] < lam[0]):
            raise ParameterError(f"powered eigenvalues out of order: {lam}")
        q1, q2 = (np.asarray(c.center) for c in self.charts)
        if torus_distance(q1, q2) <= 10.0 * self.delta * math.sqrt(3.0):
            raise ParameterError("the 5-delta boxes around q1 and q2 intersect")

    @property
    def delta(self) -> float:
        return self.bump.delta

    @property
    def lambda_uu(self) -> float:
        return self.eigen.values[0]

    @property
    def lambda_u(self) -> float:
        return self.eigen.values[1]

    @property
    def lambda_ss(self) -> float:
        return self.eigen.values[2]

    @cached_property
    def linear(self) -> LatticeAutomorphism:
        return self.base.power(2 * self.n)

    @cached_property
    def deformations(self) -> tuple["Deformation", "Deformation"]:
        q1 = Deformation(
            center=np.asarray(self.charts[0].center, dtype=float),
            vectors=self.eigen.vectors,
            axis=1,
            slope=self.lambda_u,
            scale=1.0 / self.lambda_u,
            k=self.k,
            profile=self.bump,
        )
        q2 = Deformation(
            center=np.asarray(self.charts[1].center, dtype=float),
            vectors=self.eigen.vectors,
            axis=2,
            slope=1.0 / self.lambda_ss,
            scale=self.lambda_ss,
            k=self.k,
            profile=self.bump,
        )
        return q1, q2

    def with_k(self, k: int) -> "MixedParams":
        return replace(self, k=k)


def make_mixed_params(
    n: int,
    k: int,
    delta: float,
    kappa2: float,
    epsilon: float | None = None,
    shape: str = "smoothstep-exp",
    base: LatticeAutomorphism = C_MATRIX,
) -> MixedParams:
    frame = power_eigen(eigen_decompose(base), 2 * n)
    q1, q2 = fixed_points(base)[:2]
    eps = min(kappa2 / math.sqrt(2.0), 0.05) if epsilon is None else epsilon
    return MixedParams(
        base=base,
        n=n,
        k=k,
        bump=BumpProfile(delta, shape),
        kappa2=kappa2,
        epsilon=eps,
        charts=(_chart(q1, frame, delta), _chart(q2, frame, delta)),
        eigen=frame,
    )


# ---------------------------------------------------------------------------
# deformation kernel


@dataclass(frozen=True, eq=False)
class Deformation:
    center: np.ndarray
    vectors: np.ndarray
    axis: int
    slope: float
    scale: float
    k: int
    profile: BumpProfile

    @property
    def transverse(self) -> tuple[int, int]:
        return tuple(i for i in range(3) if i != self.axis)

    @property
    def half_support(self) -> float:
        return self.profile.delta / self.k

    def local(self, X) -> np.ndarray:
        return local_coords(X, self.center, self.vectors)

    def _radius(self, abc):
        t0, t1 = self.transverse
        return np.hypot(abc[..., t0], abc[..., t1])

    def active(self, abc) -> np.ndarray:
        """Points where the deformation differs from the identity."""
        s = abc[..., self.axis]
        return (np.abs(s) < self.half_support) & (self._radius(abc) < self.profile.delta)

    def value_and_grad(self, abc):
        """Q and its gradient with respect to local (a, b, c)."""
        abc = np.asarray(abc, dtype=float)
        s = abc[..., self.axis]
        r = self._radius(abc)
        pk, dpk = self.profile.evaluate(self.k * s)
        pr, dpr = self.profile.evaluate(r)
        alpha = 0.5 - self.slope
        q = alpha * pk * pr * s + self.slope * s
        grad = np.zeros(abc.shape)
        grad[..., self.axis] = alpha * pr * (self.k * s * dpk + pk) + self.slope
        safe_r = np.where(r > 0, r, 1.0)
        for t in self.transverse:
            grad[..., t] = np.where(r > 0, alpha * pk * s * dpr * abc[..., t] / safe_r, 0.0)
        return q, grad

    def closed(self, abc) -> np.ndarray:
        """New value of the modified coordinate under the closed-form map."""
        s = abc[..., self.axis]
        pk, _ = self.profile.evaluate(self.k * s)
        pr, _ = self.profile.evaluate(self._radius(abc))
        w = 0.5 * self.scale - 1.0
        return s * (1.0 + w * pk * pr)

    def solve(self, abc) -> np.ndarray:
        """Invert the closed-form map along the modified coordinate."""
        abc = np.atleast_2d(np.asarray(abc, dtype=float))
        d = self.profile.delta
        target = self.k * abc[:, self.axis] / d
        pr, _ = self.profile.evaluate(self._radius(abc))
        w = 0.5 * self.scale - 1.0
        c = w * pr
        u = np.clip(target / (1.0 + c), -1.0, 1.0)
        lo = np.full_like(u, -1.0)
        hi = np.full_like(u, 1.0)
        last = np.full_like(u, 2.0)  # previous step length, for the halving rule
        todo = np.ones(u.shape, dtype=bool)
        for _ in range(NEWTON_MAXITER):
            if not todo.any():
                break
            ui, ci = u[todo], c[todo]
            pk, dpk = self.profile.evaluate(d * ui)
            val = ui * (1.0 + ci * pk) - target[todo]
            der = 1.0 + ci * (pk + d * ui * dpk)
            lo_i = np.where(val < 0, ui, lo[todo])
            hi_i = np.where(val > 0, ui, hi[todo])
            un = ui - val / der
            # bisect when Newton leaves the bracket or fails to halve the step
            slow = np.abs(un - ui) > 0.5 * last[todo]
            bad = (un <= lo_i) | (un >= hi_i) | slow
            un = np.where(bad, 0.5 * (lo_i + hi_i), un)
            lo[todo], hi[todo] = lo_i, hi_i
            last[todo] = np.abs(un - ui)
            done = (np.abs(un - ui) <= NEWTON_TOL) | (val == 0.0) | (hi_i - lo_i <= NEWTON_TOL)
            u[todo] = np.where(val == 0.0, ui, un)
            idx = np.flatnonzero(todo)
            todo[idx[done]] = False
        if todo.any():
            worst = np.flatnonzero(todo)[:3]
            raise NumericalError(
                f"deformation inverse did not converge in {NEWTON_MAXITER} iterations; "
                f"targets {target[worst]}, brackets {lo[worst]}..{hi[worst]}"
            )
        return u * d / self.k


# ---------------------------------------------------------------------------
# steps and systems


@dataclass(frozen=True, eq=False)
class LinearStep:
    matrix: np.ndarray
    inverse_matrix: np.ndarray
    diag: np.ndarray  # eigenvalues in frame order

    def forward(self, X):
        return torus_matmul(self.matrix, X)

    def backward(self, X):
        return torus_matmul(self.inverse_matrix, X)

    def derivative(self, X):
        J = np.zeros((len(X), 3, 3))
        J[:, [0, 1, 2], [0, 1, 2]] = self.diag
        return J

    def inverted(self) -> "LinearStep":
        return LinearStep(self.inverse_matrix, self.matrix, 1.0 / self.diag)


@dataclass(frozen=True, eq=False)
class DeformStep:
    deformation: Deformation
    inverted_map: bool  # True: the step applies the inverse of the closed form

    def _move(self, X, closed: bool):
        dfm = self.deformation
        abc = dfm.local(X)
        mask = dfm.active(abc)
        if not mask.any():
            return X
        sub = abc[mask]
        new = dfm.closed(sub) if closed else dfm.solve(sub)
        out = X.copy()
        out[mask] = wrap_array(X[mask] + np.outer(new - sub[:, dfm.axis], dfm.vectors[:, dfm.axis]))
        return out

    def forward(self, X):
        return self._move(X, closed=not self.inverted_map)

    def backward(self, X):
        return self._move(X, closed=self.inverted_map)

    def derivative(self, X):
        """Derivative in frame coordinates at the step's input points."""
        dfm = self.deformation
        J = np.broadcast_to(np.eye(3), (len(X), 3, 3)).copy()
        abc = dfm.local(X)
        mask = dfm.active(abc)
        if not mask.any():
            return J
        sub = abc[mask]
        ax = dfm.axis
        if self.inverted_map:
            sub = sub.copy()
            sub[:, ax] = dfm.solve(sub)
            _, g = dfm.value_and_grad(sub)
            row = -g / g[:, ax : ax + 1]
            row[:, ax] = 1.0 / (dfm.scale * g[:, ax])
        else:
            _, g = dfm.value_and_grad(sub)
            row = dfm.scale * g
        Jm = J[mask]
        Jm[:, ax, :] = row
        J[mask] = Jm
        return J

    def inverted(self) -> "DeformStep":
        return DeformStep(self.deformation, not self.inverted_map)


@dataclass(frozen=True, eq=False)
class DaSystem:
    """A DA map on T^3 together with its inverse, Jacobian and axis roles.

    ``roles`` names the frame axes: for f ``uu, c, ss``; for g the roles of
    uu and ss swap; for G ``uu, cu, cs``.
    """

    variant: str
    params: PveParams | MixedParams = field(repr=False)
    steps: tuple = field(repr=False)
    roles: dict = field(repr=False)
    linear: bool = False

    @property
    def frame(self) -> EigenFrame:
        return self.params.eigen

    @property
    def active_steps(self):
        if self.linear:
            return tuple(s for s in self.steps if isinstance(s, LinearStep))
        return self.steps

    @property
    def linear_step(self) -> LinearStep:
        return next(s for s in self.steps if isinstance(s, LinearStep))

    @property
    def deform_steps(self) -> tuple[DeformStep, ...]:
        return tuple(s for s in self.active_steps if isinstance(s, DeformStep))

    @property
    def unstable_axis(self) -> int:
        """Frame axis of the strongest linear expansion."""
        return int(np.argmax(np.abs(self.linear_rates)))

    @property
    def linear_rates(self) -> np.ndarray:
        """Eigenvalues of the linear part in frame order."""
        return self.linear_step.diag

    def linearized(self) -> "DaSystem":
        return replace(self, linear=True)


def pve_system(params: PveParams) -> DaSystem:
    A = params.linear
    lam = np.array(params.eigen.values)
    lin = LinearStep(A.matrix, A.inverse().matrix, lam)
    return DaSystem(
        "pve-f", params, (lin, DeformStep(params.deformation, True)), {"uu": 0, "c": 1, "ss": 2}
    )


def pve_inverse_system(params: PveParams) -> DaSystem:
    return inverse_system(pve_system(params))


def mixed_system(params: MixedParams) -> DaSystem:
    B = params.linear
    lam = np.array(params.eigen.values)
    q1, q2 = params.deformations
    steps = (DeformStep(q1, False), DeformStep(q2, True), LinearStep(B.matrix, B.inverse().matrix, lam))
    return DaSystem("mixed-G", params, steps, {"uu": 0, "cu": 1, "cs": 2})


_INVERSE_NAMES = {"pve-f": "pve-inverse-g", "pve-inverse-g": "pve-f", "mixed-G": "mixed-G-inverse", "mixed-G-inverse": "mixed-G"}
_INVERSE_ROLES = {"uu": "ss", "ss": "uu", "c": "c", "cu": "cs", "cs": "cu"}


def inverse_system(system: DaSystem) -> DaSystem:
    steps = tuple(s.inverted() for s in reversed(system.steps))
    roles = {_INVERSE_ROLES[k]: v for k, v in system.roles.items()}
    return DaSystem(_INVERSE_NAMES[system.variant], system.params, steps, roles, system.linear)


# ---------------------------------------------------------------------------
# evaluation


def _points(x):
    X = np.asarray(x, dtype=float)
    return np.atleast_2d(X), X.ndim == 1


def apply(system: DaSystem, x) -> np.ndarray:
    X, single = _points(x)
    for step in system.active_steps:
        X = step.forward(X)
    return X[0] if single else X


def apply_inverse(system: DaSystem, x) -> np.ndarray:
    X, single = _points(x)
    for step in reversed(system.active_steps):
        X = step.backward(X)
    return X[0] if single else X


def iterate(system: DaSystem, x, steps: int) -> np.ndarray:
    X = np.asarray(x, dtype=float)
    f = apply if steps >= 0 else apply_inverse
    for _ in range(abs(steps)):
        X = f(system, X)
    return X


def jacobian(system: DaSystem, x) -> np.ndarray:
    """Derivative of the system at x, in the eigenframe basis."""
    X, single = _points(x)
    J = np.broadcast_to(np.eye(3), (len(X), 3, 3)).copy()
    for step in system.active_steps:
        J = step.derivative(X) @ J
        X = step.forward(X)
    return J[0] if single else J


def jacobian_standard(system: DaSystem, x) -> np.ndarray:
    E = system.frame.vectors
    return E @ jacobian(system, x) @ E.T


def apply_with_jacobian(system: DaSystem, x):
    X, single = _points(x)
    J = np.broadcast_to(np.eye(3), (len(X), 3, 3)).copy()
    for step in system.active_steps:
        J = step.derivative(X) @ J
        X = step.forward(X)
    return (X[0], J[0]) if single else (X, J)


def center_derivative(system: DaSystem, x) -> np.ndarray | float:
    """Dg restricted to the invariant center line E^s (inverse pve system only)."""
    if system.variant != "pve-inverse-g":
        raise UnsupportedVariantError("center derivative is defined only for the pve-inverse-g system")
    X, single = _points(x)
    params: PveParams = system.params
    out = np.full(len(X), 1.0 / params.lambda_s)
    if not system.linear:
        dfm = params.deformation
        abc = dfm.local(X)
        mask = dfm.active(abc)
        if mask.any():
            _, g = dfm.value_and_grad(abc[mask])
            out[mask] = g[:, 1]
    return float(out[0]) if single else out


def deformation_P(params: PveParams, a, b, c):
    """P and its partials (P_a, P_b, P_c) at local coordinates."""
    abc = np.stack(np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, c))), axis=-1)
    q, g = params.deformation.value_and_grad(abc)
    return q, g[..., 0], g[..., 1], g[..., 2]


def deformation_Q(params: MixedParams, which: int, a, b, c):
    """Q_which and its partials (Q_a, Q_b, Q_c) at local coordinates."""
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    abc = np.stack(np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, c))), axis=-1)
    q, g = params.deformations[which - 1].value_and_grad(abc)
    return q, g[..., 0], g[..., 1], g[..., 2]


def deformation_centers(system: DaSystem) -> list[TorusPoint]:
    return [TorusPoint(tuple(s.deformation.center)) for s in system.steps if isinstance(s, DeformStep)]
