"""Lattice automorphisms of the 3-torus, their eigen-structure and local charts.

Points on T^3 = R^3/Z^3 are handled either one at a time as :class:`TorusPoint`
or in bulk as ``(N, 3)`` float arrays with coordinates in ``[0, 1)``.  All
array functions accept either shape.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (
    DegenerateMatrixError,
    NotHyperbolicError,
    OutOfChartError,
    UnsupportedMatrixError,
)

HYPERBOLIC_TOL = 1e-9


@dataclass(frozen=True)
class TorusPoint:
    coords: tuple[float, float, float]

    def __post_init__(self):
        c = tuple(float(v) for v in self.coords)
        if len(c) != 3:
            raise ValueError("a torus point has three coordinates")
        if not all(0.0 <= v < 1.0 for v in c):
            raise ValueError(f"coordinates must lie in [0, 1): {c}")
        object.__setattr__(self, "coords", c)

    def __array__(self, dtype=None, copy=None):
        return np.array(self.coords, dtype=dtype or float)

    def __iter__(self):
        return iter(self.coords)


def wrap_array(v) -> np.ndarray:
    """Reduce coordinates mod 1 into [0, 1), elementwise."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot wrap non-finite coordinates")
    w = np.mod(v, 1.0)
    # np.mod returns exactly 1.0 for tiny negative inputs
    w[w >= 1.0] = 0.0
    return w


def wrap(v) -> TorusPoint:
    return TorusPoint(tuple(wrap_array(np.asarray(v, dtype=float).reshape(3))))


def nearest_offset(d) -> np.ndarray:
    """Representative of d mod Z^3 in (-1/2, 1/2]^3 (ties go to +1/2)."""
    d = np.asarray(d, dtype=float)
    return d - np.ceil(d - 0.5)


def lift_near(x, base) -> np.ndarray:
    """Lift of ``x`` whose every coordinate is within 1/2 of ``base``."""
    x = np.asarray(x, dtype=float)
    base = np.asarray(base, dtype=float)
    return base + nearest_offset(x - base)


def torus_distance(x, y) -> np.ndarray:
    return np.linalg.norm(nearest_offset(np.asarray(x, float) - np.asarray(y, float)), axis=-1)


@dataclass(frozen=True)
class LatticeAutomorphism:
    """Integer unimodular 3x3 matrix acting on T^3."""

    entries: tuple[tuple[int, ...], ...]
    name: str = ""

    def __post_init__(self):
        rows = tuple(tuple(int(v) for v in row) for row in self.entries)
        if len(rows) != 3 or any(len(r) != 3 for r in rows):
            raise ValueError("lattice automorphisms are 3x3")
        object.__setattr__(self, "entries", rows)
        if abs(self.det()) != 1:
            raise UnsupportedMatrixError(f"matrix is not unimodular (det = {self.det()})")

    @classmethod
    def from_array(cls, a, name: str = "") -> "LatticeAutomorphism":
        return cls(tuple(tuple(int(v) for v in row) for row in np.asarray(a)), name)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.entries, dtype=np.int64)

    def det(self) -> int:
        return _det3(self.entries)

    def is_symmetric(self) -> bool:
        e = self.entries
        return all(e[i][j] == e[j][i] for i in range(3) for j in range(3))

    def power(self, k: int) -> "LatticeAutomorphism":
        if k < 0:
            return self.inverse().power(-k)
        label = f"{self.name}^{k}" if self.name else ""
        out = _int_identity()
        base = self.entries
        while k:
            if k & 1:
                out = _int_matmul(out, base)
            base = _int_matmul(base, base)
            k >>= 1
        return LatticeAutomorphism(out, label)

    def inverse(self) -> "LatticeAutomorphism":
        adj = _adjugate(self.entries)
        d = self.det()
        return LatticeAutomorphism(tuple(tuple(v * d for v in row) for row in adj))

    def __matmul__(self, other: "LatticeAutomorphism") -> "LatticeAutomorphism":
        return LatticeAutomorphism(_int_matmul(self.entries, other.entries))


def _int_identity():
    return tuple(tuple(int(i == j) for j in range(3)) for i in range(3))


def _int_matmul(a, b):
    return tuple(tuple(sum(a[i][k] * b[k][j] for k in range(3)) for j in range(3)) for i in range(3))


def _det3(m) -> int:
    return (
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    )


def _adjugate(m):
    cof = [[0] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(3):
            rows = [r for r in range(3) if r != i]
            cols = [c for c in range(3) if c != j]
            minor = m[rows[0]][cols[0]] * m[rows[1]][cols[1]] - m[rows[0]][cols[1]] * m[rows[1]][cols[0]]
            cof[i][j] = (-1) ** (i + j) * minor
    return tuple(tuple(cof[j][i] for j in range(3)) for i in range(3))


D_MATRIX = LatticeAutomorphism(((2, 1, 1), (1, 1, 1), (1, 1, 0)), "D")
C_MATRIX = LatticeAutomorphism(((1, -1, 0), (-1, 1, 1), (0, 1, -1)), "C")
NAMED_MATRICES = {"D": D_MATRIX, "C": C_MATRIX}


def torus_matmul(M, x) -> np.ndarray:
    """Compute ``M @ x mod 1`` for an integer matrix without losing the
    fractional digits that a plain float product would round away.

    Each coordinate of ``x`` is cut into chunks short enough that every
    ``M_ij * chunk`` is an exact double; fractional parts of exact products
    are exact, so only the final few additions round.
    """
    M = np.asarray(M, dtype=np.int64)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    bits = max(int(np.abs(M).max()).bit_length(), 1)
    chunk = 52 - bits
    if chunk < 8:
        raise UnsupportedMatrixError("matrix entries too large for exact torus products")
    Mf = M.astype(float)
    acc = np.zeros((X.shape[0], 3))
    rem = X.copy()
    shift = 0
    # 64 fractional bits beyond the leading ones is below double resolution of the result
    while shift < 64 + chunk and np.any(rem != 0.0):
        shift += chunk
        scale = 2.0 ** shift
        piece = np.floor(rem * scale) / scale
        rem = rem - piece
        for j in range(3):
            prod = piece[:, j : j + 1] * Mf[:, j]
            acc += prod - np.floor(prod)
    acc += rem @ Mf.T
    out = wrap_array(acc)
    return out[0] if single else out


@dataclass(frozen=True)
class EigenFrame:
    """Orthonormal eigenbasis, columns ordered by descending |eigenvalue|."""

    vectors: np.ndarray = field(repr=False)
    values: tuple[float, float, float]

    @property
    def e_uu(self) -> np.ndarray:
        return self.vectors[:, 0]

    @property
    def e_mid(self) -> np.ndarray:
        return self.vectors[:, 1]

    @property
    def e_ss(self) -> np.ndarray:
        return self.vectors[:, 2]


def characteristic_polynomial(M) -> tuple[float, float, float, float]:
    """Coefficients (1, c2, c1, c0) of det(xI - M)."""
    m = np.asarray(M, dtype=float)
    tr = np.trace(m)
    minors = (
        m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        + m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]
        + m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1]
    )
    return 1.0, -tr, minors, -np.linalg.det(m)


def _symmetric_roots(m: np.ndarray, coeffs) -> np.ndarray:
    # trigonometric form of the cubic; exact for real symmetric matrices
    q = np.trace(m) / 3.0
    b = m - q * np.eye(3)
    p = math.sqrt(np.sum(b * b) / 6.0)
    if p == 0.0:
        return np.array([q, q, q])
    r = np.linalg.det(b / p) / 2.0
    phi = math.acos(min(1.0, max(-1.0, r))) / 3.0
    roots = q + 2.0 * p * np.cos(phi + 2.0 * math.pi * np.arange(3) / 3.0)
    _, c2, c1, c0 = coeffs
    polished = []
    for x in roots:
        f = ((x + c2) * x + c1) * x + c0
        df = (3.0 * x + 2.0 * c2) * x + c1
        polished.append(x - f / df if df != 0.0 else x)
    return np.array(polished)


def _null_vector(m: np.ndarray, mu: float) -> np.ndarray:
    b = m - mu * np.eye(3)
    crosses = [np.cross(b[i], b[j]) for i, j in ((0, 1), (0, 2), (1, 2))]
    v = max(crosses, key=lambda c: float(np.dot(c, c)))
    v = v / np.linalg.norm(v)
    # one inverse-iteration step cleans up the residual
    try:
        w = np.linalg.solve(b + 1e-14 * max(1.0, abs(mu)) * np.eye(3), v)
        v = w / np.linalg.norm(w)
    except np.linalg.LinAlgError:
        pass
    k = int(np.argmax(np.abs(v)))
    return v if v[k] > 0 else -v


def eigen_decompose(M: LatticeAutomorphism) -> EigenFrame:
    if not M.is_symmetric():
        raise UnsupportedMatrixError("only symmetric lattice automorphisms are supported")
    m = M.matrix.astype(float)
    e = M.entries
    minors = sum(e[i][i] * e[j][j] - e[i][j] * e[j][i] for i, j in ((0, 1), (0, 2), (1, 2)))
    coeffs = (1, -(e[0][0] + e[1][1] + e[2][2]), minors, -M.det())
    roots = _symmetric_roots(m, coeffs)
    if np.any(np.abs(np.abs(roots) - 1.0) <= HYPERBOLIC_TOL):
        raise NotHyperbolicError(f"eigenvalue of modulus 1: {roots}")
    order = np.argsort(-np.abs(roots), kind="stable")
    roots = roots[order]
    vecs = np.column_stack([_null_vector(m, mu) for mu in roots])
    # symmetric matrix with simple spectrum: re-orthonormalize against roundoff
    q, r = np.linalg.qr(vecs)
    q = q * np.sign(np.diag(r))
    return EigenFrame(q, tuple(float(v) for v in roots))


def power_eigen(frame: EigenFrame, exponent: int) -> EigenFrame:
    if exponent < 2 or exponent % 2:
        raise ValueError("exponent must be even and at least 2")
    vals = tuple(float(v) ** exponent for v in frame.values)
    return EigenFrame(frame.vectors, vals)


def fixed_points(M: LatticeAutomorphism) -> list[TorusPoint]:
    """All x in T^3 with M x = x, found exactly over the rationals."""
    e = M.entries
    n = tuple(tuple(e[i][j] - (i == j) for j in range(3)) for i in range(3))
    d = _det3(n)
    if d == 0:
        raise DegenerateMatrixError("M - I is singular; fixed points are not isolated")
    adj = _adjugate(n)
    # x in [0,1)^3 forces |v_i| = |((M-I)x)_i| < row sum of |M-I|
    bounds = [sum(abs(v) for v in row) for row in n]
    found = set()
    for v in itertools.product(*(range(-b, b + 1) for b in bounds)):
        x = tuple(Fraction(sum(adj[i][j] * v[j] for j in range(3)), d) % 1 for i in range(3))
        found.add(x)
    pts = sorted(found)
    if len(pts) != abs(d):
        raise DegenerateMatrixError(f"expected {abs(d)} fixed points, found {len(pts)}")
    return [TorusPoint(tuple(float(c) for c in p)) for p in pts]


@dataclass(frozen=True)
class BoxChart:
    """Eigen-aligned box chart around a fixed point.

    Local coordinates (a, b, c) are components along the frame columns.
    The inner box (half-width ``half_width_inner``) is the open set Lambda,
    the outer one is U.
    """

    center: TorusPoint
    frame: EigenFrame
    half_width_inner: float
    half_width_outer: float

    def __post_init__(self):
        if not 0 < self.half_width_inner < self.half_width_outer:
            raise ValueError("inner box must be properly contained in the outer box")
        if 8.0 * self.half_width_outer * math.sqrt(3.0) >= 1.0:
            raise ValueError("outer box too large for an injective chart")

    @classmethod
    def around(cls, center, frame: EigenFrame, delta: float) -> "BoxChart":
        if not isinstance(center, TorusPoint):
            center = wrap(center)
        return cls(center, frame, 2.0 * delta, 4.0 * delta)

    @property
    def delta(self) -> float:
        return self.half_width_inner / 2.0

    @property
    def injectivity_radius(self) -> float:
        return 2.0 * self.half_width_outer


def local_coords(x, center, vectors) -> np.ndarray:
    """Unchecked chart map; works on (3,) or (N, 3)."""
    c = np.asarray(center, dtype=float)
    return nearest_offset(np.asarray(x, dtype=float) - c) @ vectors


def to_local(x, chart: BoxChart) -> np.ndarray:
    abc = local_coords(x, chart.center, chart.frame.vectors)
    if np.any(np.max(np.abs(np.atleast_2d(abc)), axis=1) > chart.injectivity_radius):
        raise OutOfChartError("point lies outside the chart's injectivity region")
    return abc


def from_local(abc, chart: BoxChart) -> np.ndarray:
    abc = np.asarray(abc, dtype=float)
    if np.any(np.max(np.abs(np.atleast_2d(abc)), axis=1) > chart.injectivity_radius):
        raise OutOfChartError("local coordinates outside the chart's injectivity region")
    return wrap_array(np.asarray(chart.center, dtype=float) + abc @ chart.frame.vectors.T)


def in_inner_box(x, chart: BoxChart) -> np.ndarray:
    abc = local_coords(x, chart.center, chart.frame.vectors)
    return np.all(np.abs(np.atleast_2d(abc)) < chart.half_width_inner, axis=1)


def segment_box_lengths(starts, direction, lo, hi, center, vectors, half_width) -> np.ndarray:
    """Length of {t in [lo, hi] : start + t*direction in the open box}, summed
    over all deck translates of the box.  ``starts`` are lifted points.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    direction = np.asarray(direction, dtype=float)
    reach = max(abs(lo), abs(hi)) * np.linalg.norm(direction) + half_width * math.sqrt(3.0)
    r = int(math.ceil(reach)) + 1
    rel = starts - np.asarray(center, dtype=float)
    base = np.round(rel)
    rel = rel - base
    dl = vectors.T @ direction
    total = np.zeros(len(starts))
    for z in itertools.product(range(-r, r + 1), repeat=3):
        o = (rel - np.array(z, dtype=float)) @ vectors
        t0 = np.full(len(starts), float(lo))
        t1 = np.full(len(starts), float(hi))
        for i in range(3):
            if dl[i] == 0.0:
                outside = np.abs(o[:, i]) >= half_width
                t1 = np.where(outside, -np.inf, t1)
                continue
            ta = (-half_width - o[:, i]) / dl[i]
            tb = (half_width - o[:, i]) / dl[i]
            t0 = np.maximum(t0, np.minimum(ta, tb))
            t1 = np.minimum(t1, np.maximum(ta, tb))
        total += np.clip(t1 - t0, 0.0, None)
    return total * np.linalg.norm(direction)


def ss_segment_box_mass(x, direction, radius: float, chart: BoxChart) -> np.ndarray | float:
    """Length of the segment [x - r*dir, x + r*dir] inside all translates of
    the chart's inner box."""
    x = np.asarray(x, dtype=float)
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    out = segment_box_lengths(
        x, direction, -radius, radius, chart.center, chart.frame.vectors, chart.half_width_inner
    )
    return float(out[0]) if x.ndim == 1 else out
