"""Independent high-precision oracles for the test suite.

The maps are re-derived in mpmath on the lifted cover R^3, sharing only the
float constants (frame vectors, eigenvalues, delta, k) with the package.
"""

from __future__ import annotations

import mpmath as mp
import numpy as np

DPS = 50
FD_STEP = mp.mpf("1e-18")


def mp_psi(x, delta):
    """Plateau bump: 1 on [0, delta/2], 0 beyond delta, logistic in between."""
    half = delta / 2
    t = (abs(x) - half) / half
    if t <= 0:
        return mp.mpf(1)
    if t >= 1:
        return mp.mpf(0)
    z = 1 / t - 1 / (1 - t)
    return 1 / (1 + mp.exp(-z))


class MpDeformation:
    """s -> s (1 + w psi(k s) psi(r)) along one eigen-axis, in mpmath."""

    def __init__(self, dfm, lattice_shift, frame=None):
        self.c = mp.matrix([mp.mpf(float(v)) for v in dfm.center])
        if frame is None:
            frame = mp.matrix([[mp.mpf(float(dfm.vectors[i, j])) for j in range(3)] for i in range(3)])
        self.E = frame
        self.axis = dfm.axis
        self.tr = [i for i in range(3) if i != dfm.axis]
        self.k = dfm.k
        self.delta = mp.mpf(float(dfm.profile.delta))
        self.w = mp.mpf(float(dfm.scale)) / 2 - 1
        self.shift = lattice_shift  # fixed nearest translate of the centre

    def local(self, y):
        d = y - self.c - self.shift
        return [sum(self.E[i, j] * d[i] for i in range(3)) for j in range(3)]

    def _T(self, s, r):
        return s * (1 + self.w * mp_psi(self.k * s, self.delta) * mp_psi(r, self.delta))

    def move(self, y, inverse: bool):
        abc = self.local(y)
        s = abc[self.axis]
        r = mp.sqrt(abc[self.tr[0]] ** 2 + abc[self.tr[1]] ** 2)
        h = self.delta / self.k
        if not (abs(s) < h and r < self.delta):
            return y
        if inverse:
            new = mp.findroot(lambda u: self._T(u, r) - s, (-h, h), solver="illinois", tol=mp.mpf(10) ** (-2 * DPS + 5))
        else:
            new = self._T(s, r)
        return y + (new - s) * self.E[:, self.axis]


def _shift(center, y_float):
    d = np.asarray(y_float, dtype=float) - np.asarray(center, dtype=float)
    return mp.matrix([mp.mpf(int(v)) for v in np.round(d)])


def exact_frame(system):
    """Eigenvectors of the system's (symmetric) integer matrix at precision
    DPS, ordered and signed like the package's float frame."""
    from da_forge.construct import LinearStep

    lin = next(s for s in system.active_steps if isinstance(s, LinearStep))
    M = mp.matrix([[mp.mpf(int(v)) for v in row] for row in lin.matrix])
    _, Q = mp.eigsy(M)
    Ef = system.frame.vectors
    out = mp.matrix(3, 3)
    for j in range(3):
        dots = [sum(Q[i, c] * Ef[i, j] for i in range(3)) for c in range(3)]
        c = max(range(3), key=lambda t: abs(dots[t]))
        sign = 1 if dots[c] > 0 else -1
        for i in range(3):
            out[i, j] = sign * Q[i, c]
    return out


def mp_map(system, x, frame=None):
    """Lifted map of a DaSystem at a float point, as an mpmath function of R^3.

    ``frame`` replaces the float deformation frame (e.g. by exact_frame)."""
    from da_forge.construct import DeformStep, LinearStep

    steps = []
    y = np.asarray(x, dtype=float)
    for step in system.active_steps:
        if isinstance(step, LinearStep):
            M = mp.matrix([[mp.mpf(int(v)) for v in row] for row in step.matrix])
            steps.append(("lin", M))
            y = step.matrix.astype(float) @ y
        else:
            dfm = step.deformation
            steps.append(("def", MpDeformation(dfm, _shift(dfm.center, y), frame), step.inverted_map))

    def F(v):
        out = v
        for item in steps:
            if item[0] == "lin":
                out = item[1] * out
            else:
                out = item[1].move(out, item[2])
        return out

    return F


def fd_jacobian(system, x) -> np.ndarray:
    """Central-difference Jacobian in standard coordinates at precision DPS."""
    with mp.workdps(DPS):
        F = mp_map(system, x)
        x0 = mp.matrix([mp.mpf(float(v)) for v in x])
        J = np.zeros((3, 3))
        for j in range(3):
            e = mp.matrix(3, 1)
            e[j] = FD_STEP
            col = (F(x0 + e) - F(x0 - e)) / (2 * FD_STEP)
            J[:, j] = [float(col[i]) for i in range(3)]
    return J


def fd_jacobian_frame(system, x) -> np.ndarray:
    """Central-difference Jacobian in the exact eigenframe basis.

    Differencing along exact eigenvectors and projecting at precision DPS
    avoids the cancellation a float change of basis causes in the strongly
    contracted row."""
    with mp.workdps(DPS):
        E = exact_frame(system)
        F = mp_map(system, x, E)
        x0 = mp.matrix([mp.mpf(float(v)) for v in x])
        J = np.zeros((3, 3))
        for j in range(3):
            e = E[:, j] * FD_STEP
            col = (F(x0 + e) - F(x0 - e)) / (2 * FD_STEP)
            J[:, j] = [float(sum(E[r, i] * col[r] for r in range(3))) for i in range(3)]
    return J


def support_samples(system, count: int, rng) -> np.ndarray:
    """Points whose orbit through the system's steps meets a deformation
    support, plus a few uniform points."""
    from da_forge.construct import DeformStep
    from da_forge.torus import wrap_array

    steps = system.active_steps
    pts = []
    defs = [i for i, s in enumerate(steps) if isinstance(s, DeformStep)]
    per = count // (len(defs) + 1)
    for i in defs:
        dfm = steps[i].deformation
        h = dfm.profile.delta / dfm.k
        abc = np.empty((per, 3))
        abc[:, dfm.axis] = rng.uniform(-h, h, per)
        t0, t1 = dfm.transverse
        rad = dfm.profile.delta * np.sqrt(rng.random(per))
        ang = rng.uniform(0, 2 * np.pi, per)
        abc[:, t0] = rad * np.cos(ang)
        abc[:, t1] = rad * np.sin(ang)
        Y = wrap_array(dfm.center + abc @ dfm.vectors.T)
        for s in reversed(steps[:i]):
            Y = s.backward(Y)
        pts.append(Y)
    pts.append(rng.random((count - per * len(defs), 3)))
    return np.concatenate(pts)
