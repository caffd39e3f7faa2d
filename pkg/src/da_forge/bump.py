"""Plateau bump functions and the constant ``m`` bounding (x psi'(x) + psi(x)) psi(y)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DaForgeError


def _logistic(z):
    # 1/(1+exp(-z)) without overflow warnings
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _smoothstep_exp(t):
    """Falling transition h on (0, 1) with h(0+) = 1, h(1-) = 0, and h'(t)."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        z = 1.0 / t - 1.0 / (1.0 - t)
        h = _logistic(z)
        dh = -h * (1.0 - h) * (1.0 / t**2 + 1.0 / (1.0 - t) ** 2)
    dh = np.where(np.isfinite(dh), dh, 0.0)
    return h, dh


SHAPES = {"smoothstep-exp": _smoothstep_exp}


@dataclass(frozen=True)
class BumpProfile:
    """Even C-infinity bump: 1 on [0, delta/2], 0 on [delta, inf)."""

    delta: float
    shape: str = "smoothstep-exp"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.shape not in SHAPES:
            raise DaForgeError(f"unknown bump shape {self.shape!r}; known: {sorted(SHAPES)}")

    def evaluate(self, x):
        """Return (psi(x), psi'(x)) as arrays."""
        x0 = np.asarray(x, dtype=float)
        x = np.atleast_1d(x0)
        half = 0.5 * self.delta
        ax = np.abs(x)
        t = (ax - half) / half
        band = (t > 0.0) & (t < 1.0)
        val = np.where(t <= 0.0, 1.0, 0.0)
        der = np.zeros_like(ax)
        if np.any(band):
            h, dh = SHAPES[self.shape](t[band])
            val[band] = h
            der[band] = dh / half * np.sign(x[band])
        return val.reshape(x0.shape), der.reshape(x0.shape)

    def psi(self, x):
        v, _ = self.evaluate(x)
        return float(v) if np.ndim(v) == 0 else v

    def psi_prime(self, x):
        _, d = self.evaluate(x)
        return float(d) if np.ndim(d) == 0 else d


def psi(profile: BumpProfile, x):
    return profile.psi(x)


def psi_prime(profile: BumpProfile, x):
    return profile.psi_prime(x)


@dataclass(frozen=True)
class BumpBound:
    m: float
    upper: float
    argmin_x: float
    grid_resolution: int
    refinement_passes: int

    @property
    def margin_upper(self) -> float:
        return 1.0 - self.upper


def compute_m(profile: BumpProfile, grid_resolution: int = 10_000, refinement_passes: int = 3) -> BumpBound:
    """m = max(0, -inf over (x, y) of (x psi'(x) + psi(x)) psi(y)).

    The objective factorizes, so the extremes over the grid product come from
    the extremes of each factor; the x-factor is then refined by zooming on
    its minimizer.
    """
    d = profile.delta
    x = np.linspace(-d, d, grid_resolution)
    y = np.linspace(-d, d, grid_resolution)
    g = _weight(profile, x)
    py = profile.psi(y)
    corners = np.outer([g.min(), g.max()], [py.min(), py.max()])
    lo, hi = corners.min(), corners.max()

    i = int(np.argmin(g))
    best_x, best_g = x[i], g[i]
    width = 2.0 * d / (grid_resolution - 1)
    for _ in range(refinement_passes):
        xs = np.linspace(best_x - width, best_x + width, 1001)
        gs = _weight(profile, xs)
        j = int(np.argmin(gs))
        if gs[j] < best_g:
            best_x, best_g = xs[j], gs[j]
        width = 2.0 * width / 1000
    lo = min(lo, best_g * float(py.max()))
    return BumpBound(
        m=max(0.0, -float(lo)),
        upper=float(hi),
        argmin_x=float(best_x),
        grid_resolution=grid_resolution,
        refinement_passes=refinement_passes,
    )


def _weight(profile: BumpProfile, x):
    v, dv = profile.evaluate(x)
    return x * dv + v


@dataclass(frozen=True)
class InfeasibilityVerdict:
    fails: bool
    threshold: float  # 1/(1 - 2/lambda_ss)
    gap: float  # threshold - (-m); >= 0 means the inequality fails
    witness_c: float | None
    witness_r: float | None
    witness_derivative: float | None


def forward_modification_infeasibility(
    m: float,
    lambda_ss: float,
    profile: BumpProfile | None = None,
    k: int = 1,
    grid: int = 2001,
) -> InfeasibilityVerdict:
    """Check whether the forward-direction modification R_2 can be monotone.

    Monotonicity needs 1/(1 - 2/lambda_ss) < -m; the verdict reports whether
    that fails, and with a profile also searches for a point (c, r) where
    dR_2/dc <= 0.
    """
    if not 0.0 < lambda_ss < 2.0:
        raise DaForgeError("lambda_ss must lie in (0, 2)")
    if m < 0:
        raise DaForgeError("m must be non-negative")
    threshold = 1.0 / (1.0 - 2.0 / lambda_ss)
    gap = threshold + m
    fails = not threshold < -m
    wc = wr = wd = None
    if profile is not None:
        d = profile.delta
        c = np.linspace(-d / k, d / k, grid)
        r = np.linspace(0.0, d, grid)
        gc = _weight(profile, k * c)
        pr = profile.psi(r)
        vals = np.add.outer(np.multiply.outer(gc, pr) * (2.0 - lambda_ss), lambda_ss)
        i, j = np.unravel_index(int(np.argmin(vals)), vals.shape)
        if vals[i, j] <= 0.0:
            wc, wr, wd = float(c[i]), float(r[j]), float(vals[i, j])
    return InfeasibilityVerdict(fails, threshold, gap, wc, wr, wd)
