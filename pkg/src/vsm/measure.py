"""Empirical measures, Wasserstein-1 distance, moments and kernel density estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DataError
from .grid import GridDensity, p1_moment


@dataclass
class EmpiricalMeasure:
    """Weighted atoms, sorted ascending, weights summing to one."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.atoms.ndim != 1 or self.atoms.size == 0:
            raise DataError("an empirical measure needs at least one atom")
        if self.atoms.shape != self.weights.shape:
            raise DataError("atoms and weights must have the same length")
        if np.any(np.diff(self.atoms) < 0):
            raise DataError("atoms must be sorted ascending")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise DataError("weights must be positive and sum to 1")

    @classmethod
    def from_samples(cls, samples, weights=None):
        samples = np.asarray(samples, dtype=float).ravel()
        if samples.size == 0:
            raise DataError("cannot build a measure from zero samples")
        order = np.argsort(samples, kind="stable")
        if weights is None:
            w = np.full(samples.size, 1.0 / samples.size)
        else:
            w = np.asarray(weights, dtype=float)[order]
            w = w / w.sum()
        return cls(samples[order], w)

    def shift(self, c):
        return EmpiricalMeasure(self.atoms + c, self.weights)

    def mean(self):
        return float(np.dot(self.weights, self.atoms))


def _cdf_at(m, x):
    """CDF value F(x) and the local quadratic (density, slope) just right of ``x``.

    For a grid density the values are normalised by its mass first.
    """
    if isinstance(m, EmpiricalMeasure):
        cw = np.concatenate([[0.0], np.cumsum(m.weights)])
        idx = np.searchsorted(m.atoms, x, side="right")
        zero = np.zeros_like(x)
        return np.minimum(cw[idx], 1.0), zero, zero
    nodes = m.grid.nodes
    v = m.values / m.mass()
    h = m.grid.h
    elem_mass = 0.5 * h * (v[:-1] + v[1:])
    cm = np.concatenate([[0.0], np.cumsum(elem_mass)])
    e = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, nodes.size - 2)
    slope = (v[e + 1] - v[e]) / h
    d = x - nodes[e]
    F = cm[e] + v[e] * d + 0.5 * slope * d * d
    f = v[e] + slope * d
    inside = (x >= 0) & (x < nodes[-1])
    F = np.where(x < 0, 0.0, np.where(inside, F, 1.0))
    return F, np.where(inside, f, 0.0), np.where(inside, slope, 0.0)


def _breakpoints(m):
    return m.atoms if isinstance(m, EmpiricalMeasure) else m.grid.nodes


def _abs_quadratic_integral(a, b, c, length):
    """Exact ``int_0^L |a + b s + c s^2| ds``, vectorised."""
    # roots past overflow are discarded; splitting at an endpoint is harmless
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        disc = b * b - 4 * a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        # numerically stable quadratic roots
        qq = -0.5 * (b + np.copysign(sq, b))
        r1 = np.where(c != 0, qq / c, np.where(b != 0, -a / b, np.nan))
        r2 = np.where((c != 0) & (qq != 0), a / qq, np.nan)
        real = (disc >= 0) | (c == 0)
    r1 = np.where(real & np.isfinite(r1), np.clip(r1, 0, length), 0.0)
    r2 = np.where(real & np.isfinite(r2), np.clip(r2, 0, length), 0.0)
    lo = np.minimum(r1, r2)
    hi = np.maximum(r1, r2)

    def prim(s):
        return a * s + 0.5 * b * s * s + c * s * s * s / 3.0

    return (np.abs(prim(lo)) + np.abs(prim(hi) - prim(lo)) + np.abs(prim(length) - prim(hi)))


def wasserstein1(mu, nu):
    """W1 distance as the exact integral of ``|F_mu - F_nu|``.

    Accepts :class:`EmpiricalMeasure` and :class:`GridDensity` in any
    combination. Grid densities are normalised to unit mass first; their CDF is
    piecewise quadratic, so the integral is done in closed form piece by piece.
    """
    for m in (mu, nu):
        if isinstance(m, GridDensity) and not m.mass() > 0:
            raise DataError("grid density has no positive mass")
    pts = np.unique(np.concatenate([_breakpoints(mu), _breakpoints(nu)]))
    if pts.size < 2:
        return 0.0
    u = pts[:-1]
    length = np.diff(pts)
    F1, f1, s1 = _cdf_at(mu, u)
    F2, f2, s2 = _cdf_at(nu, u)
    total = _abs_quadratic_integral(F1 - F2, f1 - f2, 0.5 * (s1 - s2), length)
    return float(total.sum())


def moment(m, p):
    """``<m, x**p>``: weighted atom sum or exact P1 integral."""
    if not p > 0:
        raise DataError(f"moment order must be positive, got {p}")
    if isinstance(m, EmpiricalMeasure):
        return float(np.dot(m.weights, m.atoms**p))
    return p1_moment(m.grid.nodes, m.values, p)


def silverman_bandwidth(m):
    a = m.atoms
    w = m.weights
    mean = np.dot(w, a)
    sd = np.sqrt(max(np.dot(w, (a - mean) ** 2), 0.0))
    q25, q75 = np.interp([0.25, 0.75], np.cumsum(w) - 0.5 * w, a)
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    bw = 0.9 * spread * a.size ** (-0.2)
    return float(bw) if bw > 0 else 1.0


def kde_density(m, bandwidth, grid, time=0.0):
    """Gaussian kernel estimate on the grid nodes, renormalised on ``[0, x_max]``.

    Kernels of atoms near zero put mass below the origin; that part is cut off by
    the renormalisation (see :func:`kde_mass_below_zero`). Boundary nodes are
    pinned to zero like every other grid density.
    """
    if not bandwidth > 0:
        raise DataError(f"bandwidth must be positive, got {bandwidth}")
    x = grid.nodes
    vals = np.zeros_like(x)
    step = max(1, 2_000_000 // x.size)
    for i in range(0, m.atoms.size, step):
        a = m.atoms[i:i + step]
        w = m.weights[i:i + step]
        z = (x[None, :] - a[:, None]) / bandwidth
        vals += w @ np.exp(-0.5 * z * z)
    vals /= bandwidth * np.sqrt(2 * np.pi)
    vals[0] = vals[-1] = 0.0
    dens = GridDensity(grid, vals, time)
    mass = dens.mass()
    if not mass > 0:
        raise DataError("kernel estimate has no mass on the grid; widen x_max or bandwidth")
    dens.values = vals / mass
    return dens


def kde_mass_below_zero(m, bandwidth):
    """Mass the untruncated Gaussian KDE places on negative values."""
    return float(np.dot(m.weights, ndtr(-m.atoms / bandwidth)))
