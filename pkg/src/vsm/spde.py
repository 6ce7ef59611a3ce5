"""P1 finite elements for the limiting stochastic Fokker-Planck equation.

With the nonlocal mean replaced by its closed form ``V(t)`` the equation is
linear with random coefficients. In weak form, for P1 test functions
``psi_i`` on ``[0, x_max]``::

    d<rho, psi_i> = -[(a/2 V) S1 + (g^2/2) S2] c dt
                    - [((a/2 - b) V) C0 + g^2 C1] c dt + g C1 c dW0

where ``a = alpha``, ``b = beta``, ``g = gamma`` and the matrices are

    M  = int psi_j psi_i         S1 = int x psi_j' psi_i'      S2 = int x^2 psi_j' psi_i'
    C0 = int psi_j psi_i'        C1 = int x psi_j psi_i'

On an element ``[xa, xb]`` of width ``h`` the hat functions are linear, so
every entry is an exact polynomial integral:

    M  local = h/6 [[2, 1], [1, 2]]
    S1 local = (xa + xb) / (2h)           * [[1, -1], [-1, 1]]
    S2 local = (xb^3 - xa^3) / (3 h^2)    * [[1, -1], [-1, 1]]
    C0 local = 1/2 [[-1, -1], [1, 1]]                      (row i = test function)
    C1 local = 1/6 [[-(2xa + xb), -(xa + 2xb)], [2xa + xb, xa + 2xb]]

Two time steppers are provided:

* ``"em"``: diffusion implicit, convection explicit, noise Euler-Maruyama.
* ``"cn"``: the Stratonovich form of the same equation, whose Itô correction
  turns ``(g^2/2) S2 + g^2 C1`` into ``(g^2/2) C1``; all drift terms implicit
  and the transport noise by the midpoint rule. The first moment then follows
  a strong order-one discretisation of its geometric Brownian motion.

The right node is always pinned to zero. At the origin the default is the
natural (zero-flux) condition: the node at ``x = 0`` stays a free unknown, so
the divergence-form operator conserves mass exactly. ``left_bc="dirichlet"``
pins it to zero instead, which leaks mass whenever the density is positive at
the origin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.stats import chi2

from .errors import ConfigError, NumericalError
from .grid import Grid1D, GridDensity

log = logging.getLogger(__name__)

STEPPERS = ("em", "cn")
LEFT_BCS = ("natural", "dirichlet")


@dataclass(frozen=True)
class SpdeOperators:
    grid: Grid1D
    M: sp.csr_array
    S1: sp.csr_array
    S2: sp.csr_array
    C0: sp.csr_array
    C1: sp.csr_array


def _assemble(n, local):
    """Scatter per-element 2x2 blocks ``local[e]`` into an n x n sparse matrix."""
    e = np.arange(n - 1)
    rows = np.concatenate([e, e, e + 1, e + 1])
    cols = np.concatenate([e, e + 1, e, e + 1])
    vals = np.concatenate([local[:, 0, 0], local[:, 0, 1], local[:, 1, 0], local[:, 1, 1]])
    return sp.csr_array(sp.coo_array((vals, (rows, cols)), shape=(n, n)))


def assemble_operators(grid):
    n = grid.n_nodes
    if n < 3:
        raise ConfigError(f"need at least 3 nodes, got {n}")
    x = grid.nodes
    xa, xb = x[:-1], x[1:]
    h = xb - xa
    if np.any(h <= 0):
        raise ConfigError("degenerate grid")
    ones = np.ones_like(h)
    lap = np.array([[1.0, -1.0], [-1.0, 1.0]])

    mass = (h / 6)[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]])
    s1 = ((xa + xb) / (2 * h))[:, None, None] * lap
    s2 = ((xb**3 - xa**3) / (3 * h * h))[:, None, None] * lap
    c0 = 0.5 * ones[:, None, None] * np.array([[-1.0, -1.0], [1.0, 1.0]])
    ia = (2 * xa + xb) / 6  # int x psi_a / h
    ib = (xa + 2 * xb) / 6
    c1 = np.stack([np.stack([-ia, -ib], -1), np.stack([ia, ib], -1)], -2)
    return SpdeOperators(grid, _assemble(n, mass), _assemble(n, s1), _assemble(n, s2),
                         _assemble(n, c0), _assemble(n, c1))


def _bands(A):
    """Tridiagonal sparse matrix to the ``solve_banded((1, 1), ...)`` layout."""
    n = A.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = A.diagonal(1)
    ab[1] = A.diagonal(0)
    ab[2, :-1] = A.diagonal(-1)
    return ab


class _Stepper:
    """Precomputed interior bands for repeated semi-implicit steps."""

    def __init__(self, ops, left_bc="natural"):
        if left_bc not in LEFT_BCS:
            raise ConfigError(f"unknown left boundary condition {left_bc!r}; expected one of {LEFT_BCS}")
        self.ops = ops
        inner = slice(0 if left_bc == "natural" else 1, ops.grid.n_nodes - 1)
        self.inner = inner
        self.sub = {k: getattr(ops, k)[inner, :][:, inner] for k in ("M", "S1", "S2", "C0", "C1")}
        self.band = {k: _bands(v) for k, v in self.sub.items()}

    def step(self, c, alpha, beta, gamma, v, dw0, dt, scheme):
        sub, band = self.sub, self.band
        ci = c[self.inner]
        if scheme == "em":
            lhs = band["M"] + dt * (0.5 * alpha * v * band["S1"] + 0.5 * gamma**2 * band["S2"])
            expl = (0.5 * alpha - beta) * v * (sub["C0"] @ ci) + gamma**2 * (sub["C1"] @ ci)
            rhs = sub["M"] @ ci - dt * expl + gamma * dw0 * (sub["C1"] @ ci)
        elif scheme == "cn":
            implicit = (0.5 * alpha * v * band["S1"] + (0.5 * alpha - beta) * v * band["C0"]
                        + 0.5 * gamma**2 * band["C1"])
            half = 0.5 * gamma * dw0
            lhs = band["M"] + dt * implicit - half * band["C1"]
            rhs = sub["M"] @ ci + half * (sub["C1"] @ ci)
        else:
            raise ConfigError(f"unknown scheme {scheme!r}; expected one of {STEPPERS}")
        try:
            new_inner = solve_banded((1, 1), lhs, rhs, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"tridiagonal solve failed: {exc}") from exc
        out = np.zeros_like(c)
        out[self.inner] = new_inner
        return out


def step_semi_implicit(density, ops, params, V_t, dW0, dt, scheme="em", clip=False,
                       left_bc="natural"):
    """Advance one nodal density by ``dt``; pinned boundary nodes stay at zero."""
    if dt < 0:
        raise ConfigError(f"dt must be >= 0, got {dt}")
    if not V_t > 0:
        raise ConfigError(f"V_t must be positive, got {V_t}")
    if not np.all(np.isfinite(density.values)):
        raise NumericalError("non-finite density values")
    new = _Stepper(ops, left_bc).step(density.values, params.alpha, params.beta, params.gamma,
                             V_t, dW0, dt, scheme)
    if clip:
        new = np.maximum(new, 0.0)
    return GridDensity(density.grid, new, density.time + dt)


def _check_init(init):
    mass = init.mass()
    if abs(mass - 1.0) > 1e-8:
        raise ConfigError(f"initial density must have unit mass, got {mass!r}")
    if init.values[-1] != 0:
        raise ConfigError("initial density must vanish at x_max")


def conditional_mean(m0, beta, gamma, w0, dt):
    """Closed-form ``<rho_t, x> = m0 exp((beta - gamma^2/2) t + gamma W0(t))``."""
    t = np.arange(len(w0)) * dt
    return m0 * np.exp((beta - 0.5 * gamma**2) * t + gamma * np.asarray(w0, dtype=float))


@dataclass
class SpdeRun:
    densities: list  # GridDensity snapshots, one per stored step
    V: np.ndarray  # mean level used at every grid time
    clip_events: int = 0
    steps: np.ndarray | None = None  # grid step index of each snapshot

    def __iter__(self):
        return iter(self.densities)

    def __len__(self):
        return len(self.densities)

    def __getitem__(self, i):
        return self.densities[i]


def run_spde(params, w0, init, scheme="cn", clip=False, moment_mode="closed",
             save_every=1, ops=None, left_bc="natural"):
    """Time series of densities started at ``init`` and driven by ``w0``.

    ``moment_mode="closed"`` uses the closed-form mean with ``m0 = <init, x>``;
    ``"discrete"`` re-reads the first moment of the current iterate every step.
    ``params.gamma = 0`` with ``w0 = 0`` gives the deterministic PDE limit.
    """
    _check_init(init)
    w0 = np.asarray(w0, dtype=float)
    if w0.shape != (params.n_steps + 1,):
        raise ConfigError(f"w0 must have n_steps + 1 = {params.n_steps + 1} entries")
    if moment_mode not in ("closed", "discrete"):
        raise ConfigError(f"unknown moment_mode {moment_mode!r}")
    ops = ops or assemble_operators(init.grid)
    stepper = _Stepper(ops, left_bc)
    dt = params.dt
    m0 = init.first_moment()
    V = conditional_mean(m0, params.beta, params.gamma, w0, dt)
    dw0 = np.diff(w0)
    c = init.values.copy()
    out = [GridDensity(init.grid, c.copy(), 0.0)]
    steps = [0]
    clips = 0
    for k in range(params.n_steps):
        v = V[k] if moment_mode == "closed" else GridDensity(init.grid, c).first_moment()
        if not v > 0:
            raise NumericalError("mean level became nonpositive", step=k)
        try:
            c = stepper.step(c, params.alpha, params.beta, params.gamma, v, dw0[k], dt, scheme)
        except NumericalError as exc:
            raise NumericalError(str(exc), step=k) from exc
        if clip:
            neg = c < 0
            clips += int(neg.sum())
            c[neg] = 0.0
        if (k + 1) % save_every == 0 or k + 1 == params.n_steps:
            out.append(GridDensity(init.grid, c.copy(), (k + 1) * dt))
            steps.append(k + 1)
    tail = abs(out[-1].values[-2])
    if tail > 1e-6:
        log.warning("density next to x_max is %.2e at the final time; increase x_max", tail)
    return SpdeRun(out, V, clips, np.array(steps))


def run_pde(params, init, scheme="cn", **kw):
    """Deterministic limit without common noise (``gamma = 0``)."""
    return run_spde(params.replace(gamma=0.0), np.zeros(params.n_steps + 1), init, scheme, **kw)


def chi2_density(k, grid):
    """chi-square(k) pdf on the nodes, pinned to zero at both ends, unit P1 mass."""
    if int(k) != k or k < 1:
        raise ConfigError(f"k must be a positive integer, got {k}")
    vals = chi2.pdf(grid.nodes, k)
    vals[0] = vals[-1] = 0.0
    dens = GridDensity(grid, vals, 0.0)
    dens.values = vals / dens.mass()
    return dens


def default_grid(initial_mean, n_nodes=1000):
    return Grid1D(30.0 * initial_mean, n_nodes)


def grid_for_path(m0, V, n_nodes=None, h=None, factor=30.0):
    """Grid wide enough for the whole run: ``x_max = factor * max(m0, max V)``.

    Give either ``n_nodes`` or a target mesh width ``h``.
    """
    if (n_nodes is None) == (h is None):
        raise ConfigError("give exactly one of n_nodes and h")
    x_max = factor * max(float(m0), float(np.max(V)))
    if n_nodes is None:
        if not h > 0:
            raise ConfigError(f"h must be positive, got {h}")
        n_nodes = int(np.ceil(x_max / h)) + 1
    return Grid1D(x_max, n_nodes)
