"""Uniform 1D grids and P1 nodal densities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Grid1D:
    x_max: float
    n_nodes: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.x_max > 0:
            raise ConfigError(f"x_max must be positive, got {self.x_max}")
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 2:
            raise ConfigError(f"n_nodes must be an integer >= 2, got {self.n_nodes}")
        nodes = np.linspace(0.0, self.x_max, int(self.n_nodes))
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def h(self):
        return self.x_max / (self.n_nodes - 1)


@dataclass
class GridDensity:
    """Nodal values of a continuous piecewise-linear density on ``grid``."""

    grid: Grid1D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise ConfigError(
                f"density has {self.values.shape} values for a grid of {self.grid.n_nodes} nodes"
            )

    def mass(self):
        """Exact integral of the P1 interpolant (the trapezoid rule)."""
        v = self.values
        return float(self.grid.h * (v.sum() - 0.5 * (v[0] + v[-1])))

    def first_moment(self):
        return p1_moment(self.grid.nodes, self.values, 1.0)


def p1_moment(nodes, values, p):
    """Exact ``int x**p f(x) dx`` for the P1 interpolant of ``values`` on ``nodes >= 0``."""
    xa, xb = nodes[:-1], nodes[1:]
    fa, fb = values[:-1], values[1:]
    h = xb - xa
    # f = fa + s (x - xa) on each element, s the slope
    s = (fb - fa) / h
    ip1 = (xb ** (p + 1) - xa ** (p + 1)) / (p + 1)
    ip2 = (xb ** (p + 2) - xa ** (p + 2)) / (p + 2)
    return float(np.sum((fa - s * xa) * ip1 + s * ip2))
