"""Validated model constants."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelParams:
    """Constants of the volatility-stabilized model with common noise.

    ``alpha`` scales the idiosyncratic volatility, ``beta`` the drift towards the
    market total and ``gamma`` the strength of the common noise.  ``m_lambda`` is
    the (limit) initial mean; ``None`` means "take it from the initial data".

    By default ``beta >= alpha / 2`` is enforced, which keeps capitalizations
    strictly positive.  ``relaxed=True`` only requires ``beta >= 0`` and logs a
    warning.
    """

    alpha: float
    beta: float
    gamma: float = 1.0
    n_particles: int = 1
    horizon: float = 1.0
    n_steps: int = 1
    m_lambda: float | None = None
    relaxed: bool = False

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not self.gamma >= 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            raise ConfigError(f"n_particles must be a positive integer, got {self.n_particles}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if self.alpha > self.n_particles:
            raise ConfigError(
                f"alpha={self.alpha} exceeds n_particles={self.n_particles}; 1 - alpha/N must be >= 0"
            )
        if self.m_lambda is not None and not self.m_lambda > 0:
            raise ConfigError(f"m_lambda must be positive, got {self.m_lambda}")
        if self.beta < self.alpha / 2:
            if not self.relaxed:
                raise ConfigError(
                    f"beta={self.beta} < alpha/2={self.alpha / 2}; pass relaxed=True to allow beta >= 0"
                )
            if self.beta < 0:
                raise ConfigError(f"beta must be >= 0 even in relaxed mode, got {self.beta}")
            log.warning("beta < alpha/2: strict positivity of solutions is not guaranteed")

    @property
    def dt(self):
        return self.horizon / self.n_steps

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)
