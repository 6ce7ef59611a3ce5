"""Limiting McKean-Vlasov SDE, driven through its closed-form conditional mean.

Given the common path ``W0`` the conditional mean ``V(t) = E[Y(t) | W0]`` is the
geometric Brownian motion ``m * exp((beta - 1/2) t + W0(t))``, so each sample
solves a scalar SDE::

    dY = beta V dt + sqrt(alpha Y+ V) dB + Y dW0

discretised with the same full-truncation diagonal Milstein scheme as the
particle system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import noise
from .errors import ConfigError, NumericalError
from .particle import SCHEMES, sample_initial

_CHUNK = 32


@dataclass
class ConditionalMeanPath:
    times: np.ndarray
    values: np.ndarray


@dataclass
class MkvSampleSet:
    times: np.ndarray  # times of the stored columns
    samples: np.ndarray  # (M, len(times))
    w0_path: np.ndarray  # full common path on the simulation grid
    conditional_mean: ConditionalMeanPath | None = None
    clip_events: int = 0


def conditional_mean_path(m_lambda, beta, w0, dt):
    """``V(t_k) = m_lambda * exp((beta - 1/2) t_k + W0(t_k))`` on ``t_k = k dt``."""
    if not m_lambda > 0:
        raise ConfigError(f"m_lambda must be positive, got {m_lambda}")
    w0 = np.asarray(w0, dtype=float)
    times = np.arange(w0.size) * dt
    return ConditionalMeanPath(times, m_lambda * np.exp((beta - 0.5) * times + w0))


def _initial(y0, n_samples, seed, replication):
    if y0 is None:
        raise ConfigError("initial values required")
    if isinstance(y0, dict):
        spec = dict(y0)
        dist = spec.pop("dist")
        return sample_initial(dist, n_samples, seed, replication=replication, tag=noise.MKV_INIT, **spec)
    y0 = np.asarray(y0, dtype=float)
    if y0.ndim == 0:
        return np.full(n_samples, float(y0))
    if y0.shape != (n_samples,):
        raise ConfigError(f"y0 has shape {y0.shape}, expected ({n_samples},)")
    return y0.copy()


def _m_lambda(params, y):
    return params.m_lambda if params.m_lambda is not None else float(y.mean())


def _simulate(params, drift_level, dw0, y, seed, stream_offset, replication, scheme, save_steps,
              common=True, tag=noise.MKV):
    """Shared loop: ``drift_level[k]`` is the mean level entering both coefficients.

    ``y`` is ``(m,)`` for one replication or ``(R, m)`` with ``replication`` a
    vector of R replication indices; samples use streams
    ``stream_offset .. stream_offset + m - 1`` of ``tag``.
    """
    n_steps = dw0.size
    dt = params.dt
    alpha, beta = params.alpha, params.beta
    reps = np.atleast_1d(np.asarray(replication, dtype=np.int64))
    y = np.asarray(y, dtype=float).reshape(reps.size, -1)
    m = y.shape[1]
    streams = np.arange(stream_offset, stream_offset + m)
    save = np.zeros(n_steps + 1, dtype=bool)
    save[save_steps] = True
    out = np.empty((reps.size, m, int(save.sum())))
    col = 0
    if save[0]:
        out[..., 0] = y
        col = 1
    clips = 0
    sq = np.sqrt(dt)
    for k0 in range(0, n_steps, _CHUNK):
        count = min(_CHUNK, n_steps - k0)
        db = np.ascontiguousarray(noise.normals(seed, tag, reps, streams, k0, count).transpose(2, 0, 1))
        db *= sq
        for j in range(count):
            k = k0 + j
            v = drift_level[k]
            w = dw0[k]
            b = db[j]
            yp = np.maximum(y, 0.0)
            new = y + beta * v * dt + np.sqrt(alpha * v * yp) * b
            if common:
                new += y * w
            if scheme == "milstein":
                new += 0.25 * alpha * v * (b * b - dt)
                if common:
                    new += 0.5 * y * (w * w - dt)
            neg = new < 0
            if neg.any():
                clips += int(neg.sum())
                new[neg] = 0.0
            y = new
            if save[k + 1]:
                out[..., col] = y
                col += 1
        if not np.all(np.isfinite(y)):
            raise NumericalError("McKean-Vlasov sample became non-finite", step=k0 + count)
    if np.ndim(replication) == 0:
        out = out[0]
    return out, clips


def _save_steps(n_steps, save_steps):
    if save_steps is None:
        return np.arange(n_steps + 1)
    steps = np.unique(np.asarray(save_steps, dtype=np.int64))
    if steps.size and (steps[0] < 0 or steps[-1] > n_steps):
        raise ConfigError(f"save_steps must lie in [0, {n_steps}]")
    return steps


def simulate_mkv(params, w0, n_samples, seed, y0=None, stream_offset=0, replication=0,
                 scheme="milstein", save_steps=None):
    """``n_samples`` conditionally i.i.d. copies of Y sharing the common path ``w0``.

    ``y0`` is a scalar, a vector of length ``n_samples`` or a distribution spec
    such as ``{"dist": "chi2", "k": 3}``; default is the constant ``m_lambda``.
    ``stream_offset`` selects a disjoint block of idiosyncratic streams.
    """
    if params.gamma != 1:
        raise ConfigError("simulate_mkv models the common-noise limit and needs gamma = 1")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    if int(n_samples) < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    w0 = np.asarray(w0, dtype=float)
    if w0.shape != (params.n_steps + 1,):
        raise ConfigError(f"w0 must have n_steps + 1 = {params.n_steps + 1} entries, got {w0.shape}")
    if w0[0] != 0:
        raise ConfigError("w0 must start at 0")
    if y0 is None:
        if params.m_lambda is None:
            raise ConfigError("either y0 or params.m_lambda is required")
        y0 = params.m_lambda
    y = _initial(y0, int(n_samples), seed, replication)
    if (y < 0).any():
        raise ConfigError("initial values must be nonnegative")
    cm = conditional_mean_path(_m_lambda(params, y), params.beta, w0, params.dt)
    steps = _save_steps(params.n_steps, save_steps)
    out, clips = _simulate(params, cm.values, np.diff(w0), y, seed, stream_offset, replication,
                           scheme, steps)
    return MkvSampleSet(steps * params.dt, out, w0, cm, clips)


def simulate_mkv_nocn(params, n_samples, seed, y0=None, stream_offset=0, replication=0,
                      scheme="milstein", save_steps=None):
    """Samples of the limit without common noise: the mean level is ``m e^{beta t}``."""
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    if int(n_samples) < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    if y0 is None:
        if params.m_lambda is None:
            raise ConfigError("either y0 or params.m_lambda is required")
        y0 = params.m_lambda
    y = _initial(y0, int(n_samples), seed, replication)
    if (y < 0).any():
        raise ConfigError("initial values must be nonnegative")
    times = np.arange(params.n_steps + 1) * params.dt
    level = _m_lambda(params, y) * np.exp(params.beta * times)
    w0 = np.zeros(params.n_steps + 1)
    steps = _save_steps(params.n_steps, save_steps)
    out, clips = _simulate(params, level, np.diff(w0), y, seed, stream_offset, replication,
                           scheme, steps, common=False)
    return MkvSampleSet(steps * params.dt, out, w0, ConditionalMeanPath(times, level), clips)


def simulate_mkv_coupled(params, w0, seed, replications, n_samples, y0, scheme="milstein",
                         save_steps=None):
    """Copies of Y driven by the particle system's idiosyncratic increments.

    Sample ``i`` of replication ``r`` uses exactly the Brownian increments of
    particle ``i`` in ``simulate_replications(..., seed, ..., replications)``,
    a synchronous coupling between the N-particle system and N independent
    copies of the limit on the same ``w0``. Returns ``(R, n_samples, n_save)``.
    """
    if params.gamma != 1:
        raise ConfigError("simulate_mkv_coupled needs gamma = 1")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    w0 = np.asarray(w0, dtype=float)
    if w0.shape != (params.n_steps + 1,) or w0[0] != 0:
        raise ConfigError(f"w0 must have n_steps + 1 = {params.n_steps + 1} entries starting at 0")
    reps = np.atleast_1d(np.asarray(replications, dtype=np.int64))
    y = np.broadcast_to(np.asarray(y0, dtype=float), (reps.size, int(n_samples))).copy()
    if (y < 0).any():
        raise ConfigError("initial values must be nonnegative")
    m = params.m_lambda if params.m_lambda is not None else float(y.mean())
    cm = conditional_mean_path(m, params.beta, w0, params.dt)
    steps = _save_steps(params.n_steps, save_steps)
    out, _ = _simulate(params, cm.values, np.diff(w0), y, seed, 0, reps, scheme, steps, tag=noise.IDIO)
    return out


def alpha_zero_solution(y0, m_lambda, beta, w0, dt):
    """Exact solution for ``alpha = 0``: ``e^{W0 - t/2} (Y0 + m (e^{beta t} - 1))``."""
    w0 = np.asarray(w0, dtype=float)
    t = np.arange(w0.size) * dt
    y0 = np.asarray(y0, dtype=float)[..., None]
    return np.exp(w0 - 0.5 * t) * (y0 + m_lambda * (np.exp(beta * t) - 1.0))
