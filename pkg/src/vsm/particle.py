"""N-particle volatility-stabilized system with common noise.

One time step of particle ``i`` (``S = sum_j X_j``, ``c = gamma * sqrt(1 - alpha/N)``)::

    X_i += beta * S / N * dt
         + sqrt(alpha / N) * sqrt(X_i+ * S+) * dW_i
         + c * X_i * dW0
         + alpha / (4N) * S+ * (dW_i**2 - dt)          # Milstein, S frozen
         + c**2 / 2 * X_i * (dW0**2 - dt)               # Milstein, common noise

Cross Lévy areas between ``W_i`` and ``W0`` are dropped. Negative results are
clipped to zero (full truncation) and counted.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import noise
from .errors import ConfigError, NumericalError
from .measure import EmpiricalMeasure

log = logging.getLogger(__name__)

SCHEMES = ("milstein", "euler")
_CHUNK = 32


@dataclass
class PathEnsemble:
    times: np.ndarray
    states: np.ndarray  # (N, n_steps + 1)
    total_mean: np.ndarray
    clip_events: int = 0

    @property
    def n_particles(self):
        return self.states.shape[0]

    @property
    def n_steps(self):
        return self.states.shape[1] - 1


def _canonical_sum(x):
    # Summing in sorted order makes the total independent of particle order,
    # so permuting particles permutes the output bit-for-bit.
    return np.sort(x, axis=-1).sum(axis=-1)


def _advance(x, alpha, beta, gamma, dw, dw0, dt, scheme):
    """Vectorised step over leading batch axes; returns (new_state, n_clipped)."""
    n = x.shape[-1]
    xp = np.maximum(x, 0.0)
    total = _canonical_sum(xp)[..., None]
    w0 = np.asarray(dw0, dtype=float)[..., None]
    c = gamma * np.sqrt(1.0 - alpha / n)
    new = x + (beta / n * dt) * total
    new += np.sqrt(alpha / n) * np.sqrt(xp * total) * dw
    new += c * x * w0
    if scheme == "milstein":
        new += (alpha / (4.0 * n)) * total * (dw * dw - dt)
        new += (0.5 * c * c) * x * (w0 * w0 - dt)
    neg = new < 0
    n_clipped = int(neg.sum())
    if n_clipped:
        new[neg] = 0.0
    return new, n_clipped


def _check_finite(arrays, step):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite value in particle step input", step=step)


def step_milstein(state, params, dW_idio, dW_common, dt, scheme="milstein", step=None):
    """One full-truncation step of the particle system.

    ``state`` and ``dW_idio`` have shape ``(..., N)``; ``dW_common`` broadcasts
    against the leading axes.  ``scheme="euler"`` drops both Milstein terms.
    """
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    state = np.asarray(state, dtype=float)
    dW_idio = np.asarray(dW_idio, dtype=float)
    _check_finite((state, dW_idio, np.asarray(dW_common, dtype=float)), step)
    if (state < 0).any():
        raise ConfigError("particle states must be nonnegative")
    new, _ = _advance(state, params.alpha, params.beta, params.gamma, dW_idio, dW_common, dt, scheme)
    return new


def _validate_init(params, init):
    init = np.asarray(init, dtype=float)
    if init.shape[-1] != params.n_particles:
        raise ConfigError(
            f"initial vector has {init.shape[-1]} entries, expected n_particles={params.n_particles}"
        )
    if not np.all(np.isfinite(init)) or (init <= 0).any():
        raise ConfigError("initial capitalizations must be finite and strictly positive")
    return init


def simulate_particles(params, plan, init, streams=None, scheme="milstein"):
    """Full trajectories of one replication driven by ``plan``.

    ``streams[i]`` is the idiosyncratic stream index used by particle ``i``
    (default ``i``); permuting ``init`` and ``streams`` together permutes rows.
    """
    if plan.n_steps != params.n_steps:
        raise ConfigError(f"plan has {plan.n_steps} steps, params expect {params.n_steps}")
    init = _validate_init(params, init)
    if init.ndim != 1:
        raise ConfigError("init must be a vector of length n_particles")
    n = params.n_particles
    streams = np.arange(n) if streams is None else np.asarray(streams, dtype=np.int64)
    if streams.shape != (n,):
        raise ConfigError(f"need {n} stream indices, got shape {streams.shape}")
    dt = plan.dt
    states = np.empty((n, plan.n_steps + 1))
    states[:, 0] = init
    clips = 0
    x = init.copy()
    for k0 in range(0, plan.n_steps, _CHUNK):
        count = min(_CHUNK, plan.n_steps - k0)
        dws = np.ascontiguousarray(plan.idio_increments(streams, k0, count).T)
        for j in range(count):
            k = k0 + j
            x, nc = _advance(x, params.alpha, params.beta, params.gamma, dws[j],
                             plan.common_increments[k], dt, scheme)
            if not np.all(np.isfinite(x)):
                raise NumericalError("particle state became non-finite", step=k)
            clips += nc
            states[:, k + 1] = x
    if clips:
        log.info("full truncation clipped %d particle values", clips)
    times = np.arange(plan.n_steps + 1) * dt
    return PathEnsemble(times, states, states.mean(axis=0), clips)


def _run_batch(params, seed, init, reps, scheme, keep_states, chunk, dw0=None):
    n = params.n_particles
    dt = params.dt
    streams = np.arange(n)
    if dw0 is None:
        dw0 = noise.common_increments(seed, reps, params.n_steps, dt)
    x = np.broadcast_to(init, (reps.size, n)).copy()
    means = np.empty((reps.size, params.n_steps + 1))
    means[:, 0] = x.mean(axis=-1)
    kept = None
    if keep_states:
        kept = np.empty((reps.size, n, params.n_steps + 1))
        kept[:, :, 0] = x
    clips = 0
    sq = np.sqrt(dt)
    for k0 in range(0, params.n_steps, chunk):
        count = min(chunk, params.n_steps - k0)
        # step-major copy so each step reads a contiguous (R, N) slab
        dws = np.ascontiguousarray(noise.normals(seed, noise.IDIO, reps, streams, k0, count)
                                   .transpose(2, 0, 1))
        dws *= sq
        for j in range(count):
            k = k0 + j
            x, nc = _advance(x, params.alpha, params.beta, params.gamma, dws[j],
                             dw0[:, k], dt, scheme)
            clips += nc
            means[:, k + 1] = x.mean(axis=-1)
            if keep_states:
                kept[:, :, k + 1] = x
        if not np.all(np.isfinite(x)):
            raise NumericalError("particle state became non-finite", step=k0 + count)
    return x, means, kept, clips


@dataclass
class ReplicationResult:
    times: np.ndarray
    total_mean: np.ndarray  # (R, n_steps + 1)
    final_states: np.ndarray  # (R, N)
    states: np.ndarray | None  # (R, N, n_steps + 1) when requested
    clip_events: int


def simulate_replications(params, seed, init, replications, scheme="milstein",
                          keep_states=False, workers=1, batch_size=256, common_increments=None):
    """Independent replications ``r`` (distinct W⁰ and idiosyncratic streams).

    Replication ``r`` reproduces ``simulate_particles`` with
    ``make_noise_plan(seed, n_steps, dt, N, replication=r)`` exactly, and the
    result does not depend on ``workers`` or ``batch_size``.

    ``common_increments`` of shape ``(R, n_steps)`` (or ``(n_steps,)``, shared
    by all) overrides the W⁰ increments, e.g. to run many idiosyncratic
    replications on one common path.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    init = _validate_init(params, init)
    reps = np.atleast_1d(np.asarray(replications, dtype=np.int64))
    if init.ndim == 2 and init.shape[0] != reps.size:
        raise ConfigError("per-replication init must have one row per replication")
    dw0 = None
    if common_increments is not None:
        dw0 = np.asarray(common_increments, dtype=float)
        dw0 = np.broadcast_to(dw0, (reps.size, params.n_steps)) if dw0.ndim == 1 else dw0
        if dw0.shape != (reps.size, params.n_steps):
            raise ConfigError(f"common_increments must have shape ({reps.size}, {params.n_steps})")
    chunk = max(1, min(_CHUNK, 2**22 // max(1, params.n_particles * batch_size)))
    batches = [slice(i, min(i + batch_size, reps.size)) for i in range(0, reps.size, batch_size)]

    def work(sl):
        x0 = init[sl] if init.ndim == 2 else init
        return _run_batch(params, seed, x0, reps[sl], scheme, keep_states, chunk,
                          None if dw0 is None else dw0[sl])

    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, batches))
    else:
        parts = [work(sl) for sl in batches]
    final = np.concatenate([p[0] for p in parts])
    means = np.concatenate([p[1] for p in parts])
    states = np.concatenate([p[2] for p in parts]) if keep_states else None
    times = np.arange(params.n_steps + 1) * params.dt
    return ReplicationResult(times, means, final, states, sum(p[3] for p in parts))


def log_mean_law(params, t, z0):
    """Exact Gaussian law ``(mean, variance)`` of ``log Z(t) - log z0``.

    The combined martingale of the total mean has unit volatility for every N,
    so the law is ``Normal((beta - 1/2) t, t)``.
    """
    if params.gamma != 1:
        raise ConfigError("log_mean_law needs gamma = 1 (otherwise the mean is not a unit-volatility GBM)")
    if t < 0:
        raise ConfigError(f"t must be >= 0, got {t}")
    if not z0 > 0:
        raise ConfigError(f"z0 must be positive, got {z0}")
    return (params.beta - 0.5) * t, float(t)


def empirical_measure_at(ensemble, step):
    if not 0 <= step <= ensemble.n_steps:
        raise ConfigError(f"step {step} outside [0, {ensemble.n_steps}]")
    return EmpiricalMeasure.from_samples(ensemble.states[:, step])


INIT_DISTRIBUTIONS = ("chi2", "lognormal", "constant")


def sample_initial(dist, n, seed, replication=0, tag=noise.INIT, **kw):
    """Deterministic i.i.d. initial values via inverse CDF of counter-based uniforms."""
    if dist == "constant":
        return np.full(n, float(kw.get("value", 1.0)))
    u = noise.uniforms(seed, tag, [replication], np.arange(n), 0, 1)[0, :, 0]
    if dist == "chi2":
        return stats.chi2.ppf(u, kw.get("k", 3))
    if dist == "lognormal":
        return np.exp(kw.get("mu", 0.0) + kw.get("sigma", 1.0) * stats.norm.ppf(u))
    raise ConfigError(f"unknown initial distribution {dist!r}; expected one of {INIT_DISTRIBUTIONS}")
