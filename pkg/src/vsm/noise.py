"""Counter-based Gaussian noise shared by every simulator.

Every Gaussian draw is addressed by ``(seed, tag, replication, stream, index)``
and computed from a Philox4x64-10 block keyed by the seed, so any subset of
draws can be materialised in any order (or in parallel) with identical bits.
Uniforms are mapped to normals by the inverse normal CDF.

Counter layout of one Philox block::

    c0 = index // 4      (lane = index % 4 selects one of the four outputs)
    c1 = stream
    c2 = replication
    c3 = tag             (COMMON, IDIO, INIT, MKV, ...)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np
from scipy.special import ndtri

from .errors import ConfigError

# omp first: avoids probing an outdated TBB on import.
nb.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

# Tags separating independent noise families.
COMMON = 0
IDIO = 1
INIT = 2
MKV = 3
MKV_INIT = 4


@nb.njit(cache=True, nogil=True, inline="always")
def _mulhilo(a, b):
    m32 = np.uint64(0xFFFFFFFF)
    s32 = np.uint64(32)
    a_lo = a & m32
    a_hi = a >> s32
    b_lo = b & m32
    b_hi = b >> s32
    t = a_lo * b_lo
    mid1 = a_hi * b_lo
    mid2 = a_lo * b_hi
    carry = ((t >> s32) + (mid1 & m32) + (mid2 & m32)) >> s32
    hi = a_hi * b_hi + (mid1 >> s32) + (mid2 >> s32) + carry
    return hi, a * b


@nb.njit(cache=True, nogil=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox4x64 bijection of one 256-bit counter."""
    m0 = np.uint64(0xD2E7470EE14C6C93)
    m1 = np.uint64(0xCA5A826395121157)
    w0 = np.uint64(0x9E3779B97F4A7C15)
    w1 = np.uint64(0xBB67AE8584CAA73B)
    for r in range(10):
        if r > 0:
            k0 = k0 + w0
            k1 = k1 + w1
        hi0, lo0 = _mulhilo(m0, c0)
        hi1, lo1 = _mulhilo(m1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@nb.njit(cache=True, nogil=True, parallel=True)
def _fill_uniforms(out, k0, tag, reps, streams, start):
    k1 = np.uint64(0x56534D31)
    s11 = np.uint64(11)
    count = out.shape[2]
    b_first = start // 4
    b_last = (start + count - 1) // 4
    t = np.uint64(tag)
    for ir in nb.prange(reps.shape[0]):
        rep = np.uint64(reps[ir])
        for js in range(streams.shape[0]):
            st = np.uint64(streams[js])
            for b in range(b_first, b_last + 1):
                x0, x1, x2, x3 = philox4x64(np.uint64(b), st, rep, t, k0, k1)
                base = b * 4 - start
                for lane in range(4):
                    d = base + lane
                    if d < 0 or d >= count:
                        continue
                    if lane == 0:
                        x = x0
                    elif lane == 1:
                        x = x1
                    elif lane == 2:
                        x = x2
                    else:
                        x = x3
                    out[ir, js, d] = (np.float64(x >> s11) + 0.5) * (1.0 / 9007199254740992.0)


def _seed_word(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.uint64(seed)


def uniforms(seed, tag, replications, streams, start, count):
    """Open-interval uniforms, shape ``(len(replications), len(streams), count)``.

    Entry ``[r, s, d]`` is draw number ``start + d`` of the sequence addressed by
    ``(seed, tag, replications[r], streams[s])``.
    """
    reps = np.atleast_1d(np.asarray(replications, dtype=np.int64))
    strs = np.atleast_1d(np.asarray(streams, dtype=np.int64))
    if start < 0 or count < 0:
        raise ConfigError("draw range must be nonnegative")
    if (reps < 0).any() or (strs < 0).any():
        raise ConfigError("replication and stream indices must be nonnegative")
    out = np.empty((reps.size, strs.size, int(count)), dtype=np.float64)
    if count:
        _fill_uniforms(out, _seed_word(seed), int(tag), reps, strs, int(start))
    return out


def normals(seed, tag, replications, streams, start, count):
    """Standard normals addressed like :func:`uniforms`."""
    return ndtri(uniforms(seed, tag, replications, streams, start, count))


@dataclass(frozen=True)
class NoisePlan:
    """All randomness of one run: the common increments plus addressable streams."""

    seed: int
    n_steps: int
    dt: float
    stream_count: int
    common_increments: np.ndarray = field(repr=False)
    replication: int = 0

    def stream(self, index):
        """Increments of idiosyncratic stream ``index`` (length ``n_steps``)."""
        if not 0 <= index < self.stream_count:
            raise ConfigError(f"stream {index} outside [0, {self.stream_count})")
        return self.idio_increments([index], 0, self.n_steps)[0]

    def idio_increments(self, streams, start, count):
        """Increments for steps ``start..start+count-1``, shape ``(len(streams), count)``."""
        z = normals(self.seed, IDIO, [self.replication], streams, start, count)[0]
        return z * np.sqrt(self.dt)


def make_noise_plan(seed, n_steps, dt, stream_count, replication=0):
    if int(n_steps) < 1:
        raise ConfigError(f"n_steps must be >= 1, got {n_steps}")
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if int(stream_count) < 0:
        raise ConfigError(f"stream_count must be >= 0, got {stream_count}")
    common = common_increments(seed, [replication], int(n_steps), float(dt))[0]
    common.setflags(write=False)
    return NoisePlan(int(seed), int(n_steps), float(dt), int(stream_count), common, int(replication))


def common_increments(seed, replications, n_steps, dt):
    """W⁰ increments for several replications, shape ``(len(replications), n_steps)``."""
    return normals(seed, COMMON, replications, [0], 0, n_steps)[:, 0, :] * np.sqrt(dt)


def common_path(plan):
    """W⁰ on the time grid: ``n_steps + 1`` values starting at 0."""
    return cumulative_path(plan.common_increments)


def cumulative_path(increments):
    increments = np.asarray(increments, dtype=float)
    path = np.zeros(increments.shape[:-1] + (increments.shape[-1] + 1,))
    np.cumsum(increments, axis=-1, out=path[..., 1:])
    return path


def write_common_path_csv(plan, path):
    from .io import write_path_csv

    times = np.arange(plan.n_steps + 1) * plan.dt
    write_path_csv(path, times, common_path(plan), "W0")
    return Path(path)
