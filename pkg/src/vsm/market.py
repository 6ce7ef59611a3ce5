"""Market-capitalization panels, capital distribution curves, entropy, diversity
and (alpha, beta) calibration by matching entropy and diversity trajectories.
"""

from __future__ import annotations

import csv
import datetime as _dt
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .particle import simulate_replications

log = logging.getLogger(__name__)

DEFAULT_P = 0.5
CURVE_MODES = ("log", "weights")


@dataclass
class MarketPanel:
    dates: list
    caps: np.ndarray  # (n_dates, n_assets)
    asset_ids: list

    def __post_init__(self):
        self.caps = np.asarray(self.caps, dtype=float)
        self.dates = [str(d) for d in self.dates]
        self.asset_ids = [str(a) for a in self.asset_ids]
        if self.caps.ndim != 2 or self.caps.shape[0] == 0:
            raise DataError("caps must be a nonempty dates x assets matrix")
        if self.caps.shape != (len(self.dates), len(self.asset_ids)):
            raise DataError(
                f"caps shape {self.caps.shape} does not match "
                f"{len(self.dates)} dates x {len(self.asset_ids)} assets"
            )
        bad = ~(np.isfinite(self.caps) & (self.caps > 0))
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError(f"nonpositive capitalization for asset {self.asset_ids[c]!r} on {self.dates[r]}")
        parsed = [_parse_date(d) for d in self.dates]
        if any(b <= a for a, b in zip(parsed, parsed[1:])):
            raise DataError("dates must be strictly increasing")

    @property
    def n_assets(self):
        return len(self.asset_ids)

    def weights(self):
        return self.caps / self.caps.sum(axis=1, keepdims=True)


def _parse_date(s):
    try:
        return _dt.date.fromisoformat(s)
    except ValueError as exc:
        raise DataError(f"not an ISO-8601 date: {s!r}") from exc


def read_panel_csv(path):
    """Strict reader for ``date,<asset1>,<asset2>,...`` files."""
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"panel file not found: {path}") from None
    with fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if not header or header[0].strip() != "date" or len(header) < 2:
            raise DataError(f"{path}:1: header must be 'date,<asset1>,...'")
        ids = [h.strip() for h in header[1:]]
        if len(set(ids)) != len(ids) or "" in ids:
            raise DataError(f"{path}:1: asset ids must be nonempty and unique")
        dates, caps = [], []
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                _parse_date(row[0].strip())
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            for a, v in zip(ids, vals):
                if not (math.isfinite(v) and v > 0):
                    raise DataError(f"{path}:{lineno}: nonpositive capitalization {v} for asset {a!r}")
            dates.append(row[0].strip())
            caps.append(vals)
    if not dates:
        raise DataError(f"{path}: no data rows")
    return MarketPanel(dates, np.array(caps), ids)


def write_panel_csv(panel, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *panel.asset_ids])
        for d, row in zip(panel.dates, panel.caps):
            w.writerow([d, *(repr(float(v)) for v in row)])


def market_weights(caps_row, asset_ids=None):
    caps_row = np.asarray(caps_row, dtype=float)
    bad = np.flatnonzero(~(np.isfinite(caps_row) & (caps_row > 0)))
    if bad.size:
        i = bad[0]
        name = asset_ids[i] if asset_ids is not None else f"#{i}"
        raise DataError(f"capitalization of asset {name} is {caps_row[i]}, must be positive")
    return caps_row / caps_row.sum()


@dataclass
class RankedCurve:
    log_rank: np.ndarray
    log_weight: np.ndarray


def capital_distribution_curve(weights):
    w = np.sort(np.asarray(weights, dtype=float))[::-1]
    if (w <= 0).any():
        raise DataError("capital distribution curve needs strictly positive weights")
    return RankedCurve(np.log(np.arange(1, w.size + 1)), np.log(w))


def average_curve(weight_rows, mode="log"):
    """Rank-wise average of ranked curves over dates.

    ``mode="log"`` averages log-weights (geometric mean per rank); ``"weights"``
    averages the sorted weights themselves before taking logs.
    """
    if mode not in CURVE_MODES:
        raise ConfigError(f"unknown curve averaging mode {mode!r}; expected one of {CURVE_MODES}")
    w = np.sort(np.atleast_2d(np.asarray(weight_rows, dtype=float)), axis=1)[:, ::-1]
    if (w <= 0).any():
        raise DataError("capital distribution curve needs strictly positive weights")
    ranks = np.log(np.arange(1, w.shape[1] + 1))
    if mode == "log":
        return RankedCurve(ranks, np.log(w).mean(axis=0))
    return RankedCurve(ranks, np.log(w.mean(axis=0)))


def entropy(weights):
    """``-sum mu log mu`` along the last axis, with ``0 log 0 = 0``."""
    w = np.asarray(weights, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, w * np.log(w), 0.0)
    return -terms.sum(axis=-1)


def diversity(weights, p=DEFAULT_P):
    """``(sum mu^p)^(1/p)`` along the last axis."""
    if not 0 < p < 1:
        raise ConfigError(f"diversity exponent p must lie in (0, 1), got {p}")
    w = np.asarray(weights, dtype=float)
    return (w**p).sum(axis=-1) ** (1.0 / p)


def statistic_trajectories(caps, p=DEFAULT_P):
    """Entropy and diversity per row of a dates x assets (or ... x assets) array."""
    caps = np.asarray(caps, dtype=float)
    w = caps / caps.sum(axis=-1, keepdims=True)
    return entropy(w), diversity(w, p)


def synthetic_panel(params, seed, init, start_date="2000-01-03", asset_prefix="A", substeps=4):
    """Panel of one simulated replication, one business day per step of ``params``.

    The path is simulated with ``substeps`` steps per date and subsampled,
    which makes truncation at zero (not a valid capitalization) very unlikely.
    """
    if int(substeps) < 1:
        raise ConfigError(f"substeps must be >= 1, got {substeps}")
    fine = params.replace(n_steps=params.n_steps * int(substeps))
    res = simulate_replications(fine, seed, init, [0], keep_states=True)
    caps = res.states[0].T[::int(substeps)]
    if (caps <= 0).any():
        raise DataError("simulated panel hit zero; increase substeps")
    days = np.busday_offset(np.datetime64(start_date), np.arange(caps.shape[0]), roll="forward")
    ids = [f"{asset_prefix}{i:03d}" for i in range(caps.shape[1])]
    return MarketPanel([str(d) for d in days], caps, ids)


@dataclass
class CalibrationResult:
    best: tuple
    table: list = field(default_factory=list)  # dicts: alpha, beta, score, entropy_err, diversity_err
    skipped: list = field(default_factory=list)


def calibrate(panel, alpha_grid, beta_grid, template, seed, replications=8, p=DEFAULT_P, workers=1,
              substeps=1):
    """Grid search for (alpha, beta) matching entropy and diversity trajectories.

    Each admissible pair simulates ``replications`` particle systems started at
    the panel's first row, one step per panel date over ``template.horizon``.
    The score is the mean of the two time-averaged absolute deviations, each
    divided by the mean of the empirical trajectory. All pairs share the seed.
    ``substeps`` refines the simulation grid between consecutive dates.
    """
    if int(substeps) < 1:
        raise ConfigError(f"substeps must be >= 1, got {substeps}")
    substeps = int(substeps)
    alpha_grid = [float(a) for a in np.atleast_1d(alpha_grid)]
    beta_grid = [float(b) for b in np.atleast_1d(beta_grid)]
    if len(panel.dates) < 2:
        raise DataError("calibration needs at least two dates")
    n = panel.n_assets
    pairs, skipped = [], []
    for a in alpha_grid:
        for b in beta_grid:
            if b < a / 2 or a > n or a < 0:
                skipped.append((a, b))
                log.info("skipping inadmissible pair alpha=%g beta=%g", a, b)
            else:
                pairs.append((a, b))
    if not pairs:
        raise ConfigError("no admissible (alpha, beta) pair in the calibration grid")
    s_emp, d_emp = statistic_trajectories(panel.caps, p)
    init = panel.caps[0]
    base = template.replace(n_particles=n, n_steps=(len(panel.dates) - 1) * substeps, m_lambda=None)

    def score(pair):
        params = base.replace(alpha=pair[0], beta=pair[1])
        res = simulate_replications(params, seed, init, np.arange(replications), keep_states=True)
        s_sim, d_sim = statistic_trajectories(res.states[:, :, ::substeps].transpose(0, 2, 1), p)
        e_err = np.abs(s_sim.mean(axis=0) - s_emp).mean() / s_emp.mean()
        d_err = np.abs(d_sim.mean(axis=0) - d_emp).mean() / d_emp.mean()
        return {"alpha": pair[0], "beta": pair[1], "score": 0.5 * (e_err + d_err),
                "entropy_err": float(e_err), "diversity_err": float(d_err)}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            table = list(pool.map(score, pairs))
    else:
        table = [score(q) for q in pairs]
    best = min(table, key=lambda r: (r["score"], r["alpha"], r["beta"]))
    return CalibrationResult((best["alpha"], best["beta"]), table, skipped)
