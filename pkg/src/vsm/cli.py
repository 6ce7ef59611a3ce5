"""``vsm-sim``: one subcommand per mode, JSON config plus ``--set`` overrides.

Every run writes its data files and a ``manifest.json`` holding the fully
resolved configuration; ``vsm-sim <mode> --config manifest.json`` repeats it.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import io, market, noise, verify
from .errors import ConfigError, DataError, VsmError
from .grid import Grid1D, GridDensity
from .measure import EmpiricalMeasure, kde_density, kde_mass_below_zero, silverman_bandwidth
from .mkv import simulate_mkv, simulate_mkv_nocn
from .params import ModelParams
from .particle import sample_initial, simulate_particles, simulate_replications
from .spde import chi2_density, conditional_mean, grid_for_path, run_pde, run_spde

log = logging.getLogger("vsm")

MODES = ("particles", "mkv", "mkv-nocn", "spde", "pde", "market", "calibrate", "verify")

DEFAULTS = {
    "seed": 0,
    "workers": None,  # None: all available cores
    "model": {"alpha": 2.0, "beta": 1.0, "gamma": 1.0, "n_particles": 400, "horizon": 1.0,
              "n_steps": 270, "m_lambda": None, "relaxed": False},
    "init": {"dist": "chi2", "k": 3, "mu": 0.0, "sigma": 1.0, "value": 1.0},
    "io": {"out": "vsm-out", "panel": None},
    "particles": {"replications": 1, "scheme": "milstein", "binary": True, "curve_mode": "log",
                  "diversity_p": 0.5},
    "mkv": {"n_samples": 100_000, "scheme": "milstein", "save_every": 27, "binary": True,
            "kde_nodes": 1000},
    "spde": {"n_nodes": 1000, "x_max": None, "scheme": "cn", "clip": False, "save_every": 27,
             "left_bc": "natural", "moment_mode": "closed", "init_file": None},
    "market": {"curve_mode": "log", "diversity_p": 0.5},
    "calibrate": {"alpha_grid": [1.0, 2.0, 3.0], "beta_grid": [0.5, 1.0, 2.0], "replications": 8,
                  "substeps": 1, "diversity_p": 0.5},
    "verify": {"preset": "quick", "checks": None},
}


def _merge(base, over, path=""):
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {key!r} must be a mapping")
            _merge(base[k], v, key + ".")
        else:
            d = base[k]
            if d is not None and v is not None:
                ok = (isinstance(v, bool) if isinstance(d, bool)
                      else isinstance(v, (int, float)) and not isinstance(v, bool) if isinstance(d, (int, float))
                      else isinstance(v, type(d)))
                if not ok:
                    raise ConfigError(f"config key {key!r} expects {type(d).__name__}, got {v!r}")
            base[k] = v
    return base


def _parse_set(item):
    if "=" not in item:
        raise ConfigError(f"--set expects key.path=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    tree = cur = {}
    parts = key.split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = val
    return tree


def load_config(path=None, overrides=(), mode=None):
    """Defaults, then the JSON file (a config or a run manifest), then overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text()
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if "manifest_version" in data:
            if mode is not None and data.get("mode") != mode:
                raise ConfigError(f"{path}: manifest is for mode {data.get('mode')!r}, not {mode!r}")
            data = data["config"]
        _merge(cfg, data)
    for o in overrides:
        _merge(cfg, o)
    return cfg


def model_params(cfg, **changes):
    m = dict(cfg["model"])
    m.update(changes)
    return ModelParams(**m)


def _versions():
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


class Run:
    def __init__(self, mode, cfg):
        self.mode = mode
        self.cfg = cfg
        self.out = Path(cfg["io"]["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.results = {}

    def path(self, name):
        self.files.append(name)
        return self.out / name

    def manifest(self):
        doc = {"manifest_version": 1, "mode": self.mode, "config": self.cfg, "seed": self.cfg["seed"],
               "versions": _versions(), "outputs": sorted(self.files), "results": self.results}
        with io.atomic_open(self.out / "manifest.json") as fh:
            json.dump(verify._plain(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _init_vector(cfg, n, seed):
    spec = cfg["init"]
    dist = spec["dist"]
    if dist == "panel":
        panel = market.read_panel_csv(_panel_path(cfg))
        if panel.n_assets != n:
            raise ConfigError(f"panel has {panel.n_assets} assets but model.n_particles={n}")
        return panel.caps[0].copy()
    kw = {"chi2": {"k": spec["k"]}, "lognormal": {"mu": spec["mu"], "sigma": spec["sigma"]},
          "constant": {"value": spec["value"]}}.get(dist)
    if kw is None:
        raise ConfigError(f"init.dist must be chi2, lognormal, constant or panel, got {dist!r}")
    return sample_initial(dist, n, seed, **kw)


def _panel_path(cfg):
    p = cfg["io"]["panel"]
    if not p:
        raise ConfigError("io.panel (or --panel) is required for this mode")
    if not Path(p).is_file():
        raise DataError(f"panel file not found: {p}")
    return p


def _write_weight_outputs(run, times, caps, curve_mode, p):
    """Capital distribution curves and entropy/diversity trajectories of ``caps`` (time x assets)."""
    w = caps / caps.sum(axis=1, keepdims=True)
    pos = w[:, (w > 0).all(axis=0)]
    if pos.shape[1] < w.shape[1]:
        log.info("dropping %d assets with a zero weight from the curves", w.shape[1] - pos.shape[1])
    final = market.capital_distribution_curve(pos[-1])
    avg = market.average_curve(pos, curve_mode)
    io.write_columns(run.path("curve_final.csv"), ["log_rank", "log_weight"], [final.log_rank, final.log_weight])
    io.write_columns(run.path("curve_avg.csv"), ["log_rank", "log_weight"], [avg.log_rank, avg.log_weight])
    s, d = market.entropy(w), market.diversity(w, p)
    io.write_columns(run.path("statistics.csv"), ["t", "entropy", "diversity"], [times, s, d])


def cmd_particles(run):
    cfg = run.cfg
    params = model_params(cfg)
    c = cfg["particles"]
    seed = cfg["seed"]
    init = _init_vector(cfg, params.n_particles, seed)
    if c["replications"] == 1:
        plan = noise.make_noise_plan(seed, params.n_steps, params.dt, params.n_particles)
        ens = simulate_particles(params, plan, init, scheme=c["scheme"])
        states, times, clips = ens.states[None], ens.times, ens.clip_events
        io.write_path_csv(run.path("w0.csv"), times, noise.common_path(plan), "W0")
    else:
        res = simulate_replications(params, seed, init, np.arange(c["replications"]), scheme=c["scheme"],
                                    keep_states=True, workers=cfg["workers"])
        states, times, clips = res.states, res.times, res.clip_events
    io.write_ensemble_csv(run.path("ensemble.csv"), times, states)
    if c["binary"]:
        io.write_binary(run.path("ensemble.bin"), states)
    io.write_columns(run.path("total_mean.csv"), ["replication", "t", "Z"],
                     [np.repeat(np.arange(states.shape[0]), times.size), np.tile(times, states.shape[0]),
                      states.mean(axis=1).ravel()])
    _write_weight_outputs(run, times, states[0].T, c["curve_mode"], c["diversity_p"])
    run.results.update(clip_events=clips, final_mean=float(states[0, :, -1].mean()))


def _save_steps(n_steps, every):
    return np.unique(np.r_[np.arange(0, n_steps + 1, max(1, int(every))), n_steps])


def _mkv_outputs(run, mk, c):
    io.write_ensemble_csv(run.path("samples.csv"), mk.times, mk.samples)
    if c["binary"]:
        io.write_binary(run.path("samples.bin"), mk.samples)
    cm = mk.conditional_mean
    io.write_path_csv(run.path("V.csv"), cm.times, cm.values, "V")
    final = EmpiricalMeasure.from_samples(mk.samples[:, -1])
    io.write_measure_csv(run.path("measure_T.csv"), final)
    bw = silverman_bandwidth(final)
    grid = Grid1D(float(final.atoms[-1]) + 5 * bw, c["kde_nodes"])
    io.write_density_csv(run.path("kde_T.csv"), kde_density(final, bw, grid, mk.times[-1]))
    run.results.update(clip_events=mk.clip_events, kde_bandwidth=bw,
                       kde_mass_below_zero=kde_mass_below_zero(final, bw), final_mean=final.mean())


def _mkv_y0(cfg):
    spec = cfg["init"]
    if spec["dist"] == "constant":
        return spec["value"]
    if spec["dist"] == "chi2":
        return {"dist": "chi2", "k": spec["k"]}
    if spec["dist"] == "lognormal":
        return {"dist": "lognormal", "mu": spec["mu"], "sigma": spec["sigma"]}
    raise ConfigError(f"init.dist {spec['dist']!r} is not supported for McKean-Vlasov runs")


def cmd_mkv(run):
    cfg = run.cfg
    params = model_params(cfg)
    c = cfg["mkv"]
    plan = noise.make_noise_plan(cfg["seed"], params.n_steps, params.dt, 0)
    w0 = noise.common_path(plan)
    io.write_path_csv(run.path("w0.csv"), np.arange(w0.size) * params.dt, w0, "W0")
    mk = simulate_mkv(params, w0, c["n_samples"], cfg["seed"], y0=_mkv_y0(cfg), scheme=c["scheme"],
                      save_steps=_save_steps(params.n_steps, c["save_every"]))
    _mkv_outputs(run, mk, c)


def cmd_mkv_nocn(run):
    cfg = run.cfg
    params = model_params(cfg)
    c = cfg["mkv"]
    mk = simulate_mkv_nocn(params, c["n_samples"], cfg["seed"], y0=_mkv_y0(cfg), scheme=c["scheme"],
                           save_steps=_save_steps(params.n_steps, c["save_every"]))
    _mkv_outputs(run, mk, c)


def _spde_init(cfg, V):
    c = cfg["spde"]
    if c["init_file"]:
        cols = io.read_columns(c["init_file"])
        if "x" not in cols or "density" not in cols:
            raise DataError(f"{c['init_file']}: expected columns x,density")
        x = cols["x"]
        grid = Grid1D(float(x[-1]), x.size)
        if not np.allclose(x, grid.nodes, rtol=0, atol=1e-9 * grid.x_max):
            raise DataError(f"{c['init_file']}: x must be a uniform grid starting at 0")
        return GridDensity(grid, cols["density"])
    if cfg["init"]["dist"] != "chi2":
        raise ConfigError("spde runs start from init.dist = chi2 or spde.init_file")
    k = cfg["init"]["k"]
    if c["x_max"] is not None:
        grid = Grid1D(float(c["x_max"]), c["n_nodes"])
    else:
        grid = grid_for_path(k, V, n_nodes=c["n_nodes"])
    return chi2_density(k, grid)


def _cmd_spde(run, pde):
    cfg = run.cfg
    c = cfg["spde"]
    params = model_params(cfg)
    if pde:
        params = params.replace(gamma=0.0)
        w0 = np.zeros(params.n_steps + 1)
    else:
        w0 = noise.common_path(noise.make_noise_plan(cfg["seed"], params.n_steps, params.dt, 0))
        io.write_path_csv(run.path("w0.csv"), np.arange(w0.size) * params.dt, w0, "W0")
    m_guess = cfg["init"]["k"] if cfg["init"]["dist"] == "chi2" else 1.0
    init = _spde_init(cfg, conditional_mean(m_guess, params.beta, params.gamma, w0, params.dt))
    kw = dict(scheme=c["scheme"], clip=c["clip"], moment_mode=c["moment_mode"], save_every=c["save_every"],
              left_bc=c["left_bc"])
    res = run_pde(params, init, **kw) if pde else run_spde(params, w0, init, **kw)
    io.write_density_snapshots(run.path("densities.csv"), res.densities)
    io.write_path_csv(run.path("V.csv"), np.arange(res.V.size) * params.dt, res.V, "V")
    m = np.array([d.first_moment() for d in res])
    mass = np.array([d.mass() for d in res])
    io.write_columns(run.path("moments.csv"), ["t", "mass", "first_moment", "V"],
                     [[d.time for d in res], mass, m, res.V[res.steps]])
    run.results.update(clip_events=res.clip_events, x_max=init.grid.x_max, n_nodes=init.grid.n_nodes,
                       max_mass_drift=float(np.abs(mass - 1).max()),
                       max_moment_deviation=float(np.abs(m / res.V[res.steps] - 1).max()))


def cmd_spde(run):
    _cmd_spde(run, pde=False)


def cmd_pde(run):
    _cmd_spde(run, pde=True)


def cmd_market(run):
    cfg = run.cfg
    panel = market.read_panel_csv(_panel_path(cfg))
    c = cfg["market"]
    w = panel.weights()
    avg = market.average_curve(w, c["curve_mode"])
    io.write_columns(run.path("curve_avg.csv"), ["log_rank", "log_weight"], [avg.log_rank, avg.log_weight])
    s, d = market.entropy(w), market.diversity(w, c["diversity_p"])
    io.write_columns(run.path("statistics.csv"), ["date", "entropy", "diversity"],
                     [np.array(panel.dates), s, d])
    run.results.update(n_dates=len(panel.dates), n_assets=panel.n_assets)


def cmd_calibrate(run):
    cfg = run.cfg
    panel = market.read_panel_csv(_panel_path(cfg))
    c = cfg["calibrate"]
    res = market.calibrate(panel, c["alpha_grid"], c["beta_grid"], model_params(cfg, n_particles=panel.n_assets),
                           cfg["seed"], replications=c["replications"], p=c["diversity_p"],
                           workers=cfg["workers"], substeps=c["substeps"])
    t = res.table
    io.write_columns(run.path("scores.csv"), ["alpha", "beta", "score", "entropy_err", "diversity_err"],
                     [[r[k] for r in t] for k in ("alpha", "beta", "score", "entropy_err", "diversity_err")])
    run.results.update(best_alpha=res.best[0], best_beta=res.best[1], skipped=res.skipped)
    print(f"best (alpha, beta) = ({res.best[0]:g}, {res.best[1]:g})")


def cmd_verify(run):
    cfg = run.cfg
    c = cfg["verify"]
    m = cfg["model"]
    reports = verify.run_checks(c["preset"], cfg["seed"], c["checks"], alpha=m["alpha"], beta=m["beta"],
                                workers=cfg["workers"])
    with io.atomic_open(run.path("reports.jsonl")) as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")
    print(verify.format_table(reports))
    run.results["passed"] = all(r.passed for r in reports)
    return 0 if run.results["passed"] else 1


COMMANDS = {"particles": cmd_particles, "mkv": cmd_mkv, "mkv-nocn": cmd_mkv_nocn, "spde": cmd_spde,
            "pde": cmd_pde, "market": cmd_market, "calibrate": cmd_calibrate, "verify": cmd_verify}


def build_parser():
    ap = argparse.ArgumentParser(prog="vsm-sim", description=__doc__.splitlines()[0])
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", help="JSON config or a previous run's manifest.json")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key, e.g. model.alpha=2 (value parsed as JSON)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--panel", help="market panel CSV")
    ap.add_argument("--preset", choices=tuple(verify.PRESETS))
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {}
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.workers is not None:
        flags["workers"] = args.workers
    if args.out is not None:
        flags.setdefault("io", {})["out"] = args.out
    if args.panel is not None:
        flags.setdefault("io", {})["panel"] = args.panel
    if args.preset is not None:
        flags["verify"] = {"preset": args.preset}
    try:
        cfg = load_config(args.config, [_parse_set(s) for s in args.set] + [flags], mode=args.mode)
        if cfg["workers"] is None:
            cfg["workers"] = os.cpu_count() or 1
        if cfg["workers"] < 1:
            raise ConfigError("workers must be >= 1")
        model_params(cfg)  # validate before any computation
        run = Run(args.mode, cfg)
        status = COMMANDS[args.mode](run) or 0
        run.manifest()
    except VsmError as exc:
        print(f"vsm-sim: error: {exc}", file=sys.stderr)
        return 2
    return status


if __name__ == "__main__":
    sys.exit(main())
