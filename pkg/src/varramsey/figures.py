"""Deterministic dataset bundles for the standard result figures.

Each bundle is a directory of per-curve CSV files, a ``README.md``
describing them, a ``manifest.json`` holding the resolved configuration,
its hash and the SHA-256 of every data file, and a ``timing.json`` with the
wall time (kept out of the manifest so reruns are byte-identical).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .clock.analytic import (LaserNoiseSpec, css_ctl, css_sigma, ctl_oqc, d_min, ghz_sigma,
                             hl_sigma, minimize_asymptotic, oqc_scaling, pi_hl_sigma, sql_sigma)
from .clock.servo import ClockRunConfig, run_servo_batch
from .estimation import PriorSpec, css_bmse, ghz_effective_variance, pi_hl_variance
from .finite_range import FiniteRangeObjective, LatticeGeometry
from .optimizer import OptimizationProblem, optimize
from .poi import performance_ratio, poi_optimize
from .sweeps import clock_curve, clock_optimum, curve_table, optimize_family, symmetric_factory

SCHEMA_VERSION = 1

# ---------------------------------------------------------------------------
# atomic, deterministic output
# ---------------------------------------------------------------------------


def atomic_write(path, data: str | bytes) -> None:
    """Write via a temporary file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if isinstance(v, (str, bool)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def csv_text(columns: dict, config_hash: str) -> str:
    """CSV with the given columns plus a trailing ``config_hash`` column."""
    names = list(columns)
    arrays = [np.atleast_1d(np.asarray(columns[n])) for n in names]
    n = max((a.size for a in arrays), default=0)
    lines = [",".join(names + ["config_hash"])]
    for i in range(n):
        lines.append(",".join([_fmt(a[i]) for a in arrays] + [config_hash]))
    return "\n".join(lines) + "\n"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# figure builders: config -> (tables, readme lines)
# ---------------------------------------------------------------------------

def _tpl_name(t) -> str:
    return f"{t[0]}_{t[1]}"


def _fig2(cfg, seed, threads):
    N = cfg["N"]
    deltas = np.array(cfg["deltas"])
    res = optimize_family(symmetric_factory(N), cfg["templates"], deltas, cfg["n_starts"],
                          seed, threads)
    tables, notes = {}, []
    for t, rs in res.items():
        ct = curve_table(rs)
        name = f"template_{_tpl_name(t)}.csv"
        tables[name] = {"delta_phi": ct["delta_phi"], "ratio": ct["ratio"], "bmse": ct["bmse"]}
        notes.append(f"{name}: optimized posterior/prior width for circuit {tuple(t)}, N={N}")
    css = np.sqrt([css_bmse(N, d) for d in deltas])
    tables["css_analytic.csv"] = {"delta_phi": deltas, "ratio": css / deltas}
    notes.append("css_analytic.csv: closed-form uncorrelated Ramsey protocol")
    return tables, notes


def _fig5(cfg, seed, threads):
    N = cfg["N"]
    deltas = np.array(cfg["deltas"])
    res = optimize_family(symmetric_factory(N), [tuple(cfg["template"])], deltas,
                          cfg["n_starts"], seed, threads)
    var = curve_table(res[tuple(cfg["template"])])["ratio"]
    poi = np.array([np.sqrt(poi_optimize(N, PriorSpec(d)).bmse) / d for d in deltas])
    tables = {
        "variational.csv": {"delta_phi": deltas, "ratio": var},
        "phase_operator.csv": {"delta_phi": deltas, "ratio": poi},
        "ratio.csv": {"chi": [performance_ratio(var, poi)]},
    }
    notes = [f"variational.csv: optimized circuit {tuple(cfg['template'])}, N={N}",
             "phase_operator.csv: phase-operator measurement with optimized input state",
             "ratio.csv: min(variational) / min(phase operator)"]
    return tables, notes


def _fig6(cfg, seed, threads):
    tables, notes = {}, []
    deltas = np.array(cfg["deltas"])
    for N in cfg["Ns"]:
        res = optimize_family(symmetric_factory(N), [tuple(cfg["template"])], deltas,
                              cfg["n_starts"], seed, threads)
        ct = curve_table(res[tuple(cfg["template"])])
        tables[f"variational_N{N}.csv"] = {"delta_phi": deltas, "NdphiM": N * ct["eff_meas_sd"]}
        ghz = [N * np.sqrt(ghz_effective_variance(N, d)) for d in deltas]
        pihl = [N * np.sqrt(pi_hl_variance(N, d)) for d in deltas]
        tables[f"ghz_N{N}.csv"] = {"delta_phi": deltas, "NdphiM": ghz}
        tables[f"pi_hl_N{N}.csv"] = {"delta_phi": deltas, "NdphiM": pihl}
        notes += [f"variational_N{N}.csv: N * effective measurement sd, circuit "
                  f"{tuple(cfg['template'])}",
                  f"ghz_N{N}.csv: GHZ closed form", f"pi_hl_N{N}.csv: pi-corrected limit with slips"]
    return tables, notes


def _fig7(cfg, seed, threads):
    N = cfg["N"]
    deltas = np.array(cfg["deltas"])
    tables, notes = {}, []
    for r in cfg["ratios"]:
        res = optimize_family(symmetric_factory(N, lambda d, r=r: r * d), cfg["templates"],
                              deltas, cfg["n_starts"], seed, threads)
        for t, rs in res.items():
            name = f"gamma{r:g}_template_{_tpl_name(t)}.csv"
            tables[name] = {"delta_phi": deltas, "ratio": curve_table(rs)["ratio"]}
            notes.append(f"{name}: dephasing gammaT = {r:g} * delta_phi, circuit {tuple(t)}")
    return tables, notes


def _fig8(cfg, seed, threads):
    N = cfg["N"]
    spec = LaserNoiseSpec.from_bandwidth(2, 1.0)
    bT = np.array(cfg["bT"])
    curves = {"css": css_sigma, "ghz": ghz_sigma, "sql": sql_sigma, "hl": hl_sigma,
              "pi_hl": pi_hl_sigma}
    tables = {f"{k}.csv": {"bT": bT, "sigma": [f(N, spec, x) for x in bT]}
              for k, f in curves.items()}
    tables["ctl_css.csv"] = {"bT": bT, "sigma": [css_ctl(spec, x) for x in bT]}
    tables["ctl_oqc.csv"] = {"bT": bT, "sigma": [ctl_oqc(spec, x) for x in bT]}
    notes = [f"{k}.csv: analytic instability, N={N}, flicker laser" for k in curves]
    notes += ["ctl_css.csv: coherence-time limit of the uncorrelated clock",
              "ctl_oqc.csv: phase-slip limit of the optimal clock"]
    sim = cfg.get("servo")
    if sim:
        rows = {"bT": [], "sigma_fit": [], "sigma_pred": [], "fringe_hops": []}
        for x in sim["bT"]:
            runs = run_servo_batch(ClockRunConfig(sim["N"], x, spec, n_cycles=sim["n_cycles"],
                                                  seed=seed), range(seed, seed + sim["runs"]),
                                   threads)
            rows["bT"].append(x)
            rows["sigma_fit"].append(float(np.mean([r.sigma_fit for r in runs])))
            rows["sigma_pred"].append(css_sigma(sim["N"], spec, x))
            rows["fringe_hops"].append(int(sum(r.fringe_hops for r in runs)))
        tables["servo_css.csv"] = rows
        notes.append(f"servo_css.csv: closed-loop simulation, uncorrelated protocol, N={sim['N']}")
    return tables, notes


def _fig9(cfg, seed, threads):
    g = cfg["lattice"]
    tables, notes = {}, []
    for Rc in cfg["Rc_sweep_a"]:
        geo = LatticeGeometry.square(g[0], g[1], Rc)
        res = optimize_family(lambda a, b, d: FiniteRangeObjective(geo, a, b, PriorSpec(d)),
                              cfg["templates"], cfg["deltas"], cfg["n_starts"], seed, threads)
        for t, rs in res.items():
            name = f"Rc{Rc:g}_template_{_tpl_name(t)}.csv"
            tables[name] = {"delta_phi": cfg["deltas"], "ratio": curve_table(rs)["ratio"]}
            notes.append(f"{name}: {g[0]}x{g[1]} lattice, Rc/a = {Rc:g}, circuit {tuple(t)}")
    rows = {"Rc": []}
    for t in cfg["templates"]:
        rows[f"ratio_{_tpl_name(t)}"] = []
    for Rc in cfg["Rc_sweep_b"]:
        geo = LatticeGeometry.square(g[0], g[1], Rc)
        res = optimize_family(lambda a, b, d: FiniteRangeObjective(geo, a, b, PriorSpec(d)),
                              cfg["templates"], [cfg["delta_b"]], cfg["n_starts"], seed, threads)
        rows["Rc"].append(Rc)
        for t, rs in res.items():
            rows[f"ratio_{_tpl_name(t)}"].append(curve_table(rs)["ratio"][0])
    tables["range_sweep.csv"] = rows
    notes.append(f"range_sweep.csv: optimized ratio vs Rc/a at delta_phi = {cfg['delta_b']}")
    return tables, notes


def _clock_optima(cfg, seed, threads):
    deltas = np.array(cfg["bT"])   # alpha = 2: prior width equals b T
    out = {}
    for N in cfg["Ns"]:
        res = optimize_family(symmetric_factory(N), cfg["templates"], deltas, cfg["n_starts"],
                              seed, threads)
        out[N] = {tuple(t): clock_optimum(rs) for t, rs in res.items()}
    return out


def _fig10(cfg, seed, threads):
    opt = _clock_optima(cfg, seed, threads)
    spec = LaserNoiseSpec.from_bandwidth(2, 1.0)
    Ns = list(cfg["Ns"])
    tables, notes = {}, []
    for t in cfg["templates"]:
        name = f"template_{_tpl_name(t)}.csv"
        tables[name] = {"N": Ns, "bT_opt": [opt[N][tuple(t)][0] for N in Ns],
                        "sigma_opt": [opt[N][tuple(t)][1] for N in Ns]}
        notes.append(f"{name}: minimum instability over b T, circuit {tuple(t)}")
    grid = np.array(cfg["bT"])
    tables["css_analytic.csv"] = {"N": Ns, "sigma_opt": [min(css_sigma(N, spec, x) for x in grid)
                                                        for N in Ns]}
    big = np.array(cfg["asymptote_Ns"], dtype=float)
    tables["asymptote.csv"] = {"N": big,
                               "sigma_direct": [minimize_asymptotic(n, 2)[1] for n in big],
                               "sigma_closed_form": [oqc_scaling(n, 2).closed_form_sigma
                                                     for n in big]}
    notes += ["css_analytic.csv: uncorrelated clock on the same b T grid",
              "asymptote.csv: pi-corrected limit plus phase slips, direct and closed form"]
    return tables, notes


def _fig12(cfg, seed, threads):
    opt = _clock_optima(cfg, seed, threads)
    Ns = list(cfg["Ns"])
    tables, notes = {}, []
    for t in cfg["templates"]:
        R = [1 - d_min(*opt[N][tuple(t)]) for N in Ns]
        name = f"template_{_tpl_name(t)}.csv"
        tables[name] = {"N": Ns, "R_max": R}
        notes.append(f"{name}: largest dead-time fraction not dominated by the Dick effect")
    return tables, notes


FIGURES = {
    "fig2": (_fig2, {"N": 16, "templates": [[0, 0], [1, 0], [1, 1], [1, 3], [2, 5]],
                     "deltas": [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2],
                     "n_starts": 16}),
    "fig5": (_fig5, {"N": 16, "template": [1, 3], "deltas": [0.3, 0.5, 0.7, 0.9, 1.1],
                     "n_starts": 16}),
    "fig6": (_fig6, {"Ns": [8, 16], "template": [2, 5], "deltas": [0.2, 0.35, 0.5, 0.65, 0.8],
                     "n_starts": 16}),
    "fig7": (_fig7, {"N": 16, "templates": [[0, 0], [1, 0], [1, 3]], "ratios": [0.01, 0.1, 1, 10],
                     "deltas": [0.5, 0.7, 0.9], "n_starts": 4}),
    "fig8": (_fig8, {"N": 64, "bT": np.round(np.logspace(-3, 0.3, 34), 6).tolist(),
                     "servo": {"N": 8, "bT": [0.1, 0.3], "n_cycles": 20000, "runs": 2}}),
    "fig9": (_fig9, {"lattice": [3, 3], "templates": [[0, 0], [1, 1]], "Rc_sweep_a": [1, 2],
                     "deltas": [0.5, 0.8, 1.1], "Rc_sweep_b": [1, 2, 4, 8], "delta_b": 0.8,
                     "n_starts": 4}),
    "fig10": (_fig10, {"Ns": [2, 4, 8, 16], "templates": [[0, 0], [1, 0], [1, 3]],
                       "bT": [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
                       "asymptote_Ns": [1e2, 1e3, 1e4, 1e5, 1e6], "n_starts": 16}),
    "fig12": (_fig12, {"Ns": [2, 4, 8, 16], "templates": [[0, 0], [1, 3]],
                       "bT": [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], "n_starts": 16}),
}


def resolve_config(name: str, overrides: dict | None = None, seed: int = 0) -> dict:
    if name not in FIGURES:
        raise ValueError(f"unsupported figure {name!r}; choose from {sorted(FIGURES)}")
    params = json.loads(json.dumps(FIGURES[name][1]))
    unknown = set(overrides or {}) - set(params)
    if unknown:
        raise ValueError(f"unknown overrides for {name}: {sorted(unknown)}")
    for key, value in (overrides or {}).items():
        if isinstance(params[key], list) and (not isinstance(value, list) or not value):
            raise ValueError(f"override {key!r} must be a non-empty list")
    params.update(overrides or {})
    return {"schema_version": SCHEMA_VERSION, "figure": name, "seed": int(seed),
            "version": __version__, "params": params}


def reproduce_figure(name: str, out_dir, seed: int = 0, overrides: dict | None = None,
                     threads: int = 1) -> Path:
    """Compute a figure's datasets and write the bundle to ``out_dir/name``."""
    config = resolve_config(name, overrides, seed)
    builder = FIGURES[name][0]
    start = time.perf_counter()
    tables, notes = builder(config["params"], config["seed"], threads)
    elapsed = time.perf_counter() - start
    h = config_hash(config)
    out = Path(out_dir) / name
    files = {}
    for fname in sorted(tables):
        atomic_write(out / fname, csv_text(tables[fname], h))
        files[fname] = sha256_file(out / fname)
    readme = [f"# {name} dataset bundle", "",
              f"Generated by varramsey {__version__} with seed {config['seed']}.", "",
              *[f"- {line}" for line in notes], ""]
    atomic_write(out / "README.md", "\n".join(readme))
    files["README.md"] = sha256_file(out / "README.md")
    manifest = {"config": config, "config_hash": h, "files": files}
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    atomic_write(out / "timing.json", json.dumps({"wall_time_s": elapsed}) + "\n")
    return out


def regenerate(manifest_path, out_dir, threads: int = 1) -> Path:
    """Rebuild a bundle from the configuration recorded in its manifest."""
    manifest = json.loads(Path(manifest_path).read_text())
    cfg = manifest["config"]
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported manifest schema {cfg.get('schema_version')!r}")
    return reproduce_figure(cfg["figure"], out_dir, cfg["seed"], cfg["params"], threads)
