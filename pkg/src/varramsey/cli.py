"""Command-line front end.

``varramsey --config run.json --out results/`` runs one experiment described
by a JSON configuration; ``varramsey --figure fig6 --out bundles/`` writes a
figure dataset bundle.  Every run validates its whole configuration before
computing anything, keeps all results in memory until the computation has
finished and then writes each file atomically, so a failed run leaves no
partial output.  Failures print a one-line JSON error object and exit with
a nonzero status.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .circuits import CircuitParams, css_params, entangle, ghz_params
from .clock.analytic import (LaserNoiseSpec, css_ctl, css_sigma, ctl_oqc, ghz_sigma, hl_sigma,
                             pi_hl_sigma, sql_sigma)
from .clock.servo import NAMED_PROTOCOLS, ClockRunConfig, run_servo_batch
from .estimation import (PriorSpec, average_fisher, circuit_cost, effective_measurement_variance,
                         van_trees_bound)
from .figures import FIGURES, atomic_write, config_hash, csv_text, reproduce_figure, sha256_file
from .finite_range import FiniteRangeObjective, LatticeGeometry
from .optimizer import OptimizationProblem, optimize
from .poi import poi_optimize
from .spin import build_operators, wigner
from .sweeps import curve_table, optimize_family, symmetric_factory

SCHEMA_VERSION = 1
MODES = ("optimize", "sweep", "clock", "wigner", "bounds", "poi")
MAX_SYMMETRIC_N = 512
EXIT_INVALID = 2
EXIT_FAILED = 3


class ConfigError(ValueError):
    """Configuration rejected before any computation."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _require(cfg: dict, key: str, mode: str):
    if key not in cfg:
        raise ConfigError(f"mode {mode!r} requires field {key!r}")
    return cfg[key]


def _positive_int(value, name: str, upper: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    if upper is not None and value > upper:
        raise ConfigError(f"{name} = {value} exceeds the supported maximum {upper}")
    return value


def _template(value, name: str = "template") -> tuple[int, int]:
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or any(isinstance(v, bool) or not isinstance(v, int) or v < 0 for v in value)):
        raise ConfigError(f"{name} must be a pair of non-negative integers, got {value!r}")
    return int(value[0]), int(value[1])


def _grid(value, name: str) -> list[float]:
    if not isinstance(value, (list, tuple)) or len(value) == 0:
        raise ConfigError(f"{name} must be a non-empty list of numbers")
    try:
        out = [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must contain only numbers") from None
    if not all(np.isfinite(v) and v > 0 for v in out):
        raise ConfigError(f"{name} entries must be finite and positive")
    return out


def _positive_float(value, name: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not (np.isfinite(v) and v > 0):
        raise ConfigError(f"{name} must be finite and positive, got {value!r}")
    return v


@dataclass
class ExperimentConfig:
    """Validated, schema-versioned experiment description.

    Mode-specific fields:

    * ``optimize``: ``N``, ``template``, ``delta_phi``; optional
      ``n_starts``, ``theta_max``, ``noise.gammaT``, ``geometry``.
    * ``sweep``: ``N``, ``templates``, ``deltas``; optional ``n_starts``,
      ``noise.gammaT`` or ``noise.gammaT_ratio``, ``geometry``.
    * ``clock``: ``N``, ``bT``; optional ``noise.alpha`` (default 2) and a
      ``servo`` block ``{"bT", "n_cycles", "runs", "protocol"}``.
    * ``wigner``: ``N``, ``state`` (``"css"``, ``"ghz"`` or circuit
      parameters); optional ``grid`` ``[n_theta, n_phi]``.
    * ``bounds``: ``N``, ``deltas``, ``state`` as for ``wigner``.
    * ``poi``: ``N``, ``deltas``.

    With ``geometry`` present ``N`` is taken from the lattice.
    """

    mode: str
    raw: dict
    N: int = 0
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        version = raw.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
        mode = raw.get("mode")
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {list(MODES)}, got {mode!r}")
        cfg = cls(mode, raw)
        getattr(cfg, f"_validate_{mode}")()
        return cfg

    # -- shared pieces -------------------------------------------------------

    def _size(self, cap: int = MAX_SYMMETRIC_N):
        if "geometry" in self.raw:
            try:
                geo = LatticeGeometry.from_dict(self.raw["geometry"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"invalid geometry: {exc}") from None
            self.extras["geometry"] = geo
            self.N = geo.N
            if "N" in self.raw and self.raw["N"] != geo.N:
                raise ConfigError(f"N = {self.raw['N']} disagrees with the lattice size {geo.N}")
        else:
            self.N = _positive_int(_require(self.raw, "N", self.mode), "N", cap)

    def _noise_gamma(self):
        noise = self.raw.get("noise", {})
        if not isinstance(noise, dict):
            raise ConfigError("noise must be an object")
        g = noise.get("gammaT", 0.0)
        r = noise.get("gammaT_ratio")
        if r is not None and g:
            raise ConfigError("give either noise.gammaT or noise.gammaT_ratio, not both")
        if r is not None:
            self.extras["gamma"] = lambda d, r=_positive_float(r, "noise.gammaT_ratio"): r * d
        else:
            try:
                g = float(g)
            except (TypeError, ValueError):
                raise ConfigError("noise.gammaT must be a number") from None
            if not (np.isfinite(g) and g >= 0):
                raise ConfigError("noise.gammaT must be finite and non-negative")
            self.extras["gamma"] = g
        if "geometry" in self.raw and (r is not None or g):
            raise ConfigError("dephasing is not modelled for finite-range geometries")

    def _n_starts(self):
        n = self.raw.get("n_starts")
        self.extras["n_starts"] = None if n is None else _positive_int(n, "n_starts")

    def _state(self):
        state = _require(self.raw, "state", self.mode)
        if state == "css":
            p = css_params()
        elif state == "ghz":
            p = ghz_params(self.N)
        elif isinstance(state, dict):
            try:
                p = CircuitParams.from_dict(state)
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"invalid circuit parameters: {exc}") from None
        else:
            raise ConfigError("state must be 'css', 'ghz' or a circuit-parameter object")
        self.extras["params"] = p

    # -- per mode --------------------------------------------------------------

    def _validate_optimize(self):
        self._size()
        self.extras["template"] = _template(_require(self.raw, "template", self.mode))
        self.extras["delta_phi"] = _positive_float(_require(self.raw, "delta_phi", self.mode),
                                                   "delta_phi")
        self._noise_gamma()
        self._n_starts()
        tm = self.raw.get("theta_max")
        self.extras["theta_max"] = None if tm is None else _positive_float(tm, "theta_max")

    def _validate_sweep(self):
        self._size()
        tpls = _require(self.raw, "templates", self.mode)
        if not isinstance(tpls, list) or not tpls:
            raise ConfigError("templates must be a non-empty list")
        self.extras["templates"] = [_template(t, "templates entry") for t in tpls]
        self.extras["deltas"] = _grid(_require(self.raw, "deltas", self.mode), "deltas")
        self._noise_gamma()
        self._n_starts()

    def _validate_clock(self):
        self._size()
        self.extras["bT"] = _grid(_require(self.raw, "bT", self.mode), "bT")
        alpha = self.raw.get("noise", {}).get("alpha", 2)
        if alpha not in (1, 2, 3):
            raise ConfigError(f"noise.alpha must be 1, 2 or 3, got {alpha!r}")
        self.extras["alpha"] = alpha
        servo = self.raw.get("servo")
        if servo is not None:
            if not isinstance(servo, dict):
                raise ConfigError("servo must be an object")
            proto = servo.get("protocol", "css")
            if proto not in NAMED_PROTOCOLS:
                raise ConfigError(f"servo.protocol must be one of {list(NAMED_PROTOCOLS)}")
            self.extras["servo"] = {
                "bT": _grid(_require(servo, "bT", "clock servo"), "servo.bT"),
                "n_cycles": _positive_int(servo.get("n_cycles", 100_000), "servo.n_cycles"),
                "runs": _positive_int(servo.get("runs", 8), "servo.runs"),
                "protocol": proto}

    def _validate_wigner(self):
        self._size(cap=128)
        self._state()
        grid = self.raw.get("grid", [64, 128])
        if not isinstance(grid, list) or len(grid) != 2:
            raise ConfigError("grid must be [n_theta, n_phi]")
        self.extras["grid"] = (_positive_int(grid[0], "grid[0]"), _positive_int(grid[1], "grid[1]"))
        if self.extras["grid"][1] < 2 * self.N + 1:
            raise ConfigError(f"grid[1] must be at least 2N+1 = {2 * self.N + 1}")

    def _validate_bounds(self):
        self._size()
        self._state()
        self.extras["deltas"] = _grid(_require(self.raw, "deltas", self.mode), "deltas")

    def _validate_poi(self):
        self._size()
        self.extras["deltas"] = _grid(_require(self.raw, "deltas", self.mode), "deltas")


# ---------------------------------------------------------------------------
# computation: each mode returns {file name: CSV columns or JSON object}
# ---------------------------------------------------------------------------

def _objective_factory(cfg: ExperimentConfig):
    geo = cfg.extras.get("geometry")
    if geo is not None:
        return lambda a, b, d: FiniteRangeObjective(geo, a, b, PriorSpec(d))
    return symmetric_factory(cfg.N, cfg.extras["gamma"])


def _run_optimize(cfg: ExperimentConfig, seed: int, threads: int) -> dict:
    tpl, d = cfg.extras["template"], cfg.extras["delta_phi"]
    problem = OptimizationProblem(_objective_factory(cfg)(*tpl, d),
                                  theta_max=cfg.extras["theta_max"])
    res = optimize(problem, cfg.extras["n_starts"], seed, threads=threads)
    trace = np.array(res.trace, dtype=float).reshape(-1, 3)
    summary = res.to_dict()
    summary.update(posterior_over_prior=res.posterior_over_prior,
                   effective_measurement_sd=float(np.sqrt(
                       effective_measurement_variance(res.best_cost, d))))
    return {"result.json": summary,
            "trace.csv": {"restart": trace[:, 0].astype(int), "iteration": trace[:, 1].astype(int),
                          "cost": trace[:, 2]}}


def _run_sweep(cfg: ExperimentConfig, seed: int, threads: int) -> dict:
    res = optimize_family(_objective_factory(cfg), cfg.extras["templates"], cfg.extras["deltas"],
                          cfg.extras["n_starts"], seed, threads)
    out = {}
    for t, rs in res.items():
        out[f"template_{t[0]}_{t[1]}.csv"] = curve_table(rs)
        out[f"template_{t[0]}_{t[1]}_params.json"] = [r.to_dict() for r in rs]
    return out


def _run_clock(cfg: ExperimentConfig, seed: int, threads: int) -> dict:
    N, alpha = cfg.N, cfg.extras["alpha"]
    spec = LaserNoiseSpec.from_bandwidth(alpha, 1.0)
    bT = np.array(cfg.extras["bT"])
    curves = {"css": css_sigma, "ghz": ghz_sigma, "sql": sql_sigma, "hl": hl_sigma,
              "pi_hl": pi_hl_sigma}
    cols = {"bT": bT}
    for k, f in curves.items():
        cols[k] = [f(N, spec, x) for x in bT]
    cols["ctl_css"] = [css_ctl(spec, x) for x in bT]
    cols["ctl_oqc"] = [ctl_oqc(spec, x) for x in bT]
    out = {"analytic.csv": cols}
    servo = cfg.extras.get("servo")
    if servo:
        rows = {"bT": [], "sigma_fit_mean": [], "sigma_fit_sd": [], "fringe_hops": []}
        for x in servo["bT"]:
            runs = run_servo_batch(
                ClockRunConfig(N, x, spec, n_cycles=servo["n_cycles"], seed=seed,
                               protocol=servo["protocol"]),
                range(seed, seed + servo["runs"]), threads)
            fits = np.array([r.sigma_fit for r in runs])
            rows["bT"].append(x)
            rows["sigma_fit_mean"].append(float(fits.mean()))
            rows["sigma_fit_sd"].append(float(fits.std(ddof=1)) if fits.size > 1 else 0.0)
            rows["fringe_hops"].append(int(sum(r.fringe_hops for r in runs)))
        out["servo.csv"] = rows
    return out


def _circuit_state(cfg: ExperimentConfig):
    table = build_operators(cfg.N)
    return table, entangle(table, cfg.extras["params"])


def _run_wigner(cfg: ExperimentConfig, seed: int, threads: int) -> dict:
    _, psi = _circuit_state(cfg)
    w = wigner(np.outer(psi, psi.conj()), cfg.extras["grid"])
    tt, pp = np.meshgrid(w.theta, w.phi, indexing="ij")
    return {"wigner.csv": {"theta": tt.ravel(), "phi": pp.ravel(), "value": w.values.ravel()},
            "summary.json": {"N": cfg.N, "grid": list(cfg.extras["grid"]),
                             "normalization": w.integrate()}}


def _run_bounds(cfg: ExperimentConfig, seed: int, threads: int) -> dict:
    table = build_operators(cfg.N)
    params = cfg.extras["params"]
    cols = {k: [] for k in ("delta_phi", "bmse", "van_trees", "effective_measurement_sd",
                            "heisenberg_sd")}
    for d in cfg.extras["deltas"]:
        prior = PriorSpec(d)
        c = circuit_cost(table, params, prior).bmse
        cols["delta_phi"].append(d)
        cols["bmse"].append(c)
        cols["van_trees"].append(van_trees_bound(average_fisher(table, params, prior), prior))
        cols["effective_measurement_sd"].append(float(np.sqrt(effective_measurement_variance(c, d))))
        cols["heisenberg_sd"].append(1.0 / cfg.N)
    return {"bounds.csv": cols}


def _run_poi(cfg: ExperimentConfig, seed: int, threads: int) -> dict:
    cols = {"delta_phi": [], "bmse": [], "ratio": [], "iterations": [], "converged": []}
    for d in cfg.extras["deltas"]:
        r = poi_optimize(cfg.N, PriorSpec(d))
        cols["delta_phi"].append(d)
        cols["bmse"].append(r.bmse)
        cols["ratio"].append(r.posterior_over_prior)
        cols["iterations"].append(len(r.history))
        cols["converged"].append(str(r.converged).lower())
    return {"poi.csv": cols}


RUNNERS = {"optimize": _run_optimize, "sweep": _run_sweep, "clock": _run_clock,
           "wigner": _run_wigner, "bounds": _run_bounds, "poi": _run_poi}


def run(raw_config: dict, out_dir, seed: int = 0, threads: int = 1) -> Path:
    """Validate, compute and persist one experiment; returns the output directory."""
    cfg = ExperimentConfig.from_dict(raw_config)
    start = time.perf_counter()
    products = RUNNERS[cfg.mode](cfg, seed, threads)
    elapsed = time.perf_counter() - start
    record = {"config": raw_config, "seed": int(seed), "version": __version__}
    h = config_hash(record)
    out = Path(out_dir)
    files = {}
    for name in sorted(products):
        body = products[name]
        text = (csv_text(body, h) if name.endswith(".csv")
                else json.dumps(body, indent=2, sort_keys=True) + "\n")
        atomic_write(out / name, text)
        files[name] = sha256_file(out / name)
    manifest = {**record, "config_hash": h, "files": files, "wall_time_s": elapsed}
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _threads(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varramsey", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="experiment JSON (or figure overrides with --figure)")
    p.add_argument("--seed", type=_seed, default=0, help="64-bit master seed (default 0)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--threads", type=_threads, default=1, help="worker threads (default 1)")
    p.add_argument("--figure", choices=sorted(FIGURES), help="write a figure dataset bundle")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = json.loads(args.config.read_text()) if args.config else None
    except (OSError, json.JSONDecodeError) as exc:
        return _fail("config_unreadable", str(exc), EXIT_INVALID)
    try:
        if args.figure:
            if raw is not None and not isinstance(raw, dict):
                raise ConfigError("figure overrides must be a JSON object")
            out = reproduce_figure(args.figure, args.out, args.seed, raw, args.threads)
        else:
            if raw is None:
                raise ConfigError("either --config or --figure is required")
            out = run(raw, args.out, args.seed, args.threads)
    except ValueError as exc:
        return _fail("invalid_config", str(exc), EXIT_INVALID)
    except (RuntimeError, ArithmeticError, MemoryError) as exc:
        return _fail("computation_failed", str(exc), EXIT_FAILED)
    print(json.dumps({"status": "ok", "output": str(out)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
