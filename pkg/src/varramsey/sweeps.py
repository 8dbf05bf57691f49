"""Optimized cost curves over a grid of prior widths."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .decoherence import DephasedObjective
from .estimation import PriorSpec, effective_measurement_variance
from .optimizer import OptimizationResult, SymmetricObjective, optimize_hierarchy
from .spin import build_operators


def symmetric_factory(N: int, gammaT: float | Callable[[float], float] = 0.0):
    """Objective factory ``(n_en, n_de, delta_phi) -> objective`` on the symmetric space.

    ``gammaT`` may be a number or a function of the prior width; any
    non-zero exposure switches to the dephased objective.
    """
    table = build_operators(N)

    def make(n_en: int, n_de: int, delta_phi: float):
        g = gammaT(delta_phi) if callable(gammaT) else gammaT
        prior = PriorSpec(delta_phi)
        if g > 0:
            return DephasedObjective(table, n_en, n_de, prior, g)
        return SymmetricObjective(table, n_en, n_de, prior)

    return make


def optimize_family(make_objective, templates, deltas, n_starts: int | None = None,
                    seed: int = 0, threads: int = 1, theta_max: float | None = None,
                    ) -> dict[tuple[int, int], list[OptimizationResult]]:
    """Optimize every template at every prior width.

    Widths are visited in the given order and each optimum seeds the same
    template at the next width; within one width shallower templates seed
    deeper ones.
    """
    templates = [tuple(t) for t in templates]
    out: dict[tuple[int, int], list[OptimizationResult]] = {t: [] for t in templates}
    for d in deltas:
        warm = {t: [out[t][-1].best_params.angles()] for t in templates if out[t]}
        res = optimize_hierarchy(lambda a, b: make_objective(a, b, float(d)), templates,
                                 n_starts, seed, threads, theta_max, warm)
        for t in templates:
            out[t].append(res[t])
    return out


def curve_table(results: list[OptimizationResult]) -> dict[str, np.ndarray]:
    """Columns ``delta_phi, bmse, ratio, eff_meas_sd`` of one template's curve."""
    d = np.array([r.delta_phi for r in results])
    c = np.array([r.best_cost for r in results])
    meas = np.array([np.sqrt(effective_measurement_variance(ci, di)) for ci, di in zip(c, d)])
    return {"delta_phi": d, "bmse": c, "ratio": np.sqrt(c) / d, "eff_meas_sd": meas}


def clock_curve(results: list[OptimizationResult], alpha: int = 2) -> dict[str, np.ndarray]:
    """Dimensionless instability ``sigma = Delta phi_M / sqrt(b T)`` along a width sweep.

    The prior width of the stabilized clock is ``(b T)^(alpha/2)``, so each
    optimized width ``delta_phi`` corresponds to ``b T = delta_phi^(2/alpha)``.
    """
    ct = curve_table(results)
    bT = ct["delta_phi"] ** (2 / alpha)
    return {"bT": bT, "sigma": ct["eff_meas_sd"] / np.sqrt(bT)}


def clock_optimum(results: list[OptimizationResult], alpha: int = 2) -> tuple[float, float]:
    """Grid minimum ``(b T_opt, sigma_opt)`` of :func:`clock_curve`."""
    cc = clock_curve(results, alpha)
    i = int(np.argmin(cc["sigma"]))
    return float(cc["bT"][i]), float(cc["sigma"][i])
