"""Free-running laser noise, sampled as per-cycle mean fractional frequencies.

* ``alpha = 1`` (white FM): independent normals, ``Var ybar = h0 / (2T)``.
* ``alpha = 2`` (flicker FM): a weighted sum of six damped random walks
  (AR(1) sequences in the cycle index) with time constants log-spaced over
  ``0.1 .. 10^4`` cycles.  The weights are the minimax fit that flattens the
  Allan variance over ``1 <= n <= 1000`` cycles, scaled to the flicker
  floor ``sigma_y^2 = 2 ln 2 h_-1``.
* ``alpha = 3`` (random-walk FM): a Brownian frequency ``y(t)`` with
  diffusion ``D = 2 pi^2 h_-2`` averaged exactly over each cycle.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linprog
from scipy.signal import lfilter

from .analytic import LN2, LaserNoiseSpec

FLICKER_TAUS = np.logspace(-1, 4, 6)
# variances of the unit-variance AR(1) components, from fit_flicker_weights()
FLICKER_WEIGHTS = np.array([0.0, 1.3543367201, 1.9208669762, 1.3223259068,
                            2.3463437772, 0.0])
FLICKER_FIT_WINDOWS = (1, 1000)


def noise_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _sum_variance(n, tau):
    """Variance of the sum of ``n`` consecutive samples of a unit AR(1) with ``rho = e^(-1/tau)``."""
    n = np.asarray(n, dtype=float)
    x = -np.expm1(-1.0 / tau)
    rho = 1.0 - x
    return n + 2 * rho * (n * x + np.expm1(-n / tau)) / (x * x)


def drw_allan_variance(n, tau: float) -> np.ndarray:
    """Allan variance of a unit-variance AR(1) sequence at averaging window ``n``."""
    n = np.asarray(n, dtype=float)
    return (4 * _sum_variance(n, tau) - _sum_variance(2 * n, tau)) / (2 * n * n)


def flicker_allan_variance(n, weights=FLICKER_WEIGHTS) -> np.ndarray:
    """Model Allan variance of the unscaled flicker generator (target level 1)."""
    return sum(w * drw_allan_variance(n, t) for w, t in zip(weights, FLICKER_TAUS))


def fit_flicker_weights(n_min: int = FLICKER_FIT_WINDOWS[0], n_max: int = FLICKER_FIT_WINDOWS[1],
                        n_grid: int = 300) -> tuple[np.ndarray, float]:
    """Non-negative weights minimizing ``max |AVAR(n) - 1|``; returns ``(weights, ripple)``."""
    n = np.unique(np.round(np.logspace(np.log10(n_min), np.log10(n_max), n_grid)))
    A = np.column_stack([drw_allan_variance(n, t) for t in FLICKER_TAUS])
    k, m = A.shape[1], n.size
    cost = np.r_[np.zeros(k), 1.0]
    A_ub = np.block([[A, -np.ones((m, 1))], [-A, -np.ones((m, 1))]])
    b_ub = np.r_[np.ones(m), -np.ones(m)]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=[(0, None)] * (k + 1), method="highs")
    if not res.success:
        raise RuntimeError(f"flicker fit failed: {res.message}")
    return res.x[:k], float(res.x[k])


def _ar1(rng: np.random.Generator, tau: float, n: int) -> np.ndarray:
    rho = math.exp(-1.0 / tau)
    eps = rng.standard_normal(n) * math.sqrt(1 - rho * rho)
    x0 = rng.standard_normal()
    return lfilter([1.0], [1.0, -rho], eps, zi=[rho * x0])[0]


def simulate_noise(spec: LaserNoiseSpec, T: float, n_cycles: int, seed: int) -> np.ndarray:
    """Per-cycle mean fractional frequency ``ybar_k`` of the free-running laser."""
    if n_cycles < 1:
        raise ValueError("need at least one cycle")
    if not T > 0:
        raise ValueError("Ramsey time must be positive")
    rng = noise_rng(seed)
    h = spec.h_coeff
    if spec.alpha == 1:
        return rng.standard_normal(n_cycles) * math.sqrt(h / (2 * T))
    if spec.alpha == 2:
        y = np.zeros(n_cycles)
        for w, tau in zip(FLICKER_WEIGHTS, FLICKER_TAUS):
            comp = _ar1(rng, tau, n_cycles)
            if w > 0:
                y += math.sqrt(w) * comp
        return y * math.sqrt(2 * LN2 * h)
    D = 2 * math.pi ** 2 * h
    xi = rng.standard_normal(n_cycles) * math.sqrt(D * T)
    zeta = rng.standard_normal(n_cycles) * math.sqrt(D * T / 12)
    start = np.concatenate([[0.0], np.cumsum(xi[:-1])])
    return start + 0.5 * xi + zeta
