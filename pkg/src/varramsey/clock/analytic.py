"""Closed-form clock instabilities, asymptotic scaling and dead-time limits.

All instabilities are returned as the dimensionless prefactor
``sigma = Delta phi_M / sqrt(b T)``, i.e. the Allan deviation in units of
``omega_A^-1 (b / tau)^(1/2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erfc

from ..estimation import css_effective_variance, ghz_effective_variance

LN2 = math.log(2.0)

DEFAULT_GAIN = 0.1
# flicker-noise calibration at the default gain, measured with servo.calibrate_chi
CHI_FLICKER = 2.535


def servo_chi(alpha: int, gain: float = DEFAULT_GAIN) -> float:
    """Ratio ``(delta phi)^2 / (b~ T)^alpha`` of the stabilized clock.

    For white and random-walk FM the integrating servo with perfect readout
    is an AR(1) filter and the ratio follows in closed form; the flicker
    value is a Monte Carlo calibration at the default gain only.
    """
    if alpha == 1:
        return 2 / (2 - gain)
    if alpha == 3:
        return (3 - gain) / (gain * (2 - gain))
    if alpha == 2 and gain == DEFAULT_GAIN:
        return CHI_FLICKER
    raise ValueError("flicker calibration is only tabulated at the default gain; "
                     "use servo.calibrate_chi")


CHI = {a: servo_chi(a) for a in (1, 2, 3)}


@dataclass(frozen=True)
class LaserNoiseSpec:
    """Single-component laser spectrum ``S_y(f) = h f^(1 - alpha)``.

    ``b_tilde`` is the bandwidth at which the free-running Allan deviation
    reaches ``sigma_L(1/b) omega_A / b = 1``; ``b_alpha = chi^(1/alpha) b_tilde``
    is the rescaled bandwidth that fixes the stabilized prior width.
    """

    alpha: int
    h_coeff: float
    omega_A: float = 1.0
    chi: float | None = None

    def __post_init__(self):
        if self.alpha not in (1, 2, 3):
            raise ValueError(f"alpha must be 1, 2 or 3, got {self.alpha!r}")
        if not (self.h_coeff >= 0 and np.isfinite(self.h_coeff)):
            raise ValueError("spectral prefactor must be finite and non-negative")
        if not (self.omega_A > 0 and np.isfinite(self.omega_A)):
            raise ValueError("atomic frequency must be positive")
        if self.chi is None:
            object.__setattr__(self, "chi", CHI[self.alpha])

    @property
    def b_tilde(self) -> float:
        h, w = self.h_coeff, self.omega_A
        if self.alpha == 1:
            return h / 2 * w * w
        if self.alpha == 2:
            return math.sqrt(h * 2 * LN2) * w
        return (h / 6) ** (1 / 3) * (2 * math.pi) ** (2 / 3) * w ** (2 / 3)

    @property
    def b_alpha(self) -> float:
        return self.chi ** (1 / self.alpha) * self.b_tilde

    @classmethod
    def from_bandwidth(cls, alpha: int, b_alpha: float, omega_A: float = 1.0,
                       chi: float | None = None) -> "LaserNoiseSpec":
        """Spectrum whose rescaled bandwidth is ``b_alpha``."""
        chi = CHI[alpha] if chi is None else chi
        bt = b_alpha / chi ** (1 / alpha)
        if alpha == 1:
            h = 2 * bt / omega_A ** 2
        elif alpha == 2:
            h = (bt / omega_A) ** 2 / (2 * LN2)
        else:
            h = 6 * bt ** 3 / ((2 * math.pi) ** 2 * omega_A ** 2)
        return cls(alpha, h, omega_A, chi)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "h_coeff": self.h_coeff, "omega_A": self.omega_A,
                "chi": self.chi}


def _bT(spec: LaserNoiseSpec, T: float) -> float:
    if not T > 0:
        raise ValueError("Ramsey time must be positive")
    return spec.b_alpha * T


def prior_width(spec: LaserNoiseSpec, T: float) -> float:
    """``delta phi_T = (b_alpha T)^(alpha/2)``."""
    return _bT(spec, T) ** (spec.alpha / 2)


@dataclass(frozen=True)
class AllanPrediction:
    sigma: float           # dimensionless prefactor
    delta_phi_M: float
    T: float
    omega_A: float

    def sigma_y(self, tau) -> np.ndarray:
        """``sigma_y(tau) = Delta phi_M / (omega_A T) sqrt(T / tau)``."""
        tau = np.asarray(tau, dtype=float)
        return self.delta_phi_M / (self.omega_A * self.T) * np.sqrt(self.T / tau)


def predict_allan(spec: LaserNoiseSpec, T: float, delta_phi_M: float) -> AllanPrediction:
    sigma = delta_phi_M / math.sqrt(_bT(spec, T))
    return AllanPrediction(float(sigma), float(delta_phi_M), float(T), spec.omega_A)


def css_sigma(N: int, spec: LaserNoiseSpec, T: float) -> float:
    bT = _bT(spec, T)
    nu = prior_width(spec, T) ** 2
    if nu > 700:
        return math.inf
    return math.sqrt(css_effective_variance(N, math.sqrt(nu)) / bT)


def ghz_sigma(N: int, spec: LaserNoiseSpec, T: float) -> float:
    var = ghz_effective_variance(N, prior_width(spec, T))
    return math.sqrt(var / _bT(spec, T)) if var > 0 else math.inf


def sql_sigma(N: int, spec: LaserNoiseSpec, T: float) -> float:
    return 1 / math.sqrt(N * _bT(spec, T))


def hl_sigma(N: int, spec: LaserNoiseSpec, T: float) -> float:
    return 1 / (N * math.sqrt(_bT(spec, T)))


def pi_hl_sigma(N: int, spec: LaserNoiseSpec, T: float) -> float:
    return math.pi / (N * math.sqrt(_bT(spec, T)))


def ctl_oqc(spec: LaserNoiseSpec, T: float) -> float:
    """Phase-slip limit ``sqrt(4 pi^2 / (b T) * (1 - erf(pi / (sqrt 2 delta phi_T))))``."""
    bT = _bT(spec, T)
    dphi = prior_width(spec, T)
    return math.sqrt(4 * math.pi ** 2 / bT * erfc(math.pi / (math.sqrt(2) * dphi)))


def css_ctl(spec: LaserNoiseSpec, T: float) -> float:
    nu = prior_width(spec, T) ** 2
    return math.sqrt((math.sinh(nu) - nu) / _bT(spec, T)) if nu < 700 else math.inf


# ---------------------------------------------------------------------------
# large-N scaling of the optimal quantum clock
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OQCScaling:
    N: float
    alpha: int
    z: float
    w: float
    residual: float
    bT_opt: float
    sigma_opt: float
    closed_form_bT: float | None = None       # alpha = 2, two logarithms kept
    closed_form_sigma: float | None = None


def solve_w(z: float, tol: float = 1e-15, max_iter: int = 200) -> tuple[float, float]:
    """Solve ``w - ln w = ln z`` by ``w <- ln z + ln w``; returns ``(w, residual)``."""
    if not z > math.e:
        raise ValueError(f"asymptotic expansion needs z > e, got z = {z}")
    lz = math.log(z)
    w = lz
    for _ in range(max_iter):
        w_new = lz + math.log(w)
        if abs(w_new - w) <= tol * w_new:
            w = w_new
            break
        w = w_new
    return w, abs(w - math.log(w) - lz)


def oqc_scaling(N: float, alpha: int) -> OQCScaling:
    if alpha not in (1, 2, 3):
        raise ValueError("alpha must be 1, 2 or 3")
    z = 8 * alpha ** 2 * float(N) ** 4 / math.pi
    w, res = solve_w(z)
    bT = (w / math.pi ** 2) ** (-1 / alpha)
    sigma2 = math.pi ** 2 / N ** 2 * (w / math.pi ** 2) ** (1 / alpha) * (1 + 2 / (alpha * w))
    cf_bT = cf_sigma = None
    if alpha == 2:
        L = math.log(z * math.log(z))
        cf_bT = math.pi / math.sqrt(L)
        cf_sigma = math.sqrt(math.pi) / N * math.sqrt(L ** -0.5 + L ** 0.5)
    return OQCScaling(float(N), alpha, z, w, res, bT, math.sqrt(sigma2), cf_bT, cf_sigma)


def asymptotic_instability2(N: float, alpha: int, bT) -> np.ndarray:
    """``sigma_piHL^2 + (sigma_CTL^OQC)^2`` as a function of ``b T``."""
    bT = np.asarray(bT, dtype=float)
    dphi = bT ** (alpha / 2)
    return (math.pi ** 2 / N ** 2 + 4 * math.pi ** 2 * erfc(math.pi / (math.sqrt(2) * dphi))) / bT


def minimize_asymptotic(N: float, alpha: int) -> tuple[float, float]:
    """Direct minimization over ``b T``; returns ``(bT_opt, sigma_opt)``."""
    guess = oqc_scaling(N, alpha).bT_opt
    res = minimize_scalar(lambda u: math.log(asymptotic_instability2(N, alpha, math.exp(u))),
                          bracket=(math.log(guess) - 1, math.log(guess), math.log(guess) + 0.5),
                          tol=1e-12)
    bT = math.exp(res.x)
    return bT, math.sqrt(float(asymptotic_instability2(N, alpha, bT)))


# ---------------------------------------------------------------------------
# dead time (Dick effect), flicker-noise lasers
# ---------------------------------------------------------------------------

DICK_N_MAX = 1_000_000


@lru_cache(maxsize=4)
def _dick_terms(n_max: int) -> tuple[np.ndarray, np.ndarray]:
    n = np.arange(1, n_max + 1, dtype=float)
    return n, 1.0 / (np.pi ** 2 * n ** 3)


def dick_series(d: float, n_max: int = DICK_N_MAX) -> float:
    """``sum_n sin^2(pi n d) / (pi^2 n^3)``.

    ``n d`` is reduced modulo 1 before taking the sine so integer arguments
    give exact zeros; the neglected tail is below ``1 / (2 pi^2 n_max^2)``.
    Terms are summed smallest first with numpy's pairwise summation.
    """
    if not 0 < d <= 1:
        raise ValueError("duty cycle must lie in (0, 1]")
    n, w = _dick_terms(int(n_max))
    s = np.sin(np.pi * np.mod(n * d, 1.0))
    return float(np.sum((s * s * w)[::-1]))


def dick_variance(bT: float, d: float, chi2: float = CHI[2], n_max: int = DICK_N_MAX) -> float:
    """``sigma_Dick^2`` in units of ``b_2 / (omega_A^2 tau)``."""
    return bT / (chi2 * 2 * LN2) * dick_series(d, n_max) / d ** 3


def d_min(bT_opt: float, sigma_opt: float, chi2: float = CHI[2], n_max: int = DICK_N_MAX,
          tol: float = 1e-10) -> float:
    """Smallest duty cycle with ``bT/(chi 2 ln 2) S(d)/d^2 <= sigma_opt^2`` (bisection)."""
    def excess(d):
        return bT_opt / (chi2 * 2 * LN2) * dick_series(d, n_max) / d ** 2 - sigma_opt ** 2

    lo, hi = 1e-9, 1.0
    if excess(lo) <= 0:
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if excess(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class DickLimits:
    duty_cycle: float
    sigma_dick: float       # dimensionless, units of omega_A^-1 (b_2 / tau)^(1/2)
    d_min: float
    R_max: float


def dick_limits(spec: LaserNoiseSpec, T: float, T_dead: float, sigma_target: float,
                n_max: int = DICK_N_MAX) -> DickLimits:
    if spec.alpha != 2:
        raise ValueError("the Dick-effect series applies to flicker-frequency lasers (alpha = 2)")
    if T_dead < 0:
        raise ValueError("dead time must be non-negative")
    bT = _bT(spec, T)
    d = T / (T + T_dead)
    sig = math.sqrt(dick_variance(bT, d, spec.chi, n_max))
    dm = d_min(bT, sigma_target, spec.chi, n_max)
    return DickLimits(d, sig, dm, 1 - dm)
