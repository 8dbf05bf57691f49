"""Closed-loop clock simulation with an integrating servo.

Each cycle ``k`` the atoms accumulate ``phi_k = omega_A T ybar'_k`` from the
corrected laser frequency ``ybar'_k = ybar_k - c_k``; an outcome ``m_k`` is
drawn from ``p(m|phi_k)``, converted to ``ybar_est,k = m_k / (omega_A T s)``
with ``s = d mbar / d phi`` at ``phi = 0``, and the correction is integrated,
``c_{k+1} = c_k + g ybar_est,k``.  The loop is strictly sequential.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..circuits import CircuitParams, decoder_unitary, entangle, ghz_params
from ..spin import build_operators
from .allan import AllanSeries, overlapping_allan
from .analytic import LaserNoiseSpec
from .noise import simulate_noise

NAMED_PROTOCOLS = ("css", "ghz", "ideal")


@dataclass
class ClockRunConfig:
    N: int
    T: float
    noise: LaserNoiseSpec
    gain: float = 0.1
    n_cycles: int = 100_000
    seed: int = 0
    protocol: str | CircuitParams = "css"
    T_dead: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not 0 < self.gain <= 1:
            raise ValueError(f"servo gain must lie in (0, 1], got {self.gain}")
        if not self.T > 0:
            raise ValueError("Ramsey time must be positive")
        if self.n_cycles < 1:
            raise ValueError("need at least one cycle")
        if self.T_dead != 0:
            raise ValueError("the servo simulation models zero dead time; "
                             "use dick_limits for dead-time estimates")
        if isinstance(self.protocol, str) and self.protocol not in NAMED_PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")

    def to_dict(self) -> dict:
        proto = self.protocol
        if isinstance(proto, CircuitParams):
            proto = proto.to_dict()
        return {"N": self.N, "T": self.T, "noise": self.noise.to_dict(), "gain": self.gain,
                "n_cycles": self.n_cycles, "seed": self.seed, "protocol": proto,
                "T_dead": self.T_dead}

    @classmethod
    def from_dict(cls, d: dict) -> "ClockRunConfig":
        d = dict(d)
        d["noise"] = LaserNoiseSpec(**d["noise"])
        if isinstance(d.get("protocol"), dict):
            d["protocol"] = CircuitParams.from_dict(d["protocol"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class OutcomeSampler:
    """``p(m|phi)`` of a noiseless circuit as a trigonometric polynomial in ``phi``."""

    def __init__(self, N: int, params: CircuitParams):
        t = build_operators(N)
        X = decoder_unitary(t, params) * entangle(t, params)[None, :]
        self.m = t.m.copy()
        self.freq = np.arange(-N, N + 1)
        c = np.zeros((N + 1, 2 * N + 1), dtype=complex)
        # p(m|phi) = sum_{n,j} conj(X[m,n]) X[m,j] exp(i phi (n - j))
        for d in range(-N, N + 1):
            if d >= 0:
                c[:, d + N] = np.sum(X[:, d:].conj() * X[:, :N + 1 - d], axis=1)
            else:
                c[:, d + N] = np.sum(X[:, :N + 1 + d].conj() * X[:, -d:], axis=1)
        self.coef = c
        self.slope = float(np.real(self.m @ (c @ (1j * self.freq))))

    def probs(self, phi: float) -> np.ndarray:
        p = np.real(self.coef @ np.exp(1j * phi * self.freq))
        return np.maximum(p, 0.0)

    def sample(self, phi: float, u: float) -> float:
        cdf = np.cumsum(self.probs(phi))
        i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
        return self.m[min(i, self.m.size - 1)]


def protocol_params(N: int, protocol) -> CircuitParams | None:
    if isinstance(protocol, CircuitParams):
        return protocol
    if protocol == "css":
        return CircuitParams(0, 0)
    if protocol == "ghz":
        return ghz_params(N)
    return None


@dataclass
class ServoResult:
    allan: AllanSeries
    sigma_fit: float
    fit_residual: float
    fringe_hops: int
    prior_width: float
    seed: int
    fit_window: tuple = field(default=(0, 0))
    phases: np.ndarray = field(default=None, repr=False)   # phi_k of every cycle

    def summary(self) -> dict:
        return {"sigma_fit": self.sigma_fit, "fit_residual": self.fit_residual,
                "fringe_hops": self.fringe_hops, "prior_width": self.prior_width,
                "seed": self.seed, "fit_window": list(self.fit_window)}


def fit_window(n_cycles: int) -> tuple[float, float]:
    """Averaging windows used for the asymptotic fit.

    ``[10^4, n/10]`` when that spans at least a decade, otherwise the last
    decade ``[n/100, n/10]``.
    """
    hi = n_cycles / 10
    lo = 1e4 if hi >= 1e5 else hi / 10
    return lo, hi


def run_servo_loop(config: ClockRunConfig) -> ServoResult:
    spec, T, g = config.noise, config.T, config.gain
    wT = spec.omega_A * T
    free = wT * simulate_noise(spec, T, config.n_cycles, config.seed)
    params = protocol_params(config.N, config.protocol)
    sampler = None
    if params is not None:
        sampler = OutcomeSampler(config.N, params)
        if abs(sampler.slope) < 1e-12:
            raise ValueError("protocol has zero fringe slope at phi = 0 and cannot lock the laser")
    meas_rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(config.seed, spawn_key=(1,))))
    u = meas_rng.random(config.n_cycles)
    phases = np.empty(config.n_cycles)
    corr = 0.0
    for k in range(config.n_cycles):
        phi = free[k] - corr
        phases[k] = phi
        est = phi if sampler is None else sampler.sample(phi, u[k]) / sampler.slope
        corr += g * est
    allan = overlapping_allan(phases / wT, T)
    lo, hi = fit_window(config.n_cycles)
    c, resid = allan.fit_prefactor(lo, hi)
    # the dimensionless prefactor is undefined for a noiseless laser
    sigma = c * spec.omega_A / math.sqrt(spec.b_alpha) if spec.b_alpha > 0 else math.nan
    burn = min(config.n_cycles // 2, int(10 / g))
    return ServoResult(allan, float(sigma), resid, int(np.sum(np.abs(phases) > np.pi)),
                       float(np.sqrt(np.mean(phases[burn:] ** 2))), config.seed, (lo, hi),
                       phases)


def run_servo_batch(config: ClockRunConfig, seeds, threads: int = 1) -> list[ServoResult]:
    """Independent runs with the given seeds; order follows ``seeds``."""
    cfgs = [ClockRunConfig(**{**config.__dict__, "seed": int(s)}) for s in seeds]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(run_servo_loop, cfgs))
    return [run_servo_loop(c) for c in cfgs]


def calibrate_chi(alpha: int, gain: float = 0.1, n_cycles: int = 200_000, seeds=range(8)) -> float:
    """Measured ``(delta phi)^2 / (b~ T)^alpha`` of the stabilized clock.

    Uses perfect phase readout so only laser noise and servo dynamics set
    the width; the ratio is independent of ``T`` and ``h``.
    """
    spec = LaserNoiseSpec.from_bandwidth(alpha, 0.1, chi=1.0)
    cfg = ClockRunConfig(1, 1.0, spec, gain, n_cycles, 0, "ideal")
    widths = [r.prior_width ** 2 for r in run_servo_batch(cfg, seeds)]
    return float(np.mean(widths) / (spec.b_tilde * cfg.T) ** alpha)
