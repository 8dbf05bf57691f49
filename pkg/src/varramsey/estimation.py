"""Bayesian cost functions and bounds for phase estimation with a normal prior.

Two independent routes evaluate the Bayesian mean squared error (BMSE):

* quadrature: tabulate ``p(m|phi)`` on Gauss-Hermite nodes matched to the
  prior and sum (:func:`bmse`);
* phase moments: integrate the prior analytically against the Fourier
  structure of ``p(m|phi)``.  With ``rho`` the input state and ``U`` the
  decoder, ``int dphi P(phi) phi^k p(m|phi) = [U (rho o G_k) U^+]_mm`` where
  ``G_k[n, n'] = int dphi P(phi) phi^k exp(i phi (m_n' - m_n))`` is known in
  closed form (:func:`phase_moments`).  This route is exact and is used by
  the optimizer.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erfc, roots_hermite

from .circuits import (CircuitParams, ProbabilityKernel, _estimator_values, conditional_probs,
                       decode, decoder_unitary, entangle, phase_evolve)
from .spin import SpinOperatorTable

DEFAULT_GH_ORDER = 240


@dataclass(frozen=True)
class PriorSpec:
    delta_phi: float
    kind: str = "normal"

    def __post_init__(self):
        if self.kind != "normal":
            raise ValueError(f"only normal priors are supported, got {self.kind!r}")
        if not (np.isfinite(self.delta_phi) and self.delta_phi > 0):
            raise ValueError(f"prior width must be positive, got {self.delta_phi}")

    @property
    def variance(self) -> float:
        return self.delta_phi ** 2

    def density(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        return np.exp(-0.5 * (phi / self.delta_phi) ** 2) / (np.sqrt(2 * np.pi) * self.delta_phi)

    def quadrature(self, order: int | None = None, N: int | None = None):
        """Gauss-Hermite nodes and weights integrating against this prior.

        The default order is 240, raised when ``N delta_phi`` is large enough
        that the ``exp(i N phi)`` fringes would alias on the node spacing.
        """
        if order is None:
            order = gh_order(N, self.delta_phi)
        x, w = _gh(int(order))
        return np.sqrt(2.0) * self.delta_phi * x, w / np.sqrt(np.pi)


@lru_cache(maxsize=16)
def _gh(order: int):
    x, w = roots_hermite(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gh_order(N: int | None, delta_phi: float) -> int:
    """Gauss-Hermite order giving converged BMSE for ``N`` atoms.

    Node spacing near the origin is about ``pi / sqrt(2 n)``; the highest
    fringe frequency in ``phi`` is ``N`` so resolving it needs
    ``n >~ (N delta_phi)^2 / 2``; we keep a 50% margin.
    """
    if N is None:
        return DEFAULT_GH_ORDER
    need = int(np.ceil(0.75 * (N * delta_phi) ** 2)) + 64
    return max(DEFAULT_GH_ORDER, need)


@dataclass
class CostReport:
    bmse: float
    posterior_over_prior: float
    eff_meas_var: float
    a_opt: float
    delta_phi: float
    mode: str = "linear-optimal"

    @classmethod
    def from_bmse(cls, bmse: float, prior: PriorSpec, a: float, mode: str) -> "CostReport":
        bmse = max(float(bmse), 0.0)
        return cls(bmse, np.sqrt(bmse) / prior.delta_phi,
                   effective_measurement_variance(bmse, prior.delta_phi), float(a),
                   prior.delta_phi, mode)

    @property
    def delta_phi_post(self) -> float:
        return float(np.sqrt(self.bmse))

    def to_json(self) -> str:
        d = asdict(self)
        if not np.isfinite(d["eff_meas_var"]):
            d["eff_meas_var"] = None
        return json.dumps(d)


def effective_measurement_variance(bmse: float, delta_phi: float) -> float:
    """``[(Delta phi)^-2 - (delta phi)^-2]^-1``; infinite when no information is gained."""
    if bmse <= 0:
        return 0.0
    inv = 1.0 / bmse - 1.0 / delta_phi ** 2
    # differences at rounding level mean no information was gained
    if inv <= 1e-12 / bmse:
        return np.inf
    return 1.0 / inv


# ---------------------------------------------------------------------------
# quadrature route
# ---------------------------------------------------------------------------

def prior_kernel(table: SpinOperatorTable, params: CircuitParams, prior: PriorSpec,
                 order: int | None = None) -> ProbabilityKernel:
    """``p(m|phi)`` tabulated on the Gauss-Hermite grid of ``prior``."""
    nodes, weights = prior.quadrature(order, table.N)
    return conditional_probs(table, params, nodes, weights)


def mse_curve(kernel: ProbabilityKernel, estimator) -> np.ndarray:
    """``eps(phi) = sum_m (phi - phi_est(m))^2 p(m|phi)``."""
    est = _estimator_values(kernel, estimator)
    diff = kernel.phi_nodes[:, None] - est[None, :]
    return np.sum(diff ** 2 * kernel.probs, axis=1)


def _check_weights(kernel: ProbabilityKernel, prior: PriorSpec) -> np.ndarray:
    w = kernel.weights
    if w is None or not np.all(np.isfinite(w)):
        raise ValueError("kernel has no prior quadrature weights; build it with prior_kernel")
    if abs(w.sum() - 1.0) > 1e-8:
        raise ValueError(f"quadrature weights sum to {w.sum():.12g}, expected 1")
    reach = np.max(np.abs(kernel.phi_nodes))
    if reach < 8 * prior.delta_phi:
        raise ValueError("quadrature grid does not cover +-8 prior widths")
    return w


def _linear_moments(kernel: ProbabilityKernel, w: np.ndarray):
    m = kernel.m_values
    B = float(np.sum(w[:, None] * kernel.phi_nodes[:, None] * m[None, :] * kernel.probs))
    C = float(np.sum(w[:, None] * (m ** 2)[None, :] * kernel.probs))
    return B, C


def _linear_report(B: float, C: float, prior: PriorSpec, mode: str,
                   a: float | None) -> CostReport:
    var = prior.variance
    if mode == "linear-optimal":
        if C <= 1e-300:
            return CostReport.from_bmse(var, prior, 0.0, mode)
        a = B / C
        return CostReport.from_bmse(var - B * B / C, prior, a, mode)
    if mode == "fixed-a":
        if a is None:
            raise ValueError("fixed-a mode needs a slope")
        return CostReport.from_bmse(var - 2 * a * B + a * a * C, prior, a, mode)
    raise ValueError(f"unknown estimator mode {mode!r}")


def bmse(kernel: ProbabilityKernel, prior: PriorSpec, estimator_mode: str = "linear-optimal",
         a: float | None = None) -> CostReport:
    """BMSE of a kernel tabulated on the prior's quadrature grid.

    ``linear-optimal`` uses the closed-form slope ``a_opt = B / C``;
    ``fixed-a`` evaluates the given slope; ``mmse`` uses the posterior mean.
    """
    w = _check_weights(kernel, prior)
    if estimator_mode == "mmse":
        est, _ = mmse_estimator(kernel, prior)
        eps = mse_curve(kernel, est)
        return CostReport.from_bmse(float(w @ eps), prior, np.nan, "mmse")
    B, C = _linear_moments(kernel, w)
    return _linear_report(B, C, prior, estimator_mode, a)


def mmse_estimator(kernel: ProbabilityKernel, prior: PriorSpec):
    """Posterior-mean estimator ``phi_est(m)``.

    Returns the estimator table and a boolean mask of zero-evidence outcomes
    (whose estimate is set to the prior mean 0).
    """
    w = _check_weights(kernel, prior)
    evidence = w @ kernel.probs
    first = (w * kernel.phi_nodes) @ kernel.probs
    empty = evidence <= 1e-300
    est = np.where(empty, 0.0, first / np.where(empty, 1.0, evidence))
    return est, empty


def fisher_information(kernel: ProbabilityKernel) -> np.ndarray:
    """Fisher information from 4th-order central differences on a uniform grid.

    The two nodes at each end use one-sided stencils of the same order.
    """
    phi = kernel.phi_nodes
    if phi.size < 5:
        raise ValueError("need at least five nodes for finite differences")
    h = np.diff(phi)
    if np.max(np.abs(h - h[0])) > 1e-9 * max(1.0, abs(h[0])):
        raise ValueError("finite-difference Fisher information needs a uniform grid")
    h = h[0]
    p = kernel.probs
    dp = np.empty_like(p)
    dp[2:-2] = (p[:-4] - 8 * p[1:-3] + 8 * p[3:-1] - p[4:]) / (12 * h)
    fwd = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    dp[0] = fwd @ p[0:5]
    dp[1] = np.array([-3, -10, 18, -6, 1]) / (12 * h) @ p[0:5]
    dp[-1] = -(fwd @ p[-1:-6:-1])
    dp[-2] = -(np.array([-3, -10, 18, -6, 1]) / (12 * h) @ p[-1:-6:-1])
    return _fisher_sum(p, dp)


def _fisher_sum(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    keep = p > 1e-14
    return np.sum(np.where(keep, dp ** 2 / np.where(keep, p, 1.0), 0.0), axis=1)


def fisher_information_exact(table: SpinOperatorTable, params: CircuitParams, phi) -> np.ndarray:
    """Fisher information with ``d p / d phi`` from the analytic amplitude derivative."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    psi = entangle(table, params)
    cols = phase_evolve(table, phi, psi)
    amp = decode(table, params, cols)
    damp = decode(table, params, -1j * table.m[:, None] * cols)
    p = np.abs(amp.T) ** 2
    dp = 2 * np.real(np.conj(amp) * damp).T
    return _fisher_sum(p, dp)


def average_fisher(table: SpinOperatorTable, params: CircuitParams, prior: PriorSpec,
                   order: int | None = None) -> float:
    nodes, weights = prior.quadrature(order, table.N)
    return float(weights @ fisher_information_exact(table, params, nodes))


def van_trees_bound(fisher_mean: float, prior: PriorSpec) -> float:
    """Van Trees lower bound ``1 / (F + 1/delta_phi^2)`` on the BMSE."""
    return 1.0 / (fisher_mean + 1.0 / prior.variance)


def ghz_effective_variance(N: int, delta_phi: float) -> float:
    """``exp((N delta_phi)^2) / N^2 - delta_phi^2``; ``inf`` on overflow."""
    if N < 1 or delta_phi <= 0:
        raise ValueError("need N >= 1 and delta_phi > 0")
    x = (N * delta_phi) ** 2
    if x > 700:
        return np.inf
    return float(np.exp(x) / N ** 2 - delta_phi ** 2)


def pi_hl_variance(N: int, delta_phi: float) -> float:
    """Pi-corrected Heisenberg limit including phase slips beyond ``+-pi``."""
    if N < 1 or delta_phi <= 0:
        raise ValueError("need N >= 1 and delta_phi > 0")
    return float(np.pi ** 2 / N ** 2 + 4 * np.pi ** 2 * erfc(np.pi / (np.sqrt(2) * delta_phi)))


def css_bmse(N: int, delta_phi: float) -> float:
    """Closed-form BMSE of the uncorrelated Ramsey protocol with optimal slope."""
    nu = delta_phi ** 2
    B = 0.5 * N * nu * np.exp(-nu / 2)
    C = N / 4 + N * (N - 1) * (-np.expm1(-2 * nu)) / 8
    return nu - B * B / C


# ---------------------------------------------------------------------------
# phase-moment route
# ---------------------------------------------------------------------------

def moment_matrices(m: np.ndarray, delta_phi: float):
    """``G_k[n, n'] = int P(phi) phi^k exp(i phi (m_n' - m_n)) dphi`` for k = 0, 1, 2."""
    d = m[None, :] - m[:, None]
    v = delta_phi ** 2
    g0 = np.exp(-0.5 * v * d * d)
    g1 = 1j * v * d * g0
    g2 = (v - v * v * d * d) * g0
    return g0, g1, g2


def phase_moments(rho: np.ndarray, U: np.ndarray, m: np.ndarray, delta_phi: float,
                  orders=(0, 1, 2)) -> list[np.ndarray]:
    """Prior moments ``A_k(m_i) = int P(phi) phi^k p(m_i|phi) dphi``.

    ``rho`` is a state vector or density matrix before the phase imprint,
    ``U`` the decoder unitary acting after it.
    """
    if rho.ndim == 1:
        rho = np.outer(rho, rho.conj())
    G = moment_matrices(m, delta_phi)
    out = []
    for k in orders:
        X = U @ (rho * G[k])
        out.append(np.real(np.einsum("ij,ij->i", X, U.conj())))
    return out


def moment_cost(A0, A1, A2, m_out: np.ndarray, prior: PriorSpec,
                estimator_mode: str = "linear-optimal", a: float | None = None) -> CostReport:
    if estimator_mode == "mmse":
        keep = A0 > 1e-300
        gain = np.sum(A1[keep] ** 2 / A0[keep])
        return CostReport.from_bmse(prior.variance - gain, prior, np.nan, "mmse")
    B = float(m_out @ A1)
    C = float((m_out ** 2) @ A0)
    return _linear_report(B, C, prior, estimator_mode, a)


def mmse_from_moments(A0, A1) -> np.ndarray:
    keep = A0 > 1e-300
    return np.where(keep, A1 / np.where(keep, A0, 1.0), 0.0)


def circuit_cost(table: SpinOperatorTable, params: CircuitParams, prior: PriorSpec,
                 estimator_mode: str = "linear-optimal", a: float | None = None) -> CostReport:
    """Exact BMSE of a noiseless circuit via the phase-moment route."""
    psi = entangle(table, params)
    U = decoder_unitary(table, params)
    A = phase_moments(psi, U, table.m, prior.delta_phi)
    if estimator_mode == "fixed-a" and a is None:
        a = params.a
    return moment_cost(*A, table.m, prior, estimator_mode, a)


def circuit_cost_quadrature(table: SpinOperatorTable, params: CircuitParams, prior: PriorSpec,
                            estimator_mode: str = "linear-optimal", order: int | None = None,
                            a: float | None = None) -> CostReport:
    """BMSE of a noiseless circuit via Gauss-Hermite quadrature."""
    if estimator_mode == "fixed-a" and a is None:
        a = params.a
    return bmse(prior_kernel(table, params, prior, order), prior, estimator_mode, a)


def css_effective_variance(N: int, delta_phi: float) -> float:
    nu = delta_phi ** 2
    return float(np.exp(nu) / N + (1 - 1 / N) * np.sinh(nu) - nu)
