"""Phase-operator interferometer (POI) baseline.

The measurement is the von Neumann measurement of the Pegg-Barnett phase
operator with eigenphases ``phi_s = 2 pi s / (2J + 1)`` and eigenvectors
``|s> = (2J+1)^(-1/2) sum_m exp(-i phi_s m)|m>``.  Input state and
estimator are optimized by alternating minimization of the BMSE.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from .estimation import PriorSpec, moment_matrices, phase_moments


@dataclass(frozen=True)
class PhaseObservable:
    N: int
    s_values: np.ndarray
    phases: np.ndarray
    vectors: np.ndarray  # columns |s> in the J_z basis

    @property
    def readout(self) -> np.ndarray:
        """Unitary whose rows are ``<s|``; plays the role of a decoder."""
        return self.vectors.conj().T

    def probabilities(self, psi: np.ndarray, phi) -> np.ndarray:
        """``p(s|phi) = |<s| exp(-i phi J_z) |psi>|^2`` with rows indexed by ``phi``."""
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        m = np.arange(self.N + 1) - self.N / 2
        cols = np.exp(-1j * np.outer(m, phi)) * psi[:, None]
        return np.abs(self.readout @ cols).T ** 2


def build_phase_observable(N: int) -> PhaseObservable:
    if N < 1:
        raise ValueError("N must be >= 1")
    J = N / 2
    s = np.arange(N + 1) - J
    phases = 2 * np.pi * s / (2 * J + 1)
    m = np.arange(N + 1) - J
    vectors = np.exp(-1j * np.outer(m, phases)) / np.sqrt(N + 1)
    return PhaseObservable(N, s, phases, vectors)


def phase_zero_state(N: int) -> np.ndarray:
    """Uniform superposition, the ``phi_s = 0`` eigenvector (``|s=0>`` for even N)."""
    return np.full(N + 1, 1 / np.sqrt(N + 1), dtype=complex)


@dataclass
class POIResult:
    state: np.ndarray
    estimator: np.ndarray
    bmse: float
    history: list = field(default_factory=list)
    converged: bool = True
    delta_phi: float = float("nan")

    @property
    def posterior_width(self) -> float:
        return float(np.sqrt(self.bmse))

    @property
    def posterior_over_prior(self) -> float:
        return float(np.sqrt(self.bmse) / self.delta_phi)

    def state_json(self) -> dict:
        return {"re": self.state.real.tolist(), "im": self.state.imag.tolist()}


def poi_cost(obs: PhaseObservable, psi: np.ndarray, prior: PriorSpec, estimator=None):
    """BMSE of state ``psi`` under the phase measurement.

    With ``estimator=None`` the posterior-mean estimator is used and
    returned alongside the cost.
    """
    m = np.arange(obs.N + 1) - obs.N / 2
    A0, A1, A2 = phase_moments(psi, obs.readout, m, prior.delta_phi)
    if estimator is None:
        keep = A0 > 1e-300
        estimator = np.where(keep, A1 / np.where(keep, A0, 1.0), 0.0)
    cost = float(np.sum(A2 - 2 * estimator * A1 + estimator ** 2 * A0))
    return cost, estimator


def estimator_operator(obs: PhaseObservable, estimator: np.ndarray, prior: PriorSpec) -> np.ndarray:
    """Hermitian ``A`` with ``BMSE(psi) = <psi|A|psi>`` for a fixed estimator."""
    m = np.arange(obs.N + 1) - obs.N / 2
    # H_k(m_n - m_n') is the transpose of the moment-matrix convention
    g0, g1, g2 = (g.T for g in moment_matrices(m, prior.delta_phi))
    E = obs.vectors
    A = np.zeros((obs.N + 1, obs.N + 1), dtype=complex)
    for i, e in enumerate(estimator):
        proj = np.outer(E[:, i], E[:, i].conj())
        A += proj * (g2 - 2 * e * g1 + e * e * g0)
    return 0.5 * (A + A.conj().T)


def poi_optimize(N: int, prior: PriorSpec, max_iters: int = 500, tol: float = 1e-12) -> POIResult:
    """Alternate posterior-mean estimation and state optimization.

    Starts from the ``phi_s = 0`` eigenstate.  ``history`` holds the BMSE
    after every half step; it is non-increasing.
    """
    obs = build_phase_observable(N)
    psi = phase_zero_state(N)
    cost, est = poi_cost(obs, psi, prior)
    history = [cost]
    converged = False
    for _ in range(max_iters):
        prev = cost
        A = estimator_operator(obs, est, prior)
        _, vecs = eigh(A, subset_by_index=[0, 0])
        cand = vecs[:, 0]
        cand_cost, _ = poi_cost(obs, cand, prior, est)
        # eigenvalue step is a global minimum for fixed estimator; guard roundoff
        if cand_cost <= cost:
            psi, cost = cand, cand_cost
        history.append(cost)
        new_cost, new_est = poi_cost(obs, psi, prior)
        if new_cost <= cost:
            cost, est = new_cost, new_est
        history.append(cost)
        if prev - cost < tol * max(prev, 1e-300):
            converged = True
            break
    return POIResult(psi, est, cost, history, converged, prior.delta_phi)


def performance_ratio(curve_a, curve_ref) -> float:
    """``chi = min(curve_a) / min(curve_ref)`` on a shared prior-width grid."""
    a = np.asarray(curve_a, dtype=float)
    ref = np.asarray(curve_ref, dtype=float)
    if a.size == 0 or ref.size == 0:
        raise ValueError("performance ratio needs non-empty curves")
    if a.shape != ref.shape:
        raise ValueError("curves must share the prior-width grid")
    return float(np.min(a) / np.min(ref))
