"""Rydberg-dressed interactions on a lattice, simulated in the full 2^N space.

The dressing gates are ``D_mu(theta) = exp(-i theta H_mu / V0)`` with

    H_z = sum_{k,l} V_kl sz_k sz_l,   V_kl = V0 Rc^6 / 4 / (|r_k - r_l|^6 + Rc^6),

the sum running over all ordered pairs including ``k = l``.  ``H_z`` is
diagonal in the computational basis; ``H_x`` is reached by a Hadamard on
every site.  Global rotations factorize into single-site gates and are
applied the same way, so every gate costs ``O(N 2^N)``.

Basis index ``b`` encodes site ``k`` in bit ``k``; bit value 1 is spin up
(``sz = +1``), so the initial state ``|-N/2>`` is ``b = 0`` and the outcome
``m`` is ``popcount(b) - N/2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .circuits import CircuitParams, Gate, ProbabilityKernel, decoder_gates, entangler_gates
from .estimation import PriorSpec, moment_matrices
from .optimizer import FiniteDifferenceMixin

DEFAULT_CAP = 16


@dataclass(frozen=True, eq=False)
class LatticeGeometry:
    """Atom positions in units of the lattice spacing and dressing parameters."""

    positions: np.ndarray
    Rc: float
    V0: float = 1.0
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValueError("positions must be a non-empty list of 2D points")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if pos.shape[0] > self.cap:
            raise ValueError(f"{pos.shape[0]} atoms exceed the state-vector cap of {self.cap} "
                             f"({2 ** pos.shape[0]} amplitudes)")
        if np.unique(pos, axis=0).shape[0] != pos.shape[0]:
            raise ValueError("positions must be distinct")
        if not (self.Rc > 0 and np.isfinite(self.Rc)):
            raise ValueError("interaction radius must be positive")
        if not (self.V0 > 0 and np.isfinite(self.V0)):
            raise ValueError("interaction scale must be positive")
        object.__setattr__(self, "positions", pos)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def square(cls, nx: int, ny: int, Rc: float, spacing: float = 1.0, **kw) -> "LatticeGeometry":
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        pos = spacing * np.column_stack([ix.ravel(), iy.ravel()])
        return cls(pos, Rc, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "LatticeGeometry":
        extra = {k: d[k] for k in ("V0", "cap") if k in d}
        if "positions" in d:
            return cls(np.asarray(d["positions"], dtype=float), float(d["Rc"]), **extra)
        if d.get("lattice") != "square":
            raise ValueError(f"unsupported lattice {d.get('lattice')!r}")
        spacing = float(d.get("spacing", 1.0))
        # Rc is given in units of the spacing, positions in the same units
        return cls.square(int(d["nx"]), int(d["ny"]), float(d["Rc"]) * spacing, spacing, **extra)

    def to_dict(self) -> dict:
        return {"positions": self.positions.tolist(), "Rc": self.Rc, "V0": self.V0,
                "cap": self.cap}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @cached_property
    def popcount(self) -> np.ndarray:
        b = np.arange(2 ** self.N)
        bits = (b[:, None] >> np.arange(self.N)) & 1
        return bits.sum(axis=1)

    @cached_property
    def magnetization(self) -> np.ndarray:
        return self.popcount - self.N / 2

    @cached_property
    def energies(self) -> np.ndarray:
        """``E_z(b) / V0`` for every bit string."""
        b = np.arange(2 ** self.N)
        s = 2.0 * ((b[:, None] >> np.arange(self.N)) & 1) - 1.0
        V = dressing_couplings(self) / self.V0
        return np.einsum("bk,kl,bl->b", s, V, s)


def dressing_couplings(geometry: LatticeGeometry) -> np.ndarray:
    """Pairwise couplings ``V_kl``, including the zero-distance diagonal ``V0/4``."""
    r = geometry.positions
    d2 = np.sum((r[:, None, :] - r[None, :, :]) ** 2, axis=-1)
    rc6 = geometry.Rc ** 6
    return geometry.V0 * rc6 / 4 / (d2 ** 3 + rc6)


def _hadamard_all(s: np.ndarray, N: int) -> np.ndarray:
    """Apply the single-site Hadamard to every site (first axis is the basis index)."""
    cols = s.shape[1:]
    x = s.reshape((2 ** N,) + cols)
    for k in range(N):
        x = x.reshape((2 ** (N - k - 1), 2, 2 ** k) + cols)
        a, b = x[:, 0], x[:, 1]
        x = np.stack([a + b, a - b], axis=1) / np.sqrt(2)
    return x.reshape(s.shape)


def _diag(phases: np.ndarray, s: np.ndarray) -> np.ndarray:
    return phases.reshape(phases.shape + (1,) * (s.ndim - 1)) * s


def full_initial_state(N: int) -> np.ndarray:
    s = np.zeros(2 ** N, dtype=complex)
    s[0] = 1.0
    return s


def full_rotation(geometry: LatticeGeometry, axis: str, theta: float, s: np.ndarray) -> np.ndarray:
    """``exp(-i theta J_axis)`` on the full space."""
    N = geometry.N
    ph = np.exp(-1j * theta * geometry.magnetization)
    if axis == "z":
        return _diag(ph, s)
    if axis == "x":
        # with bit 1 = spin up the Hadamard maps sz to -sx
        return _hadamard_all(_diag(ph.conj(), _hadamard_all(s, N)), N)
    if axis == "y":
        q = np.exp(-1j * np.pi / 2 * geometry.magnetization)
        s = _diag(q.conj(), s)
        return _diag(q, full_rotation(geometry, "x", theta, s))
    raise ValueError(f"unknown axis {axis!r}")


def dressing_gate(geometry: LatticeGeometry, mu: str, theta: float, s: np.ndarray) -> np.ndarray:
    """``D_mu(theta) s`` for ``mu`` in ``{x, z}``."""
    ph = np.exp(-1j * theta * geometry.energies)
    if mu == "z":
        return _diag(ph, s)
    if mu == "x":
        N = geometry.N
        return _hadamard_all(_diag(ph, _hadamard_all(s, N)), N)
    raise ValueError(f"dressing gates act along x or z, got {mu!r}")


def apply_full_gate(geometry: LatticeGeometry, gate: Gate, s: np.ndarray) -> np.ndarray:
    if gate.kind == "R":
        return full_rotation(geometry, gate.axis, gate.angle, s)
    return dressing_gate(geometry, gate.axis, gate.angle, s)


def full_entangle(geometry: LatticeGeometry, params: CircuitParams) -> np.ndarray:
    s = full_initial_state(geometry.N)
    for g in entangler_gates(params):
        s = apply_full_gate(geometry, g, s)
    return s


def full_decode(geometry: LatticeGeometry, params: CircuitParams, s: np.ndarray) -> np.ndarray:
    for g in decoder_gates(params):
        s = apply_full_gate(geometry, g, s)
    return s


def _outcome_gram(geometry: LatticeGeometry, params: CircuitParams) -> np.ndarray:
    """``Q[m', n, j] = sum_{b in m'} conj(chi_n(b)) chi_j(b)``.

    ``chi_j`` is the decoded magnetization-``m_j`` component of the input
    state, so ``p(m'|phi) = sum_{n,j} Q[m', n, j] exp(i phi (m_n - m_j))``.
    """
    N = geometry.N
    psi = full_entangle(geometry, params)
    pc = geometry.popcount
    comps = np.zeros((2 ** N, N + 1), dtype=complex)
    comps[np.arange(2 ** N), pc] = psi
    chi = full_decode(geometry, params, comps)
    Q = np.empty((N + 1, N + 1, N + 1), dtype=complex)
    for w in range(N + 1):
        c = chi[pc == w]
        Q[w] = c.conj().T @ c
    return Q


def finite_range_kernel(geometry: LatticeGeometry, params: CircuitParams, phi_nodes,
                        weights=None) -> ProbabilityKernel:
    """``p(m|phi)`` summed over bit strings of Hamming weight ``N/2 + m``."""
    phi_nodes = np.atleast_1d(np.asarray(phi_nodes, dtype=float))
    N = geometry.N
    m = np.arange(N + 1) - N / 2
    Q = _outcome_gram(geometry, params)
    ph = np.exp(1j * phi_nodes[:, None, None] * (m[:, None] - m[None, :]))
    probs = np.real(np.einsum("wnj,knj->kw", Q, ph))
    probs = np.maximum(probs, 0.0)
    probs /= probs.sum(axis=1, keepdims=True)
    if weights is None:
        weights = np.full(phi_nodes.size, np.nan)
    return ProbabilityKernel(phi_nodes, np.asarray(weights, dtype=float), probs, m)


def finite_range_moments(geometry: LatticeGeometry, params: CircuitParams, delta_phi: float):
    """Prior moments ``A_k(m)`` for k = 0, 1, 2 of the dressed circuit."""
    m = np.arange(geometry.N + 1) - geometry.N / 2
    Q = _outcome_gram(geometry, params)
    return [np.real(np.einsum("wnj,jn->w", Q, g)) for g in moment_matrices(m, delta_phi)]


class FiniteRangeObjective(FiniteDifferenceMixin):
    """Moments ``(B, C)`` of a dressed circuit; gradients by central differences."""

    def __init__(self, geometry: LatticeGeometry, n_en: int, n_de: int, prior: PriorSpec):
        self.geometry = geometry
        self.N = geometry.N
        self.n_en, self.n_de = n_en, n_de
        self.prior = prior
        self.m = np.arange(self.N + 1) - self.N / 2

    @property
    def n_params(self) -> int:
        return 3 * (self.n_en + self.n_de)

    def params(self, x) -> CircuitParams:
        return CircuitParams.from_angles(self.n_en, self.n_de, x)

    def moments(self, x):
        A0, A1, _ = finite_range_moments(self.geometry, self.params(x), self.prior.delta_phi)
        return float(self.m @ A1), float((self.m ** 2) @ A0)
