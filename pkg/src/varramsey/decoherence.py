"""Local dephasing in the permutation-invariant (PI) block representation.

A permutation-invariant density matrix of N qubits decomposes as
``rho = sum_j rho^(j) (x) 1_{d_j}`` over total-spin sectors ``j`` with
multiplicities ``d_j``; we store the ``(2j+1)``-dimensional blocks
``rho^(j)`` with the convention ``sum_j d_j tr rho^(j) = 1``.

The dephasing generator ``L rho = (1/4) sum_k (sz_k rho sz_k - rho)`` maps
each matrix element ``rho^(j)_{m m'}`` into sectors ``j' in {j-1, j, j+1}``
at the same ``(m, m')``.  Writing ``sz`` on one qubit in the coupled basis
``|j, m> = sum_s C(j_r, m-s; 1/2, s | j, m) |j_r, m-s>|s>`` and averaging
over which qubit carries it gives

    D[j -> j'](m, m') = N / d_j'^(N) * sum_{j_r} d_{j_r}^(N-1) K(m) K(m'),
    K(m) = sum_s 2s C(j_r, m-s; 1/2, s | j, m) C(j_r, m-s; 1/2, s | j', m),

with ``j_r in {j +- 1/2} & {j' +- 1/2}``; ``L = (D - N)/4``.  For fixed
``(m, m')`` this is a small matrix over sectors, exponentiated directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import block_diag, expm
from scipy.special import gammaln

from .circuits import (CircuitParams, ProbabilityKernel, decoder_gates, entangle,
                       entangler_gates, initial_state)
from .estimation import PriorSpec, moment_matrices
from .spin import SpinOperatorTable, build_operators, gate_matrix


def sector_values(N: int) -> np.ndarray:
    """Total-spin sectors ``j = N/2, N/2 - 1, ...`` down to 0 or 1/2."""
    return N / 2 - np.arange(N // 2 + 1)


def degeneracy(N: int, j: float) -> int:
    """Multiplicity of spin ``j`` in ``N`` spin-1/2 particles."""
    if N == 0:
        return 1 if j == 0 else 0
    k = N / 2 - j
    if j < 0 or k < 0 or abs(k - round(k)) > 1e-9:
        return 0
    k = int(round(k))
    val = gammaln(N + 1) + np.log(2 * j + 1) - gammaln(k + 1) - gammaln(N - k + 2)
    return int(round(np.exp(val)))


def _cg_half(j_r: float, j: float, m: float, s: float) -> float:
    """``C(j_r, m - s; 1/2, s | j, m)`` for ``j = j_r +- 1/2``."""
    if abs(m) > j + 1e-9 or abs(m - s) > j_r + 1e-9 or j < 0:
        return 0.0
    den = 2 * j_r + 1
    if abs(j - (j_r + 0.5)) < 1e-9:
        num = j_r + m + 0.5 if s > 0 else j_r - m + 0.5
        return float(np.sqrt(max(num, 0.0) / den))
    if abs(j - (j_r - 0.5)) < 1e-9:
        if s > 0:
            return float(-np.sqrt(max(j_r - m + 0.5, 0.0) / den))
        return float(np.sqrt(max(j_r + m + 0.5, 0.0) / den))
    return 0.0


def _transfer(N: int, j: float, jp: float, m: float, mp: float) -> float:
    """Coefficient of ``rho^(j)_{m m'}`` in ``D(rho)^(j')_{m m'}``."""
    total = 0.0
    for j_r in (j - 0.5, j + 0.5):
        if j_r < 0 or abs(jp - j_r) != 0.5 or degeneracy(N - 1, j_r) == 0:
            continue
        K = []
        for mm in (m, mp):
            K.append(sum(2 * s * _cg_half(j_r, j, mm, s) * _cg_half(j_r, jp, mm, s)
                         for s in (0.5, -0.5)))
        total += degeneracy(N - 1, j_r) * K[0] * K[1]
    return N * total / degeneracy(N, jp)


@lru_cache(maxsize=8)
def dephasing_generator(N: int) -> np.ndarray:
    """``L[a, b, j', j]``: generator over sectors for outcome indices ``(a, b)``."""
    js = sector_values(N)
    m = np.arange(N + 1) - N / 2
    nj = js.size
    L = np.zeros((N + 1, N + 1, nj, nj))
    for a, ma in enumerate(m):
        for b, mb in enumerate(m):
            valid = [i for i, j in enumerate(js) if j >= max(abs(ma), abs(mb)) - 1e-9]
            for i in valid:
                for k in valid:
                    if abs(js[i] - js[k]) > 1 + 1e-9:
                        continue
                    L[a, b, k, i] = 0.25 * _transfer(N, js[i], js[k], ma, mb)
                L[a, b, i, i] -= 0.25 * N
    L.setflags(write=False)
    return L


@lru_cache(maxsize=32)
def dephasing_propagator(N: int, gammaT: float) -> np.ndarray:
    """``exp(gammaT L)`` for every outcome pair, shape ``(N+1, N+1, nj, nj)``."""
    L = dephasing_generator(N)
    P = np.empty_like(L)
    for a in range(N + 1):
        for b in range(a, N + 1):
            P[a, b] = expm(gammaT * L[a, b])
            P[b, a] = P[a, b]
    P.setflags(write=False)
    return P


@dataclass
class PIBlockState:
    """Sector blocks embedded on the full ``m`` grid: ``blocks[i, a, b]``.

    Entries with ``|m_a| > j_i`` or ``|m_b| > j_i`` are zero.
    """

    N: int
    blocks: np.ndarray

    @property
    def j_values(self) -> np.ndarray:
        return sector_values(self.N)

    @property
    def degeneracies(self) -> np.ndarray:
        return np.array([degeneracy(self.N, j) for j in self.j_values])

    def block(self, j: float) -> np.ndarray:
        i = int(round(self.N / 2 - j))
        lo = int(round(self.N / 2 - j))
        hi = self.N + 1 - lo
        return self.blocks[i, lo:hi, lo:hi]

    def trace(self) -> float:
        return float(np.real(self.degeneracies @ np.einsum("iaa->i", self.blocks)))

    @classmethod
    def from_pure(cls, psi: np.ndarray) -> "PIBlockState":
        N = psi.size - 1
        blocks = np.zeros((N // 2 + 1, N + 1, N + 1), dtype=complex)
        blocks[0] = np.outer(psi, psi.conj())
        return cls(N, blocks)


def dephase(state: PIBlockState, gammaT: float) -> PIBlockState:
    """Apply ``exp(gammaT L)`` of local dephasing."""
    if not np.isfinite(gammaT) or gammaT < 0:
        raise ValueError(f"dephasing exposure must be >= 0, got {gammaT}")
    if gammaT == 0:
        return PIBlockState(state.N, state.blocks.copy())
    P = dephasing_propagator(state.N, float(gammaT))
    return PIBlockState(state.N, np.einsum("abkj,jab->kab", P, state.blocks))


# ---------------------------------------------------------------------------
# collective gates on the direct sum of sectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SectorSpace:
    """Direct sum of all spin-``j`` sectors with block-diagonal collective operators.

    Provides the attributes used by :func:`varramsey.spin.gate_matrix`.
    """

    N: int
    m: np.ndarray
    weights: np.ndarray      # degeneracy of the sector of each basis state
    offsets: np.ndarray      # index of the first basis state of each sector
    Jx: np.ndarray
    Jz: np.ndarray
    Jx2: np.ndarray
    Jz2: np.ndarray
    eig_Jx: np.ndarray

    @property
    def dim(self) -> int:
        return self.m.size

    def generator(self, name: str) -> np.ndarray:
        return {"x": self.Jx, "z": self.Jz, "xx": self.Jx2, "zz": self.Jz2}[name]


@lru_cache(maxsize=16)
def sector_space(N: int) -> SectorSpace:
    ms, ws, offs, jx, vx = [], [], [], [], []
    pos = 0
    for j in sector_values(N):
        dim = int(round(2 * j + 1))
        offs.append(pos)
        pos += dim
        ms.append(np.arange(dim) - j)
        ws.append(np.full(dim, degeneracy(N, j), dtype=float))
        if dim == 1:
            jx.append(np.zeros((1, 1)))
            vx.append(np.ones((1, 1)))
        else:
            t = build_operators(dim - 1)
            jx.append(t.Jx)
            vx.append(t.eig_Jx)
    m = np.concatenate(ms)
    Jx = block_diag(*jx)
    return SectorSpace(N, m, np.concatenate(ws), np.array(offs), Jx, np.diag(m), Jx @ Jx,
                       np.diag(m * m), block_diag(*vx))


def embed_blocks(space: SectorSpace, state: PIBlockState) -> np.ndarray:
    """Block-diagonal density matrix on the sector space."""
    N = state.N
    rho = np.zeros((space.dim, space.dim), dtype=complex)
    for i, j in enumerate(sector_values(N)):
        lo = int(round(N / 2 - j))
        dim = int(round(2 * j + 1))
        o = space.offsets[i]
        rho[o:o + dim, o:o + dim] = state.blocks[i, lo:lo + dim, lo:lo + dim]
    return rho


def _sector_index(N: int):
    """For every sector-space basis state: (sector i, full-grid index a)."""
    sec, idx = [], []
    for i, j in enumerate(sector_values(N)):
        lo = int(round(N / 2 - j))
        dim = int(round(2 * j + 1))
        sec.extend([i] * dim)
        idx.extend(range(lo, lo + dim))
    return np.array(sec), np.array(idx)


def sector_decoder(space: SectorSpace, params: CircuitParams) -> np.ndarray:
    U = np.eye(space.dim, dtype=complex)
    for g in decoder_gates(params):
        U = gate_matrix(space, g.kind, g.axis, g.angle) @ U
    return U


def _outcome_probs(space: SectorSpace, diag: np.ndarray) -> np.ndarray:
    """Aggregate sector-space populations into ``p(m)`` over ``m = -N/2..N/2``."""
    N = space.N
    out = np.zeros(diag.shape[:-1] + (N + 1,))
    idx = np.rint(space.m + N / 2).astype(int)
    np.add.at(out.T, idx, (diag * space.weights).T)
    return out


def conditional_probs_dephased(table: SpinOperatorTable, params: CircuitParams, phi_nodes,
                               gammaT: float, weights=None) -> ProbabilityKernel:
    """``p(m|phi, gammaT) = sum_j d_j <j,m| U_De rho^(j) U_De^+ |j,m>``."""
    phi_nodes = np.atleast_1d(np.asarray(phi_nodes, dtype=float))
    N = table.N
    state = dephase(PIBlockState.from_pure(entangle(table, params)), gammaT)
    space = sector_space(N)
    rho = embed_blocks(space, state)
    U = sector_decoder(space, params)
    d = space.m[None, :] - space.m[:, None]
    probs = np.empty((phi_nodes.size, N + 1))
    for k, phi in enumerate(phi_nodes):
        r = rho * np.exp(1j * phi * d)
        pop = np.real(np.einsum("ij,jk,ik->i", U, r, U.conj()))
        probs[k] = _outcome_probs(space, pop)
    if weights is None:
        weights = np.full(phi_nodes.size, np.nan)
    return ProbabilityKernel(phi_nodes, np.asarray(weights, dtype=float), probs, table.m.copy())


class DephasedObjective:
    """Moments ``(B, C)`` of a circuit with dephasing during the phase imprint.

    The gradient is exact: decoder gates are differentiated on the sector
    space as in the noiseless case, and the observable pulled back through
    the decoder is mapped through the adjoint channel onto the top sector
    before the entangler sweep.
    """

    exact_gradient = True

    def __init__(self, table: SpinOperatorTable, n_en: int, n_de: int, prior: PriorSpec,
                 gammaT: float):
        if gammaT < 0:
            raise ValueError("dephasing exposure must be >= 0")
        self.table = table
        self.N = table.N
        self.n_en, self.n_de = n_en, n_de
        self.prior = prior
        self.gammaT = float(gammaT)
        self.space = sector_space(table.N)
        self.P = dephasing_propagator(table.N, self.gammaT)
        g0, g1, _ = moment_matrices(self.space.m, prior.delta_phi)
        self.G = np.stack([g1, g0])
        w, m = self.space.weights, self.space.m
        self.M = np.stack([np.diag(w * m), np.diag(w * m * m)]).astype(complex)
        self.sec, self.idx = _sector_index(table.N)
        self._top = slice(0, table.N + 1)

    @property
    def n_params(self) -> int:
        return 3 * (self.n_en + self.n_de)

    def params(self, x) -> CircuitParams:
        return CircuitParams.from_angles(self.n_en, self.n_de, x)

    def _channel(self, rho_top: np.ndarray) -> np.ndarray:
        """Dephased state on the sector space from a top-sector density matrix."""
        sec, idx = self.sec, self.idx
        out = np.zeros((self.space.dim, self.space.dim), dtype=complex)
        same = sec[:, None] == sec[None, :]
        coef = self.P[idx[:, None], idx[None, :], sec[:, None], 0]
        out[same] = (coef * rho_top[idx[:, None], idx[None, :]])[same]
        return out

    def _adjoint_channel(self, W: np.ndarray) -> np.ndarray:
        """``K`` with ``tr(W channel(rho)) = tr(K rho)`` for top-sector ``rho``."""
        sec, idx = self.sec, self.idx
        n = self.N + 1
        K = np.zeros((n, n), dtype=complex)
        same = sec[:, None] == sec[None, :]
        coef = self.P[idx[:, None], idx[None, :], sec[:, None], 0]
        # tr(W R) = sum_{ab} W[b, a] R[a, b], R[a, b] = coef[a, b] rho[idx a, idx b]
        contrib = np.where(same, coef * W.T, 0.0)
        np.add.at(K, (idx[:, None].repeat(self.space.dim, 1),
                      idx[None, :].repeat(self.space.dim, 0)), contrib)
        return K.T

    def _gates(self, p):
        en = [(g, gate_matrix(self.table, g.kind, g.axis, g.angle))
              for g in entangler_gates(p)]
        de = [(g, gate_matrix(self.space, g.kind, g.axis, g.angle)) for g in decoder_gates(p)]
        return en, de

    def moments(self, x):
        B, C, _, _ = self._evaluate(x, grad=False)
        return B, C

    def moments_grad(self, x):
        return self._evaluate(x, grad=True)

    def _evaluate(self, x, grad: bool):
        en, de = self._gates(self.params(x))
        states = []
        psi = initial_state(self.table)
        for _, W in en:
            psi = W @ psi
            states.append(psi)
        R = self._channel(np.outer(psi, psi.conj()))
        S = R[None] * self.G
        forward = []
        for _, W in de:
            S = W @ S @ W.conj().T
            forward.append(S)
        M = self.M
        vals = np.real(np.einsum("kii,kii->k", M, S))
        if not grad:
            return float(vals[0]), float(vals[1]), None, None
        grads = np.zeros((2, self.n_params))
        for (gate, W), S_i in zip(reversed(de), reversed(forward)):
            if gate.index >= 0:
                g = self.space.generator(gate.axis if gate.kind == "R" else gate.axis * 2)
                comm = M @ g - g @ M
                grads[:, gate.index] = np.real(-1j * np.einsum("kab,kba->k", comm, S_i))
            M = W.conj().T @ M @ W
        K = np.stack([self._adjoint_channel(M[k] * self.G[k].T) for k in range(2)])
        lam = K @ psi
        for (gate, W), after in zip(reversed(en), reversed(states)):
            if gate.index >= 0:
                g = self.table.generator(gate.axis if gate.kind == "R" else gate.axis * 2)
                grads[:, gate.index] += 2 * np.real(-1j * (lam.conj() @ (g @ after)))
            lam = lam @ W.conj()
        return float(vals[0]), float(vals[1]), grads[0], grads[1]


def dephased_cost(table: SpinOperatorTable, params: CircuitParams, prior: PriorSpec,
                  gammaT: float) -> float:
    """BMSE with the optimal linear slope under dephasing (phase-moment route)."""
    obj = DephasedObjective(table, params.n_en, params.n_de, prior, gammaT)
    B, C = obj.moments(params.angles())
    return prior.variance - B * B / C if C > 1e-300 else prior.variance
