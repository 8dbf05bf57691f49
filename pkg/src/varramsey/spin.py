"""Collective spin operators on the symmetric (Dicke) subspace.

States are plain complex numpy arrays indexed by ``m = -j, ..., +j``
(index ``i`` holds ``m = i - j``).  Every gate function accepts either a
single state vector or a 2D array whose columns are states.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import gammaln, sph_harm_y

MAX_ATOMS = 4096

_AXES = ("x", "y", "z")


@dataclass(frozen=True)
class SpinBasis:
    N: int

    @property
    def dim(self) -> int:
        return self.N + 1

    @property
    def j(self) -> float:
        return self.N / 2

    @property
    def m_values(self) -> np.ndarray:
        return np.arange(self.N + 1) - self.N / 2


@dataclass(frozen=True, eq=False)
class SpinOperatorTable:
    """Precomputed collective-spin matrices for ``N`` spin-1/2 particles.

    ``eig_Jx`` holds the orthogonal eigenvector matrix of ``Jx``; its
    eigenvalues are exactly ``basis.m_values`` (ascending), so gate phases
    are taken from the exact spectrum rather than from the numerical one.
    """

    basis: SpinBasis
    Jx: np.ndarray
    Jy: np.ndarray
    Jz: np.ndarray
    Jx2: np.ndarray
    Jz2: np.ndarray
    eig_Jx: np.ndarray

    @property
    def N(self) -> int:
        return self.basis.N

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def m(self) -> np.ndarray:
        return self._m

    def __post_init__(self):
        m = self.basis.m_values
        m.setflags(write=False)
        object.__setattr__(self, "_m", m)

    def generator(self, name: str) -> np.ndarray:
        return {"x": self.Jx, "y": self.Jy, "z": self.Jz,
                "xx": self.Jx2, "zz": self.Jz2}[name]


@lru_cache(maxsize=64)
def build_operators(N: int) -> SpinOperatorTable:
    """Build the spin-``N/2`` operator table.

    Also serves as the spin-``j`` irrep constructor for ``N = 2j``.
    """
    if not isinstance(N, (int, np.integer)) or isinstance(N, bool):
        raise TypeError(f"N must be an integer, got {type(N).__name__}")
    N = int(N)
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if N > MAX_ATOMS:
        raise ValueError(f"N={N} exceeds the supported maximum {MAX_ATOMS}")

    basis = SpinBasis(N)
    j = basis.j
    m = basis.m_values
    # <m+1|J+|m> = sqrt(j(j+1) - m(m+1))
    lower = m[:-1]
    ladder = np.sqrt(j * (j + 1) - lower * (lower + 1))
    Jp = np.diag(ladder, -1)
    Jx = 0.5 * (Jp + Jp.T)
    Jy = -0.5j * (Jp - Jp.T)
    Jz = np.diag(m)
    _, vecs = np.linalg.eigh(Jx)
    # deterministic sign convention: largest-magnitude entry of each column positive
    piv = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[piv, np.arange(basis.dim)])
    for arr in (Jx, Jy, Jz, vecs):
        arr.setflags(write=False)
    Jx2 = Jx @ Jx
    Jz2 = np.diag(m * m)
    Jx2.setflags(write=False)
    Jz2.setflags(write=False)
    return SpinOperatorTable(basis, Jx, Jy, Jz, Jx2, Jz2, vecs)


def _check_angle(theta) -> float:
    theta = float(theta)
    if not np.isfinite(theta):
        raise ValueError(f"gate angle must be finite, got {theta}")
    return theta


def _diag_apply(phases: np.ndarray, s: np.ndarray) -> np.ndarray:
    if s.ndim == 1:
        return phases * s
    return phases[:, None] * s


def apply_x_diagonal(table: SpinOperatorTable, phases: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Apply an operator that is diagonal in the ``Jx`` eigenbasis."""
    V = table.eig_Jx
    return V @ _diag_apply(phases, V.T @ s)


def rotation(table: SpinOperatorTable, axis: str, theta: float, s: np.ndarray) -> np.ndarray:
    """Apply ``exp(-i theta J_axis)``."""
    theta = _check_angle(theta)
    m = table.m
    if axis == "z":
        return _diag_apply(np.exp(-1j * theta * m), s)
    if axis == "x":
        return apply_x_diagonal(table, np.exp(-1j * theta * m), s)
    if axis == "y":
        # R_y(t) = R_z(pi/2) R_x(t) R_z(-pi/2)
        s = _diag_apply(np.exp(0.5j * np.pi * m), s)
        s = apply_x_diagonal(table, np.exp(-1j * theta * m), s)
        return _diag_apply(np.exp(-0.5j * np.pi * m), s)
    raise ValueError(f"unknown rotation axis {axis!r}")


def oat(table: SpinOperatorTable, axis: str, theta: float, s: np.ndarray) -> np.ndarray:
    """Apply the one-axis-twisting gate ``exp(-i theta J_axis^2)``."""
    theta = _check_angle(theta)
    m2 = table.m ** 2
    if axis == "z":
        return _diag_apply(np.exp(-1j * theta * m2), s)
    if axis == "x":
        return apply_x_diagonal(table, np.exp(-1j * theta * m2), s)
    raise ValueError(f"OAT axis must be 'x' or 'z', got {axis!r}")


def gate_matrix(table: SpinOperatorTable, kind: str, axis: str, theta: float) -> np.ndarray:
    """Dense unitary of a single rotation (``kind='R'``) or twist (``kind='T'``)."""
    if kind not in ("R", "T"):
        raise ValueError(f"unknown gate kind {kind!r}")
    theta = _check_angle(theta)
    m = table.m
    spec = m if kind == "R" else m * m
    if axis == "z":
        return np.diag(np.exp(-1j * theta * spec))
    if axis == "x":
        V = table.eig_Jx
        return (V * np.exp(-1j * theta * spec)) @ V.T
    if axis == "y" and kind == "R":
        return rotation(table, axis, theta, np.eye(table.dim, dtype=complex))
    raise ValueError(f"unsupported gate {kind}_{axis}")


def basis_state(table: SpinOperatorTable, m: float) -> np.ndarray:
    idx = int(round(m + table.basis.j))
    if not 0 <= idx < table.dim or abs(idx - table.basis.j - m) > 1e-9:
        raise ValueError(f"m={m} is not a valid magnetization for N={table.N}")
    s = np.zeros(table.dim, dtype=complex)
    s[idx] = 1.0
    return s


def expectation(op: np.ndarray, s: np.ndarray) -> complex:
    return np.vdot(s, op @ s)


# ---------------------------------------------------------------------------
# Wigner 3j symbols and spherical-tensor (Wigner quasi-probability) maps
# ---------------------------------------------------------------------------

def _lf(x):
    return gammaln(np.asarray(x, dtype=float) + 1.0)


def wigner_3j(j1, j2, j3, m1, m2, m3):
    """Wigner 3j symbol by the Racah single-sum formula in log-factorials.

    All arguments broadcast; half-integers are given as floats.
    """
    j1, j2, j3, m1, m2, m3 = np.broadcast_arrays(*(np.asarray(a, dtype=float)
                                                   for a in (j1, j2, j3, m1, m2, m3)))
    shape = j1.shape
    j1, j2, j3, m1, m2, m3 = (a.ravel() for a in (j1, j2, j3, m1, m2, m3))
    out = np.zeros(j1.size)

    def is_int(a):
        return np.abs(a - np.round(a)) < 1e-9

    ok = (np.abs(m1 + m2 + m3) < 1e-9)
    ok &= (np.abs(m1) <= j1 + 1e-9) & (np.abs(m2) <= j2 + 1e-9) & (np.abs(m3) <= j3 + 1e-9)
    ok &= (j3 <= j1 + j2 + 1e-9) & (j3 >= np.abs(j1 - j2) - 1e-9)
    ok &= is_int(j1 + j2 + j3) & is_int(j1 - m1) & is_int(j2 - m2) & is_int(j3 - m3)
    if not ok.any():
        return out.reshape(shape)
    a1, a2, a3, b1, b2, b3 = (np.round(2 * a[ok]).astype(np.int64)
                              for a in (j1, j2, j3, m1, m2, m3))
    # doubled quantum numbers keep everything in exact integer arithmetic
    k1 = (a1 + a2 - a3) // 2
    k2 = (a1 - a2 + a3) // 2
    k3 = (-a1 + a2 + a3) // 2
    k4 = (a1 + a2 + a3) // 2 + 1
    f = [(a1 + b1) // 2, (a1 - b1) // 2, (a2 + b2) // 2, (a2 - b2) // 2,
         (a3 + b3) // 2, (a3 - b3) // 2]
    log_pref = 0.5 * (_lf(k1) + _lf(k2) + _lf(k3) - _lf(k4) + sum(_lf(x) for x in f))
    # denominators: t, j3-j2+t+m1, j3-j1+t-m2, j1+j2-j3-t, j1-t-m1, j2-t+m2
    c1 = (a3 - a2 + b1) // 2
    c2 = (a3 - a1 - b2) // 2
    c3 = k1
    c4 = (a1 - b1) // 2
    c5 = (a2 + b2) // 2
    tmin = np.maximum.reduce([np.zeros_like(c1), -c1, -c2])
    tmax = np.minimum.reduce([c3, c4, c5])
    span = int(np.max(tmax - tmin)) + 1 if tmax.size else 0
    t = tmin[:, None] + np.arange(max(span, 1))[None, :]
    valid = t <= tmax[:, None]
    tt = np.where(valid, t, tmin[:, None])
    log_t = -(_lf(tt) + _lf(c1[:, None] + tt) + _lf(c2[:, None] + tt)
              + _lf(c3[:, None] - tt) + _lf(c4[:, None] - tt) + _lf(c5[:, None] - tt))
    log_t = np.where(valid, log_t, -np.inf)
    shift = np.max(log_t, axis=1, keepdims=True)
    sign_t = np.where(tt % 2 == 0, 1.0, -1.0)
    total = np.sum(np.where(valid, sign_t * np.exp(log_t - shift), 0.0), axis=1)
    phase_exp = (a1 - a2 - b3) // 2
    sign = np.where(phase_exp % 2 == 0, 1.0, -1.0)
    vals = sign * total * np.exp(log_pref + shift[:, 0])
    # the alternating sum cancels badly for large quantum numbers; redo those
    # entries exactly in rational arithmetic
    bad = np.flatnonzero(np.abs(total) < _CANCEL_TOL * np.sum(valid, axis=1))
    for i in bad:
        exact = _racah_sum_exact(int(tmin[i]), int(tmax[i]),
                                 *(int(c[i]) for c in (c1, c2, c3, c4, c5)))
        if exact == 0:
            vals[i] = 0.0
            continue
        log_abs = math.log(abs(exact.numerator)) - math.log(exact.denominator)
        vals[i] = sign[i] * math.copysign(1.0, exact) * math.exp(log_pref[i] + log_abs)
    out[ok] = vals
    return out.reshape(shape)


_CANCEL_TOL = 1e-6


def _racah_sum_exact(tmin, tmax, c1, c2, c3, c4, c5) -> Fraction:
    f = math.factorial
    total = Fraction(0)
    for t in range(tmin, tmax + 1):
        den = f(t) * f(c1 + t) * f(c2 + t) * f(c3 - t) * f(c4 - t) * f(c5 - t)
        total += Fraction(-1 if t % 2 else 1, den)
    return total


def spherical_tensor(N: int, k: int, q: int) -> np.ndarray:
    """Multipole operator ``T_{k,q}`` on the spin-``N/2`` space."""
    j = N / 2
    m = np.arange(N + 1) - j
    mm, mp = np.meshgrid(m, m, indexing="ij")
    vals = wigner_3j(j, k, j, -mm, q, mp)
    sign = np.where(np.round(j - mm) % 2 == 0, 1.0, -1.0)
    return sign * np.sqrt(2 * k + 1) * vals


def multipole_coefficients(op: np.ndarray) -> dict[int, np.ndarray]:
    """Coefficients ``c[k][q + k] = tr(op T_{k,q})`` for ``k = 0..N``."""
    dim = op.shape[0]
    N = dim - 1
    j = N / 2
    m = np.arange(dim) - j
    coeffs = {}
    for k in range(N + 1):
        ck = np.zeros(2 * k + 1, dtype=complex)
        for q in range(-k, k + 1):
            # T_kq[m, m'] is nonzero only for m = m' + q
            lo = max(0, -q)
            hi = min(dim, dim - q)
            if hi <= lo:
                continue
            cols = np.arange(lo, hi)
            rows = cols + q
            vals = wigner_3j(j, k, j, -m[rows], q, m[cols])
            sign = np.where(np.round(j - m[rows]) % 2 == 0, 1.0, -1.0)
            t = sign * np.sqrt(2 * k + 1) * vals
            ck[q + k] = np.sum(op[cols, rows] * t)
        coeffs[k] = ck
    return coeffs


@dataclass
class WignerField:
    """Wigner quasi-probability sampled on a Gauss-Legendre sphere grid.

    ``theta`` are polar nodes (Gauss-Legendre in ``cos theta``), ``phi``
    are uniform azimuthal nodes; ``values[i, l]`` belongs to
    ``(theta[i], phi[l])``.  ``weights`` integrate over solid angle.
    """

    N: int
    theta: np.ndarray
    phi: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    @property
    def k_max(self) -> int:
        return self.N

    def integrate(self, other: "WignerField | None" = None) -> float:
        f = self.values if other is None else self.values * other.values
        return float(np.sum(self.weights * f))

    def to_csv(self, path) -> None:
        tt, pp = np.meshgrid(self.theta, self.phi, indexing="ij")
        data = np.column_stack([tt.ravel(), pp.ravel(), self.values.ravel()])
        with open(path, "w") as fh:
            fh.write("theta,phi,value\n")
            for row in data:
                fh.write(f"{row[0]!r},{row[1]!r},{row[2]!r}\n")

    def to_binary(self, path) -> None:
        """Write a one-line JSON header followed by little-endian float64 values."""
        header = {"N": self.N, "k_max": self.k_max,
                  "grid": [len(self.theta), len(self.phi)],
                  "dtype": "<f8", "order": "theta-major"}
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "WignerField":
        raw = Path(path).read_bytes()
        head, _, body = raw.partition(b"\n")
        header = json.loads(head)
        n_theta, n_phi = header["grid"]
        values = np.frombuffer(body, dtype="<f8").reshape(n_theta, n_phi).copy()
        theta, phi, weights = sphere_grid(n_theta, n_phi)
        return cls(header["N"], theta, phi, values, weights)


def sphere_grid(n_theta: int = 256, n_phi: int = 512):
    x, w = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(x)[::-1]
    w = w[::-1]
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    weights = np.outer(w, np.full(n_phi, 2 * np.pi / n_phi))
    return theta, phi, weights


def wigner(op: np.ndarray, grid_resolution: tuple[int, int] = (256, 512)) -> WignerField:
    """Wigner distribution ``sum_kq tr(op T_kq) Y_kq`` of a Hermitian operator."""
    op = np.asarray(op)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise ValueError("operator must be a square matrix")
    scale = max(1.0, float(np.max(np.abs(op))))
    if np.max(np.abs(op - op.conj().T)) > 1e-10 * scale:
        raise ValueError("Wigner map requires a Hermitian operator")
    N = op.shape[0] - 1
    n_theta, n_phi = grid_resolution
    if n_phi < 2 * N + 1:
        raise ValueError(f"azimuthal grid of {n_phi} points cannot resolve |q| <= {N}")
    theta, phi, weights = sphere_grid(n_theta, n_phi)
    coeffs = multipole_coefficients(op)
    # W(theta, phi) = sum_q e^{i q phi} sum_k c_kq Y_kq(theta, 0)
    profiles = np.zeros((2 * N + 1, n_theta), dtype=complex)
    for k, ck in coeffs.items():
        q = np.arange(-k, k + 1)
        Y = sph_harm_y(k, q[:, None], theta[None, :], 0.0)
        profiles[q + N] += ck[:, None] * Y
    q_all = np.arange(-N, N + 1)
    phase = np.exp(1j * np.outer(q_all, phi))
    values = np.einsum("qt,qp->tp", profiles, phase)
    imag = np.max(np.abs(values.imag)) if values.size else 0.0
    if imag > 1e-8 * max(1.0, np.max(np.abs(values.real))):
        raise ArithmeticError(f"Wigner field has imaginary residue {imag:.3g}")
    return WignerField(N, theta, phi, values.real.copy(), weights)
