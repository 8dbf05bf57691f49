"""Layered entangler/decoder circuits and the Ramsey outcome distribution.

A ``(n_en, n_de)`` circuit prepares ``U_En |-N/2>`` with

    U_En = [R_x T_x T_z]_{n_en} ... [R_x T_x T_z]_1 R_y(pi/2)

and measures ``J_z`` after

    U_De = R_x(pi/2) [T_z T_x R_x]_1 ... [T_z T_x R_x]_{n_de}.

Parameters are stored layer-major: ``theta[3*l + g]`` is gate ``g`` (0: T_z,
1: T_x, 2: R_x) of entangler layer ``l + 1``; ``vartheta`` likewise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .spin import SpinOperatorTable, basis_state, oat, rotation

# gate kind and axis of the three gates within a layer, in parameter order
LAYER_GATES = (("T", "z"), ("T", "x"), ("R", "x"))


@dataclass
class CircuitParams:
    n_en: int
    n_de: int
    theta: np.ndarray = field(default=None)
    vartheta: np.ndarray = field(default=None)
    a: float = 0.0

    def __post_init__(self):
        if int(self.n_en) != self.n_en or int(self.n_de) != self.n_de:
            raise ValueError("layer counts must be integers")
        self.n_en, self.n_de = int(self.n_en), int(self.n_de)
        if self.n_en < 0 or self.n_de < 0:
            raise ValueError("layer counts must be non-negative")
        if self.theta is None:
            self.theta = np.zeros(3 * self.n_en)
        if self.vartheta is None:
            self.vartheta = np.zeros(3 * self.n_de)
        self.theta = np.asarray(self.theta, dtype=float).ravel()
        self.vartheta = np.asarray(self.vartheta, dtype=float).ravel()
        if self.theta.size != 3 * self.n_en:
            raise ValueError(f"theta needs {3 * self.n_en} entries, got {self.theta.size}")
        if self.vartheta.size != 3 * self.n_de:
            raise ValueError(f"vartheta needs {3 * self.n_de} entries, got {self.vartheta.size}")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.vartheta))
                and np.isfinite(self.a)):
            raise ValueError("circuit parameters must be finite")
        self.a = float(self.a)

    @property
    def template(self) -> tuple[int, int]:
        return (self.n_en, self.n_de)

    @property
    def n_params(self) -> int:
        return 3 * (self.n_en + self.n_de)

    def angles(self) -> np.ndarray:
        """All gate angles, entangler first."""
        return np.concatenate([self.theta, self.vartheta])

    @classmethod
    def from_angles(cls, n_en: int, n_de: int, x, a: float = 0.0) -> "CircuitParams":
        x = np.asarray(x, dtype=float)
        return cls(n_en, n_de, x[:3 * n_en], x[3 * n_en:], a)

    def padded(self, n_en: int, n_de: int) -> "CircuitParams":
        """Embed into a deeper template with zero angles in the new layers.

        New entangler layers are appended after the existing ones (they act
        last); new decoder layers are prepended in the product, which also
        makes them act first on the state, so zero angles leave the circuit
        unchanged in both cases.
        """
        if n_en < self.n_en or n_de < self.n_de:
            raise ValueError("cannot pad to a shallower template")
        theta = np.concatenate([self.theta, np.zeros(3 * (n_en - self.n_en))])
        vartheta = np.concatenate([self.vartheta, np.zeros(3 * (n_de - self.n_de))])
        return CircuitParams(n_en, n_de, theta, vartheta, self.a)

    def to_dict(self) -> dict:
        return {"n_en": self.n_en, "n_de": self.n_de, "theta": self.theta.tolist(),
                "vartheta": self.vartheta.tolist(), "a": self.a}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitParams":
        return cls(d["n_en"], d["n_de"], d.get("theta"), d.get("vartheta"), d.get("a", 0.0))

    @classmethod
    def from_json(cls, text: str) -> "CircuitParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Gate:
    kind: str      # "R" rotation or "T" twist
    axis: str
    angle: float
    index: int     # position in ``params.angles()`` or -1 for fixed gates


def entangler_gates(params: CircuitParams) -> list[Gate]:
    """Entangler gates in the order they act on the state."""
    gates = [Gate("R", "y", np.pi / 2, -1)]
    for layer in range(params.n_en):
        for g, (kind, axis) in enumerate(LAYER_GATES):
            i = 3 * layer + g
            gates.append(Gate(kind, axis, params.theta[i], i))
    return gates


def decoder_gates(params: CircuitParams) -> list[Gate]:
    """Decoder gates in the order they act on the state."""
    off = 3 * params.n_en
    gates = []
    for layer in reversed(range(params.n_de)):
        for g in (2, 1, 0):
            kind, axis = LAYER_GATES[g]
            i = 3 * layer + g
            gates.append(Gate(kind, axis, params.vartheta[i], off + i))
    gates.append(Gate("R", "x", np.pi / 2, -1))
    return gates


def apply_gate(table: SpinOperatorTable, gate: Gate, s: np.ndarray) -> np.ndarray:
    if gate.kind == "R":
        return rotation(table, gate.axis, gate.angle, s)
    return oat(table, gate.axis, gate.angle, s)


def apply_gates(table: SpinOperatorTable, gates, s: np.ndarray) -> np.ndarray:
    for gate in gates:
        s = apply_gate(table, gate, s)
    return s


def initial_state(table: SpinOperatorTable) -> np.ndarray:
    return basis_state(table, -table.basis.j)


def entangle(table: SpinOperatorTable, params: CircuitParams) -> np.ndarray:
    """Input state ``U_En(theta)|-N/2>``."""
    return apply_gates(table, entangler_gates(params), initial_state(table))


def decode(table: SpinOperatorTable, params: CircuitParams, s: np.ndarray) -> np.ndarray:
    return apply_gates(table, decoder_gates(params), s)


def decoder_unitary(table: SpinOperatorTable, params: CircuitParams) -> np.ndarray:
    return decode(table, params, np.eye(table.dim, dtype=complex))


def phase_evolve(table: SpinOperatorTable, phi: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Columns ``exp(-i phi_k J_z) s`` for every phase node."""
    return np.exp(-1j * np.outer(table.m, np.atleast_1d(phi))) * s[:, None]


@dataclass
class ProbabilityKernel:
    """Outcome table ``probs[k, i] = p(m_i | phi_k)``."""

    phi_nodes: np.ndarray
    weights: np.ndarray
    probs: np.ndarray
    m_values: np.ndarray

    def __post_init__(self):
        self.probs = np.where(self.probs < 0, 0.0, self.probs)

    @property
    def N(self) -> int:
        return self.m_values.size - 1

    def row_sums(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    def to_csv(self, path, extra: dict | None = None) -> None:
        extra = extra or {}
        cols = ["phi", "m", "p"] + list(extra)
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            tail = "".join(f",{v!r}" for v in extra.values())
            for k, phi in enumerate(self.phi_nodes):
                for i, m in enumerate(self.m_values):
                    fh.write(f"{phi!r},{m!r},{self.probs[k, i]!r}{tail}\n")


def conditional_probs(table: SpinOperatorTable, params: CircuitParams, phi_nodes,
                      weights=None) -> ProbabilityKernel:
    """Tabulate ``p(m|phi) = |<m| U_De exp(-i phi J_z) U_En |psi0>|^2``."""
    phi_nodes = np.atleast_1d(np.asarray(phi_nodes, dtype=float))
    psi = entangle(table, params)
    amps = decode(table, params, phase_evolve(table, phi_nodes, psi))
    probs = np.abs(amps.T) ** 2
    if weights is None:
        weights = np.full(phi_nodes.size, np.nan)
    return ProbabilityKernel(phi_nodes, np.asarray(weights, dtype=float), probs, table.m.copy())


def linear_estimator(a: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda m: a * np.asarray(m, dtype=float)


def _estimator_values(kernel: ProbabilityKernel, estimator) -> np.ndarray:
    if callable(estimator):
        return np.asarray(estimator(kernel.m_values), dtype=float)
    est = np.asarray(estimator, dtype=float)
    if est.shape != kernel.m_values.shape:
        raise ValueError("estimator table must have one entry per outcome")
    return est


def estimator_mean(kernel: ProbabilityKernel, estimator) -> np.ndarray:
    """Expected estimate ``sum_m phi_est(m) p(m|phi)`` on every node."""
    return kernel.probs @ _estimator_values(kernel, estimator)


# ---------------------------------------------------------------------------
# named protocols
# ---------------------------------------------------------------------------

def css_params() -> CircuitParams:
    return CircuitParams(0, 0)


def ghz_params(N: int) -> CircuitParams:
    """A ``(2, 1)`` circuit performing GHZ interferometry.

    The entangler prepares ``(|-j> + e^{i chi}|+j>)/sqrt 2`` along ``z`` and
    the decoder reads out the parity-like fringe ``(1 +- sin N phi)/2`` on
    the extremal outcomes.  Angles are the closed forms of :mod:`varramsey.ghz`.
    """
    from .ghz import ghz_angles
    theta, vartheta = ghz_angles(N)
    return CircuitParams(2, 1, theta, vartheta, 0.0)


def iter_templates(max_en: int, max_de: int) -> Iterator[tuple[int, int]]:
    for n_en in range(max_en + 1):
        for n_de in range(max_de + 1):
            yield (n_en, n_de)
