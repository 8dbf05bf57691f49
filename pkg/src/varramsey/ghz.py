"""Closed-form GHZ interferometer angles for the ``(2, 1)`` template.

The entangler maps ``|-N/2>`` onto ``(|-j> + e^{i chi}|+j>)/sqrt 2`` along
``z``.  For odd ``N`` a single ``T_z(pi/2)`` turns the ``x``-polarized
coherent state into a GHZ state along ``y`` and ``R_x(pi/2)`` brings it to
``z``.  For even ``N`` the same twist yields a GHZ state along ``x``, which
no ``x`` rotation can reorient; a relative branch phase ``R_x(-pi/2N)``
followed by a quarter twist ``T_z(pi/4)`` and ``R_x(pi/2)`` does the job.

The decoder is the inverse-twist readout: after the phase ``phi`` only the
extremal outcomes ``m = +-N/2`` occur, with ``p(+-N/2 | phi) = (1 +- sin N phi)/2``.
These assignments were found by a numerical search and then identified in
closed form; they are verified to machine precision in the test-suite.
"""

from __future__ import annotations

import numpy as np


def ghz_angles(N: int) -> tuple[np.ndarray, np.ndarray]:
    if N < 1:
        raise ValueError("N must be >= 1")
    if N % 2:
        theta = [np.pi / 2, 0.0, np.pi / 2, 0.0, 0.0, 0.0]
        vartheta = [0.0, np.pi / 2, np.pi if N % 4 == 1 else 0.0]
    else:
        theta = [-np.pi / 2, 0.0, -np.pi / (2 * N), np.pi / 4, 0.0, np.pi / 2]
        vartheta = [-np.pi / 2, 0.0, -np.pi / 2]
    return np.array(theta), np.array(vartheta)


def ghz_state(N: int, chi: float = 0.0) -> np.ndarray:
    """``(|-N/2> + e^{i chi}|+N/2>)/sqrt 2`` in the ``J_z`` basis."""
    s = np.zeros(N + 1, dtype=complex)
    s[0] = 1 / np.sqrt(2)
    s[-1] = np.exp(1j * chi) / np.sqrt(2)
    return s


def ghz_fidelity(s: np.ndarray) -> float:
    """Overlap with the best-phased ``z`` GHZ state."""
    return float((abs(s[0]) + abs(s[-1])) ** 2 / 2)
