"""Overlapping Allan deviation and asymptotic fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AllanSeries:
    taus: np.ndarray        # averaging times (s)
    sigma_y: np.ndarray     # overlapping Allan deviation
    n: np.ndarray           # averaging windows in cycles

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("tau_seconds,sigma_y\n")
            for t, s in zip(self.taus, self.sigma_y):
                fh.write(f"{t!r},{s!r}\n")

    def window(self, n_min: float, n_max: float) -> np.ndarray:
        return (self.n >= n_min) & (self.n <= n_max)

    def fit_prefactor(self, n_min: float, n_max: float) -> tuple[float, float]:
        """Fit ``sigma_y = c tau^(-1/2)`` in log space; returns ``(c, rms log residual)``."""
        sel = self.window(n_min, n_max) & (self.sigma_y > 0)
        if not np.any(sel):
            raise ValueError(f"no averaging windows in [{n_min}, {n_max}]")
        r = np.log(self.sigma_y[sel]) + 0.5 * np.log(self.taus[sel])
        c = r.mean()
        return float(np.exp(c)), float(np.sqrt(np.mean((r - c) ** 2)))

    def fit_exponent(self, n_min: float, n_max: float) -> float:
        """Log-log slope of ``sigma_y`` against ``tau``."""
        sel = self.window(n_min, n_max) & (self.sigma_y > 0)
        if sel.sum() < 2:
            raise ValueError("need at least two averaging windows for a slope")
        return float(np.polyfit(np.log(self.taus[sel]), np.log(self.sigma_y[sel]), 1)[0])


def default_windows(n_data: int, per_decade: int = 10) -> np.ndarray:
    """Log-spaced windows ``1 <= n <= n_data // 2``."""
    top = n_data // 2
    if top < 1:
        return np.zeros(0, dtype=int)
    n = np.unique(np.round(np.logspace(0, np.log10(top), int(per_decade * np.log10(top)) + 1)))
    return n.astype(int)


def overlapping_allan(y, T: float, n=None) -> AllanSeries:
    """Overlapping Allan deviation of per-cycle fractional frequencies ``y``.

    ``sigma_y^2(n T) = sum_j (ybar_{j+n} - ybar_j)^2 / (2 (M - 2n + 1))`` over
    all ``M - 2n + 1`` windows, with ``ybar_j`` the mean of ``y[j:j+n]``.
    Windows longer than half the record are dropped.
    """
    y = np.asarray(y, dtype=float)
    M = y.size
    n = default_windows(M) if n is None else np.asarray(n, dtype=int)
    n = n[(n >= 1) & (2 * n <= M)]
    sig = np.empty(n.size)
    for i, k in enumerate(n):
        z = np.concatenate([[0.0], np.cumsum(y[k:] - y[:-k])])
        d = z[k:] - z[:-k]                        # n * (ybar_{j+n} - ybar_j)
        sig[i] = np.sqrt(np.mean(d * d) / (2.0 * k * k))
    return AllanSeries(n * float(T), sig, n)
