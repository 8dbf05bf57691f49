"""Minimization of the Bayesian cost over circuit angles.

The cost of a circuit with the optimal linear slope is
``delta_phi^2 - B^2 / C`` where ``B = sum_m m A_1(m)`` and
``C = sum_m m^2 A_0(m)`` are prior moments of the outcome distribution (see
:mod:`varramsey.estimation`).  Objectives therefore only need to provide
``(B, C)`` and, optionally, their gradients.

The noiseless symmetric-subspace objective has an exact adjoint gradient:
in the decoder the two "states" ``rho o G_k`` are propagated forward while
the observables ``diag(m^p)`` are pulled back; in the entangler the pulled
back observables ``Q_k`` define Hermitian forms ``K_k = Q_k o G_k^T`` whose
expectation values are differentiated by a standard adjoint sweep.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .circuits import CircuitParams, Gate, decoder_gates, entangler_gates, initial_state
from .estimation import PriorSpec, moment_matrices
from .spin import SpinOperatorTable, gate_matrix


def twist_mask(n_en: int, n_de: int) -> np.ndarray:
    """Boolean mask of interaction (twist) angles in the flat angle vector."""
    slot = np.tile([True, True, False], n_en + n_de)
    return slot


def cumulative_angle(params: CircuitParams, part: str = "all") -> float:
    """Total interaction angle ``sum |theta_T|`` over the twist gates.

    ``part`` selects the ``"entangler"``, the ``"decoder"`` or ``"all"`` gates.
    """
    mask = twist_mask(params.n_en, params.n_de)
    x = np.abs(params.angles())
    n = 3 * params.n_en
    if part == "entangler":
        mask[n:] = False
    elif part == "decoder":
        mask[:n] = False
    elif part != "all":
        raise ValueError(f"unknown circuit part {part!r}")
    return float(np.sum(x[mask]))


def _generator(table: SpinOperatorTable, gate: Gate) -> np.ndarray:
    if gate.kind == "R":
        return table.generator(gate.axis)
    return table.generator(gate.axis * 2)


class SymmetricObjective:
    """Moments ``(B, C)`` of a noiseless ``(n_en, n_de)`` circuit and their gradients."""

    exact_gradient = True

    def __init__(self, table: SpinOperatorTable, n_en: int, n_de: int, prior: PriorSpec):
        self.table = table
        self.N = table.N
        self.n_en, self.n_de = n_en, n_de
        self.prior = prior
        g0, g1, _ = moment_matrices(table.m, prior.delta_phi)
        self.G = (g0, g1)
        m = table.m
        self.M = (np.diag(m ** 2).astype(complex), np.diag(m).astype(complex))

    @property
    def n_params(self) -> int:
        return 3 * (self.n_en + self.n_de)

    def params(self, x) -> CircuitParams:
        return CircuitParams.from_angles(self.n_en, self.n_de, x)

    def _gates(self, p):
        t = self.table
        en = [(g, gate_matrix(t, g.kind, g.axis, g.angle)) for g in entangler_gates(p)]
        de = [(g, gate_matrix(t, g.kind, g.axis, g.angle)) for g in decoder_gates(p)]
        return en, de

    def moments(self, x):
        en, de = self._gates(self.params(x))
        psi = initial_state(self.table)
        for _, W in en:
            psi = W @ psi
        U = np.eye(self.table.dim, dtype=complex)
        for _, W in de:
            U = W @ U
        rho = np.outer(psi, psi.conj())
        out = []
        for k in (1, 0):
            A = np.real(np.einsum("ij,ij->i", U @ (rho * self.G[k]), U.conj()))
            out.append(float(np.real(np.diag(self.M[k])) @ A))
        return out[0], out[1]

    def moments_grad(self, x):
        t = self.table
        en, de = self._gates(self.params(x))
        states = []
        psi = initial_state(t)
        for _, W in en:
            psi = W @ psi
            states.append(psi)
        rho = np.outer(psi, psi.conj())
        # index 0 -> B (first moment, observable m), 1 -> C (zeroth moment, m^2)
        S = np.stack([rho * self.G[1], rho * self.G[0]])
        forward = []
        for _, W in de:
            S = W @ S @ W.conj().T
            forward.append(S)
        M = np.stack([self.M[1], self.M[0]])
        vals = np.real(np.einsum("kii,kii->k", M, S))
        grads = np.zeros((2, self.n_params))
        for (gate, W), S_i in zip(reversed(de), reversed(forward)):
            if gate.index >= 0:
                g = _generator(t, gate)
                comm = M @ g - g @ M
                grads[:, gate.index] = np.real(-1j * np.einsum("kab,kba->k", comm, S_i))
            M = W.conj().T @ M @ W
        # entangler: B, C = psi^+ K psi with K = Q o G^T
        K = np.stack([M[0] * self.G[1].T, M[1] * self.G[0].T])
        lam = K @ psi
        for (gate, W), after in zip(reversed(en), reversed(states)):
            if gate.index >= 0:
                gpsi = _generator(t, gate) @ after
                grads[:, gate.index] += 2 * np.real(-1j * (lam.conj() @ gpsi))
            lam = lam @ W.conj()
        return float(vals[0]), float(vals[1]), grads[0], grads[1]


class FiniteDifferenceMixin:
    """Central-difference gradient for objectives without an adjoint."""

    exact_gradient = False
    fd_step = 1e-6

    def moments_grad(self, x):
        x = np.asarray(x, dtype=float)
        B, C = self.moments(x)
        dB = np.zeros(x.size)
        dC = np.zeros(x.size)
        for i in range(x.size):
            e = np.zeros(x.size)
            e[i] = self.fd_step
            Bp, Cp = self.moments(x + e)
            Bm, Cm = self.moments(x - e)
            dB[i] = (Bp - Bm) / (2 * self.fd_step)
            dC[i] = (Cp - Cm) / (2 * self.fd_step)
        return B, C, dB, dC


def cost_from_moments(B: float, C: float, variance: float) -> float:
    if C <= 1e-300:
        return variance
    return variance - B * B / C


def cost_gradient(B, C, dB, dC):
    if C <= 1e-300:
        return np.zeros_like(dB)
    return -(2 * B * dB * C - B * B * dC) / (C * C)


@dataclass
class OptimizationProblem:
    """Cost ``delta_phi^2 - B(x)^2 / C(x)`` over the flat angle vector ``x``."""

    objective: object
    bounds: np.ndarray = None
    theta_max: float | None = None

    def __post_init__(self):
        n = self.objective.n_params
        if self.bounds is None:
            self.bounds = np.tile([-np.pi, np.pi], (n, 1))
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(n, 2)
        self.variance = self.objective.prior.variance
        # twist angles act on a ~1/N scale; optimize them in units of 1/N
        self.scale = np.where(self.mask, 1.0 / self.objective.N, 1.0)

    @property
    def n_params(self) -> int:
        return self.objective.n_params

    @property
    def exact_gradient(self) -> bool:
        return self.objective.exact_gradient

    def cost(self, x) -> float:
        B, C = self.objective.moments(x)
        return cost_from_moments(B, C, self.variance)

    def cost_and_grad(self, x):
        B, C, dB, dC = self.objective.moments_grad(x)
        return cost_from_moments(B, C, self.variance), cost_gradient(B, C, dB, dC)

    def a_opt(self, x) -> float:
        B, C = self.objective.moments(x)
        return B / C if C > 1e-300 else 0.0

    @property
    def mask(self) -> np.ndarray:
        return twist_mask(self.objective.n_en, self.objective.n_de)

    def project(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.bounds[:, 0], self.bounds[:, 1])
        if self.theta_max is not None:
            mask = self.mask
            v = x[mask]
            x[mask] = np.sign(v) * project_capped_simplex(np.abs(v), self.theta_max)
        return x


def project_capped_simplex(v: np.ndarray, cap: float) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum x <= cap}``."""
    w = np.maximum(v, 0.0)
    if w.sum() <= cap:
        return w
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - cap
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


@dataclass
class OptimizationResult:
    best_params: CircuitParams
    best_cost: float
    trace: list = field(default_factory=list)  # (restart, iteration, cost)
    restarts_used: int = 0
    seed: int = 0
    exact_gradient: bool = True
    delta_phi: float = float("nan")

    @property
    def posterior_over_prior(self) -> float:
        return float(np.sqrt(self.best_cost) / self.delta_phi)

    def to_dict(self) -> dict:
        return {"best_params": self.best_params.to_dict(), "best_cost": self.best_cost,
                "restarts_used": self.restarts_used, "seed": self.seed,
                "exact_gradient": self.exact_gradient, "delta_phi": self.delta_phi}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def trace_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("restart,iter,cost\n")
            for r, i, c in self.trace:
                fh.write(f"{r},{i},{c!r}\n")


def default_restarts(n_en: int, n_de: int) -> int:
    return 32 if n_en + n_de <= 4 else 128


def restart_rng(seed: int, restart: int) -> np.random.Generator:
    """Counter-based generator for one restart, independent of scheduling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(restart,))))


def _run_start(problem: OptimizationProblem, x0, method: str, restart: int,
               max_nm_evals: int | None):
    """One local search; works in the rescaled variables ``y = x / scale``."""
    trace = []
    D = problem.scale
    x0 = problem.project(x0)
    best = [problem.cost(x0), x0.copy()]
    trace.append((restart, 0, best[0]))

    def record(x, f):
        if f < best[0]:
            best[0], best[1] = f, np.array(x, dtype=float)
        trace.append((restart, len(trace), best[0]))

    n = problem.n_params
    if problem.theta_max is not None:
        _projected_descent(problem, x0, record)
        return best[0], best[1], trace

    ybounds = problem.bounds / D[:, None]

    def f_y(y):
        return problem.cost(problem.project(D * y))

    def fg_y(y):
        f, g = problem.cost_and_grad(D * y)
        return f, g * D

    if method in ("nelder-mead", "hybrid"):
        opts = {"xatol": 1e-9, "fatol": 1e-14, "adaptive": n > 4,
                "maxfev": max_nm_evals or (400 if method == "nelder-mead" else 40) * n}
        res = minimize(f_y, x0 / D, method="Nelder-Mead", bounds=ybounds, options=opts,
                       callback=lambda yk: record(problem.project(D * yk), f_y(yk)))
        record(problem.project(D * res.x), f_y(res.x))
    if method in ("gradient", "hybrid"):
        def progress(intermediate_result):
            record(D * intermediate_result.x, intermediate_result.fun)

        res = minimize(fg_y, best[1] / D, jac=True, method="L-BFGS-B", bounds=ybounds,
                       options={"maxiter": 3000, "maxcor": 50, "ftol": 1e-13,
                                "gtol": 1e-9}, callback=progress)
        record(D * res.x, problem.cost(D * res.x))
    return best[0], best[1], trace


def _projected_descent(problem: OptimizationProblem, x0, record, max_iter: int = 3000,
                       tol: float = 1e-14):
    """Diagonally preconditioned projected gradient descent with Armijo backtracking."""
    D2 = problem.scale ** 2
    x = problem.project(x0)
    f, g = problem.cost_and_grad(x)
    step = 1.0
    for _ in range(max_iter):
        accepted = False
        while step > 1e-14:
            y = problem.project(x - step * D2 * g)
            fy = problem.cost(y)
            if fy <= f - 1e-4 * np.dot(g, x - y):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        decrease = f - fy
        x = y
        f, g = problem.cost_and_grad(x)
        record(x, f)
        step = min(step * 2.0, 16.0)
        if decrease < tol * max(abs(f), 1e-300):
            break
    record(x, f)


def random_start(problem: OptimizationProblem, seed: int, restart: int) -> np.ndarray:
    """Uniform angles in ``[-pi/2, pi/2]`` in the rescaled variables."""
    y = restart_rng(seed, restart).uniform(-np.pi / 2, np.pi / 2, problem.n_params)
    return problem.project(problem.scale * y)


def optimize(problem: OptimizationProblem, n_starts: int | None = None, seed: int = 0,
             method: str = "auto", warm_starts=(), threads: int = 1,
             max_nm_evals: int | None = None) -> OptimizationResult:
    """Multi-start minimization.

    The first starts are the given ``warm_starts`` (e.g. a shallower optimum
    padded with zeros); the remaining ones are uniform in ``[-pi/2, pi/2]``
    in the rescaled variables (twist angles divided by ``N``), drawn from
    per-restart counter-based streams.  ``method='auto'`` selects pure
    gradient descent when the objective has an exact gradient and the
    Nelder-Mead/gradient hybrid otherwise.  Results are deterministic for a
    fixed seed regardless of ``threads``.
    """
    if method == "auto":
        method = "gradient" if problem.exact_gradient else "hybrid"
    if method not in ("nelder-mead", "gradient", "hybrid"):
        raise ValueError(f"unknown method {method!r}")
    obj = problem.objective
    if n_starts is None:
        n_starts = default_restarts(obj.n_en, obj.n_de)
    if n_starts < 1:
        raise ValueError("need at least one start")
    n = problem.n_params
    starts = [np.asarray(w, dtype=float) for w in warm_starts][:n_starts]
    for i in range(len(starts), n_starts):
        starts.append(random_start(problem, seed, i))
    if n == 0:
        starts = [np.zeros(0)]

    def job(i):
        if n == 0:
            c = problem.cost(starts[0])
            return c, starts[0], [(0, 0, c)]
        return _run_start(problem, starts[i], method, i, max_nm_evals)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as pool:
            runs = list(pool.map(job, range(len(starts))))
    else:
        runs = [job(i) for i in range(len(starts))]

    finite = [r for r in runs if np.isfinite(r[0])]
    if not finite:
        raise RuntimeError(f"all {len(runs)} starts diverged; first costs: "
                           f"{[r[0] for r in runs[:5]]}")
    mask = problem.mask
    best_cost = min(r[0] for r in finite)
    tied = [r for r in finite if r[0] <= best_cost + 1e-12 * max(abs(best_cost), 1e-300)]
    winner = min(tied, key=lambda r: float(np.sum(np.abs(r[1][mask]))))
    x = winner[1]
    trace = [entry for r in runs for entry in r[2]]
    params = obj.params(x)
    params.a = problem.a_opt(x)
    return OptimizationResult(params, float(winner[0]), trace, len(starts), seed,
                              obj.exact_gradient, obj.prior.delta_phi)


def optimize_hierarchy(make_objective: Callable[[int, int], object], templates,
                       n_starts: int | None = None, seed: int = 0, threads: int = 1,
                       theta_max: float | None = None, warm: dict | None = None) -> dict:
    """Optimize a nested family of templates, shallow first.

    Each template is seeded with every shallower optimum that embeds into it
    (padded with zero angles) plus any extra ``warm`` starts keyed by template.
    """
    results = {}
    warm = warm or {}
    for tpl in sorted(templates, key=lambda t: (t[0] + t[1], t)):
        obj = make_objective(*tpl)
        problem = OptimizationProblem(obj, theta_max=theta_max)
        starts = []
        for prev, res in results.items():
            if prev[0] <= tpl[0] and prev[1] <= tpl[1]:
                starts.append(res.best_params.padded(*tpl).angles())
        starts.extend(np.asarray(w, dtype=float) for w in warm.get(tpl, ()))
        budget = n_starts if n_starts is not None else default_restarts(*tpl)
        budget = max(budget, len(starts))
        results[tpl] = optimize(problem, budget, seed, warm_starts=starts, threads=threads)
    return results
