import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from test_circuits import random_params
from varramsey.circuits import CircuitParams, ghz_params
from varramsey.decoherence import DephasedObjective
from varramsey.estimation import PriorSpec, bmse, css_bmse, prior_kernel
from varramsey.optimizer import (OptimizationProblem, SymmetricObjective, cost_from_moments,
                                 cumulative_angle, optimize, optimize_hierarchy,
                                 project_capped_simplex, twist_mask)
from varramsey.spin import build_operators


def five_point(f, x, h=1e-3):
    g = np.zeros(x.size)
    for i in range(x.size):
        vals = []
        for s in (-2, -1, 1, 2):
            xs = x.copy()
            xs[i] += s * h
            vals.append(f(xs))
        g[i] = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h)
    return g


@pytest.mark.parametrize("tpl", [(1, 0), (1, 1), (2, 3)])
def test_exact_gradient_matches_finite_differences(tpl):
    t = build_operators(8)
    problem = OptimizationProblem(SymmetricObjective(t, *tpl, PriorSpec(0.7)))
    x = np.random.default_rng(sum(tpl)).uniform(-1, 1, problem.n_params)
    x[problem.mask] /= 8
    _, g = problem.cost_and_grad(x)
    fd = five_point(problem.cost, x)
    assert np.abs(g - fd).max() < 1e-6


def test_moments_agree_with_kernel_route():
    t = build_operators(10)
    params = random_params(np.random.default_rng(1), 2, 2)
    prior = PriorSpec(0.5)
    B, C = SymmetricObjective(t, 2, 2, prior).moments(params.angles())
    rep = bmse(prior_kernel(t, params, prior), prior)
    assert cost_from_moments(B, C, prior.variance) == pytest.approx(rep.bmse, abs=1e-12)
    assert B / C == pytest.approx(rep.a_opt, rel=1e-10)


def test_cost_is_stationary_in_slope_at_optimum():
    t = build_operators(8)
    params = random_params(np.random.default_rng(2), 1, 1)
    prior = PriorSpec(0.6)
    k = prior_kernel(t, params, prior)
    a = bmse(k, prior).a_opt
    h = 1e-4
    plus = bmse(k, prior, "fixed-a", a + h).bmse
    minus = bmse(k, prior, "fixed-a", a - h).bmse
    assert abs(plus - minus) / (2 * h) < 1e-10
    assert min(plus, minus) > bmse(k, prior).bmse


@pytest.mark.parametrize("N", [4, 16])
def test_empty_template_is_the_coherent_state(N):
    t = build_operators(N)
    res = optimize(OptimizationProblem(SymmetricObjective(t, 0, 0, PriorSpec(0.4))))
    assert res.best_cost == pytest.approx(css_bmse(N, 0.4), rel=1e-10)
    assert res.restarts_used == 1


def small_problem(N=6, tpl=(1, 1), delta=0.6, **kw):
    return OptimizationProblem(SymmetricObjective(build_operators(N), *tpl, PriorSpec(delta)), **kw)


def test_fixed_seed_is_deterministic():
    a = optimize(small_problem(), n_starts=4, seed=7)
    b = optimize(small_problem(), n_starts=4, seed=7)
    assert a.best_cost == b.best_cost
    assert np.array_equal(a.best_params.angles(), b.best_params.angles())
    assert a.trace == b.trace


def test_result_independent_of_thread_count():
    a = optimize(small_problem(), n_starts=6, seed=3, threads=1)
    b = optimize(small_problem(), n_starts=6, seed=3, threads=3)
    assert a.best_cost == b.best_cost
    assert np.array_equal(a.best_params.angles(), b.best_params.angles())


@pytest.mark.parametrize("method", ["nelder-mead", "gradient", "hybrid"])
def test_methods_improve_on_coherent_state(method):
    res = optimize(small_problem(), n_starts=3, seed=0, method=method)
    assert res.best_cost < css_bmse(6, 0.6)
    assert res.best_cost >= 0


def test_unknown_method_and_empty_budget_rejected():
    with pytest.raises(ValueError):
        optimize(small_problem(), method="annealing")
    with pytest.raises(ValueError):
        optimize(small_problem(), n_starts=0)


def test_warm_start_is_used_first():
    p = small_problem()
    x0 = np.zeros(p.n_params)
    res = optimize(p, n_starts=1, warm_starts=[x0])
    assert res.trace[0] == (0, 0, p.cost(x0))


def test_deeper_templates_never_do_worse():
    t = build_operators(8)
    prior = PriorSpec(0.7)
    res = optimize_hierarchy(lambda a, b: SymmetricObjective(t, a, b, prior),
                             [(0, 0), (1, 0), (1, 1), (2, 2)], n_starts=3, seed=0)
    assert res[(1, 0)].best_cost <= res[(0, 0)].best_cost + 1e-14
    assert res[(1, 1)].best_cost <= res[(1, 0)].best_cost + 1e-14
    assert res[(2, 2)].best_cost <= res[(1, 1)].best_cost + 1e-14


def test_optimized_cost_grows_with_dephasing():
    t = build_operators(6)
    prior = PriorSpec(0.6)
    costs = []
    warm = []
    for g in (0.0, 0.1, 0.5, 2.0):
        p = OptimizationProblem(DephasedObjective(t, 1, 0, prior, g))
        r = optimize(p, n_starts=4, seed=0, warm_starts=warm)
        costs.append(r.best_cost)
        warm = [r.best_params.angles()]
    assert np.all(np.diff(costs) > 0)


def test_cumulative_angle_examples():
    assert cumulative_angle(CircuitParams(2, 1)) == 0.0
    p = CircuitParams(1, 1, theta=[0.3, -0.2, 1.0], vartheta=[0.1, 0.0, -2.0])
    assert cumulative_angle(p) == pytest.approx(0.6)
    assert cumulative_angle(p, "entangler") == pytest.approx(0.5)
    assert cumulative_angle(p, "decoder") == pytest.approx(0.1)
    with pytest.raises(ValueError):
        cumulative_angle(p, "middle")


@pytest.mark.parametrize("N", range(2, 10))
def test_ghz_preparation_angle(N):
    expected = np.pi / 2 if N % 2 else 3 * np.pi / 4
    assert cumulative_angle(ghz_params(N), "entangler") == pytest.approx(expected, abs=1e-15)


def test_twist_mask_layout():
    assert twist_mask(1, 1).tolist() == [True, True, False] * 2


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(0.01, 5))
def test_capped_simplex_projection(v, cap):
    v = np.array(v)
    p = project_capped_simplex(v, cap)
    assert np.all(p >= 0)
    assert p.sum() <= cap + 1e-9
    # optimality: no feasible point on the segment towards a vertex is closer
    for q in (np.zeros_like(v), np.eye(v.size)[np.argmax(v)] * cap):
        for t in (0.01, 0.1):
            z = (1 - t) * p + t * q
            assert np.linalg.norm(v - p) <= np.linalg.norm(v - z) + 1e-9


def test_theta_max_constraint_respected():
    cap = 0.05
    p = small_problem(N=8, tpl=(1, 1), theta_max=cap)
    res = optimize(p, n_starts=3, seed=1)
    assert cumulative_angle(res.best_params) <= cap + 1e-12
    free = optimize(small_problem(N=8, tpl=(1, 1)), n_starts=3, seed=1)
    assert cumulative_angle(free.best_params) > cap
    assert res.best_cost >= free.best_cost - 1e-12


class Diverging:
    exact_gradient = False
    n_en, n_de, N = 1, 0, 4
    n_params = 3
    prior = PriorSpec(0.5)

    def moments(self, x):
        return np.nan, np.nan

    def params(self, x):
        return CircuitParams.from_angles(1, 0, x)


def test_all_diverged_starts_raise():
    with pytest.raises(RuntimeError, match="diverged"):
        optimize(OptimizationProblem(Diverging()), n_starts=2, method="nelder-mead",
                 max_nm_evals=5)


def test_result_serialization(tmp_path):
    res = optimize(small_problem(), n_starts=2, seed=5)
    d = json.loads(res.to_json())
    assert d["best_cost"] == res.best_cost
    assert d["seed"] == 5 and d["restarts_used"] == 2
    assert CircuitParams.from_dict(d["best_params"]).angles().tolist() == \
        res.best_params.angles().tolist()
    path = tmp_path / "trace.csv"
    res.trace_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "restart,iter,cost"
    assert len(lines) == len(res.trace) + 1
    costs = [float(l.split(",")[2]) for l in lines[1:]]
    assert min(costs) == res.best_cost
