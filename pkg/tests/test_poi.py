import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from varramsey.estimation import PriorSpec, css_bmse
from varramsey.poi import (build_phase_observable, estimator_operator, performance_ratio,
                           phase_zero_state, poi_cost, poi_optimize)


def test_spin_one_phases():
    obs = build_phase_observable(2)
    np.testing.assert_allclose(obs.phases, [-2 * np.pi / 3, 0, 2 * np.pi / 3])


@pytest.mark.parametrize("N", [1, 2, 7, 32])
def test_observable_orthonormal_complete(N):
    obs = build_phase_observable(N)
    V = obs.vectors
    np.testing.assert_allclose(V.conj().T @ V, np.eye(N + 1), atol=1e-12)
    np.testing.assert_allclose(V @ V.conj().T, np.eye(N + 1), atol=1e-12)
    np.testing.assert_allclose(obs.phases, -obs.phases[::-1], atol=1e-15)


@given(N=st.integers(1, 20), phi=st.floats(-4, 4), seed=st.integers(0, 1000))
def test_covariance(N, phi, seed):
    obs = build_phase_observable(N)
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=N + 1) + 1j * rng.normal(size=N + 1)
    psi /= np.linalg.norm(psi)
    shift = 2 * np.pi / (N + 1)
    p0 = obs.probabilities(psi, phi)[0]
    p1 = obs.probabilities(psi, phi + shift)[0]
    np.testing.assert_allclose(p1, np.roll(p0, 1), atol=1e-12)


def test_iteration_starts_from_zero_phase_eigenstate():
    obs = build_phase_observable(6)
    s0 = obs.vectors[:, list(obs.s_values).index(0)]
    np.testing.assert_allclose(phase_zero_state(6), s0, atol=1e-15)
    prior = PriorSpec(0.6)
    res = poi_optimize(6, prior)
    assert res.history[0] == pytest.approx(poi_cost(obs, s0, prior)[0], rel=1e-14)


@pytest.mark.parametrize("N,d", [(4, 0.5), (16, 0.8), (33, 1.2)])
def test_alternation_monotone(N, d):
    res = poi_optimize(N, PriorSpec(d))
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 1e-15 * h[0])
    assert res.converged and res.bmse == h[-1]
    assert res.bmse <= d * d


def test_non_convergence_flag():
    res = poi_optimize(16, PriorSpec(0.8), max_iters=1)
    assert not res.converged and len(res.history) == 3


def test_estimator_operator_matches_cost():
    obs = build_phase_observable(5)
    prior = PriorSpec(0.7)
    rng = np.random.default_rng(2)
    psi = rng.normal(size=6) + 1j * rng.normal(size=6)
    psi /= np.linalg.norm(psi)
    est = rng.normal(size=6)
    A = estimator_operator(obs, est, prior)
    assert np.real(np.vdot(psi, A @ psi)) == pytest.approx(poi_cost(obs, psi, prior, est)[0],
                                                             rel=1e-12)


@pytest.mark.parametrize("d", [0.2, 0.5, 1.0, 1.7])
def test_single_qubit_equals_ramsey(d):
    assert poi_optimize(1, PriorSpec(d)).bmse == pytest.approx(css_bmse(1, d), rel=1e-8)


def test_performance_ratio():
    c = [0.5, 0.3, 0.4]
    assert performance_ratio(c, c) == 1.0
    assert performance_ratio([0.6, 0.4], [0.2, 0.5]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        performance_ratio([], [])
    with pytest.raises(ValueError):
        performance_ratio([1, 2], [1])


def test_ratio_against_van_trees_envelope():
    N = 12
    deltas = np.linspace(0.2, 1.4, 7)
    poi = [poi_optimize(N, PriorSpec(d)).posterior_over_prior for d in deltas]
    envelope = [np.sqrt(1 / (N * N + 1 / d ** 2)) / d for d in deltas]
    assert performance_ratio(poi, envelope) >= 1


def test_state_json():
    res = poi_optimize(3, PriorSpec(0.5))
    d = res.state_json()
    np.testing.assert_allclose(np.array(d["re"]) + 1j * np.array(d["im"]), res.state)
