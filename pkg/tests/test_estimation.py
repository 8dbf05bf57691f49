import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import comb

from test_circuits import product_space_probs, random_params
from varramsey.circuits import CircuitParams, ProbabilityKernel, conditional_probs, css_params
from varramsey.estimation import (CostReport, PriorSpec, average_fisher, bmse, circuit_cost,
                                  circuit_cost_quadrature, css_bmse, css_effective_variance,
                                  effective_measurement_variance, fisher_information,
                                  fisher_information_exact, gh_order, ghz_effective_variance,
                                  mmse_estimator, mse_curve, pi_hl_variance, prior_kernel,
                                  van_trees_bound)
from varramsey.spin import build_operators

GHZ_N4_D02 = 0.07853005495655946          # exp(0.64)/16 - 0.04, mpmath
PI_HL_N4_ERF1 = 6.826774059833526          # pi^2/16 + 4 pi^2 erfc(1), mpmath
PI_HL_N4_ERF_HALF = 19.54675634010505      # pi^2/16 + 4 pi^2 erfc(1/2), mpmath


def test_prior_spec():
    p = PriorSpec(0.3)
    assert p.variance == pytest.approx(0.09)
    x, w = p.quadrature()
    assert w.sum() == pytest.approx(1, abs=1e-12)
    assert w @ x ** 2 == pytest.approx(0.09, rel=1e-12)
    with pytest.raises(ValueError):
        PriorSpec(0.0)
    with pytest.raises(ValueError):
        PriorSpec(1.0, "flat")


def test_gh_order_floor_and_growth():
    assert gh_order(None, 1.0) == 240
    assert gh_order(8, 0.5) == 240
    assert gh_order(64, 1.0) > 240


def test_zero_slope_gives_prior_variance():
    t = build_operators(6)
    prior = PriorSpec(0.4)
    rep = bmse(prior_kernel(t, css_params(), prior), prior, "fixed-a", a=0.0)
    assert rep.bmse == pytest.approx(0.16, rel=1e-12)
    rep2 = circuit_cost(t, css_params(), prior, "fixed-a", a=0.0)
    assert rep2.bmse == pytest.approx(0.16, rel=1e-12)


def test_mse_curve_trivial_cases():
    phi = np.linspace(-1, 1, 5)
    k = conditional_probs(build_operators(3), css_params(), phi)
    np.testing.assert_allclose(mse_curve(k, np.zeros(4)), phi ** 2, atol=1e-15)
    # perfect estimator: outcome i is certain at phi_i and estimates phi_i
    probs = np.eye(5)
    perfect = ProbabilityKernel(phi, np.full(5, 0.2), probs, np.arange(5.0))
    np.testing.assert_allclose(mse_curve(perfect, phi), 0.0, atol=1e-15)


def test_css_two_atoms_against_adaptive_quadrature():
    N, d = 2, 0.5
    m = np.arange(N + 1) - N / 2
    P = PriorSpec(d).density

    def moment(weight_fn):
        return quad(lambda f: P(f) * weight_fn(f, product_space_probs(N, css_params(), f)),
                    -8 * d, 8 * d, epsabs=1e-14, epsrel=1e-13, limit=200)[0]

    B = moment(lambda f, p: f * (m @ p))
    C = moment(lambda f, p: (m ** 2) @ p)
    ref = d * d - B * B / C
    t = build_operators(N)
    assert circuit_cost_quadrature(t, css_params(), PriorSpec(d)).bmse == pytest.approx(ref, abs=1e-8)
    assert circuit_cost(t, css_params(), PriorSpec(d)).bmse == pytest.approx(ref, abs=1e-8)


@pytest.mark.parametrize("N", [8, 64])
@pytest.mark.parametrize("d", [0.1, 0.5, 1.0])
def test_css_closed_form(N, d):
    t = build_operators(N)
    rep = circuit_cost(t, css_params(), PriorSpec(d))
    assert rep.bmse == pytest.approx(css_bmse(N, d), rel=1e-10)
    assert rep.eff_meas_var == pytest.approx(css_effective_variance(N, d), rel=1e-6)
    quadr = circuit_cost_quadrature(t, css_params(), PriorSpec(d))
    assert quadr.bmse == pytest.approx(css_bmse(N, d), rel=1e-8)


@given(seed=st.integers(0, 2 ** 32 - 1), N=st.sampled_from([2, 5, 16, 33, 64]),
       d=st.floats(0.05, 1.2), tpl=st.sampled_from([(0, 1), (1, 0), (1, 1), (1, 3), (2, 1)]))
def test_routes_agree_and_quadrature_converged(seed, N, d, tpl):
    params = random_params(np.random.default_rng(seed), *tpl)
    t = build_operators(N)
    prior = PriorSpec(d)
    exact = circuit_cost(t, params, prior).bmse
    order = gh_order(N, d)
    q1 = circuit_cost_quadrature(t, params, prior, order=order).bmse
    q2 = circuit_cost_quadrature(t, params, prior, order=2 * order).bmse
    assert abs(q1 - q2) < 1e-8
    assert abs(q1 - exact) < 1e-8


@given(seed=st.integers(0, 2 ** 32 - 1), N=st.integers(1, 20), d=st.floats(0.05, 1.5))
def test_estimator_hierarchy(seed, N, d):
    params = random_params(np.random.default_rng(seed), 1, 1)
    t = build_operators(N)
    prior = PriorSpec(d)
    k = prior_kernel(t, params, prior)
    lin = bmse(k, prior).bmse
    mm = bmse(k, prior, "mmse").bmse
    assert mm <= lin + 1e-12 and lin <= d * d + 1e-12
    assert circuit_cost(t, params, prior, "mmse").bmse == pytest.approx(mm, abs=1e-9)
    assert lin >= van_trees_bound(average_fisher(t, params, prior), prior) - 1e-9


def test_linear_optimal_slope_is_stationary():
    t = build_operators(7)
    prior = PriorSpec(0.6)
    params = CircuitParams(1, 1, [0.1, 0.2, 0.3], [0.4, -0.1, 0.2])
    rep = circuit_cost(t, params, prior)
    h = 1e-5
    plus = circuit_cost(t, params, prior, "fixed-a", rep.a_opt + h).bmse
    minus = circuit_cost(t, params, prior, "fixed-a", rep.a_opt - h).bmse
    assert (plus - minus) / (2 * h) == pytest.approx(0.0, abs=1e-8)
    assert min(plus, minus) >= rep.bmse


def test_mmse_estimator_properties():
    prior = PriorSpec(0.5)
    nodes, w = prior.quadrature()
    flat = ProbabilityKernel(nodes, w, np.full((nodes.size, 4), 0.25), np.arange(4) - 1.5)
    est, empty = mmse_estimator(flat, prior)
    np.testing.assert_allclose(est, 0.0, atol=1e-14)
    assert not empty.any()
    k = prior_kernel(build_operators(6), CircuitParams(1, 0, [0.2, 0.1, 0.3], []), prior)
    est, _ = mmse_estimator(k, prior)
    np.testing.assert_allclose(est, -est[::-1], atol=1e-12)
    zero = ProbabilityKernel(nodes, w, np.column_stack([np.ones(nodes.size), np.zeros(nodes.size)]),
                             np.array([-0.5, 0.5]))
    est, empty = mmse_estimator(zero, prior)
    assert empty.tolist() == [False, True] and est[1] == 0


def test_degenerate_denominator():
    prior = PriorSpec(0.5)
    nodes, w = prior.quadrature()
    k = ProbabilityKernel(nodes, w, np.column_stack([np.ones(nodes.size)]), np.array([0.0]))
    rep = bmse(k, prior)
    assert rep.a_opt == 0 and rep.bmse == pytest.approx(0.25)
    assert rep.eff_meas_var == np.inf


def test_weights_checked():
    t = build_operators(3)
    k = conditional_probs(t, css_params(), np.linspace(-1, 1, 9))
    with pytest.raises(ValueError):
        bmse(k, PriorSpec(0.3))
    k = prior_kernel(t, css_params(), PriorSpec(0.3))
    with pytest.raises(ValueError):
        bmse(k, PriorSpec(3.0))


def test_fisher_css_at_zero_phase():
    for N in (1, 6, 20):
        t = build_operators(N)
        assert fisher_information_exact(t, css_params(), 0.0)[0] == pytest.approx(N, rel=1e-10)
        grid = np.linspace(-0.2, 0.2, 41)
        fd = fisher_information(conditional_probs(t, css_params(), grid))
        assert fd[20] == pytest.approx(N, rel=1e-4)
        # binomial Fisher information is N at every phase
        np.testing.assert_allclose(fd, N, rtol=1e-4)


def test_fisher_trivial_and_bounded():
    nodes = np.linspace(-1, 1, 11)
    flat = ProbabilityKernel(nodes, np.full(11, np.nan), np.full((11, 3), 1 / 3), np.arange(3) - 1.0)
    np.testing.assert_allclose(fisher_information(flat), 0.0, atol=1e-14)
    rng = np.random.default_rng(7)
    for N in (3, 8, 16):
        t = build_operators(N)
        for _ in range(5):
            F = fisher_information_exact(t, random_params(rng, 2, 2), np.linspace(-3, 3, 31))
            assert np.all(F <= N * N * (1 + 1e-9))
    with pytest.raises(ValueError):
        fisher_information(ProbabilityKernel(np.array([0, 1, 3, 4, 5.0]), np.zeros(5),
                                             np.full((5, 2), 0.5), np.array([-0.5, 0.5])))


def test_van_trees_trivial():
    assert van_trees_bound(0.0, PriorSpec(0.7)) == pytest.approx(0.49)
    assert van_trees_bound(4.0, PriorSpec(0.5)) == pytest.approx(1 / 8)


def test_ghz_formula():
    assert ghz_effective_variance(4, 0.2) == pytest.approx(GHZ_N4_D02, rel=1e-13)
    assert ghz_effective_variance(5, 1e-6) == pytest.approx(1 / 25, rel=1e-9)
    assert ghz_effective_variance(100, 1.0) == np.inf
    with pytest.raises(ValueError):
        ghz_effective_variance(0, 0.1)


def test_pi_hl_formula():
    # pi / (sqrt 2 delta_phi) = 1 at delta_phi = pi / sqrt 2
    assert pi_hl_variance(4, np.pi / np.sqrt(2)) == pytest.approx(PI_HL_N4_ERF1, rel=1e-13)
    assert pi_hl_variance(4, np.pi * np.sqrt(2)) == pytest.approx(PI_HL_N4_ERF_HALF, rel=1e-13)
    assert pi_hl_variance(8, 1e-3) == pytest.approx(np.pi ** 2 / 64, rel=1e-14)


def test_effective_measurement_variance():
    assert effective_measurement_variance(0.2, 0.5) == pytest.approx(1 / (5 - 4))
    assert effective_measurement_variance(0.25, 0.5) == np.inf
    assert effective_measurement_variance(0.04, 0.2) == np.inf
    assert effective_measurement_variance(0.0, 0.5) == 0.0


def test_cost_report_json():
    rep = CostReport.from_bmse(0.01, PriorSpec(0.2), 0.1, "linear-optimal")
    d = json.loads(rep.to_json())
    assert d["posterior_over_prior"] == pytest.approx(0.5)
    assert d["eff_meas_var"] == pytest.approx(1 / (100 - 25))
    inf = json.loads(CostReport.from_bmse(0.04, PriorSpec(0.2), 0.0, "linear-optimal").to_json())
    assert inf["eff_meas_var"] is None


def test_binomial_sanity():
    # kernel of the uncorrelated circuit is the binomial with p = (1 - sin phi)/2
    N, phi = 5, 0.4
    p = conditional_probs(build_operators(N), css_params(), [phi]).probs[0]
    q = (1 - np.sin(phi)) / 2
    k = np.arange(N + 1)
    np.testing.assert_allclose(p, comb(N, k) * (1 - q) ** (N - k) * q ** k, atol=1e-13)
