import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from varramsey.circuits import CircuitParams, ghz_params
from varramsey.clock.analytic import (CHI, LN2, LaserNoiseSpec, asymptotic_instability2,
                                      css_ctl, css_sigma, ctl_oqc, d_min, dick_limits,
                                      dick_series, dick_variance, ghz_sigma, hl_sigma,
                                      minimize_asymptotic, oqc_scaling, pi_hl_sigma,
                                      predict_allan, prior_width, servo_chi, solve_w, sql_sigma)
from varramsey.estimation import (PriorSpec, circuit_cost, effective_measurement_variance,
                                  ghz_effective_variance)
from varramsey.spin import build_operators

# mpmath, 30 digits
CTL_AT_PI_OVER_SQRT2 = 1.67195928561619227022408739504   # erfc(1) branch
CTL_AT_PI_SQRT2 = 2.06415256786375527776126755333        # erfc(1/2) branch
CSS_N64_BT05 = 0.193536283387826990644484239189
DICK_HALF = 0.106569599704376447730880356649             # 7 zeta(3) / (8 pi^2)


def spec(alpha, b=1.0):
    return LaserNoiseSpec.from_bandwidth(alpha, b)


@pytest.mark.parametrize("alpha,bT,expected", [(2, 1.0, 1.0), (2, 0.25, 0.25), (1, 0.49, 0.7),
                                               (3, 0.5, 0.5 ** 1.5)])
def test_prior_width_examples(alpha, bT, expected):
    assert prior_width(spec(alpha), bT) == pytest.approx(expected, rel=1e-14)
    assert prior_width(spec(alpha, 2.0), bT / 2) == pytest.approx(expected, rel=1e-14)


def test_prior_width_rejects_nonpositive_time():
    with pytest.raises(ValueError):
        prior_width(spec(2), 0.0)


def test_chi_closed_forms():
    assert servo_chi(1, 0.1) == pytest.approx(2 / 1.9)
    assert servo_chi(3, 0.1) == pytest.approx(2.9 / 0.19)
    assert servo_chi(1, 1.0) == pytest.approx(2.0)
    assert servo_chi(3, 1.0) == pytest.approx(2.0)
    assert CHI[2] == servo_chi(2)
    with pytest.raises(ValueError):
        servo_chi(2, 0.3)


@pytest.mark.parametrize("alpha", [1, 2, 3])
def test_bandwidth_round_trip(alpha):
    s = LaserNoiseSpec.from_bandwidth(alpha, 0.37, omega_A=2.5)
    assert s.b_alpha == pytest.approx(0.37, rel=1e-13)
    assert s.b_alpha == pytest.approx(s.chi ** (1 / alpha) * s.b_tilde, rel=1e-14)
    back = LaserNoiseSpec(**s.to_dict())
    assert back.b_alpha == pytest.approx(s.b_alpha, rel=1e-15)


@pytest.mark.parametrize("kw", [dict(alpha=4, h_coeff=1.0), dict(alpha=2, h_coeff=-1.0),
                                dict(alpha=2, h_coeff=1.0, omega_A=0.0)])
def test_invalid_spectrum_rejected(kw):
    with pytest.raises(ValueError):
        LaserNoiseSpec(**kw)


def test_predict_allan_units():
    s = LaserNoiseSpec.from_bandwidth(2, 0.5, omega_A=3.0)
    pred = predict_allan(s, 0.8, 0.2)
    assert pred.sigma == pytest.approx(0.2 / math.sqrt(0.4))
    tau = np.array([0.8, 8.0, 80.0])
    assert np.allclose(pred.sigma_y(tau), 0.2 / (3.0 * 0.8) * np.sqrt(0.8 / tau))


def css_formula(N, bT, alpha=2):
    nu = bT ** alpha
    return math.sqrt((math.exp(nu) / N + (1 - 1 / N) * math.sinh(nu) - nu) / bT)


@pytest.mark.parametrize("N", [1, 8, 64, 1000])
@pytest.mark.parametrize("bT", [0.05, 0.4, 1.1])
def test_css_sigma_matches_closed_form(N, bT):
    assert css_sigma(N, spec(2), bT) == pytest.approx(css_formula(N, bT), rel=1e-10)


def test_css_sigma_limits():
    s = spec(2)
    for N in (4, 64):
        assert css_sigma(N, s, 1e-4) * math.sqrt(N * 1e-4) == pytest.approx(1.0, rel=1e-6)
        assert css_sigma(N, s, 1e-4) == pytest.approx(sql_sigma(N, s, 1e-4), rel=1e-6)
    # large N approaches the coherence-time limit
    assert css_sigma(10 ** 9, s, 0.9) == pytest.approx(css_ctl(s, 0.9), rel=1e-6)
    assert css_sigma(8, s, 40.0) == math.inf


def test_css_sigma_matches_circuit_pipeline():
    assert css_sigma(64, spec(2), 0.5) == pytest.approx(CSS_N64_BT05, rel=1e-12)
    cost = circuit_cost(build_operators(64), CircuitParams(0, 0), PriorSpec(0.5)).bmse
    sigma = math.sqrt(effective_measurement_variance(cost, 0.5) / 0.5)
    assert sigma == pytest.approx(CSS_N64_BT05, rel=1e-3)


def test_css_optimal_time_shrinks_with_n():
    s = spec(2)
    t_opt = []
    for N in (4, 8, 16, 32, 64, 128):
        res = minimize_scalar(lambda lt: css_sigma(N, s, math.exp(lt)), bounds=(-8, 2),
                              method="bounded", options={"xatol": 1e-8})
        t_opt.append(math.exp(res.x))
    assert np.all(np.diff(t_opt) < 0)


def test_ghz_and_heisenberg_curves():
    s = spec(2)
    for N in (2, 5, 8):
        bT = 1e-3
        assert ghz_sigma(N, s, bT) == pytest.approx(hl_sigma(N, s, bT), rel=1e-3)
        assert pi_hl_sigma(N, s, bT) == pytest.approx(math.pi * hl_sigma(N, s, bT))
        var = ghz_effective_variance(N, 0.3)
        assert ghz_sigma(N, s, 0.3) == pytest.approx(math.sqrt(var / 0.3))
    assert hl_sigma(4, s, 0.25) == pytest.approx(0.5)
    assert sql_sigma(4, s, 0.25) == pytest.approx(1.0)


def test_phase_slip_limit():
    s = spec(2)
    assert ctl_oqc(s, 1e-3) == 0.0
    assert ctl_oqc(s, math.pi / math.sqrt(2)) == pytest.approx(CTL_AT_PI_OVER_SQRT2, rel=1e-13)
    assert ctl_oqc(s, math.pi * math.sqrt(2)) == pytest.approx(CTL_AT_PI_SQRT2, rel=1e-13)


def test_phase_slip_and_pi_corrected_curves_cross():
    s = spec(2)
    bT = np.logspace(-2, 1, 400)
    diff = np.array([pi_hl_sigma(16, s, t) - ctl_oqc(s, t) for t in bT])
    assert diff[0] > 0 and diff[-1] < 0
    assert np.count_nonzero(np.diff(np.sign(diff))) == 1


def test_fixed_point_solver():
    w, res = solve_w(1e8)
    assert res < 1e-12
    assert w - math.log(w) == pytest.approx(math.log(1e8), rel=1e-14)
    with pytest.raises(ValueError):
        solve_w(2.0)


@pytest.mark.parametrize("alpha", [1, 2, 3])
@pytest.mark.parametrize("N", [1e2, 1e4, 1e6])
def test_scaling_fixed_point_residual(alpha, N):
    assert oqc_scaling(N, alpha).residual < 1e-12


def test_closed_form_matches_fixed_point_solution():
    o = oqc_scaling(1e4, 2)
    assert o.z == pytest.approx(32e16 / math.pi)
    assert abs(o.closed_form_sigma - o.sigma_opt) / o.sigma_opt < 0.02
    assert oqc_scaling(1e4, 1).closed_form_sigma is None


def test_direct_minimization_approaches_asymptotics():
    Ns = [1e2, 1e3, 1e4, 1e5, 1e6]
    gaps = []
    for N in Ns:
        _, sig = minimize_asymptotic(N, 2)
        gaps.append(abs(sig - oqc_scaling(N, 2).sigma_opt) / sig)
    assert np.all(np.diff(gaps) < 0)
    assert gaps[2] < 0.05 and gaps[-1] < 0.02


def test_asymptotic_minimum_is_a_minimum():
    bT, sig = minimize_asymptotic(1e3, 2)
    for f in (0.9, 1.1):
        assert asymptotic_instability2(1e3, 2, f * bT) > sig ** 2


def test_dick_series_identities():
    assert dick_series(1.0) == 0.0
    assert dick_variance(0.5, 1.0) == 0.0
    assert dick_series(0.5) == pytest.approx(DICK_HALF, abs=1e-10)
    # symmetric under d -> 1 - d
    assert dick_series(0.3) == pytest.approx(dick_series(0.7), abs=1e-12)
    with pytest.raises(ValueError):
        dick_series(0.0)


def test_dick_minimal_duty_cycle_saturates_the_target():
    bT, sig = 0.5, 0.01
    d = d_min(bT, sig, n_max=20000)
    lhs = lambda x: bT / (CHI[2] * 2 * LN2) * dick_series(x, 20000) / x ** 2
    assert lhs(d) <= sig ** 2
    assert lhs(d - 1e-6) > sig ** 2


def test_dick_small_dead_fraction_scaling():
    # -ln(R) R^2 / (1 - R)^2 grows linearly with sigma^2 / (b T)
    rows = []
    for bT in (0.2, 1.0):
        for sig in (0.003, 0.01, 0.02):
            R = 1 - d_min(bT, sig, n_max=20000)
            rows.append((sig ** 2 / bT, -math.log(R) * R * R / (1 - R) ** 2))
    x, y = np.log(np.array(rows)).T
    slope = np.polyfit(x, y, 1)[0]
    assert slope == pytest.approx(1.0, abs=0.05)
    ratio = np.exp(y - x)
    assert ratio.max() / ratio.min() < 1.1


def test_dick_limits_interface():
    s = spec(2)
    lim = dick_limits(s, 0.5, 0.0, 0.05, n_max=20000)
    assert lim.duty_cycle == 1.0 and lim.sigma_dick == 0.0
    assert lim.R_max == pytest.approx(1 - lim.d_min)
    lim2 = dick_limits(s, 0.5, 0.5, 0.05, n_max=20000)
    assert lim2.duty_cycle == 0.5 and lim2.sigma_dick > 0
    with pytest.raises(ValueError):
        dick_limits(spec(1), 0.5, 0.1, 0.05)
    with pytest.raises(ValueError):
        dick_limits(s, 0.5, -0.1, 0.05)
