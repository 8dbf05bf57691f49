"""Atomic-clock layer: laser noise, servo loop, Allan deviation and analytic limits."""

from .allan import AllanSeries, overlapping_allan
from .analytic import (CHI, AllanPrediction, DickLimits, LaserNoiseSpec, OQCScaling, css_sigma,
                       ctl_oqc, dick_limits, dick_series, ghz_sigma, hl_sigma, minimize_asymptotic,
                       oqc_scaling, pi_hl_sigma, predict_allan, prior_width, sql_sigma)
from .noise import simulate_noise
from .servo import ClockRunConfig, ServoResult, run_servo_batch, run_servo_loop
