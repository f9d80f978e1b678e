import numpy as np
import pytest
from scipy.fft import dct

import spinboson as sb
from spinboson.bath import QuadratureError, Tabulated, correlation_table


def test_drude_point_value():
    sd = sb.Drude(gamma=0.01, lambda_c=1.0)
    assert sb.eval_J(sd, 1.0) == pytest.approx(0.005)
    assert sb.eval_J(sd, 0.0) == 0.0


def test_oddness_all_variants():
    rng = np.random.default_rng(3)
    grid = np.linspace(0.1, 5.0, 40)
    variants = [
        sb.Drude(0.3, 1.2),
        sb.DqdPhonon(0.5, 1.0, 1.3),
        Tabulated(grid, 0.2 * grid * np.exp(-grid)),
    ]
    for sd in variants:
        w = rng.uniform(0.05, 6.0, size=10)
        assert np.allclose(sb.eval_J(sd, -w), -sb.eval_J(sd, w), atol=1e-14)


def test_tabulated_grid_validation():
    with pytest.raises(ValueError):
        Tabulated(np.array([1.0, 0.5, 2.0]), np.array([0.1, 0.2, 0.3]))
    with pytest.raises(ValueError):
        Tabulated(np.array([-1.0, 0.5]), np.array([0.1, 0.2]))


def test_f_even_and_zero_frequency_limit():
    ctx = sb.BathContext(sb.Drude(gamma=0.2, lambda_c=1.5), beta=0.9)
    assert sb.eval_f(ctx, 1e-9) == pytest.approx(2 * 0.2 / 0.9, rel=1e-8)
    rng = np.random.default_rng(4)
    w = rng.uniform(0.01, 8.0, size=12)
    assert np.allclose(sb.eval_f(ctx, -w), sb.eval_f(ctx, w))


def test_f_approaches_j_at_low_temperature():
    sd = sb.Drude(gamma=0.2, lambda_c=1.5)
    ctx = sb.BathContext(sd, beta=500.0)
    w = np.linspace(0.5, 3.0, 7)
    assert np.allclose(sb.eval_f(ctx, w), sb.eval_J(sd, w), rtol=1e-8)


def test_eta_closed_form_drude():
    rng = np.random.default_rng(11)
    for _ in range(3):
        gamma = rng.uniform(0.005, 0.5)
        lam_c = rng.uniform(0.3, 2.5)
        ctx = sb.BathContext(sb.Drude(gamma, lam_c), beta=1.0)
        ts = np.linspace(1e-3, 10.0 / lam_c, 17)
        exact = -0.5 * np.pi * gamma * lam_c**2 * np.exp(-lam_c * ts)
        got = np.array([sb.eta(ctx, float(t)) for t in ts])
        assert np.abs((got - exact) / exact).max() < 1e-8


def test_eta_odd_and_zero():
    ctx = sb.BathContext(sb.DqdPhonon(0.4, 1.0, 1.0), beta=1.0)
    assert sb.eta(ctx, 0.0) == 0.0
    for t in (0.3, 1.7, 4.0):
        assert sb.eta(ctx, -t) == pytest.approx(-sb.eta(ctx, t))


def test_nu_even_and_zero_coupling():
    ctx = sb.BathContext(sb.DqdPhonon(0.4, 1.0, 1.0), beta=1.0)
    for t in (0.2, 1.1, 3.3):
        assert sb.nu(ctx, -t) == pytest.approx(sb.nu(ctx, t))
    ctx0 = sb.BathContext(sb.Drude(0.0, 1.0), beta=1.0)
    assert sb.nu(ctx0, 1.0) == 0.0
    assert sb.eta(ctx0, 1.0) == 0.0


def test_nu_matches_thermal_mode_sum():
    # hot bath keeps the truncated cutoff-mode weight error below 1e-6 at n=512
    gamma, lam_c, beta = 0.05, 0.5, 0.2
    ctx = sb.BathContext(sb.Drude(gamma, lam_c), beta=beta)
    eb = sb.drude_modes(gamma, lam_c, beta, 512)
    ts = np.linspace(0.1, 10.0, 21)
    quad_vals = np.array([sb.nu(ctx, float(t)) for t in ts])
    mode_vals = eb.nu(ts)
    assert np.abs((quad_vals - mode_vals) / mode_vals).max() < 1e-6


def test_nu_drude_origin_divergence_reported():
    ctx = sb.BathContext(sb.Drude(0.1, 1.0), beta=1.0)
    with pytest.raises(QuadratureError):
        sb.nu(ctx, 0.0)


@pytest.mark.parametrize("sd", [sb.Drude(0.2, 1.0), sb.DqdPhonon(0.4, 1.0, 1.0)])
def test_bochner_positivity_spot_check(sd):
    ctx = sb.BathContext(sd, beta=1.0)
    table = correlation_table(ctx, tau_max=40.0)
    ts = np.linspace(0.05, 35.0, 256)
    vals = np.asarray(table.nu(ts))
    spectrum = dct(vals, type=2)
    assert spectrum.min() > -1e-6 * np.abs(spectrum).max()


def test_correlation_table_matches_point_api():
    ctx = sb.BathContext(sb.Drude(0.08, 1.4), beta=0.8)
    table = correlation_table(ctx, tau_max=30.0)
    ts = np.linspace(0.05, 25.0, 23)
    nu_pt = np.array([sb.nu(ctx, float(t)) for t in ts])
    eta_pt = np.array([sb.eta(ctx, float(t)) for t in ts])
    assert np.abs(table.nu(ts) - nu_pt).max() < 1e-8 * np.abs(nu_pt).max()
    assert np.abs(table.eta(ts) - eta_pt).max() < 1e-8 * np.abs(eta_pt).max()
    # decayed table returns zero past its horizon
    assert table.decayed
    assert float(np.asarray(table.nu(100.0))) == 0.0
