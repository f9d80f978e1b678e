import numpy as np
import pytest

import spinboson as sb
from spinboson.expbath import (DegenerateModeError, ExpSum, _tcl4_drude_expsum,
                               expsum_mul, expsum_ordered_integral,
                               ordered_triple_constant)


def test_expsum_mul_identity():
    one = ExpSum.constant(1.0)
    b = ExpSum([(2.0, -1.0, 0), (0.5, -3.0, 1)])
    prod = expsum_mul(one, b)
    ts = np.linspace(0, 4, 17)
    assert np.allclose(prod(ts), b(ts))


def test_expsum_mul_exponent_addition():
    a = ExpSum.exponential(1.0, -1.0)
    b = ExpSum.exponential(1.0, -2.0)
    prod = expsum_mul(a, b)
    assert len(prod) == 1
    assert prod.terms[0].exponent == pytest.approx(-3.0)


def test_expsum_mul_pointwise_oracle():
    rng = np.random.default_rng(5)
    for _ in range(10):
        a = ExpSum([(rng.normal(), -rng.random(), rng.integers(0, 2)) for _ in range(3)])
        b = ExpSum([(rng.normal() + 1j * rng.normal(), -rng.random() + 1j, 0)
                    for _ in range(2)])
        t = 0.7
        assert expsum_mul(a, b)(t) == pytest.approx(a(t) * b(t))


def test_ordered_integral_elementary():
    g = ExpSum.exponential(1.0, -1.0)
    h = expsum_ordered_integral(g)
    ts = np.linspace(0, 5, 11)
    assert np.allclose(h(ts), 1.0 - np.exp(-ts))


def test_ordered_integral_secular_flagged():
    h = expsum_ordered_integral(ExpSum.constant(1.0))
    ts = np.linspace(0, 5, 11)
    assert np.allclose(h(ts), ts)
    assert len(h.secular_terms()) == 1
    with pytest.raises(sb.SecularResidualError):
        h.asymptotic_constant()


def test_ordered_integral_composed_product():
    g = expsum_mul(ExpSum.exponential(1.0, -2.0), ExpSum.exponential(1.0, -3.0))
    h = expsum_ordered_integral(g)
    ts = np.linspace(0, 3, 9)
    assert np.allclose(h(ts), (1.0 - np.exp(-5.0 * ts)) / 5.0)


def test_ordered_integral_polynomial_terms():
    # int_0^t s e^{-2s} ds against the closed form
    g = ExpSum([(1.0, -2.0, 1)])
    h = expsum_ordered_integral(g)
    ts = np.linspace(0.0, 4.0, 13)
    exact = 0.25 - (0.25 + 0.5 * ts) * np.exp(-2.0 * ts)
    assert np.allclose(h(ts), exact)


def test_ordered_triple_constant_matches_expsum_chain():
    rng = np.random.default_rng(7)
    for _ in range(12):
        a = rng.normal() + 1j * rng.normal()
        b = -rng.random() - 0.1 + 1j * rng.normal()
        c = -rng.random() - 0.1 + 1j * rng.normal()
        # keep every surviving exponent decaying
        if (a + b + c).real >= -1e-3 or (b + c).real >= -1e-3:
            continue
        g = expsum_ordered_integral(ExpSum.exponential(1.0, a))
        g = expsum_mul(g, ExpSum.exponential(1.0, b))
        g = expsum_ordered_integral(g)
        g = expsum_mul(g, ExpSum.exponential(1.0, c))
        g = expsum_ordered_integral(g)
        ref = g.asymptotic_constant()
        assert ordered_triple_constant(a, b, c) == pytest.approx(ref, rel=1e-10)


def test_drude_modes_structure():
    eb = sb.drude_modes(0.3, 1.7, 1.0, 3)
    assert np.allclose(eb.rates.real, [1.7, 2 * np.pi, 4 * np.pi, 6 * np.pi])
    assert eb.n_matsubara == 3
    # zero-coupling limit
    eb0 = sb.drude_modes(0.0, 1.7, 1.0, 3)
    assert np.abs(eb0.weights).max() == 0.0


def test_drude_modes_first_term():
    gamma, lam_c, beta = 0.21, 0.9, 1.3
    eb = sb.drude_modes(gamma, lam_c, beta, 0)
    assert eb.nu(0.0) == pytest.approx(np.pi * gamma * lam_c / beta)
    assert eb.eta(2.0) == pytest.approx(-0.5 * np.pi * gamma * lam_c**2 * np.exp(-2.0 * lam_c))


def test_drude_modes_degeneracy_reported():
    beta = 1.0
    with pytest.raises(DegenerateModeError):
        sb.drude_modes(0.1, 2 * np.pi / beta, beta, 4)
    # the documented workaround
    eb = sb.drude_modes(0.1, 2 * np.pi / beta * (1 + 1e-9), beta, 4)
    assert len(eb.weights) == 5


def test_reconstruction_monotone_in_n():
    gamma, lam_c, beta = 0.05, 1.1, 0.8
    ctx = sb.BathContext(sb.Drude(gamma, lam_c), beta=beta)
    ts = np.array([0.15, 0.5, 1.0, 2.0, 4.0])
    exact = np.array([sb.nu(ctx, float(t)) for t in ts])
    errs = []
    for n in (4, 16, 64, 256):
        eb = sb.drude_modes(gamma, lam_c, beta, n)
        errs.append(np.abs(eb.nu(ts) - exact).max())
    assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))


def _params():
    return sb.SpinBosonParams(omega=0.191, theta=0.183, lam=1.0, beta=0.315)


def test_tcl4_matsubara_matches_expsum_reference():
    p = _params()
    eb = sb.drude_modes(3.58e-3, 0.207, p.beta, 3)
    fast = sb.tcl4_drude_matsubara(p, eb).m
    ref = _tcl4_drude_expsum(p, eb).m
    assert np.abs(fast - ref).max() < 1e-12 * np.abs(ref).max()


def test_tcl4_matsubara_dephasing_element_vanishes():
    p = sb.SpinBosonParams(omega=0.5, theta=0.0, lam=1.0, beta=1.0)
    eb = sb.drude_modes(0.02, 1.0, 1.0, 16)
    f4 = sb.tcl4_drude_matsubara(p, eb)
    assert abs(f4.m[3, 3]) < 1e-14
    assert np.abs(f4.m[0]).max() == 0.0


def test_tcl4_matsubara_row_constraints():
    p = sb.SpinBosonParams(omega=1.1, theta=0.6, lam=1.0, beta=0.7)
    eb = sb.drude_modes(0.04, 1.3, 0.7, 32)
    f4 = sb.tcl4_drude_matsubara(p, eb)
    assert np.abs(f4.m[0]).max() == 0.0
    assert f4.symmetry_residual(p.a1, p.a3) < 1e-13
    f2 = sb.tcl2_drude_matsubara(p, eb)
    assert np.abs(f2.m[0]).max() == 0.0
    assert f2.symmetry_residual(p.a1, p.a3) < 1e-13


def test_tcl4_matsubara_ladder_converges():
    p = _params()
    x64 = sb.tcl4_drude_matsubara(p, sb.drude_modes(3.58e-3, 0.207, p.beta, 64)).m
    x128 = sb.tcl4_drude_matsubara(p, sb.drude_modes(3.58e-3, 0.207, p.beta, 128)).m
    assert np.abs(x128 - x64).max() / np.abs(x128).max() < 1e-4


def test_tcl2_matsubara_gibbs_limit():
    from spinboson.dynamics import steady_state

    p = sb.SpinBosonParams(omega=1.6, theta=0.785, lam=1e-3, beta=1.0)
    eb = sb.drude_modes(1.0, 1.0, 1.0, 512)
    f2 = sb.tcl2_drude_matsubara(p, eb)
    tot = sb.total_generator(p, sb.free_generator(p), f2)
    v = steady_state(tot)
    assert v[3] == pytest.approx(-np.tanh(0.5 * p.beta * p.omega), abs=5e-6)
