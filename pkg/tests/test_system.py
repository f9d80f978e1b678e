import numpy as np
import pytest

import spinboson as sb
from spinboson.system import GeneratorMatrix, PAULI, validate_bloch


def test_dqd_mapping_limits():
    assert sb.dqd_to_sbm(sb.DqdParams(0.0, 0.5)) == pytest.approx((1.0, 1.0, 0.0))
    assert sb.dqd_to_sbm(sb.DqdParams(1.0, 0.0)) == pytest.approx((1.0, 0.0, 1.0))
    omega, a1, a3 = sb.dqd_to_sbm(sb.DqdParams(1.0, 0.5))
    assert omega == pytest.approx(np.sqrt(2.0))
    assert a1 == pytest.approx(1.0 / np.sqrt(2.0))
    assert a3 == pytest.approx(1.0 / np.sqrt(2.0))


def test_dqd_mapping_unit_circle():
    rng = np.random.default_rng(1)
    for _ in range(25):
        eps, tc = rng.normal(size=2)
        if eps == 0 and tc == 0:
            continue
        _, a1, a3 = sb.dqd_to_sbm(sb.DqdParams(eps, tc))
        assert a1**2 + a3**2 == pytest.approx(1.0, abs=1e-14)


def test_dqd_zero_rejected():
    with pytest.raises(ValueError):
        sb.DqdParams(0.0, 0.0)


def test_bloch_density_round_trip():
    plus = 0.5 * np.array([[1, 1], [1, 1]], dtype=complex)
    assert np.allclose(sb.bloch_from_density(plus), [1, 1, 0, 0])
    assert np.allclose(sb.bloch_from_density(0.5 * np.eye(2)), [1, 0, 0, 0])
    rng = np.random.default_rng(2)
    for _ in range(100):
        v = rng.normal(size=3)
        v *= rng.random() / np.linalg.norm(v)
        bloch = np.concatenate(([1.0], v))
        back = sb.bloch_from_density(sb.density_from_bloch(bloch))
        assert np.abs(back - bloch).max() < 1e-14


def test_non_hermitian_rejected():
    rho = np.array([[0.5, 0.1], [0.3, 0.5]], dtype=complex)
    with pytest.raises(ValueError):
        sb.bloch_from_density(rho)


def test_free_generator_structure():
    p = sb.SpinBosonParams(omega=0.0, theta=0.3)
    assert np.all(sb.free_generator(p).m == 0.0)
    p = sb.SpinBosonParams(omega=1.3, theta=0.3)
    m = sb.free_generator(p).m
    expected = np.zeros((4, 4))
    expected[1, 2] = -1.3
    expected[2, 1] = 1.3
    assert np.allclose(m, expected)


def test_free_larmor_quarter_turn():
    from spinboson.dynamics import propagate

    p = sb.SpinBosonParams(omega=2.2, theta=0.0)
    g = sb.free_generator(p)
    t_quarter = np.pi / (2 * p.omega)
    traj = propagate(np.array([1.0, 1.0, 0.0, 0.0]), g, [0.0, t_quarter])
    assert np.allclose(traj.states[-1], [1, 0, 1, 0], atol=1e-12)


def test_free_evolution_conserves_plane_norm():
    from spinboson.dynamics import propagate

    p = sb.SpinBosonParams(omega=1.7, theta=0.0)
    g = sb.free_generator(p)
    v0 = np.array([1.0, 0.3, -0.4, 0.6])
    traj = propagate(v0, g, np.linspace(0, 9, 40))
    r2 = traj.states[:, 1] ** 2 + traj.states[:, 2] ** 2
    assert np.abs(r2 - r2[0]).max() < 1e-12
    assert np.abs(traj.states[:, 3] - 0.6).max() < 1e-12


def test_coupling_matrix():
    p = sb.SpinBosonParams(omega=1.0, theta=0.25)
    a = sb.coupling_matrix(p)
    assert np.allclose(a, p.a3 * PAULI[3] - p.a1 * PAULI[1])


def test_validate_bloch():
    assert validate_bloch(np.array([1.0, 0.5, 0.0, 0.0]))
    assert validate_bloch(np.array([1.0, 1.02, 0.0, 0.0]))  # inside the slack
    assert not validate_bloch(np.array([1.0, 1.2, 0.0, 0.0]))
    assert not validate_bloch(np.array([0.9, 0.0, 0.0, 0.0]))


def test_generator_json_round_trip():
    m = np.arange(16.0).reshape(4, 4)
    g = GeneratorMatrix(m, order=4, t=None)
    g2 = GeneratorMatrix.from_json(g.to_json())
    assert g2.order == 4 and g2.is_asymptotic
    assert np.all(g2.m == m)
    g3 = GeneratorMatrix.from_json(GeneratorMatrix(m, order=2, t=1.5).to_json())
    assert g3.t == 1.5
