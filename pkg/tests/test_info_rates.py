import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cqedinfo.dynamics import SystemParams, liouvillian_apply, measurement_apply
from cqedinfo.errors import DomainError
from cqedinfo.experiments import r_squared_through_origin, synthetic_diagonal_instance
from cqedinfo.hilbert import FockSpec
from cqedinfo.info_rates import (
    DiagonalPair,
    common_eigenbasis,
    diagonal_pair,
    dressed_projection,
    entropy_rate_diagonal,
    entropy_rate_divided_difference,
    entropy_rate_finite_difference,
    entropy_rate_monte_carlo,
    entropy_rate_series,
    m_diagonal_ss,
    rate_RQ,
)
from cqedinfo.steady_state import rho_ss_analytic, spec_for

REF = SystemParams(E=10.0, g=1.0, phi=math.pi / 2, spec=FockSpec(1))

valid_params = st.builds(
    lambda E, x, kappa, eta, phi: SystemParams(E=E, g=2 * E * x, kappa=kappa, eta=eta, phi=phi, spec=FockSpec(1)),
    st.floats(0.1, 50.0),
    st.floats(0.0, 0.999),
    st.floats(0.1, 5.0),
    st.floats(0.01, 1.0),
    st.floats(-2 * math.pi, 2 * math.pi),
)


def test_diagonal_rate_examples():
    assert entropy_rate_diagonal(DiagonalPair([0.5, 0.5], [0.0, 0.0])) == 0.0
    assert entropy_rate_diagonal(DiagonalPair([0.25, 0.75], [0.1, -0.1])) == pytest.approx(-0.0266667, abs=1e-7)
    assert entropy_rate_diagonal(DiagonalPair([0.5, 0.5], [0.70622, -0.70622])) == pytest.approx(-0.9975, abs=1e-4)


@pytest.mark.parametrize(
    "a, b",
    [([0.5, 0.6], [0.1, -0.1]), ([1.0, 0.0], [0.1, -0.1]), ([0.5, 0.5], [0.1, 0.1]), ([0.5, 0.5], [0.1])],
)
def test_diagonal_pair_validation(a, b):
    with pytest.raises(ValueError):
        DiagonalPair(a, b)


def test_closed_form_pair():
    d = m_diagonal_ss(REF)
    assert np.array_equal(d.a, [0.5, 0.5])
    assert d.b[0] == pytest.approx(0.70622, abs=1e-5) and d.b[1] == -d.b[0]
    assert np.all(m_diagonal_ss(REF.with_(phi=0.0)).b == 0)
    small = m_diagonal_ss(REF.with_(eta=1e-4)).b[0]
    assert small / d.b[0] == pytest.approx(1e-2, rel=1e-12)
    with pytest.raises(DomainError):
        m_diagonal_ss(REF.with_(g=20.0))


@pytest.mark.parametrize("phi", [math.pi / 2, 0.3, 0.0])
def test_closed_form_pair_matches_projected_backaction(phi):
    p = spec_for(SystemParams(E=10.0, g=1.0, phi=phi), "recommended")
    m2 = dressed_projection(measurement_apply(rho_ss_analytic(p).matrix, p), p)
    b = m_diagonal_ss(p).b
    assert np.allclose(np.diag(m2).real, b, atol=1e-6)
    assert abs(m2[0, 1]) < 1e-6


def test_rate_RQ_examples():
    assert rate_RQ(REF.with_(phi=0.0)) == 0.0
    assert rate_RQ(REF) == pytest.approx(0.9975, abs=1e-12)
    assert rate_RQ(SystemParams(E=20.0, g=2.0, eta=0.8, phi=math.pi / 2, spec=FockSpec(1))) == pytest.approx(3.192, abs=1e-12)


@given(valid_params)
def test_rate_RQ_is_minus_diagonal_rate(p):
    assert rate_RQ(p) >= 0
    assert rate_RQ(p) == pytest.approx(-entropy_rate_diagonal(m_diagonal_ss(p)), abs=1e-10)


@given(valid_params)
def test_rate_RQ_follows_sin_squared(p):
    top = rate_RQ(p.with_(phi=math.pi / 2))
    assert rate_RQ(p) == pytest.approx(top * math.sin(p.phi) ** 2, rel=1e-12, abs=1e-300)


def test_series_vanishes_without_generators():
    rho = np.diag([0.6, 0.3, 0.1]).astype(complex)
    zero = np.zeros_like(rho)
    for n in (1, 2, 7, 50):
        assert entropy_rate_series(rho, zero, zero, n).value == 0.0
    with pytest.raises(ValueError):
        entropy_rate_series(rho, zero, zero, 0)


def test_series_reduces_to_diagonal_rate_on_commuting_pair():
    # L = 0 and a diagonal M: the series must land on -sum b^2 / (2a)
    a = np.array([0.5, 0.3, 0.2])
    b = np.array([0.05, -0.02, -0.03])
    rho, M = np.diag(a).astype(complex), np.diag(b).astype(complex)
    s = entropy_rate_series(rho, np.zeros_like(rho), M, 400)
    expected = entropy_rate_diagonal(DiagonalPair(a, b))
    assert abs(s.value - expected) <= max(1e-6, s.last_term)


def test_series_ignores_the_kernel():
    a = np.array([0.5, 0.5, 0.0, 0.0])
    b = np.array([0.3, -0.3, 0.0, 0.0])
    s = entropy_rate_series(np.diag(a), np.zeros((4, 4)), np.diag(b), 200)
    assert s.support_dim == 2
    assert s.value == pytest.approx(-0.18, abs=1e-9)


def _random_rotation(dim, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    return q


@given(
    st.integers(2, 6),
    st.floats(0.5, 0.95),
    st.floats(0.01, 0.1),
    st.integers(0, 2**31),
)
def test_series_agrees_with_two_oracles(dim, ratio, scale, seed):
    rho, L, M = synthetic_diagonal_instance(dim, ratio, scale, seed)
    # rotate so nothing is diagonal in the computational basis
    u = _random_rotation(dim, seed)
    rho, L, M = (u @ x @ u.conj().T for x in (rho, L, M))
    # terms fall like n r^n with r = 1 - smallest eigenvalue (down to ~0.97 here), so sum far out
    s = entropy_rate_series(rho, L, M, 2000)
    assert s.last_term < 1e-12
    assert s.value == pytest.approx(entropy_rate_divided_difference(rho, L, M), abs=1e-9)
    assert s.value == pytest.approx(entropy_rate_finite_difference(rho, L, M), abs=1e-4)


def test_series_handles_non_commuting_backaction():
    # off-diagonal M enters through the divided difference of ln
    rng = np.random.default_rng(3)
    rho = np.diag([0.5, 0.3, 0.2]).astype(complex)
    h = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    M = 0.05 * (h + h.conj().T)
    M -= np.trace(M) / 3 * np.eye(3)
    L = np.zeros_like(M)
    s = entropy_rate_series(rho, L, M, 600)
    assert s.value == pytest.approx(entropy_rate_divided_difference(rho, L, M), abs=1e-9)
    assert s.value == pytest.approx(entropy_rate_finite_difference(rho, L, M), abs=1e-4)


def test_diagonal_pair_from_matrices():
    rho = np.diag([0.5, 0.5, 0.0])
    M = np.diag([0.2, -0.2, 0.0])
    u = _random_rotation(3, 1)
    d = diagonal_pair(u @ rho @ u.conj().T, u @ M @ u.conj().T)
    assert np.allclose(sorted(d.b), [-0.2, 0.2], atol=1e-12)
    w, v = common_eigenbasis(u @ rho @ u.conj().T, u @ M @ u.conj().T)
    assert len(w) == 2 and v.shape == (3, 2)


@pytest.mark.parametrize("phi", [0.0, math.pi / 2])
def test_monte_carlo_rate(phi):
    p = spec_for(SystemParams(E=10.0, g=1.0, phi=phi), "recommended")
    est = entropy_rate_monte_carlo(p, n_traj=10_000, delta_t=1e-4, seed=31)
    target = -rate_RQ(p)
    # at phi = 0 every sample is the same entropy difference, so rounding of H near ln 2 sets the floor
    roundoff = 64 * np.finfo(float).eps / est.delta_t
    assert abs(est.estimate - target) <= max(3 * est.std_error, 0.05 * abs(target), roundoff)
    assert est.leakage_norm < 1e-2


def test_monte_carlo_rate_follows_sin_squared():
    p = spec_for(SystemParams(E=10.0, g=1.0), "recommended")
    full = entropy_rate_monte_carlo(p.with_(phi=math.pi / 2), 10_000, 1e-4, seed=32)
    quarter = entropy_rate_monte_carlo(p.with_(phi=math.pi / 4), 10_000, 1e-4, seed=33)
    combined = math.hypot(quarter.std_error, 0.5 * full.std_error)
    assert abs(quarter.estimate - 0.5 * full.estimate) <= 3 * combined


def test_monte_carlo_rate_is_linear_in_efficiency():
    p = spec_for(SystemParams(E=10.0, g=1.0, phi=math.pi / 2), "recommended")
    etas = [0.25, 0.5, 1.0]
    rates = [-entropy_rate_monte_carlo(p.with_(eta=e), 10_000, 1e-4, seed=40 + k).estimate for k, e in enumerate(etas)]
    slope, r2 = r_squared_through_origin(etas, rates)
    assert r2 >= 0.99
    assert slope == pytest.approx(rate_RQ(p), rel=0.05)


def test_monte_carlo_input_checks():
    with pytest.raises(ValueError):
        entropy_rate_monte_carlo(REF, n_traj=999)
    with pytest.raises(ValueError):
        entropy_rate_monte_carlo(REF, delta_t=0.0)


def test_monte_carlo_is_seeded():
    p = spec_for(SystemParams(E=4.0, g=1.0, phi=1.0), "minimal")
    a = entropy_rate_monte_carlo(p, 1000, seed=5)
    b = entropy_rate_monte_carlo(p, 1000, seed=5)
    assert a == b
