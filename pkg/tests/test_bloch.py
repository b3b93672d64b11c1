import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from oracles import resonant_coherent_fraction, resonant_excited_pop
from photostat.exceptions import DegenerateSpectrumError, DomainError
from photostat.heterodyne import mollow_reference
from photostat.qsim.bloch import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    TwoLevelParams,
    bin_average,
    bloch_steady_state,
    coherent_fraction,
    excited_population,
    inelastic_spectrum,
    resonant_g2_closed_form,
    saturation_excited_pop,
    single_atom_g1,
    single_atom_g2,
)


def master_rhs(p):
    """Master equation on a 2x2 matrix, written out with plain matrix products."""
    H = np.array([[0, 0.5 * p.rabi], [0.5 * p.rabi, -p.detuning]], dtype=complex)
    a, ad = SIGMA_MINUS, SIGMA_PLUS

    def rhs(_, y):
        r = y.reshape(2, 2)
        d = -1j * (H @ r - r @ H) + a @ r @ ad - 0.5 * (ad @ a @ r + r @ ad @ a)
        return d.reshape(-1)

    return rhs


def ode_g1(p, taus):
    """``<sigma+(0) sigma-(tau)>`` by integrating the master equation from ``rho sigma+``."""
    rhs = master_rhs(p)
    rho0 = np.array([[1, 0], [0, 0]], dtype=complex)
    ss = solve_ivp(rhs, (0, 60), rho0.reshape(-1), rtol=1e-11, atol=1e-13).y[:, -1].reshape(2, 2)
    x0 = (ss @ SIGMA_PLUS).reshape(-1)
    sol = solve_ivp(rhs, (0, taus[-1]), x0, t_eval=taus, rtol=1e-11, atol=1e-13)
    vals = np.array([np.trace(SIGMA_MINUS @ sol.y[:, k].reshape(2, 2)) for k in range(len(taus))])
    return vals / ss[1, 1].real


def test_steady_state_examples():
    assert bloch_steady_state(TwoLevelParams(0))["excited_pop"] == pytest.approx(0, abs=1e-14)
    assert abs(bloch_steady_state(TwoLevelParams(0))["dipole"]) < 1e-14
    assert bloch_steady_state(TwoLevelParams(1))["excited_pop"] == pytest.approx(1 / 3, abs=1e-12)
    assert bloch_steady_state(TwoLevelParams(1e3))["excited_pop"] == pytest.approx(0.5, abs=1e-6)


@given(st.floats(0.05, 30), st.floats(-5, 5))
def test_steady_state_matches_saturation_formula(rabi, det):
    p = TwoLevelParams(rabi, detuning=det)
    assert bloch_steady_state(p)["excited_pop"] == pytest.approx(saturation_excited_pop(p), abs=1e-10)
    if det == 0:
        assert saturation_excited_pop(p) == pytest.approx(resonant_excited_pop(rabi), abs=1e-14)


@given(st.floats(0.1, 20))
def test_coherent_fraction_resonant(rabi):
    assert coherent_fraction(TwoLevelParams(rabi)) == pytest.approx(resonant_coherent_fraction(rabi), abs=1e-10)


def test_coherent_fraction_frozen():
    assert coherent_fraction(TwoLevelParams(5)) == pytest.approx(0.0196078, abs=1e-6)
    assert coherent_fraction(TwoLevelParams(4.5)) == pytest.approx(0.0240964, abs=1e-6)


def test_g2_matches_closed_form_to_1e8():
    t = np.linspace(0, 15, 1501)
    for rabi in (5.0, 0.25, 0.1, 1.0):
        g = single_atom_g2(TwoLevelParams(rabi), t)
        assert np.max(np.abs(g - resonant_g2_closed_form(rabi, t))) < 1e-8


def test_g2_frozen_values():
    t = np.array([0.0, 0.5, 1.0, 3.0])
    # closed form evaluated with mpmath at 30 digits
    frozen = np.array([0.0, 1.4872944619008, 0.93699704443384, 1.0682529271429])
    assert np.allclose(single_atom_g2(TwoLevelParams(5), t), frozen, atol=1e-9)


@given(st.floats(0.1, 10))
def test_limits(rabi):
    p = TwoLevelParams(rabi)
    g2 = single_atom_g2(p, [0.0, 80.0])
    g1 = single_atom_g1(p, [0.0, 80.0])
    assert abs(g2[0]) < 1e-12
    assert g2[1] == pytest.approx(1, abs=1e-8)
    assert g1[0] == pytest.approx(1, abs=1e-12)
    assert g1[1].real == pytest.approx(coherent_fraction(p), abs=1e-8)


def test_g1_matches_ode_integration():
    taus = np.linspace(0, 10, 201)
    for p in (TwoLevelParams(4.5), TwoLevelParams(1.3, detuning=0.7)):
        ref = ode_g1(p, taus)
        assert np.max(np.abs(single_atom_g1(p, taus) - ref)) < 1e-7


def test_g1_negative_lags_conjugate():
    p = TwoLevelParams(2.0, detuning=0.5)
    t = np.array([-1.5, 1.5])
    g = single_atom_g1(p, t)
    assert g[0] == pytest.approx(np.conj(g[1]))


def test_transient_population_matches_ode():
    p = TwoLevelParams(5)
    times = np.linspace(0, 5, 51)
    sol = solve_ivp(master_rhs(p), (0, 5), np.array([1, 0, 0, 0], complex), t_eval=times, rtol=1e-11, atol=1e-13)
    assert np.allclose(excited_population(p, times), sol.y[3].real, atol=1e-8)


def test_mollow_strong_drive_ratio():
    p = TwoLevelParams(20)
    w = np.linspace(-30, 30, 6001)
    s = inelastic_spectrum(p, w)
    centre = s[np.argmin(np.abs(w))]
    side = s[(w > 10)].max()
    assert side / centre == pytest.approx(1 / 3, abs=0.01)
    assert w[w > 10][np.argmax(s[w > 10])] == pytest.approx(20, abs=0.05)


def test_spectrum_matches_fourier_transform_of_g1():
    p = TwoLevelParams(3)
    dt = 0.005
    t = np.arange(0, 60, dt)
    r = single_atom_g1(p, t) * bloch_steady_state(p)["excited_pop"] - \
        abs(bloch_steady_state(p)["dipole"]) ** 2
    for w in (0.0, 1.0, 3.0, 5.0):
        y = r * np.exp(-1j * w * t)
        ft = 2 * np.real(dt * (np.sum(y) - 0.5 * (y[0] + y[-1])))
        assert inelastic_spectrum(p, [w])[0] == pytest.approx(ft, rel=1e-4, abs=1e-8)


def test_spectrum_even_and_normalized():
    p = TwoLevelParams(4.5, 6e6)
    w = np.linspace(-10, 10, 201) * p.gamma_rad_s
    ref = mollow_reference(p, w)
    assert ref.values[100] == 1.0
    assert np.allclose(ref.values, ref.values[::-1], atol=1e-10)
    assert np.all(ref.values > -1e-12)


def test_spectrum_undriven_flagged():
    with pytest.raises(DegenerateSpectrumError):
        inelastic_spectrum(TwoLevelParams(0), [0.0])


def test_params_validation():
    with pytest.raises(DomainError):
        TwoLevelParams(-1)
    with pytest.raises(DomainError):
        TwoLevelParams(1, gamma_hz=0)
    with pytest.raises(DomainError):
        single_atom_g1(TwoLevelParams(0), [0.0])


def test_unit_conversion_round_trip():
    p = TwoLevelParams(1, 6e6)
    assert p.to_gamma_units(p.to_ps(2.5)) == pytest.approx(2.5)
    assert p.to_gamma_units(1e12 / p.gamma_rad_s) == pytest.approx(1)


def test_bin_average_quadratic():
    got = bin_average(lambda x: x ** 2, np.array([0.0, 1.0, 2.0]), 1.0)
    assert np.allclose(got, [1 / 6, 7 / 6, 25 / 6])
