import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emitqec.noise import (
    NoiseError,
    TimingParams,
    decay_probability,
    decoherence,
    depolarizing,
    double_excitation_dephasing,
    gad,
    hardware_set,
    hardware_set_names,
    phase_damping,
    photon_loss,
    prep_dephasing,
    z_dephasing,
)

probs = st.floats(0, 1)
times = st.floats(0, 1e7)


@given(probs, times)
def test_channels_trace_preserving(p, t):
    T = 1e6
    for ch in (depolarizing(p, 1), depolarizing(p, 2), gad(t, T), phase_damping(t, T), decoherence(t, T),
               z_dephasing(p), double_excitation_dephasing(p), photon_loss(p)):
        assert ch.completeness_error() < 1e-10


def test_gad_fixed_point_is_maximally_mixed():
    ch = gad(math.inf, 1.0)
    rho = np.array([[1, 0.3], [0.3, 0]], complex)
    assert np.allclose(ch(rho), np.eye(2) / 2, atol=1e-15)


@given(st.floats(0, 5e6))
def test_decoherence_ptm_diagonal(t):
    R = decoherence(t, 1e6).ptm()
    assert np.max(np.abs(R - np.diag(np.diag(R)))) < 1e-12
    g = decay_probability(t, 1e6)
    # X, Y contract by (1-g) from both channels combined; Z by (1-g)
    assert np.allclose(np.diag(R), [1, 1 - g, 1 - g, 1 - g], atol=1e-12)


@given(probs)
def test_depolarizing_ptm(p):
    R = depolarizing(p, 1).ptm()
    lam = 1 - 4 * p / 3
    assert np.allclose(R, np.diag([1, lam, lam, lam]), atol=1e-12)


def test_decay_probability_limits():
    assert decay_probability(0, 1) == 0
    assert decay_probability(math.inf, 1) == 1
    with pytest.raises(NoiseError):
        decay_probability(-1, 1)


def test_prep_dephasing_range():
    assert prep_dephasing(1.0).completeness_error() < 1e-15
    with pytest.raises(NoiseError):
        prep_dephasing(0.4)


def test_hardware_sets_resolve():
    names = hardware_set_names()
    assert len(names) == 18 and names[0] == "ES-1"
    es2 = hardware_set("ES-2")
    assert (es2.f_prep, es2.p_de, es2.mu_i, es2.eta_ph) == (0.999, 0.0, 0.95, 0.4474)
    assert es2.mu == pytest.approx(math.sqrt(0.95))
    with pytest.raises(NoiseError):
        hardware_set("ES-99")


def test_timing_validation():
    with pytest.raises(NoiseError):
        TimingParams(T_link=0)
