import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emitqec.photonics import (
    DETECTOR_PAIRS,
    POVMError,
    beamsplitter_4x4,
    bell_povm_set,
    ghz_click,
    intensity_to_amplitude_visibility,
    povm_element,
    uniform_visibility,
    validate_visibility,
    w_click,
    w_povm,
)


def random_visibility(rng, n=4):
    """Gram matrix of random unit vectors: Hermitian, PSD, unit diagonal."""
    v = rng.normal(size=(n, 3)) + 1j * rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v.conj() @ v.T


def single_photon_index(k, n=4):
    return 1 << (n - 1 - k)


def test_beamsplitter_is_unitary():
    V = beamsplitter_4x4()
    assert np.allclose(V @ V.conj().T, np.eye(4), atol=1e-15)


@pytest.mark.parametrize("mu", [0.0, 0.5, 0.95, 1.0])
def test_bell_set_completeness(mu):
    E = bell_povm_set(mu)
    total = sum(e.matrix for e in E.values())
    assert np.max(np.abs(total - np.eye(4))) < 1e-12


@pytest.mark.parametrize("mu", [0.0, 0.3, 0.7, 1.0])
def test_hong_ou_mandel_coincidence(mu):
    # both ports occupied; coincidence probability is (1 - |mu|^2) / 2
    E = bell_povm_set(mu)["11"].matrix
    assert E[3, 3].real == pytest.approx((1 - mu**2) / 2, abs=1e-14)


def test_single_photon_element_closed_form():
    rng = np.random.default_rng(8)
    V = beamsplitter_4x4()
    for _ in range(5):
        mu = random_visibility(rng)
        for k in range(4):
            E = w_povm(k, 1, mu).matrix
            for i in range(4):
                for j in range(4):
                    ref = V[k, i] * np.conj(V[k, j]) * mu[i, j]
                    assert E[single_photon_index(i), single_photon_index(j)] == pytest.approx(ref, abs=1e-14)


def test_w_povm_complete_on_single_photon_subspace():
    rng = np.random.default_rng(9)
    idx = [single_photon_index(k) for k in range(4)]
    for _ in range(100):
        mu = random_visibility(rng)
        total = sum(w_povm(k, 1, mu).matrix for k in range(4))
        assert np.max(np.abs(total[np.ix_(idx, idx)] - np.eye(4))) < 1e-12


def test_all_elements_psd():
    rng = np.random.default_rng(10)
    mus = [uniform_visibility(m) for m in (0.0, 0.5, 0.95, 1.0)] + [random_visibility(rng) for _ in range(5)]
    for mu in mus:
        for pnr in (True, False):
            for k in range(4):
                assert np.linalg.eigvalsh(w_click(k, mu, pnr).matrix).min() > -1e-12
            for pair in DETECTOR_PAIRS:
                assert np.linalg.eigvalsh(ghz_click(pair, mu, pnr).matrix).min() > -1e-12


def test_two_photon_patterns_complete():
    # every two-photon pattern on four ports resolves the two-photon subspace
    mu = uniform_visibility(0.8)
    idx = [i for i in range(16) if bin(i).count("1") == 2]
    total = np.zeros((16, 16), complex)
    for a in range(4):
        for b in range(a, 4):
            pat = [0] * 4
            pat[a] += 1
            pat[b] += 1
            total += povm_element(pat, mu).matrix
    assert np.allclose(total[np.ix_(idx, idx)], np.eye(len(idx)), atol=1e-12)


@given(st.floats(0, 1))
def test_visibility_conversion(mu_i):
    assert intensity_to_amplitude_visibility(mu_i) ** 2 == pytest.approx(mu_i)


def test_bad_inputs():
    with pytest.raises(POVMError):
        intensity_to_amplitude_visibility(1.2)
    with pytest.raises(POVMError):
        validate_visibility(np.full((4, 4), 0.5))
    with pytest.raises(POVMError):
        povm_element((3, 3, 0, 0), uniform_visibility(1.0))
