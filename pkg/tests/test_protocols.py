import json
import math
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emitqec import protocols as P
from emitqec.noise import HardwareParams, hardware_set
from emitqec.qstate import bell_vector, ghz_vector, sqrt_fidelity, w_vector

ALPHAS = (0.01, 0.025, 0.1, 0.25, 0.5, 0.9)


def run(name, alpha, pnr, timing, bunching=False):
    return P.run_elementary(name, HardwareParams(alpha=alpha, pnr=pnr), timing, same_detector=bunching)


@pytest.mark.parametrize("name", P.CLOSED_FORM)
@pytest.mark.parametrize("pnr", [True, False])
def test_closed_forms(name, pnr, ideal_timing):
    if name == "dc_ghz" and not pnr:
        pytest.skip("covered by test_dc_ghz_threshold_detector_rate")
    for a in ALPHAS:
        res = run(name, a, pnr, ideal_timing, bunching=pnr and name in ("dc_ghz", "dc_w"))
        P_ref, F_ref = P.closed_form_oracle(name, a, pnr)
        assert res.success_prob == pytest.approx(P_ref, abs=1e-9)
        assert res.fidelity == pytest.approx(F_ref, abs=1e-9)


def test_dc_ghz_threshold_detector_rate(ideal_timing):
    # threshold detectors only see the coincidences: half of the PNR rate
    for a in ALPHAS:
        res = run("dc_ghz", a, False, ideal_timing)
        assert res.success_prob == pytest.approx(1.5 * a**2 * (1 - a) ** 2, abs=1e-12)
        assert res.fidelity == pytest.approx(1.0, abs=1e-9)


def test_coincidence_only_is_half_of_pnr_with_bunching(ideal_timing):
    a = 0.3
    assert run("dc_ghz", a, True, ideal_timing).success_prob == pytest.approx(
        0.5 * run("dc_ghz", a, True, ideal_timing, bunching=True).success_prob)


def test_bunching_needs_pnr(ideal_timing):
    with pytest.raises(P.ProtocolError):
        run("dc_ghz", 0.3, False, ideal_timing, bunching=True)


def _branch_fid(name, timing, target, alpha=0.1):
    hw = HardwareParams(alpha=alpha)
    return {k: sqrt_fidelity(v.normalize(), target) for k, v in P.BRANCHES[name](hw, timing, alpha).items()}


def test_bell_heralds_psi_states(ideal_timing):
    f_plus = _branch_fid("bell_sc", ideal_timing, bell_vector("psi+"))
    f_minus = _branch_fid("bell_sc", ideal_timing, bell_vector("psi-"))
    assert sorted(max(f_plus[k], f_minus[k]) for k in f_plus) == pytest.approx([1.0, 1.0], abs=1e-10)
    assert {round(f_plus[k]) for k in f_plus} == {0, 1}


def test_w_heralds_phased_w_state(ideal_timing):
    hw = HardwareParams(alpha=0.1)
    V = 2 * np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]]) / 4
    for k, branch in P.BRANCHES["w"](hw, ideal_timing, 0.1).items():
        # detector k picks up phases from row k of the network
        assert sqrt_fidelity(branch.normalize(), w_vector(4, V[k] * 2)) == pytest.approx(1, abs=1e-10)


def test_raw_ghz_heralds_psi4_minus(ideal_timing):
    hw = HardwareParams(alpha=0.1)
    br = P.BRANCHES["raw_ghz"](hw, ideal_timing, 0.1)
    target = np.zeros(16, complex)
    target[0b0101], target[0b1010] = 1 / math.sqrt(2), -1 / math.sqrt(2)
    assert sqrt_fidelity(br[(0, 1)].normalize(), target) == pytest.approx(1, abs=1e-10)


@pytest.mark.parametrize("a", ALPHAS[:-1])
def test_non_pnr_bell_overlap_law(a, ideal_timing):
    res = run("bell_sc", a, False, ideal_timing)
    assert res.fidelity**2 == pytest.approx(2 * (1 - a) / (2 - a), abs=1e-12)


@pytest.mark.parametrize("a", [0.025, 0.1, 0.5])
def test_dc_ghz_ideal_fidelity_independent_of_alpha(a, ideal_timing):
    assert run("dc_ghz", a, True, ideal_timing).fidelity == pytest.approx(1, abs=1e-10)


def test_corrected_state_targets(ideal_timing):
    res = run("dc_ghz", 0.2, True, ideal_timing)
    assert sqrt_fidelity(res.output_state, ghz_vector(4)) == pytest.approx(1, abs=1e-10)
    res.output_state.validate()


def test_noise_lowers_fidelity():
    hw = hardware_set("ES-2", alpha=0.5)
    f0 = P.run_elementary("dc_ghz", hw).fidelity
    f1 = P.run_elementary("dc_ghz", hw.with_p(2e-3)).fidelity
    assert 0.9 < f1 < f0 < 1


def test_w_to_ghz_patterns_persisted_match_derivation():
    stored = json.loads(resources.files("emitqec").joinpath("data/w_to_ghz_patterns.json").read_text())
    assert tuple(stored["accepted"]) == P.w_to_ghz_patterns() == P.derive_w_to_ghz_patterns()


@pytest.mark.parametrize("name", ["distil_bell_sc", "distil_bell_dc", "distil_w_ghz", "distil_ghz_ghz"])
def test_distillation_ideal_gives_ghz(name, ideal_timing):
    res = P.run_protocol(name, HardwareParams(alpha=0.05), ideal_timing, n_shots=200)
    assert res.fidelity == pytest.approx(1, abs=1e-9)
    assert 0 < res.success_prob < 1


def test_distillation_reproducible_with_rng():
    hw = hardware_set("ES-2", alpha=0.1).with_p(1e-3)
    a = P.run_protocol("distil_ghz_ghz", hw, n_shots=200, rng=np.random.default_rng(3))
    b = P.run_protocol("distil_ghz_ghz", hw, n_shots=200, rng=np.random.default_rng(3))
    assert a.fidelity == b.fidelity and a.success_prob == b.success_prob


def test_unknown_protocol():
    with pytest.raises(P.ProtocolError):
        P.run_protocol("teleport", HardwareParams())


def explicit_attempt_mean(at):
    """Expected time from the attempt process: a round-1 failure costs fail1,
    reaching round 2 costs round2, and only a round-2 success stops."""
    if at["kind"] == "single":
        return at["fail1"] / at["q1"]
    q1, q2 = at["q1"], at["q2"]
    return ((1 - q1) * at["fail1"] + q1 * at["round2"]) / (q1 * q2)


@settings(max_examples=20)
@given(st.sampled_from(["bell_sc", "w", "dc_ghz", "bell_dc"]), st.floats(0.05, 0.6))
def test_generation_time_mean(name, a):
    res = P.run_elementary(name, HardwareParams(alpha=a))
    t = res.sample_generation_times(np.random.default_rng(0), 40_000)
    assert t.min() > 0
    assert abs(t.mean() - explicit_attempt_mean(res.attempt_time)) < 5 * t.std() / math.sqrt(t.size)


def test_rus_sample():
    rng = np.random.default_rng(1)
    n = [P.rus_sample(0.25, rng) for _ in range(20_000)]
    assert np.mean(n) == pytest.approx(4, rel=0.03)
    assert P.rus_sample(0.0, rng) is None
    assert P.rus_sample(1e-9, rng, max_attempts=5) is None
