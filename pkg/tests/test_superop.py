import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emitqec import superop as S
from emitqec.noise import HardwareParams, TimingParams, decoherence, depolarizing
from emitqec.qstate import CNOT, CZ, H, DensityMatrix, apply_kraus, ghz_vector, pauli_matrix, tensor

DATA = ("d0", "d1", "d2", "d3")
COMM = ("c0", "c1", "c2", "c3")


def ghz_state():
    g = ghz_vector(4)
    return DensityMatrix(np.outer(g, g.conj()), COMM, (2,) * 4)


def random_rho(rng, d=16):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = A @ A.conj().T
    return rho / np.trace(rho)


@given(st.floats(0, 1))
def test_parity_flip_matches_enumeration(p):
    ref = sum(p ** sum(f) * (1 - p) ** (4 - sum(f)) for f in itertools.product((0, 1), repeat=4) if sum(f) % 2)
    assert S.parity_flip_probability(p) == pytest.approx(ref, abs=1e-12)


def slow_cycle(rho, basis, p, tm):
    """Gate-by-gate Kraus simulation of one stabilizer measurement, outcome +1."""
    gate = CNOT if basis == "X" else CZ
    st_ = tensor(DensityMatrix(rho, DATA, (2,) * 4), ghz_state())
    for c, d in zip(COMM, DATA):
        st_ = apply_kraus(st_, [gate], [c, d])
        st_ = apply_kraus(st_, depolarizing(p, 2).kraus, [c, d])
    for q in DATA + COMM:
        st_ = apply_kraus(st_, decoherence(tm.t_2q, tm.T_link).kraus, [q])
    for c in COMM:
        st_ = apply_kraus(st_, [H], [c])
        st_ = apply_kraus(st_, depolarizing(p).kraus, [c])
    for q in DATA + COMM:
        st_ = apply_kraus(st_, decoherence(tm.t_p_comm, tm.T_link).kraus, [q])
    t = st_.data.reshape(16, 16, 16, 16)
    par = [bin(c).count("1") % 2 for c in range(16)]
    f = S.parity_flip_probability(p)
    even = sum(t[:, c, :, c] for c in range(16) if par[c] == 0)
    odd = sum(t[:, c, :, c] for c in range(16) if par[c] == 1)
    out = DensityMatrix((1 - f) * even + f * odd, DATA, (2,) * 4, False)
    for q in DATA:
        out = apply_kraus(out, decoherence(tm.t_meas, tm.T_link).kraus, [q])
    return out.data


@pytest.mark.parametrize("basis", ["X", "Z"])
def test_fast_circuit_matches_kraus_simulation(basis):
    rng = np.random.default_rng(0)
    tm = TimingParams()
    p = 1e-3
    L = S.circuit_liouville(ghz_state(), basis, HardwareParams().with_p(p), tm)
    rho = random_rho(rng)
    assert np.max(np.abs(S.apply_liouville(L[1], rho) - slow_cycle(rho, basis, p, tm))) < 1e-12


def test_choi_kraus_round_trip():
    rng = np.random.default_rng(1)
    L = S.circuit_liouville(ghz_state(), "Z", HardwareParams().with_p(2e-3), TimingParams())[1]
    J = S.liouville_to_choi(L)
    ks = S.kraus_from_choi(J)
    rho = random_rho(rng)
    assert np.allclose(sum(k @ rho @ k.conj().T for k in ks), S.apply_liouville(L, rho), atol=1e-12)
    assert np.allclose(S.choi_to_liouville(J), L)


def test_twirl_of_pauli_channel_recovers_weights():
    ch = depolarizing(0.12, 2)
    q = S.pauli_twirl(ch.kraus, 2)
    assert q["II"] == pytest.approx(0.88)
    assert all(v == pytest.approx(0.12 / 15) for k, v in q.items() if k != "II")


def test_kraus_from_choi_rejects_non_cp():
    J = np.diag([1.0, -0.5, 0.2, 0.3])
    with pytest.raises(S.SuperopError):
        S.kraus_from_choi(J)


@pytest.mark.parametrize("basis", ["X", "Z"])
def test_table_recombination(basis):
    rng = np.random.default_rng(2)
    L = S.circuit_liouville(ghz_state(), basis, HardwareParams().with_p(1e-3), TimingParams())
    maps = [S.ConditionedMap((True, m), S.liouville_to_choi(L[m])) for m in (1, -1)]
    tab = S.SuperoperatorTable(S.table_from_maps(basis, maps, None, 1.0))
    tab.validate(1e-10)
    for _ in range(3):
        rho = random_rho(rng)
        for m in (1, -1):
            assert np.max(np.abs(S.effective_map(tab, basis, m, rho) - S.direct_twirled_map(L[m], basis, rho))) < 1e-10


def test_coset_representatives():
    for basis in "XZ":
        reps = S.coset_representatives(basis)
        assert len(reps) == 128 and reps[0] == "IIII"


def test_build_table_ideal_and_noisy(tmp_path):
    tm = TimingParams()
    hw = HardwareParams(alpha=0.5)
    ideal = S.build_table("dc_ghz", hw, tm.with_(T_link=math.inf, T_idle=math.inf), n_time_samples=20_000)
    ok = [r for r in ideal.rows if r[2]]
    assert max(ok, key=lambda r: r[4])[1] == "IIII"
    assert sum(r[4] for r in ok if r[1] == "IIII" and not r[3]) / sum(r[4] for r in ok) == pytest.approx(1, abs=1e-9)
    noisy = S.build_table("dc_ghz", hw, tm, p=1e-3, n_time_samples=20_000)
    for basis in "XZ":
        assert noisy.total(basis) == pytest.approx(1, abs=1e-12)
    fail = sum(r[4] for r in noisy.for_basis("X") if not r[2])
    assert fail == pytest.approx(1 - noisy.metadata["ghz_success_prior"], abs=1e-12)
    path = tmp_path / "t.csv"
    S.export_table(noisy, path)
    back = S.import_table(path)
    assert back.rows == noisy.rows and back.metadata["params_hash"] == noisy.metadata["params_hash"]


def test_import_rejects_unknown_version(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("# emitqec table v9\nbasis,pauli,ghz_success,meas_error,probability\nX,IIII,true,false,1\n")
    with pytest.raises(S.SuperopError):
        S.import_table(path)
