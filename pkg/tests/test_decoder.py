import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emitqec import decoder, qec

BACKENDS = ["python"] + (["cython"] if decoder._kernel is not None else [])


def residual_class(lattice, basis, res):
    keys = ("X_h", "X_v") if basis == "X" else ("Z_h", "Z_v")
    return tuple(int(np.bitwise_xor.reduce(res[lattice.logicals[k]])) for k in keys)


def test_compiled_kernel_selected():
    assert decoder.BACKEND == ("cython" if decoder._kernel is not None else "python")


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("basis", ["X", "Z"])
def test_single_errors_corrected_exactly(backend, basis):
    lat = qec.build_lattice(6)
    g = qec.planar_graph(lat, basis)
    for q in range(lat.n_qubits):
        err = np.zeros(lat.n_qubits, np.uint8)
        err[q] = 1
        corr = decoder.decode(g, qec.syndrome(lat, basis, err), backend)
        assert np.array_equal(corr, err)


@pytest.mark.parametrize("basis", ["X", "Z"])
def test_weight_two_sample_against_oracle(basis):
    # the exhaustive d = 4 sweep runs in the acceptance module
    lat = qec.build_lattice(4)
    g = qec.planar_graph(lat, basis)
    for qs in list(itertools.combinations(range(lat.n_qubits), 2))[::11]:
        err = np.zeros(lat.n_qubits, np.uint8)
        err[list(qs)] = 1
        best = qec.min_weight_by_class(lat, basis, err)
        for be in BACKENDS:
            res = err ^ decoder.decode(g, qec.syndrome(lat, basis, err), be)
            assert not qec.syndrome(lat, basis, res).any()
            assert best[residual_class(lat, basis, res)] == min(best.values())


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernel not built")
@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.sampled_from([4, 6]), st.floats(0.001, 0.05))
def test_backends_agree_on_space_time_graph(seed, d, p):
    lat = qec.build_lattice(d)
    samplers = {b: qec.TableSampler.from_table(qec.phenomenological_table(p, p, p / 2), b) for b in "XZ"}
    sg = qec.build_graph(lat, "Z", d, qec.edge_probabilities(samplers, "Z"))
    rec = qec.simulate_shots(lat, samplers, d, 20, np.random.default_rng(seed))
    dfc = qec.defects_from(rec.syn["Z"]).reshape(20, -1)
    w = sg.weights_for(rec.stale["Z"])
    a = decoder.decode_batch(sg.graph, dfc, "cython", weights=w)
    b = decoder.decode_batch(sg.graph, dfc, "python", weights=w)
    assert np.array_equal(a, b)


@settings(max_examples=30)
@given(st.lists(st.integers(0, 71), min_size=0, max_size=12))
def test_planar_correction_clears_syndrome(qubits):
    lat = qec.build_lattice(6)
    err = np.zeros(lat.n_qubits, np.uint8)
    for q in qubits:
        err[q] ^= 1
    syn = qec.syndrome(lat, "X", err)
    res = err ^ decoder.decode(qec.planar_graph(lat, "X"), syn)
    assert not qec.syndrome(lat, "X", res).any()


def test_integer_weights():
    w = decoder.integer_weights([0.1, 0.01, 0.001])
    assert w[0] == decoder.MIN_WEIGHT
    assert w[1] == round(8 * np.log(100) / np.log(10))
    assert list(decoder.integer_weights([0.5, 0.5])) == [8, 8]


def test_graph_validation():
    with pytest.raises(decoder.DecoderError):
        decoder.DecodingGraph(2, [0], [5], [1], [0], 1)
    with pytest.raises(decoder.DecoderError):
        decoder.DecodingGraph(2, [0], [1], [0], [0], 1)
    g = decoder.DecodingGraph(2, [0], [1], [8], [0], 1)
    with pytest.raises(decoder.DecoderError):
        decoder.decode(g, [1, 0])
    with pytest.raises(decoder.DecoderError):
        decoder.decode(g, [1, 1], backend="fortran")
    assert list(decoder.decode(g, [1, 1])) == [1]
