import numpy as np

from emitqec.cli import point_seed
from emitqec.rng import STREAMS, stream


def test_same_inputs_same_stream():
    assert np.array_equal(stream(5, "qec", 3).random(8), stream(5, "qec", 3).random(8))


def test_distinct_counters_and_names():
    draws = {(n, c): tuple(stream(5, n, c).integers(0, 2**63, 4)) for n in STREAMS for c in range(3)}
    assert len(set(draws.values())) == len(draws)


def test_point_seeds_collision_free():
    seeds = {point_seed(2024, 2, i) for i in range(1_000_000)}
    assert len(seeds) == 1_000_000
    assert all(0 <= s < 2**63 for s in list(seeds)[:1000])
