"""Compare the compiled and pure-Python Union-Find decoders.

Defects come from phenomenological-noise shots on the space-time graph, so
both backends see the same inputs as in a threshold run. The corrections are
checked to be identical before any timing is reported.

    python benchmarks/bench_decoder.py --d 4 6 8 --shots 500
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from emitqec import decoder, qec
from emitqec.rng import stream


def defects_for(d: int, shots: int, p: float, seed: int):
    lattice = qec.build_lattice(d)
    table = qec.phenomenological_table(p, p)
    samplers = {b: qec.TableSampler.from_table(table, b) for b in "XZ"}
    g = qec.build_graph(lattice, "X", d, qec.edge_probabilities(samplers, "X"))
    rec = qec.simulate_shots(lattice, samplers, d, shots, stream(seed, "bench", d))
    dfc = qec.defects_from(rec.syn["X"]).reshape(shots, -1)
    return g.graph, dfc


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, nargs="+", default=[4, 6, 8])
    ap.add_argument("--shots", type=int, default=500)
    ap.add_argument("--p", type=float, default=0.01)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    if decoder._kernel is None:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation`")
    results = []
    for d in args.d:
        graph, dfc = defects_for(d, args.shots, args.p, args.seed)
        a = decoder.decode_batch(graph, dfc, "cython")
        b = decoder.decode_batch(graph, dfc, "python")
        if not np.array_equal(a, b):
            raise SystemExit(f"backends disagree at d={d}")
        t_c = best_of(lambda: decoder.decode_batch(graph, dfc, "cython"), args.repeat)
        t_p = best_of(lambda: decoder.decode_batch(graph, dfc, "python"), 1)
        results.append({
            "d": d,
            "nodes": graph.n_nodes,
            "edges": len(graph.eu),
            "mean_defects": float(dfc.sum(axis=1).mean()),
            "cython_us_per_shot": 1e6 * t_c / args.shots,
            "python_us_per_shot": 1e6 * t_p / args.shots,
            "speedup": t_p / t_c,
        })
    if args.json:
        print(json.dumps(results, indent=2))
    else:
        print(f"{'d':>3} {'nodes':>6} {'defects':>8} {'cython us':>10} {'python us':>10} {'speedup':>8}")
        for r in results:
            print(f"{r['d']:>3} {r['nodes']:>6} {r['mean_defects']:>8.1f} {r['cython_us_per_shot']:>10.1f} "
                  f"{r['python_us_per_shot']:>10.1f} {r['speedup']:>8.1f}")
    return results


if __name__ == "__main__":
    main()
