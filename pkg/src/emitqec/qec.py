"""Modular toric code: lattice, table-driven Monte Carlo and decoding.

Edges of a periodic d x d grid carry the data qubits: h(i, j) joins vertex
(i, j) to (i, j+1) and v(i, j) joins (i, j) to (i+1, j). X-stabilizers sit on
vertices, Z-stabilizers on plaquettes. Stabilizers of each type are split by
checkerboard colour into two sub-rounds, so a data qubit takes part in exactly
one stabilizer per sub-round. A cycle runs R1^X, R2^X, R1^Z, R2^Z.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .decoder import MIN_WEIGHT, DecodingGraph, decode_batch, integer_weights
from .rng import stream
from .superop import SuperoperatorTable

STALE_FACTOR = 2


class QECError(ValueError):
    pass


@dataclass(frozen=True)
class ToricLattice:
    d: int
    x_stabs: np.ndarray  # (d*d, 4) data qubits per vertex
    z_stabs: np.ndarray  # (d*d, 4) data qubits per plaquette
    x_round: np.ndarray  # sub-round 0/1 per X-stabilizer
    z_round: np.ndarray
    logicals: dict = field(compare=False)

    @property
    def n_qubits(self) -> int:
        return 2 * self.d * self.d

    def stabs(self, basis: str) -> np.ndarray:
        return self.x_stabs if basis == "X" else self.z_stabs

    def rounds(self, basis: str) -> np.ndarray:
        return self.x_round if basis == "X" else self.z_round

    def schedule(self) -> list:
        """(basis, stabilizer indices) for the four sub-rounds of one cycle."""
        out = []
        for b in ("X", "Z"):
            r = self.rounds(b)
            out += [(b, np.flatnonzero(r == 0)), (b, np.flatnonzero(r == 1))]
        return out

    def qubit_stabs(self, basis: str) -> np.ndarray:
        """(n_qubits, 2): the stabilizer of each sub-round touching a qubit."""
        st, rd = self.stabs(basis), self.rounds(basis)
        out = np.full((self.n_qubits, 2), -1, dtype=np.int64)
        for s, qs in enumerate(st):
            for q in qs:
                out[q, rd[s]] = s
        return out


@lru_cache(maxsize=16)
def build_lattice(d: int) -> ToricLattice:
    if int(d) != d or d < 4 or d % 2:
        raise QECError(f"distance must be even and >= 4, got {d}")
    d = int(d)
    h = lambda i, j: (i % d) * d + (j % d)
    v = lambda i, j: d * d + (i % d) * d + (j % d)
    xs, zs, col = [], [], []
    for i in range(d):
        for j in range(d):
            xs.append([h(i, j), v(i, j), h(i, j - 1), v(i - 1, j)])
            zs.append([h(i, j), v(i, j + 1), h(i + 1, j), v(i, j)])
            col.append((i + j) % 2)
    col = np.array(col)
    logicals = {
        # Z-type residuals are checked against X logicals and vice versa
        "X_h": np.array([h(i, 0) for i in range(d)]),
        "X_v": np.array([v(0, j) for j in range(d)]),
        "Z_h": np.array([h(0, j) for j in range(d)]),
        "Z_v": np.array([v(i, 0) for i in range(d)]),
    }
    return ToricLattice(d, np.array(xs), np.array(zs), col.copy(), col.copy(), logicals)


def syndrome(lattice: ToricLattice, basis: str, err: np.ndarray) -> np.ndarray:
    """Stabilizer outcomes of a (..., n_qubits) error bit array.

    For basis X pass the Z-component bits, for basis Z the X-component bits.
    """
    return np.bitwise_xor.reduce(err[..., lattice.stabs(basis)], axis=-1)


def logical_flips(lattice: ToricLattice, x_err: np.ndarray, z_err: np.ndarray) -> np.ndarray:
    """(..., 4) parities of residual errors against the four logical operators."""
    L = lattice.logicals
    return np.stack(
        [
            np.bitwise_xor.reduce(z_err[..., L["X_h"]], axis=-1),
            np.bitwise_xor.reduce(z_err[..., L["X_v"]], axis=-1),
            np.bitwise_xor.reduce(x_err[..., L["Z_h"]], axis=-1),
            np.bitwise_xor.reduce(x_err[..., L["Z_v"]], axis=-1),
        ],
        axis=-1,
    )


# Table sampling


@dataclass
class TableSampler:
    """Row arrays of one stabilizer basis, ready for CDF inversion."""

    xbits: np.ndarray  # (rows, 4)
    zbits: np.ndarray
    ghz: np.ndarray
    flip: np.ndarray
    cum: np.ndarray
    paulis: list

    @classmethod
    def from_table(cls, table: SuperoperatorTable, basis: str) -> "TableSampler":
        paulis, ghz, flip, cum = table.sampler_arrays(basis)
        xb = np.array([[c in "XY" for c in p] for p in paulis], dtype=np.uint8)
        zb = np.array([[c in "ZY" for c in p] for p in paulis], dtype=np.uint8)
        return cls(xb, zb, np.asarray(ghz, bool), np.asarray(flip, bool), np.asarray(cum), list(paulis))

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        idx = np.searchsorted(self.cum, rng.random(shape), side="right")
        return np.minimum(idx, len(self.cum) - 1)

    def marginal(self, which: str) -> float:
        """Per-position probability that a row carries an X (or Z) component."""
        p = np.diff(np.concatenate([[0.0], self.cum]))
        bits = self.xbits if which == "X" else self.zbits
        return float(np.mean(p @ bits))

    def meas_error(self) -> float:
        p = np.diff(np.concatenate([[0.0], self.cum]))
        return float(p[self.ghz & self.flip].sum())

    def fail_prob(self) -> float:
        p = np.diff(np.concatenate([[0.0], self.cum]))
        return float(p[~self.ghz].sum())


def sample_stabilizer(sampler: TableSampler, rng: np.random.Generator):
    """One row: (pauli, ghz_flag, outcome_flip)."""
    i = int(sampler.draw(rng, ()))
    return sampler.paulis[i], bool(sampler.ghz[i]), bool(sampler.flip[i])


@dataclass
class ShotRecord:
    syn: dict  # basis -> (shots, rounds + 1, n_stabs) outcome bits, last layer perfect
    stale: dict  # basis -> (shots, rounds + 1, n_stabs)
    x_err: np.ndarray
    z_err: np.ndarray


def simulate_shots(lattice: ToricLattice, samplers: dict, rounds: int, n_shots: int, rng) -> ShotRecord:
    """Sample noisy cycles for a batch of shots, in time order.

    Within a sub-round the stabilizers act on disjoint qubits, so the whole
    sub-round is applied at once. Each row measures first and then applies its
    Pauli; a failed GHZ row reuses the previous outcome.
    """
    nq, ns = lattice.n_qubits, lattice.d**2
    x_err = np.zeros((n_shots, nq), dtype=np.uint8)
    z_err = np.zeros((n_shots, nq), dtype=np.uint8)
    syn = {b: np.zeros((n_shots, rounds + 1, ns), dtype=np.uint8) for b in "XZ"}
    stale = {b: np.zeros((n_shots, rounds + 1, ns), dtype=bool) for b in "XZ"}
    prev = {b: np.zeros((n_shots, ns), dtype=np.uint8) for b in "XZ"}
    sched = lattice.schedule()
    for t in range(rounds):
        for basis, sub in sched:
            smp = samplers[basis]
            qs = lattice.stabs(basis)[sub]
            idx = smp.draw(rng, (n_shots, len(sub)))
            seen = z_err if basis == "X" else x_err
            true = np.bitwise_xor.reduce(seen[:, qs], axis=-1)
            ok = smp.ghz[idx]
            out = np.where(ok, true ^ smp.flip[idx], prev[basis][:, sub]).astype(np.uint8)
            syn[basis][:, t, sub] = out
            stale[basis][:, t, sub] = ~ok
            prev[basis][:, sub] = out
            x_err[:, qs] ^= smp.xbits[idx]
            z_err[:, qs] ^= smp.zbits[idx]
    syn["X"][:, rounds] = syndrome(lattice, "X", z_err)
    syn["Z"][:, rounds] = syndrome(lattice, "Z", x_err)
    return ShotRecord(syn, stale, x_err, z_err)


def defects_from(syn: np.ndarray) -> np.ndarray:
    """XOR of consecutive layers with an all-zero layer before the first."""
    d = syn.copy()
    d[:, 1:] ^= syn[:, :-1]
    return d


# Decoding graph


def _xor_prob(*ps) -> float:
    out = 0.0
    for p in ps:
        out = out * (1 - p) + p * (1 - out)
    return out


def edge_probabilities(samplers: dict, basis: str) -> dict:
    """Marginal error probabilities of space, diagonal and time edges.

    Errors from the first-sub-round row of the same basis land between the two
    sub-round measurements of a qubit's stabilizers (diagonal edge); all other
    rows of a cycle land before both measurements of the next cycle.
    """
    comp = "Z" if basis == "X" else "X"
    other = "Z" if basis == "X" else "X"
    p_same = samplers[basis].marginal(comp)
    p_other = samplers[other].marginal(comp)
    return {
        "space": _xor_prob(p_same, p_other, p_other),
        "diag": p_same,
        "time": samplers[basis].meas_error(),
    }


@dataclass
class SpaceTimeGraph:
    graph: DecodingGraph
    n_layers: int
    n_stabs: int
    time_edge: np.ndarray  # edge index of time edge ending at node (t, s), -1 if none

    def weights_for(self, stale: np.ndarray) -> np.ndarray | None:
        """Per-shot weights with heavier time edges into stale layers."""
        if not stale.any():
            return None
        flat = stale.reshape(stale.shape[0], -1)
        w = np.repeat(self.graph.ew[None, :], flat.shape[0], axis=0)
        te = self.time_edge
        mask = flat & (te >= 0)[None, :]
        rows, nodes = np.nonzero(mask)
        w[rows, te[nodes]] *= STALE_FACTOR
        return w


def build_graph(lattice: ToricLattice, basis: str, rounds: int, probs: dict, diagonal: bool = True) -> SpaceTimeGraph:
    ns, nq = lattice.d**2, lattice.n_qubits
    L = rounds + 1
    qs = lattice.qubit_stabs(basis)  # column 0: first sub-round stabilizer
    eu, ev, ep, eq = [], [], [], []
    for t in range(L):
        for q in range(nq):
            eu.append(t * ns + qs[q, 0]); ev.append(t * ns + qs[q, 1]); ep.append(probs["space"]); eq.append(q)
    time_edge = np.full(L * ns, -1, dtype=np.int64)
    for t in range(rounds):
        for s in range(ns):
            time_edge[(t + 1) * ns + s] = len(eu)
            eu.append(t * ns + s); ev.append((t + 1) * ns + s); ep.append(probs["time"]); eq.append(-1)
    if diagonal and probs["diag"] > 0:
        for t in range(rounds):
            for q in range(nq):
                eu.append(t * ns + qs[q, 1]); ev.append((t + 1) * ns + qs[q, 0]); ep.append(probs["diag"]); eq.append(q)
    w = integer_weights(ep)
    return SpaceTimeGraph(DecodingGraph(L * ns, eu, ev, w, eq, nq), L, ns, time_edge)


def planar_graph(lattice: ToricLattice, basis: str) -> DecodingGraph:
    """Single-layer graph with uniform weights (perfect measurements)."""
    qs = lattice.qubit_stabs(basis)
    nq = lattice.n_qubits
    w = np.full(nq, MIN_WEIGHT, dtype=np.int32)
    return DecodingGraph(lattice.d**2, qs[:, 0], qs[:, 1], w, np.arange(nq), nq)


# Monte Carlo


@dataclass
class QECConfig:
    d: int
    table: SuperoperatorTable
    rounds: int | None = None
    diagonal: bool = True
    stale_weighting: bool = True
    batch: int = 500
    backend: str | None = None

    def n_rounds(self) -> int:
        r = self.d if self.rounds is None else self.rounds
        if r < 1:
            raise QECError("rounds must be positive")
        return r


class _Engine:
    def __init__(self, cfg: QECConfig):
        self.cfg = cfg
        self.lattice = build_lattice(cfg.d)
        self.rounds = cfg.n_rounds()
        self.samplers = {b: TableSampler.from_table(cfg.table, b) for b in "XZ"}
        self.graphs = {
            b: build_graph(self.lattice, b, self.rounds, edge_probabilities(self.samplers, b), cfg.diagonal)
            for b in "XZ"
        }

    def run(self, n_shots: int, rng) -> np.ndarray:
        """(n_shots, 4) logical flip flags after decoding."""
        rec = simulate_shots(self.lattice, self.samplers, self.rounds, n_shots, rng)
        corr = {}
        for b in "XZ":
            g = self.graphs[b]
            dfc = defects_from(rec.syn[b]).reshape(n_shots, -1)
            w = g.weights_for(rec.stale[b]) if self.cfg.stale_weighting else None
            corr[b] = decode_batch(g.graph, dfc, self.cfg.backend, weights=w)
        rx = rec.x_err ^ corr["Z"]
        rz = rec.z_err ^ corr["X"]
        return logical_flips(self.lattice, rx, rz)


def phenomenological_table(p_meas: float, p_data: float = 0.0, p_fail: float = 0.0) -> SuperoperatorTable:
    """Table with independent data flips on each of the 4 qubits and a readout flip.

    X-basis rows carry Z errors and Z-basis rows X errors, so every data error
    is detected by the stabilizers measured in that row's basis.
    """
    for v in (p_meas, p_data, p_fail):
        if not 0 <= v <= 1:
            raise QECError("probabilities must lie in [0, 1]")
    rows = []
    for basis, err in (("X", "Z"), ("Z", "X")):
        for bits in itertools.product((0, 1), repeat=4):
            k = sum(bits)
            q = p_data**k * (1 - p_data) ** (4 - k)
            pauli = "".join(err if b else "I" for b in bits)
            rows.append([basis, pauli, True, False, (1 - p_fail) * (1 - p_meas) * q])
            rows.append([basis, pauli, True, True, (1 - p_fail) * p_meas * q])
            rows.append([basis, pauli, False, False, p_fail * q])
    return SuperoperatorTable([r for r in rows if r[4] > 0], {"p_meas": p_meas, "p_data": p_data, "p_fail": p_fail})


def run_shot(lattice: ToricLattice, table: SuperoperatorTable, rounds: int | None, rng) -> bool:
    cfg = QECConfig(lattice.d, table, rounds, batch=1)
    return bool(_Engine(cfg).run(1, rng).any())


def failure_flags(cfg: QECConfig, n_shots: int, seed: int, threads: int = 1) -> np.ndarray:
    """(n_shots, 4) logical flips; batch k uses the counter-derived stream (seed, k)."""
    if n_shots < 1:
        raise QECError("n_shots must be >= 1")
    eng = _Engine(cfg)
    sizes = [min(cfg.batch, n_shots - s) for s in range(0, n_shots, cfg.batch)]

    def job(k):
        return eng.run(sizes[k], stream(seed, "qec", k))

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(job, range(len(sizes))))
    else:
        parts = [job(k) for k in range(len(sizes))]
    return np.concatenate(parts)


def logical_error_rate(cfg: QECConfig, n_shots: int, seed: int = 0, threads: int = 1) -> tuple:
    fails = failure_flags(cfg, n_shots, seed, threads).any(axis=1)
    p = float(fails.mean())
    return p, math.sqrt(p * (1 - p) / n_shots)


def cutoff_to_time(times, x: float) -> float:
    """Empirical x-quantile of generation times; x = 1 gives the maximum."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise QECError("empty generation-time distribution")
    if not 0 < x <= 1:
        raise QECError("percentile x must lie in (0, 1]")
    return float(np.quantile(times, x, method="inverted_cdf"))


# Oracle for small lattices


def _torus_path(d: int, a: int, b: int, wi: int, wj: int, basis: str) -> list:
    """Qubits of an L-shaped path between two stabilizers; wi, wj choose the winding."""
    ai, aj = divmod(a, d)
    bi, bj = divmod(b, d)
    di = (bi - ai) % d
    dj = (bj - aj) % d
    if wi:
        di -= d
    if wj:
        dj -= d
    qs = []
    i, j = ai, aj
    step = 1 if dj > 0 else -1
    for _ in range(abs(dj)):
        if basis == "X":
            qs.append(i * d + (j if step > 0 else (j - 1) % d))
        else:  # plaquettes step across vertical edges
            qs.append(d * d + i * d + ((j + 1) % d if step > 0 else j))
        j = (j + step) % d
    step = 1 if di > 0 else -1
    for _ in range(abs(di)):
        if basis == "X":
            qs.append(d * d + (i if step > 0 else (i - 1) % d) * d + j)
        else:
            qs.append(((i + 1) % d if step > 0 else i) * d + j)
        i = (i + step) % d
    return qs


def _pairings(items):
    if not items:
        yield []
        return
    a = items[0]
    for k in range(1, len(items)):
        rest = items[1:k] + items[k + 1 :]
        for p in _pairings(rest):
            yield [(a, items[k])] + p


def min_weight_by_class(lattice: ToricLattice, basis: str, err: np.ndarray) -> dict:
    """Minimum correction weight per residual homology class, by exhaustive matching.

    Every pairing of defects and every winding of each connecting path is
    enumerated; the map is keyed by the residual's two logical parities.
    """
    d = lattice.d
    defects = list(np.flatnonzero(syndrome(lattice, basis, err)))
    keys = ("X_h", "X_v") if basis == "X" else ("Z_h", "Z_v")
    best: dict = {}
    for pairing in _pairings(defects):
        for winds in itertools.product(range(4), repeat=len(pairing)):
            corr = np.zeros(lattice.n_qubits, dtype=np.uint8)
            weight = 0
            for (a, b), w in zip(pairing, winds):
                path = _torus_path(d, a, b, w >> 1, w & 1, basis)
                weight += len(path)
                for q in path:
                    corr[q] ^= 1
            res = err ^ corr
            if syndrome(lattice, basis, res).any():
                raise QECError("oracle path does not close the syndrome")
            cls = tuple(int(np.bitwise_xor.reduce(res[lattice.logicals[k]])) for k in keys)
            if weight < best.get(cls, math.inf):
                best[cls] = weight
    return best
