"""Noisy distributed stabilizer measurement reduced to a tabular Pauli superoperator.

The four data qubits of a weight-4 stabilizer are coupled to the four
communication qubits holding a GHZ state. The conditioned maps S_m (m = +/-1
reported parity) are obtained by propagating every operator basis element
|i><j| of the data register through the circuit, which gives their Liouville
matrices and hence their Choi matrices.

The table weights use the basis adapted to the stabilizer projectors,
|a_{e,s}> = (E_e P_s x I)|Phi> / sqrt(2^(w-1)), with E_e one representative
per coset of {I, S}. Each weight q = <a|J_m|a> / 2^w is the probability that
the data ends up in E_e P_s rho P_s E_e while m is reported; the row's
measurement-error flag is set when s differs from m.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .noise import HardwareParams, TimingParams, decay_probability
from .qstate import CNOT, CZ, H, DensityMatrix, pauli_matrix, pauli_product, pauli_strings, pauli_weight

W = 4
DIM = 2**W
STABILIZERS = {"X": "XXXX", "Z": "ZZZZ"}
TABLE_VERSION = 1
HEADER = ["basis", "pauli", "ghz_success", "meas_error", "probability"]
PAULI_ORDER = {"I": 0, "X": 1, "Y": 2, "Z": 3}


class SuperopError(ValueError):
    pass


@dataclass
class ConditionedMap:
    branch: tuple  # (ghz_success: bool, m: +1 / -1 or 0 for no outcome)
    choi: np.ndarray

    @property
    def prob(self) -> float:
        return float(np.real(np.trace(self.choi))) / DIM


# Batched density-operator arithmetic on (B,) + (2,)*2n views

def _depolarize_full(T: np.ndarray, n: int, q: int) -> np.ndarray:
    """Tr_q(rho) x I/2 on qubit q."""
    a, b = 2**q, 2 ** (n - q - 1)
    V = T.reshape(T.shape[0], a, 2, b, a, 2, b)
    tr = 0.5 * (V[:, :, 0, :, :, 0, :] + V[:, :, 1, :, :, 1, :])
    out = np.zeros_like(V)
    out[:, :, 0, :, :, 0, :] = tr
    out[:, :, 1, :, :, 1, :] = tr
    return out.reshape(T.shape)


def _mix(T: np.ndarray, n: int, qubits, lam: float) -> np.ndarray:
    """lam*rho + (1-lam) * Tr_q(rho) x I/2^k on the qubits q (isotropic channel)."""
    if lam == 1.0:
        return T
    D = T
    for q in qubits:
        D = _depolarize_full(D, n, q)
    return lam * T + (1 - lam) * D


def _full_operator(U: np.ndarray, n: int, qubits) -> np.ndarray:
    k = len(qubits)
    rest = [q for q in range(n) if q not in qubits]
    M = np.kron(U, np.eye(2 ** (n - k)))
    order = list(qubits) + rest
    # M acts on the permuted order; bring it back to natural qubit order
    perm = np.argsort(order)
    Mt = M.reshape((2,) * (2 * n))
    Mt = Mt.transpose(list(perm) + [n + p for p in perm])
    return Mt.reshape(2**n, 2**n)


@lru_cache(maxsize=64)
def _monomial(key: tuple, n: int, qubits: tuple):
    """Column permutation and phases of a monomial gate embedded in n qubits."""
    U = np.array(key, dtype=complex).reshape(2 ** len(qubits), 2 ** len(qubits))
    M = _full_operator(U, n, qubits)
    nz = np.abs(M) > 1e-12
    if not np.all(nz.sum(axis=1) == 1):
        return None
    src = nz.argmax(axis=1)
    return src, M[np.arange(M.shape[0]), src]


def _monomial_full(M: np.ndarray):
    nz = np.abs(M) > 1e-12
    if not np.all(nz.sum(axis=1) == 1):
        return None
    src = nz.argmax(axis=1)
    return src, M[np.arange(M.shape[0]), src]


def _unitary(T: np.ndarray, n: int, qubits, U: np.ndarray) -> np.ndarray:
    qubits = tuple(qubits)
    if len(qubits) == n:
        mono = _monomial_full(U)
        if mono is not None:
            src, ph = mono
            out = T[:, src][:, :, src]
            return out * ph[None, :, None] * ph.conj()[None, None, :]
        return U @ T @ U.conj().T
    mono = _monomial(tuple(np.asarray(U, dtype=complex).ravel().tolist()), n, qubits)
    if mono is not None:
        src, ph = mono
        out = T[:, src][:, :, src]
        return out * ph[None, :, None] * ph.conj()[None, None, :]
    if len(qubits) != 1:
        M = _full_operator(U, n, qubits)
        return M @ T @ M.conj().T
    q = qubits[0]
    a, b = 2**q, 2 ** (n - q - 1)
    V = T.reshape(T.shape[0], a, 2, b, a, 2, b)
    V = np.einsum("xy,Baybcvd,uv->Baxbcud", U, V, U.conj(), optimize=True)
    return V.reshape(T.shape)


def depolarizing_lambda(p: float, k: int) -> float:
    """Isotropic contraction factor of k-qubit depolarizing noise with total error p."""
    return 1 - p * 4**k / (4**k - 1)


def decoherence_lambda(t: float, T: float) -> float:
    """Contraction factor of GAD then PD over time t (equal T1 = T2)."""
    if t <= 0 or math.isinf(T):
        return 1.0
    return 1 - decay_probability(t, T)


# The circuit


def _ghz_data(ghz) -> np.ndarray:
    if hasattr(ghz, "output_state"):
        ghz = ghz.output_state
    data = ghz.data if isinstance(ghz, DensityMatrix) else np.asarray(ghz)
    if data.shape != (DIM, DIM):
        raise SuperopError("the GHZ input must be a 4-qubit density matrix")
    return data


def parity_flip_probability(p_m: float, n: int = W) -> float:
    return (1 - (1 - 2 * p_m) ** n) / 2


def circuit_liouville(
    ghz,
    basis: str,
    hw: HardwareParams,
    timing: TimingParams,
    T_data: float | None = None,
    chunk: int = 32,
) -> dict:
    """Liouville matrices {+1: L_plus, -1: L_minus} of the conditioned circuit maps.

    L acts on row-major vec(X) of a 16x16 data operator. Qubits 0..3 of the
    simulated register are data, 4..7 the communication qubits.
    """
    if basis not in STABILIZERS:
        raise SuperopError(f"basis must be X or Z, got {basis!r}")
    rho_c = _ghz_data(ghz)
    T_data = timing.T_link if T_data is None else T_data
    n = 2 * W
    lam2 = depolarizing_lambda(hw.p_g, 2)
    # Isotropic single-qubit maps commute with each other and with local
    # unitaries, so everything after the two-qubit gates collapses into one
    # contraction per data qubit and one readout flip per comm qubit.
    lam_d = (
        decoherence_lambda(timing.t_2q, T_data)
        * decoherence_lambda(timing.t_p_comm, T_data)
        * decoherence_lambda(timing.t_meas, T_data)
    )
    lam_c = (
        decoherence_lambda(timing.t_2q, timing.T_link)
        * depolarizing_lambda(hw.p_g, 1)
        * decoherence_lambda(timing.t_p_comm, timing.T_link)
    )
    e = (1 - lam_c) / 2
    p_flip = hw.p_m * (1 - e) + e * (1 - hw.p_m)
    gate = CNOT if basis == "X" else CZ
    gate_all = _module_gates(gate)
    flip = parity_flip_probability(p_flip)
    flipped = np.arange(DIM) ^ (DIM - 1)
    out = {1: np.zeros((DIM * DIM, DIM * DIM), dtype=complex), -1: np.zeros((DIM * DIM, DIM * DIM), dtype=complex)}
    basis_idx = np.arange(DIM * DIM)
    for start in range(0, DIM * DIM, chunk):
        idx = basis_idx[start : start + chunk]
        B = len(idx)
        X = np.zeros((B, DIM, DIM), dtype=complex)
        X[np.arange(B), idx // DIM, idx % DIM] = 1.0
        T = np.einsum("bij,kl->bikjl", X, rho_c).reshape(B, DIM * DIM, DIM * DIM)
        # the four module gates act on disjoint pairs, so their noise can follow all of them
        T = _unitary(T, n, tuple(range(n)), gate_all)
        for q in range(W):
            T = _mix(T, n, (W + q, q), lam2)
        # X-basis readout parity: projectors (1 +/- X^4)/2 on the comm register
        blocks = T.reshape(B, DIM, DIM, DIM, DIM)
        tr = np.einsum("bicjc->bij", blocks)
        trx = np.einsum("bicjc->bij", blocks[:, :, :, :, flipped])
        even = 0.5 * (tr + trx)
        odd = 0.5 * (tr - trx)
        res_plus = (1 - flip) * even + flip * odd
        res_minus = flip * even + (1 - flip) * odd
        for m, res in ((1, res_plus), (-1, res_minus)):
            res = _data_decohere(res, lam_d)
            out[m][:, idx] = res.reshape(B, DIM * DIM).T
    return out


@lru_cache(maxsize=2)
def _module_gates_cached(key: tuple) -> np.ndarray:
    G = np.array(key, dtype=complex).reshape(4, 4)
    n = 2 * W
    M = np.eye(2**n, dtype=complex)
    for q in range(W):
        M = _full_operator(G, n, (W + q, q)) @ M
    return M


def _module_gates(gate: np.ndarray) -> np.ndarray:
    """Product of the four comm(control)-data gates on the 8-qubit register."""
    return _module_gates_cached(tuple(gate.ravel().tolist()))


def _data_decohere(R: np.ndarray, lam: float) -> np.ndarray:
    for q in range(W):
        R = _mix(R, W, (q,), lam)
    return R


@lru_cache(maxsize=64)
def decoherence_liouville(lam: float) -> np.ndarray:
    """Liouville matrix of the product decoherence map on the data register."""
    X = np.eye(DIM * DIM, dtype=complex).reshape(DIM * DIM, DIM, DIM)
    return _data_decohere(X, lam).reshape(DIM * DIM, DIM * DIM).T.copy()


def liouville_to_choi(L: np.ndarray) -> np.ndarray:
    """J = sum_ij S(|i><j|) x |i><j| (output first, reference second)."""
    return L.reshape(DIM, DIM, DIM, DIM).transpose(0, 2, 1, 3).reshape(DIM * DIM, DIM * DIM)


def choi_to_liouville(J: np.ndarray) -> np.ndarray:
    d = int(round(math.sqrt(J.shape[0])))
    return J.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)


def apply_liouville(L: np.ndarray, rho: np.ndarray) -> np.ndarray:
    d = rho.shape[0]
    return (L @ rho.reshape(-1)).reshape(d, d)


def simulate_stabilizer_cycle(
    ghz,
    basis: str,
    hw: HardwareParams,
    timing: TimingParams,
    t_before: float = 0.0,
    t_after: float = 0.0,
    T_data: float | None = None,
) -> list[ConditionedMap]:
    """Conditioned maps of one stabilizer cycle whose GHZ arrived after t_before.

    Data qubits decohere for t_before ahead of the circuit and t_after behind it.
    """
    T_data = timing.T_link if T_data is None else T_data
    Lc = circuit_liouville(ghz, basis, hw, timing, T_data)
    Lb = decoherence_liouville(decoherence_lambda(t_before, T_data))
    La = decoherence_liouville(decoherence_lambda(t_after, T_data))
    return [ConditionedMap((True, m), liouville_to_choi(La @ Lc[m] @ Lb)) for m in (1, -1)]


# Kraus and twirl


def kraus_from_choi(J: np.ndarray, clamp: float = 1e-12, neg_tol: float = 1e-8) -> list[np.ndarray]:
    J = np.asarray(J, dtype=complex)
    if not np.allclose(J, J.conj().T, atol=1e-10):
        raise SuperopError("Choi matrix is not Hermitian")
    vals, vecs = np.linalg.eigh(0.5 * (J + J.conj().T))
    if vals.min() < -neg_tol:
        raise SuperopError(f"Choi matrix has eigenvalue {vals.min():.3e}; not a valid map")
    d = int(round(math.sqrt(J.shape[0])))
    return [math.sqrt(v) * vecs[:, k].reshape(d, d) for k, v in enumerate(vals) if v > clamp]


def pauli_twirl(kraus, w: int, normalize: bool = False) -> dict:
    """q_e = sum_j |Tr(E_e^dag K_j) / 2^w|^2 over all Pauli strings of length w."""
    d = 2**w
    K = np.stack([np.asarray(k, dtype=complex) for k in kraus])
    if K.shape[1:] != (d, d):
        raise SuperopError("Kraus operators must be 2^w square")
    out = {}
    for s in pauli_strings(w):
        c = np.einsum("ij,kji->k", pauli_matrix(s).conj().T, K) / d
        out[s] = float(np.sum(np.abs(c) ** 2))
    if normalize:
        tot = sum(out.values())
        out = {k: v / tot for k, v in out.items()}
    return out


def _pauli_key(s: str) -> tuple:
    return (pauli_weight(s), tuple(PAULI_ORDER[c] for c in s))


@lru_cache(maxsize=None)
def coset_representatives(basis: str) -> tuple:
    """One Pauli per coset {E, E S}: lowest weight, then lexicographic in I<X<Y<Z."""
    S = STABILIZERS[basis]
    seen, reps = set(), []
    for s in pauli_strings(W):
        if s in seen:
            continue
        _, partner = pauli_product(s, S)
        seen.update((s, partner))
        reps.append(min(s, partner, key=_pauli_key))
    return tuple(sorted(reps, key=_pauli_key))


def projector(basis: str, s: int) -> np.ndarray:
    return (np.eye(DIM) + s * pauli_matrix(STABILIZERS[basis])) / 2


@lru_cache(maxsize=2)
def _adapted_basis(basis: str) -> tuple:
    vecs, keys = [], []
    for rep in coset_representatives(basis):
        E = pauli_matrix(rep)
        for s in (1, -1):
            vecs.append((E @ projector(basis, s)).reshape(-1) / math.sqrt(DIM / 2))
            keys.append((rep, s))
    return np.array(vecs), tuple(keys)


def stabilizer_weights(J: np.ndarray, basis: str) -> dict:
    """{(rep, s): <a_{rep,s}|J|a_{rep,s}> / 2^w} for the projector-adapted basis."""
    A, keys = _adapted_basis(basis)
    q = np.real(np.einsum("ki,ij,kj->k", A.conj(), J, A)) / DIM
    return dict(zip(keys, q))


# Tables


@dataclass
class SuperoperatorTable:
    rows: list  # (basis, pauli, ghz_success, meas_error, probability)
    metadata: dict = field(default_factory=dict)

    def for_basis(self, basis: str) -> list:
        return [r for r in self.rows if r[0] == basis]

    def total(self, basis: str) -> float:
        return math.fsum(r[4] for r in self.for_basis(basis))

    def validate(self, tol: float = 1e-6) -> None:
        for basis in sorted({r[0] for r in self.rows}):
            tot = self.total(basis)
            if abs(tot - 1) > tol:
                raise SuperopError(f"{basis} rows sum to {tot}, not 1")
        for r in self.rows:
            if r[4] < 0:
                raise SuperopError(f"negative probability in row {r}")

    def sampler_arrays(self, basis: str):
        """(paulis, ghz_success, meas_error, cumulative) for CDF-inversion sampling."""
        rows = self.for_basis(basis)
        probs = np.array([r[4] for r in rows])
        cum = np.cumsum(probs)
        cum /= cum[-1]
        return [r[1] for r in rows], np.array([r[2] for r in rows]), np.array([r[3] for r in rows]), cum


def _rows_from_weights(basis, success: dict, fail: dict, x: float) -> list:
    rows = []
    for (rep, s, m), q in success.items():
        rows.append([basis, rep, True, s != m, x * q])
    for p, q in fail.items():
        rows.append([basis, p, False, False, (1 - x) * q])
    merged: dict = {}
    for b, p, g, e, q in rows:
        merged[(b, p, g, e)] = merged.get((b, p, g, e), 0.0) + max(q, 0.0)
    tot = math.fsum(merged.values())
    return [[b, p, g, e, q / tot] for (b, p, g, e), q in merged.items() if q / tot > 0]


def table_from_maps(basis: str, success_maps, fail_map: ConditionedMap | None, x: float) -> list:
    success = {}
    for cm in success_maps:
        m = cm.branch[1]
        for (rep, s), q in stabilizer_weights(cm.choi, basis).items():
            success[(rep, s, m)] = success.get((rep, s, m), 0.0) + q
    norm = math.fsum(success.values())
    success = {k: v / norm for k, v in success.items()}
    fail = {}
    if fail_map is not None and x < 1:
        fail = pauli_twirl(kraus_from_choi(fail_map.choi), W, normalize=True)
    return _rows_from_weights(basis, success, fail, x)


def generation_time_nodes(times: np.ndarray, t_cut: float, n_nodes: int = 16) -> np.ndarray:
    """Midpoint quantiles of the generation times that fall inside the cut-off."""
    inside = np.sort(times[times <= t_cut])
    if inside.size == 0:
        raise SuperopError("no generation time falls inside the cut-off")
    qs = (np.arange(n_nodes) + 0.5) / n_nodes
    return np.quantile(inside, qs, method="inverted_cdf")


def build_table(
    protocol,
    hw: HardwareParams,
    timing: TimingParams,
    p: float | None = None,
    bases=("X", "Z"),
    x: float = 0.99,
    n_time_samples: int = 200_000,
    n_nodes: int = 16,
    seed: int = 12345,
    T_data: float | None = None,
) -> SuperoperatorTable:
    """Tabulate the stabilizer superoperator for a GHZ protocol and cut-off percentile x.

    ``protocol`` is a registered name or a ProtocolResult. The success branch
    is averaged over generation times inside the cut-off; the fail branch
    (prior 1 - P(t <= t_cut)) carries decoherence over the whole window.
    """
    from .protocols import ProtocolResult, run_protocol
    from .qec import cutoff_to_time

    if p is not None:
        if p < 0:
            raise SuperopError("p must be non-negative")
        hw = hw.with_p(p)
    if isinstance(protocol, ProtocolResult):
        res = protocol
        name = res.name
    else:
        name = protocol
        res = run_protocol(name, hw, timing)
    if not res.attempt_time:
        raise SuperopError("protocol has no attempt-time distribution")
    T_data = timing.T_link if T_data is None else T_data
    rng = np.random.default_rng(seed)
    times = res.sample_generation_times(rng, n_time_samples)
    t_cut = cutoff_to_time(times, x)
    prior = float(np.mean(times <= t_cut))
    nodes = generation_time_nodes(times, t_cut, n_nodes)
    rows = []
    for basis in bases:
        Lc = circuit_liouville(res.output_state, basis, hw, timing, T_data)
        acc = {1: 0.0, -1: 0.0}
        for t in nodes:
            Lb = decoherence_liouville(decoherence_lambda(float(t), T_data))
            La = decoherence_liouville(decoherence_lambda(float(t_cut - t), T_data))
            for m in (1, -1):
                acc[m] = acc[m] + La @ Lc[m] @ Lb
        maps = [ConditionedMap((True, m), liouville_to_choi(acc[m] / len(nodes))) for m in (1, -1)]
        fail = ConditionedMap((False, 0), liouville_to_choi(decoherence_liouville(decoherence_lambda(t_cut, T_data))))
        rows.extend(table_from_maps(basis, maps, fail, prior))
    meta = {
        "protocol": name,
        "hardware": hw.__dict__ if hasattr(hw, "__dict__") else str(hw),
        "timing": timing.__dict__,
        "p": hw.p_g,
        "cutoff_percentile": x,
        "t_cut": float(t_cut),
        "ghz_success_prior": prior,
        "ghz_fidelity": res.fidelity,
        "ghz_success_prob": res.success_prob,
        "seed": seed,
    }
    meta["params_hash"] = hashlib.sha256(json.dumps(meta, sort_keys=True, default=str).encode()).hexdigest()[:16]
    table = SuperoperatorTable(rows, meta)
    table.validate(1e-8)
    return table


def effective_map(table: SuperoperatorTable, basis: str, m: int, rho: np.ndarray, previous: int | None = None) -> np.ndarray:
    """Recombine table rows into the (unnormalized) map conditioned on reporting m.

    Success rows give E P_s rho P_s E with s = m (or -m for flagged rows).
    Fail rows apply E rho E and report the previous outcome, so they enter
    only when ``previous`` equals m.
    """
    out = np.zeros_like(rho, dtype=complex)
    for b, pauli, g, e, q in table.for_basis(basis):
        E = pauli_matrix(pauli)
        if g:
            s = -m if e else m
            P = projector(basis, s)
            out += q * E @ P @ rho @ P @ E.conj().T
        elif previous == m:
            out += q * E @ rho @ E.conj().T
    return out


@lru_cache(maxsize=2)
def _commutant(basis: str) -> tuple:
    S = STABILIZERS[basis]
    from .qstate import pauli_commutes

    return tuple(s for s in pauli_strings(W) if pauli_commutes(s, S))


def direct_twirled_map(L: np.ndarray, basis: str, rho: np.ndarray) -> np.ndarray:
    """Twirl of S_m over the Paulis commuting with S, with stabilizer dephasing on the input.

    Independent of the adapted-basis weights: evaluated by running the
    conditioned map on the conjugated inputs.
    """
    S = pauli_matrix(STABILIZERS[basis])
    G = _commutant(basis)
    out = np.zeros_like(rho, dtype=complex)
    for g in G:
        P = pauli_matrix(g)
        inner = P @ rho @ P.conj().T
        inner = 0.5 * (inner + S @ inner @ S)
        out += P @ apply_liouville(L, inner) @ P.conj().T
    return out / len(G)


# CSV persistence


def _fmt_bool(v: bool) -> str:
    return "true" if v else "false"


def _parse_bool(s: str) -> bool:
    s = s.strip().lower()
    if s not in ("true", "false"):
        raise SuperopError(f"bad boolean {s!r}")
    return s == "true"


def export_table(table: SuperoperatorTable, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as f:
        f.write(f"# emitqec table v{TABLE_VERSION}\n")
        w = csv.writer(f)
        w.writerow(HEADER)
        for b, p, g, e, q in table.rows:
            w.writerow([b, p, _fmt_bool(g), _fmt_bool(e), repr(float(q))])
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(table.metadata, indent=1, default=str))


def import_table(path) -> SuperoperatorTable:
    path = Path(path)
    rows = []
    with path.open(newline="") as f:
        version = f.readline().strip()
        if version != f"# emitqec table v{TABLE_VERSION}":
            raise SuperopError(f"unsupported table schema line {version!r}")
        reader = csv.reader(f)
        header = next(reader, None)
        if header != HEADER:
            raise SuperopError(f"unexpected header {header}")
        for line in reader:
            if len(line) != 5:
                raise SuperopError(f"malformed row {line}")
            b, p, g, e, q = line
            if b not in STABILIZERS or len(p) != W or set(p) - set("IXYZ"):
                raise SuperopError(f"malformed row {line}")
            try:
                val = float(q)
            except ValueError:
                raise SuperopError(f"malformed probability {q!r}") from None
            rows.append([b, p, _parse_bool(g), _parse_bool(e), val])
    side = path.with_suffix(path.suffix + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    table = SuperoperatorTable(rows, meta)
    table.validate(1e-6)
    return table
