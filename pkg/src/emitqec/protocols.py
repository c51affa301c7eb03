"""Heralded entanglement generation and distillation protocols.

Every protocol is evaluated exactly: the accepted detection (or measurement)
branches are enumerated, each is mapped to the protocol target by a Pauli
frame correction derived from the ideal-hardware branch, and the result is the
branch sum. Repeat-until-success statistics are sampled on top of the exact
per-attempt success probability.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable

import numpy as np

from . import photonics as ph
from .noise import (
    HardwareParams,
    NoiseChannel,
    TimingParams,
    decoherence,
    depolarizing,
    double_excitation_dephasing,
    photon_loss,
    prep_dephasing,
)
from .qstate import (
    CNOT,
    H,
    SWAP,
    X,
    Z,
    DensityMatrix,
    apply_kraus,
    bell_vector,
    ghz_vector,
    pauli_matrix,
    pauli_strings,
    permute,
    sqrt_fidelity,
    tensor,
    w_vector,
)

INF_TIMING = TimingParams(T_link=math.inf, T_idle=math.inf)

PROTOCOLS = (
    "bell_sc",
    "bell_dc",
    "w",
    "raw_ghz",
    "dc_ghz",
    "dc_w",
    "distil_bell_sc",
    "distil_bell_dc",
    "distil_w_ghz",
    "distil_w_w",
    "distil_ghz_ghz",
)
CLOSED_FORM = ("bell_sc", "bell_dc", "w", "raw_ghz", "dc_ghz", "dc_w")

BELL_GHZ_PATTERNS = ("0000", "1100", "0011", "1111")
W_W_PATTERNS = ("0011", "0101", "0110", "1001", "1010", "1100")
GHZ_GHZ_PATTERNS = ("0000", "1111")


class ProtocolError(ValueError):
    pass


@dataclass
class ProtocolResult:
    """Outcome of one protocol evaluation.

    ``success_prob`` is per attempt for elementary and optical protocols and
    per shot (Table-style attempt weighting) for memory distillation.
    """

    name: str
    success_prob: float
    fidelity: float
    output_state: DensityMatrix | None
    attempt_time: dict = field(default_factory=dict)
    attempts: dict = field(default_factory=dict)
    ghz_time: float | None = None
    extra: dict = field(default_factory=dict)

    def sample_generation_times(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return sample_generation_times(self.attempt_time, rng, n)


# Elementary building blocks


def emitter_photon_state(hw: HardwareParams, alpha: float, module: int) -> DensityMatrix:
    """Single module after preparation, emission and the emission noise."""
    v = np.array([math.sqrt(1 - alpha), math.sqrt(alpha)], dtype=complex)
    e, p = f"e{module}", f"p{module}"
    rho = DensityMatrix(np.outer(v, v.conj()), (e,), (2,))
    if hw.p_g > 0:
        rho = apply_kraus(rho, depolarizing(hw.p_g).kraus, [e])
    rho = apply_kraus(rho, prep_dephasing(hw.f_prep).kraus, [e])
    rho = tensor(rho, DensityMatrix(np.diag([1, 0]).astype(complex), (p,), (2,)))
    rho = apply_kraus(rho, [CNOT], [e, p])
    return _post_emission(rho, hw, [module])


def _post_emission(rho: DensityMatrix, hw: HardwareParams, modules) -> DensityMatrix:
    for m in modules:
        if hw.p_de > 0:
            rho = apply_kraus(rho, double_excitation_dephasing(hw.p_de).kraus, [f"e{m}"])
        if hw.eta_ph < 1:
            rho = apply_kraus(rho, photon_loss(hw.eta_ph).kraus, [f"p{m}"])
    return rho


def emit_joint_state(hw: HardwareParams, n_modules: int, alpha: float | None = None) -> DensityMatrix:
    if n_modules not in (2, 4):
        raise ProtocolError("n_modules must be 2 or 4")
    alpha = hw.alpha if alpha is None else alpha
    out = emitter_photon_state(hw, alpha, 0)
    for m in range(1, n_modules):
        out = tensor(out, emitter_photon_state(hw, alpha, m))
    return out


def re_emit(rho: DensityMatrix, hw: HardwareParams, modules) -> DensityMatrix:
    """Second emission from emitters already holding a state."""
    for m in modules:
        rho = tensor(rho, DensityMatrix(np.diag([1, 0]).astype(complex), (f"p{m}",), (2,)))
        rho = apply_kraus(rho, [CNOT], [f"e{m}", f"p{m}"])
    return _post_emission(rho, hw, modules)


def herald(rho: DensityMatrix, povm: np.ndarray, photons) -> tuple[float, DensityMatrix]:
    """Apply a POVM element to the photon modes and trace them out.

    Returns the branch probability and the unnormalized emitter state.
    """
    photons = list(photons)
    others = [l for l in rho.labels if l not in photons]
    r = permute(rho, others + photons)
    dE = povm.shape[0]
    dO = r.dim // dE
    t = r.data.reshape(dO, dE, dO, dE)
    out = np.einsum("axby,yx->ab", t, povm, optimize=True)
    dims = tuple(r.dims[: len(others)])
    branch = DensityMatrix(out, tuple(others), dims, False)
    return branch.trace(), branch


def _decohere(rho: DensityMatrix, labels, dt: float, T: float) -> DensityMatrix:
    if dt <= 0 or math.isinf(T):
        return rho
    ch = decoherence(dt, T)
    for l in labels:
        rho = apply_kraus(rho, ch.kraus, [l])
    return rho


def _gate1(rho: DensityMatrix, U: np.ndarray, label, p: float) -> DensityMatrix:
    rho = apply_kraus(rho, [U], [label])
    if p > 0:
        rho = apply_kraus(rho, depolarizing(p).kraus, [label])
    return rho


def _gate2(rho: DensityMatrix, U: np.ndarray, labels, p: float) -> DensityMatrix:
    rho = apply_kraus(rho, [U], list(labels))
    if p > 0:
        rho = apply_kraus(rho, depolarizing(p, 2).kraus, list(labels))
    return rho


def _vis(hw: HardwareParams, ports: int) -> np.ndarray:
    return ph.uniform_visibility(hw.mu, ports)


# Branch generators: each returns {key: unnormalized emitter state}


def _bell_sc_branches(hw, timing, alpha, modules=(0, 1)):
    a, b = modules
    rho = tensor(emitter_photon_state(hw, alpha, a), emitter_photon_state(hw, alpha, b))
    povms = ph.bell_povm_set(hw.mu)
    out = {}
    for k, (single, double) in {"D0": ("10", "20"), "D1": ("01", "02")}.items():
        E = povms[single].matrix if hw.pnr else povms[single].matrix + povms[double].matrix
        _, br = herald(rho, E, [f"p{a}", f"p{b}"])
        out[k] = _decohere(br, [f"e{a}", f"e{b}"], timing.t_link, timing.T_link)
    return out


def _bell_dc_branches(hw, timing, alpha, modules=(0, 1)):
    a, b = modules
    out = {}
    povms = ph.bell_povm_set(hw.mu)
    for k1, br in _bell_sc_branches(hw, timing, alpha, modules).items():
        for m in modules:
            br = _gate1(br, X, f"e{m}", hw.p_g)
        br = _decohere(br, [f"e{a}", f"e{b}"], timing.t_p_comm, timing.T_link)
        rho = re_emit(br, hw, modules)
        for k2, (single, double) in {"D0": ("10", "20"), "D1": ("01", "02")}.items():
            E = povms[single].matrix if hw.pnr else povms[single].matrix + povms[double].matrix
            _, br2 = herald(rho, E, [f"p{a}", f"p{b}"])
            out[(k1, k2)] = _decohere(br2, [f"e{a}", f"e{b}"], timing.t_link, timing.T_link)
    return out


E4 = ("e0", "e1", "e2", "e3")
P4 = ("p0", "p1", "p2", "p3")


def _w_branches(hw, timing, alpha):
    rho = emit_joint_state(hw, 4, alpha)
    mu = _vis(hw, 4)
    out = {}
    for k in range(4):
        _, br = herald(rho, ph.w_click(k, mu, hw.pnr).matrix, P4)
        out[k] = _decohere(br, E4, timing.t_link, timing.T_link)
    return out


PAIR_CLASSES = (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2)))


def pair_class(pair) -> tuple:
    """Detector pairs that herald the same GHZ support as ``pair``."""
    for cls in PAIR_CLASSES:
        if tuple(pair) in cls:
            return cls
    raise ProtocolError(f"invalid detector pair {pair}")


def _raw_ghz_branches(hw, timing, alpha):
    rho = emit_joint_state(hw, 4, alpha)
    mu = _vis(hw, 4)
    out = {}
    for pair in ph.DETECTOR_PAIRS:
        _, br = herald(rho, ph.ghz_click(pair, mu, hw.pnr).matrix, P4)
        out[pair] = _decohere(br, E4, timing.t_link, timing.T_link)
    return out


def _second_round(rho, hw, timing, pairs, same_detector):
    """Herald a second emission round on a fixed set of detector pairs.

    With photon-number resolution the four same-detector two-photon patterns
    are accepted as well when ``same_detector`` is set.
    """
    mu = _vis(hw, 4)
    out = {}
    for pair in pairs:
        _, br = herald(rho, ph.ghz_click(pair, mu, hw.pnr).matrix, P4)
        out[pair] = _decohere(br, E4, timing.t_link, timing.T_link)
    if same_detector:
        if not hw.pnr:
            raise ProtocolError("same-detector patterns need photon-number resolution")
        for k in range(4):
            _, br = herald(rho, ph.w_povm(k, 2, mu).matrix, P4)
            out[("b", k)] = _decohere(br, E4, timing.t_link, timing.T_link)
    return out


def _dc_ghz_branches(hw, timing, alpha, same_detector=False):
    out = {}
    for k1, br in _raw_ghz_branches(hw, timing, alpha).items():
        for m in range(4):
            br = _gate1(br, X, f"e{m}", hw.p_g)
        br = _decohere(br, E4, timing.t_p_comm, timing.T_link)
        rho = re_emit(br, hw, range(4))
        for k2, br2 in _second_round(rho, hw, timing, pair_class(k1), same_detector).items():
            out[(k1, k2)] = br2
    return out


def _dc_w_branches(hw, timing, alpha, same_detector=False):
    out = {}
    for k1, br in _w_branches(hw, timing, alpha).items():
        frame = _correction("w", k1)
        br = apply_kraus(br, [pauli_matrix(frame)], E4)
        for m in (1, 3):
            br = _gate1(br, Z, f"e{m}", hw.p_g)
        for m in range(4):
            br = _gate1(br, H, f"e{m}", hw.p_g)
        br = _decohere(br, E4, 2 * timing.t_p_comm, timing.T_link)
        rho = re_emit(br, hw, range(4))
        for k2, br2 in _second_round(rho, hw, timing, PAIR_CLASSES[0], same_detector).items():
            out[(k1, k2)] = br2
    return out


BRANCHES: dict[str, Callable] = {
    "bell_sc": _bell_sc_branches,
    "bell_dc": _bell_dc_branches,
    "w": _w_branches,
    "raw_ghz": _raw_ghz_branches,
    "dc_ghz": _dc_ghz_branches,
    "dc_w": _dc_w_branches,
}

TARGETS = {
    "bell_sc": bell_vector("phi+"),
    "bell_dc": bell_vector("phi+"),
    "w": w_vector(4),
    "raw_ghz": ghz_vector(4),
    "dc_ghz": ghz_vector(4),
    "dc_w": ghz_vector(4),
}


def best_pauli_correction(state: np.ndarray, target: np.ndarray) -> str:
    """Pauli string P maximizing |<target|P|state>| (ties broken by lowest weight)."""
    n = int(round(math.log2(target.size)))
    best, best_val = None, -1.0
    for s in pauli_strings(n):
        val = abs(np.vdot(target, pauli_matrix(s) @ state))
        if val > best_val + 1e-12:
            best, best_val = s, val
    return best


def _dominant_vector(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    return v[:, -1]


@lru_cache(maxsize=None)
def _corrections_for(name: str) -> dict:
    """Pauli frame per branch key, from the ideal PNR branch at small alpha."""
    hw = HardwareParams(alpha=0.05, pnr=True)
    kw = {"same_detector": True} if name in ("dc_ghz", "dc_w") else {}
    branches = BRANCHES[name](hw, INF_TIMING, 0.05, **kw)
    out = {}
    for key, br in branches.items():
        if br.trace() < 1e-14:
            out[key] = None
            continue
        vec = _dominant_vector(br.data)
        out[key] = best_pauli_correction(vec, TARGETS[name])
    return out


def _correction(name: str, key) -> str:
    table = _corrections_for(name)
    corr = table.get(key)
    if corr is None:
        n = int(round(math.log2(TARGETS[name].size)))
        return "I" * n
    return corr


def _combine(name: str, branches: dict) -> tuple[float, DensityMatrix | None]:
    total = None
    prob = 0.0
    for key, br in branches.items():
        tr = br.trace()
        if tr < 1e-300:
            continue
        corr = _correction(name, key)
        fixed = apply_kraus(br, [pauli_matrix(corr)], br.labels)
        total = fixed.data if total is None else total + fixed.data
        prob += tr
        labels, dims = br.labels, br.dims
    if total is None:
        return 0.0, None
    return prob, DensityMatrix(total / prob, labels, dims)


def attempt_times(name: str, timing: TimingParams, round1_prob: float | None = None,
                  round2_prob: float | None = None) -> dict:
    if name in ("dc_ghz", "dc_w", "bell_dc"):
        return {
            "kind": "two_round",
            "fail1": timing.t_link,
            "round2": 2 * timing.t_link + timing.t_p_comm,
            "q1": round1_prob,
            "q2": round2_prob,
        }
    return {"kind": "single", "fail1": timing.t_link, "q1": round1_prob}


def run_elementary(name: str, hw: HardwareParams, timing: TimingParams | None = None,
                   alpha: float | None = None, same_detector: bool = False) -> ProtocolResult:
    """Exact evaluation of an elementary or optical protocol."""
    if name not in BRANCHES:
        raise ProtocolError(f"unknown elementary protocol {name!r}")
    timing = timing or TimingParams()
    alpha = hw.alpha if alpha is None else alpha
    kw = {"same_detector": same_detector} if name in ("dc_ghz", "dc_w") else {}
    branches = BRANCHES[name](hw, timing, alpha, **kw)
    prob, state = _combine(name, branches)
    fid = sqrt_fidelity(state, TARGETS[name]) if state is not None else 0.0
    q1 = q2 = None
    if name in ("dc_ghz", "dc_w", "bell_dc"):
        first = {
            "dc_ghz": lambda: _raw_ghz_branches(hw, timing, alpha),
            "dc_w": lambda: _w_branches(hw, timing, alpha),
            "bell_dc": lambda: _bell_sc_branches(hw, timing, alpha),
        }[name]()
        q1 = sum(b.trace() for b in first.values())
        q2 = prob / q1 if q1 > 0 else 0.0
    else:
        q1 = prob
    return ProtocolResult(
        name=name,
        success_prob=prob,
        fidelity=fid,
        output_state=state,
        attempt_time=attempt_times(name, timing, q1, q2),
        extra={"alpha": alpha, "pnr": hw.pnr},
    )


def run_bell_sc(hw, timing=None, alpha=None):
    return run_elementary("bell_sc", hw, timing, alpha)


def run_bell_dc(hw, timing=None, alpha=None):
    return run_elementary("bell_dc", hw, timing, alpha)


def run_w(hw, timing=None, alpha=None):
    return run_elementary("w", hw, timing, alpha)


def run_raw_ghz(hw, timing=None, alpha=None):
    return run_elementary("raw_ghz", hw, timing, alpha)


def run_dc_ghz(hw, timing=None, alpha=None, same_detector=False):
    return run_elementary("dc_ghz", hw, timing, alpha, same_detector)


def run_dc_w(hw, timing=None, alpha=None, same_detector=False):
    return run_elementary("dc_w", hw, timing, alpha, same_detector)


# Closed forms


def closed_form_oracle(name: str, alpha: float, pnr: bool) -> tuple[float, float]:
    a = alpha
    if name not in CLOSED_FORM:
        raise ProtocolError(f"{name!r} has no closed form")
    if name == "bell_sc":
        if pnr:
            return 2 * a * (1 - a), 1.0
        return a * (2 - a), (math.sqrt(2 * (1 - a) / (2 - a)) if a < 1 else 0.0)
    if name == "bell_dc":
        return 2 * a * (1 - a), 1.0
    if name == "w":
        if pnr:
            return 4 * a * (1 - a) ** 3, 1.0
        poly = 32 - 72 * a + 60 * a**2 - 17 * a**3
        return a * poly / 8, 4 * math.sqrt(2 * (1 - a) ** 3 / poly)
    if name == "raw_ghz":
        if pnr:
            return 3 * a**2 * (1 - a) ** 2, 1.0
        q = 5 * a**2 - 12 * a + 8
        return 3 * a**2 * q / 8, 2 * math.sqrt(2) * (1 - a) / math.sqrt(q)
    if name == "dc_ghz":
        return 3 * a**2 * (1 - a) ** 2, 1.0
    if pnr:
        return 2 * a * (1 - a) ** 3, 1.0
    poly = 1152 - 2288 * a + 1552 * a**2 - 377 * a**3
    return a * poly / 1024, 8 * math.sqrt((16 - 48 * a + 54 * a**2 - 22 * a**3) / poly)


# Repeat until success


def rus_sample(success_prob: float, rng: np.random.Generator, max_attempts: int | None = None):
    """Number of attempts until first success; None on timeout."""
    if max_attempts is not None and max_attempts < 1:
        raise ProtocolError("max_attempts must be >= 1")
    if success_prob <= 0:
        return None
    n = int(rng.geometric(success_prob))
    if max_attempts is not None and n > max_attempts:
        return None
    return n


def sample_generation_times(attempt_time: dict, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n generation times (in t_link units) from the attempt structure."""
    q1 = attempt_time["q1"]
    if not q1 or q1 <= 0:
        raise ProtocolError("protocol never succeeds")
    if attempt_time["kind"] == "single":
        return rng.geometric(q1, size=n) * attempt_time["fail1"]
    q2 = attempt_time["q2"]
    qs = q1 * q2
    if qs <= 0:
        raise ProtocolError("protocol never succeeds")
    # macro attempts until success; the failures split between the two rounds
    N = rng.geometric(qs, size=n)
    r = q1 * (1 - q2) / (1 - qs) if qs < 1 else 0.0
    K = rng.binomial(N - 1, r)
    return (N - 1 - K) * attempt_time["fail1"] + (K + 1) * attempt_time["round2"]


# Memory distillation


MEM = ("m0", "m1", "m2", "m3")


def _relabel_to(rho: DensityMatrix, labels) -> DensityMatrix:
    return DensityMatrix(rho.data, tuple(labels), rho.dims, rho.normalized)


def _swap_to_memory(rho: DensityMatrix, hw: HardwareParams, timing: TimingParams, pairs) -> DensityMatrix:
    for c, m in pairs:
        rho = _gate2(rho, SWAP, (c, m), hw.p_g)
    return _decohere(rho, [l for pair in pairs for l in pair], timing.t_swap, timing.T_idle)


def _blank(labels) -> DensityMatrix:
    n = len(labels)
    d = np.zeros((2**n, 2**n), dtype=complex)
    d[0, 0] = 1
    return DensityMatrix(d, tuple(labels), (2,) * n)


@lru_cache(maxsize=None)
def w_to_ghz_patterns() -> tuple:
    text = resources.files("emitqec").joinpath("data/w_to_ghz_patterns.json").read_text()
    return tuple(json.loads(text)["accepted"])


@dataclass(frozen=True)
class DistillSpec:
    base: str
    resource: str
    control: str  # "memory" or "comm"
    patterns: tuple
    rotate_resource: tuple = ()  # (gate, qubit) sequence on comm
    rotate_base: tuple = ()      # (gate, qubit) sequence on memory
    final_rotation: tuple = ()   # applied to memory after readout
    parallel_bell: bool = False


def _spec(name: str) -> DistillSpec:
    if name in ("distil_bell_sc", "distil_bell_dc"):
        return DistillSpec("raw_ghz", name.split("_", 1)[1], "memory", BELL_GHZ_PATTERNS,
                           parallel_bell=True)
    if name == "distil_w_ghz":
        return DistillSpec("raw_ghz", "w", "memory", w_to_ghz_patterns(),
                           rotate_resource=tuple(("H", q) for q in range(4)))
    if name == "distil_w_w":
        return DistillSpec(
            "w", "w", "memory", W_W_PATTERNS,
            rotate_resource=(("Z", 1),) + tuple(("H", q) for q in range(4)),
            rotate_base=(("Z", 0),) + tuple(("H", q) for q in range(4)),
            final_rotation=tuple(("H", q) for q in range(4)),
        )
    if name == "distil_ghz_ghz":
        return DistillSpec("raw_ghz", "raw_ghz", "memory", GHZ_GHZ_PATTERNS)
    raise ProtocolError(f"unknown distillation protocol {name!r}")


GATES = {"H": H, "Z": Z, "X": X}


def _distil_circuit(
    spec: DistillSpec,
    base: DensityMatrix,
    resource: DensityMatrix,
    hw: HardwareParams,
    timing: TimingParams,
    lam_mem: float,
    lam_c: tuple = (1.0, 1.0, 1.0, 1.0),
):
    """Run the distillation circuit and return {pattern: unnormalized state on c0..c3}.

    ``lam_mem`` is the coherence factor exp(-t/T) accumulated by the stored
    base while the resource was generated; ``lam_c`` the factor for each
    comm qubit that waited for a parallel link.
    """
    comm = ("c0", "c1", "c2", "c3")
    rho = tensor(base, resource)
    for m, lam in zip(MEM, [lam_mem] * 4):
        rho = _decohere_factor(rho, m, lam)
    for c, lam in zip(comm, lam_c):
        rho = _decohere_factor(rho, c, lam)
    for g, q in spec.rotate_resource:
        rho = _gate1(rho, GATES[g], comm[q], hw.p_g)
    rho = _decohere(rho, MEM + comm, timing.t_p_comm * len(spec.rotate_resource), timing.T_idle)
    for g, q in spec.rotate_base:
        rho = _gate1(rho, GATES[g], MEM[q], hw.p_g)
    if spec.rotate_base:
        rho = _decohere(rho, MEM + comm, timing.t_p_mem * 2, timing.T_idle)
    for q in range(4):
        pair = (MEM[q], comm[q]) if spec.control == "memory" else (comm[q], MEM[q])
        rho = _gate2(rho, CNOT, pair, hw.p_g)
    rho = _decohere(rho, MEM + comm, timing.t_2q, timing.T_idle)
    # Z readout of comm qubits with classical flips
    rho = permute(rho, comm + MEM)
    t = rho.data.reshape(16, 16, 16, 16)
    diag = np.einsum("aibj->abij", t)
    true_branches = {}
    for s in range(16):
        true_branches[s] = diag[s, s]
    out = {}
    pm = hw.p_m
    for pat in spec.patterns:
        r = int(pat, 2)
        acc = np.zeros((16, 16), dtype=complex)
        for s, blk in true_branches.items():
            flips = bin(s ^ r).count("1")
            w = (pm**flips) * ((1 - pm) ** (4 - flips))
            if w > 0:
                acc += w * blk
        br = _decohere(DensityMatrix(acc, MEM, (2,) * 4, False), MEM, timing.t_meas, timing.T_idle)
        for g, q in spec.final_rotation:
            br = _gate1(br, GATES[g], MEM[q], hw.p_g)
        if spec.final_rotation:
            br = _decohere(br, MEM, timing.t_p_mem, timing.T_idle)
        out[pat] = br
    return out


def _decohere_factor(rho: DensityMatrix, label, lam: float) -> DensityMatrix:
    if lam >= 1.0:
        return rho
    t = -math.log(max(lam, 1e-300))
    return apply_kraus(rho, decoherence(t, 1.0).kraus, [label])


def _finish_distillation(branches: dict, hw, timing, corrections: dict) -> tuple[float, np.ndarray]:
    total = np.zeros((16, 16), dtype=complex)
    prob = 0.0
    for pat, br in branches.items():
        corr = corrections.get(pat)
        if corr is None:
            continue
        fixed = apply_kraus(br, [pauli_matrix(corr)], MEM)
        total += fixed.data
        prob += br.trace()
    if prob <= 0:
        return 0.0, total
    rho = DensityMatrix(total, MEM, (2,) * 4, False)
    # swap back to the comm qubits
    rho = tensor(rho, _blank(("c0", "c1", "c2", "c3")))
    rho = _swap_to_memory(rho, hw, timing, list(zip(MEM, ("c0", "c1", "c2", "c3"))))
    from .qstate import partial_trace

    out = partial_trace(rho, ("c0", "c1", "c2", "c3"))
    return prob, out.data


def _base_in_memory(spec: DistillSpec, hw, timing, alpha_base):
    res = run_elementary(spec.base, hw, timing, alpha_base)
    rho = _relabel_to(res.output_state, ("c0", "c1", "c2", "c3"))
    rho = tensor(rho, _blank(MEM))
    rho = _swap_to_memory(rho, hw, timing, list(zip(("c0", "c1", "c2", "c3"), MEM)))
    from .qstate import partial_trace

    return res, partial_trace(rho, MEM)


def _resource_for(spec: DistillSpec, hw, timing, alpha):
    """Returns (per-attempt probs list, corrected resource state on comm)."""
    comm = ("c0", "c1", "c2", "c3")
    if spec.parallel_bell:
        r1 = run_elementary(spec.resource, hw, timing, alpha)
        a = _relabel_to(r1.output_state, ("c0", "c1"))
        b = _relabel_to(r1.output_state, ("c2", "c3"))
        return [r1.success_prob, r1.success_prob], tensor(a, b)
    r = run_elementary(spec.resource, hw, timing, alpha)
    return [r.success_prob], _relabel_to(r.output_state, comm)


@lru_cache(maxsize=None)
def _distil_corrections(name: str) -> dict:
    spec = _spec(name)
    hw = HardwareParams(alpha=0.01, pnr=True)
    _, base = _base_in_memory(spec, hw, INF_TIMING, 0.01)
    _, res = _resource_for(spec, hw, INF_TIMING, 0.01)
    branches = _distil_circuit(spec, base, res, hw, INF_TIMING, 1.0)
    out = {}
    for pat, br in branches.items():
        if br.trace() < 1e-14:
            out[pat] = None
            continue
        out[pat] = best_pauli_correction(_dominant_vector(br.data), ghz_vector(4))
    return out


def derive_w_to_ghz_patterns(alpha: float = 1e-4) -> tuple:
    """Outcome strings whose ideal W->GHZ output is a GHZ state up to O(alpha).

    Uses threshold detectors so that the alpha-order noise terms are present;
    a pattern is kept when its corrected infidelity is at most 10*alpha.
    """
    everything = tuple(format(i, "04b") for i in range(16))
    spec = DistillSpec("raw_ghz", "w", "memory", everything,
                       rotate_resource=tuple(("H", q) for q in range(4)))
    hw = HardwareParams(alpha=alpha, pnr=False)
    _, base = _base_in_memory(spec, hw, INF_TIMING, alpha)
    _, res = _resource_for(spec, hw, INF_TIMING, alpha)
    target = ghz_vector(4)
    keep = []
    for pat, br in _distil_circuit(spec, base, res, hw, INF_TIMING, 1.0).items():
        tr = br.trace()
        if tr < 1e-12:
            continue
        corr = pauli_matrix(best_pauli_correction(_dominant_vector(br.data), target))
        f = math.sqrt(max(np.real(target.conj() @ corr @ br.data @ corr.conj().T @ target) / tr, 0.0))
        if 1 - f <= 10 * alpha:
            keep.append(pat)
    return tuple(sorted(keep))


def _poly_fit(fn, degree: int, nodes=None):
    """Coefficients of a polynomial-in-lambda matrix function via interpolation."""
    nodes = np.linspace(0.0, 1.0, degree + 1) if nodes is None else np.asarray(nodes)
    vals = np.stack([np.asarray(fn(x)) for x in nodes])
    V = np.vander(nodes, degree + 1, increasing=True)
    return np.tensordot(np.linalg.inv(V), vals, axes=1)


def run_distillation(
    name: str,
    hw: HardwareParams,
    timing: TimingParams | None = None,
    n_shots: int = 10_000,
    rng: np.random.Generator | None = None,
) -> ProtocolResult:
    """Memory-based distillation with sampled RUS waiting times.

    The output of the circuit is an exact polynomial in the coherence factors
    of the waiting qubits, so each shot is evaluated in closed form from a
    handful of full simulations.
    """
    timing = timing or TimingParams()
    rng = rng or np.random.default_rng(0)
    spec = _spec(name)
    corr = _distil_corrections(name)
    base_res, base = _base_in_memory(spec, hw, timing, hw.base_alpha)
    probs, res = _resource_for(spec, hw, timing, hw.distil_alpha)
    target = ghz_vector(4)

    def evaluate(lm: float, lc: tuple):
        branches = _distil_circuit(spec, base, res, hw, timing, lm, lc)
        p, data = _finish_distillation(branches, hw, timing, corr)
        return np.concatenate([[p], data.ravel()])

    # lam_c applies to the pair of the Bell link that finished first
    if spec.parallel_bell:
        grids = {}
        for first in (0, 1):
            def f2(lm, lc, first=first):
                lcs = [1.0] * 4
                lcs[2 * first] = lcs[2 * first + 1] = lc
                return evaluate(lm, tuple(lcs))
            grids[first] = _poly_fit(lambda lm: _poly_fit(lambda lc: f2(lm, lc), 2), 4)
    else:
        grids = {None: _poly_fit(lambda lm: evaluate(lm, (1.0,) * 4), 4)[:, None, :]}

    T = timing.T_link
    nR = rng.geometric(base_res.success_prob, size=n_shots)
    if spec.parallel_bell:
        n1 = rng.geometric(probs[0], size=n_shots)
        n2 = rng.geometric(probs[1], size=n_shots)
        wait = np.maximum(n1, n2)
        gap = np.abs(n1 - n2)
    else:
        wait = rng.geometric(probs[0], size=n_shots)
        gap = np.zeros(n_shots)
    lam_m = np.exp(-wait * timing.t_link / T) if not math.isinf(T) else np.ones(n_shots)
    lam_c = np.exp(-gap * timing.t_link / T) if not math.isinf(T) else np.ones(n_shots)

    rates = np.empty(n_shots)
    fids = np.empty(n_shots)
    pds = np.empty(n_shots)
    acc_state = np.zeros((16, 16), dtype=complex)
    # the earlier link (smaller attempt count) is the one that waits
    which = (n1 > n2).astype(int) if spec.parallel_bell else np.full(n_shots, -1)
    for i in range(n_shots):
        coeffs = grids[int(which[i])] if spec.parallel_bell else grids[None]
        pm = lam_m[i] ** np.arange(coeffs.shape[0])
        pc = lam_c[i] ** np.arange(coeffs.shape[1])
        vec = np.einsum("k,j,kjl->l", pm, pc, coeffs)
        pd = float(np.real(vec[0]))
        rho = vec[1:].reshape(16, 16)
        pds[i] = pd
        fids[i] = math.sqrt(max(float(np.real(target.conj() @ rho @ target)) / pd, 0.0)) if pd > 0 else 0.0
        rates[i] = pd / (nR[i] + wait[i])
        acc_state += rho
    total_pd = pds.sum()
    state = DensityMatrix(acc_state / total_pd, ("c0", "c1", "c2", "c3"), (2,) * 4) if total_pd > 0 else None
    fid = float(fids.mean())
    return ProtocolResult(
        name=name,
        success_prob=float(rates.mean()),
        fidelity=fid,
        output_state=state,
        attempts={
            "base_mean": float(nR.mean()),
            "resource_wait_mean": float(wait.mean()),
        },
        extra={"p_distil_mean": float(pds.mean()), "n_shots": n_shots},
    )


def run_protocol(name: str, hw: HardwareParams, timing: TimingParams | None = None, **kw) -> ProtocolResult:
    if name in BRANCHES:
        return run_elementary(name, hw, timing, **kw)
    if name in PROTOCOLS:
        return run_distillation(name, hw, timing, **kw)
    raise ProtocolError(f"unregistered protocol {name!r}")
