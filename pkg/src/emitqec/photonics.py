"""Beam-splitter networks and photon-detection POVMs.

The input space holds at most one photon per port, so an input basis state is
a bit string over the ports (port 0 is the most significant bit). A POVM
element for a detection pattern n = (n_0, ..., n_{M-1}) is

    E_n[j, j'] = 1/prod(n_k!) * sum_{s, s'} prod_slot V[j_s, k] V[j'_s', k]^* mu[j_s, j'_s']

where the photons of input j (and j') are assigned to the detector slots in
every order s (s') and mu is the pairwise amplitude visibility.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

GHZ_PATTERNS = ((1, 1), (1, 2), (2, 1), (2, 2), (1, 3), (3, 1))
DETECTOR_PAIRS = tuple(itertools.combinations(range(4), 2))


class POVMError(ValueError):
    pass


def beamsplitter_4x4() -> np.ndarray:
    return 0.5 * np.array(
        [[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], dtype=complex
    )


def beamsplitter_2x2() -> np.ndarray:
    return np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


def intensity_to_amplitude_visibility(mu_i: float) -> float:
    if not 0.0 <= mu_i <= 1.0:
        raise POVMError(f"intensity visibility {mu_i} outside [0, 1]")
    return math.sqrt(mu_i)


def uniform_visibility(mu: complex, ports: int = 4) -> np.ndarray:
    if abs(mu) > 1 + 1e-15:
        raise POVMError("|mu| must not exceed 1")
    m = np.full((ports, ports), mu, dtype=complex)
    m[np.tril_indices(ports, -1)] = np.conj(mu)
    np.fill_diagonal(m, 1.0)
    return m


def validate_visibility(mu: np.ndarray) -> np.ndarray:
    mu = np.asarray(mu, dtype=complex)
    if mu.ndim != 2 or mu.shape[0] != mu.shape[1]:
        raise POVMError("visibility matrix must be square")
    if not np.allclose(np.diag(mu), 1.0, atol=1e-12):
        raise POVMError("visibility diagonal must be one")
    if not np.allclose(mu, mu.conj().T, atol=1e-12):
        raise POVMError("visibility matrix must be Hermitian")
    if np.max(np.abs(mu)) > 1 + 1e-12:
        raise POVMError("|mu| must not exceed 1")
    return mu


@dataclass(frozen=True)
class POVMElement:
    matrix: np.ndarray
    pattern: tuple

    @property
    def photons(self) -> int:
        return sum(self.pattern)

    def __add__(self, other: "POVMElement") -> "POVMElement":
        return POVMElement(self.matrix + other.matrix, self.pattern + ("+",) + other.pattern)


def _ports_of(index: int, n_ports: int) -> tuple:
    return tuple(j for j in range(n_ports) if (index >> (n_ports - 1 - j)) & 1)


@lru_cache(maxsize=4096)
def _povm_cached(pattern: tuple, mu_key: tuple, n_ports: int) -> np.ndarray:
    mu = np.array(mu_key, dtype=complex).reshape(n_ports, n_ports)
    V = beamsplitter_4x4() if n_ports == 4 else beamsplitter_2x2()
    slots = [k for k, c in enumerate(pattern) for _ in range(c)]
    N = len(slots)
    norm = 1.0 / math.prod(math.factorial(c) for c in pattern)
    dim = 2**n_ports
    E = np.zeros((dim, dim), dtype=complex)
    inputs = [i for i in range(dim) if bin(i).count("1") == N]
    # amplitude of each ordering of an input's photons onto the slots
    amps = {}
    for i in inputs:
        ports = _ports_of(i, n_ports)
        amps[i] = [
            (perm, math.prod(V[perm[s], slots[s]] for s in range(N)))
            for perm in itertools.permutations(ports)
        ]
    for i in inputs:
        for ip in inputs:
            acc = 0j
            for perm, a in amps[i]:
                for permp, b in amps[ip]:
                    acc += a * np.conj(b) * math.prod(mu[perm[s], permp[s]] for s in range(N))
            E[i, ip] = norm * acc
    E.setflags(write=False)
    return E


def povm_element(pattern: Sequence[int], mu: np.ndarray) -> POVMElement:
    """Exact-count POVM element for a detection pattern on 2 or 4 ports."""
    pattern = tuple(int(c) for c in pattern)
    mu = validate_visibility(mu)
    n_ports = mu.shape[0]
    if n_ports not in (2, 4) or len(pattern) != n_ports:
        raise POVMError("pattern length must match a 2- or 4-port network")
    if any(c < 0 for c in pattern) or sum(pattern) > n_ports:
        raise POVMError(f"pattern {pattern} not reachable with one photon per port")
    key = tuple(np.round(mu.ravel(), 15).tolist())
    return POVMElement(_povm_cached(pattern, key, n_ports), pattern)


def w_povm(k: int, n: int, mu: np.ndarray) -> POVMElement:
    if n not in (1, 2, 3, 4):
        raise POVMError("W pattern photon number must be 1..4")
    if k not in range(4):
        raise POVMError("detector index must be 0..3")
    pattern = [0, 0, 0, 0]
    pattern[k] = n
    return povm_element(pattern, mu)


def ghz_povm(pair: tuple, counts: tuple, mu: np.ndarray) -> POVMElement:
    counts = tuple(counts)
    if counts not in GHZ_PATTERNS:
        raise POVMError(f"unsupported GHZ pattern {counts}")
    if tuple(pair) not in DETECTOR_PAIRS:
        raise POVMError(f"invalid detector pair {pair}")
    pattern = [0, 0, 0, 0]
    pattern[pair[0]], pattern[pair[1]] = counts
    return povm_element(pattern, mu)


def bell_povm_set(mu: complex) -> dict:
    """Two-port POVM elements keyed '00', '10', '01', '11', '20', '02'."""
    if abs(mu) > 1 + 1e-15:
        raise POVMError("|mu| must not exceed 1")
    vis = uniform_visibility(mu, 2)
    out = {}
    for key in ("00", "10", "01", "11", "20", "02"):
        out[key] = povm_element((int(key[0]), int(key[1])), vis)
    return out


def click_povm(elements: Iterable[POVMElement], pnr: bool) -> POVMElement:
    """PNR keeps the exact-count element (the first); threshold detectors sum all."""
    elements = list(elements)
    if not elements:
        raise POVMError("empty element set")
    if pnr:
        return elements[0]
    out = elements[0]
    for e in elements[1:]:
        out = out + e
    return out


def w_click(k: int, mu: np.ndarray, pnr: bool) -> POVMElement:
    return click_povm([w_povm(k, n, mu) for n in (1, 2, 3, 4)], pnr)


def ghz_click(pair: tuple, mu: np.ndarray, pnr: bool) -> POVMElement:
    return click_povm([ghz_povm(pair, c, mu) for c in GHZ_PATTERNS], pnr)


def bunched_click(pair: tuple, mu: np.ndarray) -> list[POVMElement]:
    """Same-detector two-photon PNR patterns (2,0) and (0,2) for a detector pair."""
    out = []
    for k in pair:
        pattern = [0, 0, 0, 0]
        pattern[k] = 2
        out.append(povm_element(pattern, mu))
    return out
