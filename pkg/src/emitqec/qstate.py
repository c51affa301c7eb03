"""Dense density matrices over labeled registers.

Every register site carries a label and a local dimension. Operations never
mutate their inputs; they return fresh objects, so states can be shared
freely between worker threads.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

HERM_TOL = 1e-10
PSD_TOL = 1e-9
UNITARY_TOL = 1e-12

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}

CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
CZ = np.diag([1, 1, 1, -1]).astype(complex)
SWAP = np.array(
    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
)


class StateError(ValueError):
    pass


@dataclass(frozen=True)
class PureState:
    amplitudes: np.ndarray
    labels: tuple = ()
    dims: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.amplitudes, dtype=complex).ravel()
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise StateError("pure state must have unit norm")
        object.__setattr__(self, "amplitudes", v)
        if not self.dims:
            n = int(round(np.log2(v.size)))
            if 2**n != v.size:
                raise StateError("dims required for non-qubit registers")
            object.__setattr__(self, "dims", (2,) * n)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(len(self.dims))))

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def projector(self) -> "DensityMatrix":
        v = self.amplitudes
        return DensityMatrix(np.outer(v, v.conj()), self.labels, self.dims)


@dataclass(frozen=True)
class DensityMatrix:
    """Complex Hermitian matrix on a labeled register.

    ``normalized`` False marks a heralded branch whose trace equals its
    probability rather than one.
    """

    data: np.ndarray
    labels: tuple
    dims: tuple
    normalized: bool = True
    check: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        labels = tuple(self.labels)
        dims = tuple(int(d) for d in self.dims)
        if len(labels) != len(dims):
            raise StateError("labels and dims differ in length")
        if len(set(labels)) != len(labels):
            raise StateError(f"duplicate labels {labels}")
        n = int(np.prod(dims)) if dims else 1
        if data.shape != (n, n):
            raise StateError(f"matrix shape {data.shape} does not match dims {dims}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dims", dims)
        if self.check:
            self.validate()

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def trace(self) -> float:
        return float(np.real(np.trace(self.data)))

    def validate(self, tol_psd: float = PSD_TOL) -> None:
        if np.max(np.abs(self.data - self.data.conj().T), initial=0.0) > HERM_TOL:
            raise StateError("matrix is not Hermitian")
        tr = np.trace(self.data)
        if abs(tr.imag) > HERM_TOL:
            raise StateError("trace is not real")
        if self.normalized and abs(tr.real - 1.0) > 1e-9:
            raise StateError(f"normalized state has trace {tr.real}")
        ev = np.linalg.eigvalsh(0.5 * (self.data + self.data.conj().T))
        if ev.min() < -tol_psd:
            raise StateError(f"negative eigenvalue {ev.min()}")

    def normalize(self) -> "DensityMatrix":
        tr = self.trace()
        if tr <= 0:
            raise StateError("cannot normalize a zero-trace branch")
        return DensityMatrix(self.data / tr, self.labels, self.dims, True)

    def with_data(self, data: np.ndarray, normalized: bool | None = None) -> "DensityMatrix":
        return DensityMatrix(
            data, self.labels, self.dims, self.normalized if normalized is None else normalized
        )

    def index(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise StateError(f"unknown label {label!r}") from None

    def relabel(self, mapping: dict) -> "DensityMatrix":
        return DensityMatrix(
            self.data, tuple(mapping.get(l, l) for l in self.labels), self.dims, self.normalized
        )


def ket(bits: str | Sequence[int]) -> np.ndarray:
    """Computational-basis qubit vector, e.g. ket('0110')."""
    bits = [int(b) for b in bits]
    v = np.zeros(2 ** len(bits), dtype=complex)
    v[int("".join(map(str, bits)), 2) if bits else 0] = 1.0
    return v


def from_vector(v: np.ndarray, labels: Iterable, dims: Sequence[int] | None = None) -> DensityMatrix:
    v = np.asarray(v, dtype=complex).ravel()
    labels = tuple(labels)
    dims = tuple(dims) if dims is not None else (2,) * len(labels)
    return DensityMatrix(np.outer(v, v.conj()), labels, dims)


def maximally_mixed(labels: Iterable, dims: Sequence[int] | None = None) -> DensityMatrix:
    labels = tuple(labels)
    dims = tuple(dims) if dims is not None else (2,) * len(labels)
    n = int(np.prod(dims))
    return DensityMatrix(np.eye(n, dtype=complex) / n, labels, dims)


def tensor(a: DensityMatrix, b: DensityMatrix) -> DensityMatrix:
    if set(a.labels) & set(b.labels):
        raise StateError(f"label collision {set(a.labels) & set(b.labels)}")
    return DensityMatrix(
        np.kron(a.data, b.data),
        a.labels + b.labels,
        a.dims + b.dims,
        a.normalized and b.normalized,
    )


def tensor_all(states: Iterable[DensityMatrix]) -> DensityMatrix:
    states = list(states)
    out = states[0]
    for s in states[1:]:
        out = tensor(out, s)
    return out


def partial_trace(rho: DensityMatrix, keep: Iterable) -> DensityMatrix:
    keep = list(keep)
    for l in keep:
        rho.index(l)
    keep_set = set(keep)
    n = len(rho.dims)
    kept = [i for i, l in enumerate(rho.labels) if l in keep_set]
    traced = [i for i in range(n) if i not in kept]
    t = rho.data.reshape(rho.dims + rho.dims)
    # contract traced ket/bra axes pairwise
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    ket_ax = list(letters[:n])
    bra_ax = list(letters[n : 2 * n])
    for i in traced:
        bra_ax[i] = ket_ax[i]
    out = "".join(ket_ax[i] for i in kept) + "".join(bra_ax[i] for i in kept)
    red = np.einsum("".join(ket_ax) + "".join(bra_ax) + "->" + out, t)
    dims = tuple(rho.dims[i] for i in kept)
    m = int(np.prod(dims)) if dims else 1
    return DensityMatrix(
        red.reshape(m, m), tuple(rho.labels[i] for i in kept), dims, rho.normalized
    )


def permute(rho: DensityMatrix, order: Sequence) -> DensityMatrix:
    """Reorder subsystems so that labels follow ``order``."""
    idx = [rho.index(l) for l in order]
    if len(idx) != len(rho.labels):
        raise StateError("permutation must list every label")
    n = len(idx)
    t = rho.data.reshape(rho.dims + rho.dims).transpose(idx + [i + n for i in idx])
    return DensityMatrix(
        t.reshape(rho.dim, rho.dim),
        tuple(rho.labels[i] for i in idx),
        tuple(rho.dims[i] for i in idx),
        rho.normalized,
    )


def _apply_local(data: np.ndarray, dims: tuple, targets: list[int], ops: list[np.ndarray]) -> np.ndarray:
    """Sum_k A_k rho A_k^dagger with each A_k acting on ``targets``."""
    n = len(dims)
    tdims = [dims[i] for i in targets]
    m = int(np.prod(tdims))
    rest = [i for i in range(n) if i not in targets]
    perm = targets + rest
    t = data.reshape(dims + dims).transpose(perm + [i + n for i in perm])
    r = int(np.prod([dims[i] for i in rest])) if rest else 1
    t = t.reshape(m, r, m, r)
    out = np.zeros_like(t)
    for A in ops:
        out += np.einsum("ij,jakb,lk->ialb", A, t, A.conj(), optimize=True)
    inv = np.argsort(perm)
    shaped = out.reshape([dims[i] for i in perm] * 2)
    shaped = shaped.transpose(list(inv) + [i + n for i in inv])
    N = data.shape[0]
    return shaped.reshape(N, N)


def apply_kraus(rho: DensityMatrix, kraus: Sequence[np.ndarray], targets: Sequence) -> DensityMatrix:
    idx = [rho.index(l) for l in targets]
    m = int(np.prod([rho.dims[i] for i in idx]))
    for K in kraus:
        if K.shape != (m, m):
            raise StateError(f"operator shape {K.shape} does not match target dim {m}")
    return rho.with_data(_apply_local(rho.data, rho.dims, idx, [np.asarray(K, complex) for K in kraus]))


def apply_operator(rho: DensityMatrix, op: np.ndarray, targets: Sequence) -> DensityMatrix:
    """A rho A^dagger for an arbitrary (possibly non-unitary) local A."""
    out = apply_kraus(rho, [op], targets)
    return DensityMatrix(out.data, out.labels, out.dims, False)


def is_unitary(U: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    U = np.asarray(U, complex)
    return U.shape[0] == U.shape[1] and np.allclose(U @ U.conj().T, np.eye(U.shape[0]), atol=tol, rtol=0)


def apply_unitary(rho: DensityMatrix, U: np.ndarray, targets: Sequence) -> DensityMatrix:
    if not is_unitary(U):
        raise StateError("operator is not unitary")
    return apply_kraus(rho, [U], targets)


def sqrt_fidelity(rho: DensityMatrix | np.ndarray, target: PureState | np.ndarray) -> float:
    """Square-root fidelity sqrt(<psi|rho|psi>) against a pure target."""
    data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    v = target.amplitudes if isinstance(target, PureState) else np.asarray(target, complex).ravel()
    if data.shape[0] != v.size:
        raise StateError(f"dimension mismatch {data.shape[0]} vs {v.size}")
    val = float(np.real(v.conj() @ data @ v))
    return float(np.sqrt(min(max(val, 0.0), 1.0)))


# Pauli algebra


def pauli_matrix(s: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for c in s:
        out = np.kron(out, PAULI[c])
    return out


@lru_cache(maxsize=None)
def pauli_strings(w: int) -> tuple:
    return tuple("".join(p) for p in itertools.product("IXYZ", repeat=w))


@lru_cache(maxsize=None)
def pauli_basis(w: int) -> np.ndarray:
    """Stack of all 4**w Pauli matrices in pauli_strings order."""
    return np.array([pauli_matrix(s) for s in pauli_strings(w)])


def pauli_product(a: str, b: str) -> tuple[complex, str]:
    """Return (phase, c) such that P_a P_b = phase * P_c."""
    table = {
        ("X", "Y"): (1j, "Z"), ("Y", "X"): (-1j, "Z"),
        ("Y", "Z"): (1j, "X"), ("Z", "Y"): (-1j, "X"),
        ("Z", "X"): (1j, "Y"), ("X", "Z"): (-1j, "Y"),
    }
    phase = 1 + 0j
    out = []
    for x, y in zip(a, b):
        if x == "I":
            out.append(y)
        elif y == "I":
            out.append(x)
        elif x == y:
            out.append("I")
        else:
            ph, c = table[(x, y)]
            phase *= ph
            out.append(c)
    return phase, "".join(out)


def pauli_commutes(a: str, b: str) -> bool:
    anti = sum(1 for x, y in zip(a, b) if x != "I" and y != "I" and x != y)
    return anti % 2 == 0


def pauli_weight(s: str) -> int:
    return sum(c != "I" for c in s)


# Named states


def ghz_vector(n: int = 4, sign: int = 1) -> np.ndarray:
    v = np.zeros(2**n, dtype=complex)
    v[0] = 1
    v[-1] = sign
    return v / np.sqrt(2)


def w_vector(n: int = 4, phases: Sequence[complex] | None = None) -> np.ndarray:
    v = np.zeros(2**n, dtype=complex)
    phases = phases if phases is not None else [1] * n
    for k in range(n):
        v[1 << (n - 1 - k)] = phases[k]
    return v / np.sqrt(n)


def bell_vector(kind: str) -> np.ndarray:
    s = 1 / np.sqrt(2)
    return {
        "phi+": np.array([s, 0, 0, s], complex),
        "phi-": np.array([s, 0, 0, -s], complex),
        "psi+": np.array([0, s, s, 0], complex),
        "psi-": np.array([0, s, -s, 0], complex),
    }[kind]
