"""Error channels, hardware/timing parameters and time-scheduled decoherence."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np

from .qstate import I2, X, Y, Z, DensityMatrix, StateError, apply_kraus, pauli_matrix, pauli_strings

TP_TOL = 1e-10


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseChannel:
    kraus: tuple
    arity: int = 1
    name: str = ""

    def __post_init__(self):
        ks = tuple(np.asarray(k, dtype=complex) for k in self.kraus)
        object.__setattr__(self, "kraus", ks)
        dim = 2**self.arity
        for k in ks:
            if k.shape != (dim, dim):
                raise NoiseError(f"Kraus shape {k.shape} does not match arity {self.arity}")

    def completeness_error(self) -> float:
        s = sum(k.conj().T @ k for k in self.kraus)
        return float(np.max(np.abs(s - np.eye(s.shape[0]))))

    def is_trace_preserving(self, tol: float = TP_TOL) -> bool:
        return self.completeness_error() <= tol

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return sum(k @ rho @ k.conj().T for k in self.kraus)

    def then(self, other: "NoiseChannel") -> "NoiseChannel":
        """Apply self first, then other."""
        if other.arity != self.arity:
            raise NoiseError("cannot compose channels of different arity")
        ks = [b @ a for a in self.kraus for b in other.kraus]
        return NoiseChannel(tuple(ks), self.arity, f"{self.name}>{other.name}")

    def ptm(self) -> np.ndarray:
        """Pauli transfer matrix R_ij = Tr(P_i N(P_j)) / 2^w."""
        strings = pauli_strings(self.arity)
        mats = [pauli_matrix(s) for s in strings]
        d = 2**self.arity
        return np.array([[np.real(np.trace(pi @ self(pj))) / d for pj in mats] for pi in mats])


def _pauli_channel(weights: dict, arity: int, name: str) -> NoiseChannel:
    ks = [math.sqrt(w) * pauli_matrix(s) for s, w in weights.items() if w > 0]
    if not ks:
        ks = [np.eye(2**arity)]
    return NoiseChannel(tuple(ks), arity, name)


def _check_prob(p: float, what: str = "p") -> None:
    if not 0.0 <= p <= 1.0:
        raise NoiseError(f"{what}={p} outside [0, 1]")


def depolarizing(p: float, arity: int = 1) -> NoiseChannel:
    _check_prob(p)
    if arity not in (1, 2):
        raise NoiseError("depolarizing arity must be 1 or 2")
    strings = pauli_strings(arity)
    share = p / (len(strings) - 1)
    weights = {s: (1 - p if set(s) == {"I"} else share) for s in strings}
    return _pauli_channel(weights, arity, f"depol{arity}")


def decay_probability(t: float, T: float) -> float:
    if t < 0 or T <= 0:
        raise NoiseError("need t >= 0 and T > 0")
    if math.isinf(t):
        return 1.0
    return -math.expm1(-t / T)


def gad(t: float, T1: float) -> NoiseChannel:
    """Generalized amplitude damping at infinite temperature."""
    g = decay_probability(t, T1)
    s = 1 / math.sqrt(2)
    ks = (
        s * np.array([[1, 0], [0, math.sqrt(1 - g)]]),
        s * np.array([[0, math.sqrt(g)], [0, 0]]),
        s * np.array([[math.sqrt(1 - g), 0], [0, 1]]),
        s * np.array([[0, 0], [math.sqrt(g), 0]]),
    )
    return NoiseChannel(ks, 1, "gad")


def phase_damping(t: float, T2: float) -> NoiseChannel:
    g = decay_probability(t, T2)
    ks = (np.array([[1, 0], [0, math.sqrt(1 - g)]]), np.array([[0, 0], [0, math.sqrt(g)]]))
    return NoiseChannel(ks, 1, "pd")


def decoherence(t: float, T: float) -> NoiseChannel:
    """GAD followed by PD over duration t with equal T1 = T2 = T."""
    return gad(t, T).then(phase_damping(t, T))


def z_dephasing(p: float, name: str = "dephase") -> NoiseChannel:
    _check_prob(p)
    return _pauli_channel({"I": 1 - p, "Z": p}, 1, name)


def prep_dephasing(f_prep: float) -> NoiseChannel:
    if not 0.5 <= f_prep <= 1.0:
        raise NoiseError("f_prep must lie in [0.5, 1]")
    return z_dephasing(1 - f_prep, "prep")


def double_excitation_dephasing(p_ee: float) -> NoiseChannel:
    return z_dephasing(p_ee, "double_excitation")


def photon_loss(eta: float) -> NoiseChannel:
    """Amplitude damping of a photon-occupancy mode with survival probability eta."""
    _check_prob(eta, "eta")
    ks = (np.array([[1, 0], [0, math.sqrt(eta)]]), np.array([[0, math.sqrt(1 - eta)], [0, 0]]))
    return NoiseChannel(ks, 1, "loss")


def apply_channel(rho: DensityMatrix, channel: NoiseChannel, targets: Sequence) -> DensityMatrix:
    if len(targets) != channel.arity:
        raise NoiseError("number of targets differs from channel arity")
    return apply_kraus(rho, channel.kraus, targets)


# Parameters


@dataclass(frozen=True)
class HardwareParams:
    alpha: float = 0.025
    alpha_base: float | None = None
    alpha_distil: float | None = None
    eta_ph: float = 1.0
    mu_i: float = 1.0
    f_prep: float = 1.0
    p_de: float = 0.0
    pnr: bool = True
    p_g: float = 0.0
    p_m: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        for key in ("alpha", "eta_ph", "mu_i", "f_prep", "p_de", "p_g", "p_m"):
            _check_prob(getattr(self, key), key)
        for key in ("alpha_base", "alpha_distil"):
            v = getattr(self, key)
            if v is not None:
                _check_prob(v, key)

    @property
    def mu(self) -> float:
        return math.sqrt(self.mu_i)

    @property
    def base_alpha(self) -> float:
        return self.alpha if self.alpha_base is None else self.alpha_base

    @property
    def distil_alpha(self) -> float:
        return self.alpha if self.alpha_distil is None else self.alpha_distil

    def with_(self, **kw) -> "HardwareParams":
        return replace(self, **kw)

    def with_p(self, p: float) -> "HardwareParams":
        return replace(self, p_g=p, p_m=p)

    @property
    def ideal_optics(self) -> bool:
        return self.eta_ph == 1 and self.mu_i == 1 and self.f_prep == 1 and self.p_de == 0


@dataclass(frozen=True)
class TimingParams:
    T_link: float = 1e6
    T_idle: float = 1e6
    t_link: float = 1.0
    t_meas: float = 1.0
    t_p_comm: float = 0.01
    t_p_mem: float = 100.0
    t_2q: float = 100.0
    t_swap: float = 300.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v > 0:
                raise NoiseError(f"timing value {k} must be positive")

    def coherence(self, regime: str) -> float:
        if regime == "linking":
            return self.T_link
        if regime == "idle":
            return self.T_idle
        raise NoiseError(f"unknown regime {regime!r}")

    def with_(self, **kw) -> "TimingParams":
        return replace(self, **kw)


@lru_cache(maxsize=1)
def _hardware_rows() -> dict:
    text = resources.files("emitqec").joinpath("data/hardware_sets.csv").read_text()
    rows = {}
    for r in csv.DictReader(text.splitlines()):
        rows[r["name"]] = {k: float(r[k]) for k in ("f_prep", "p_de", "mu_i", "eta_ph")}
    return rows


def hardware_set_names() -> list[str]:
    return list(_hardware_rows())


def hardware_set(name: str, **overrides) -> HardwareParams:
    rows = _hardware_rows()
    if name not in rows:
        raise NoiseError(f"unknown hardware set {name!r}")
    return HardwareParams(name=name, **rows[name]).with_(**overrides)


# Time-scheduled decoherence


@dataclass
class QubitClock:
    """Elapsed time per qubit label, advanced as operations are scheduled."""

    elapsed: dict = field(default_factory=dict)
    regime: dict = field(default_factory=dict)

    def reset(self, label) -> None:
        self.elapsed[label] = 0.0
        self.regime[label] = "idle"

    def advance(self, label, dt: float, regime: str) -> None:
        if dt < 0:
            raise NoiseError("dt must be non-negative")
        self.elapsed[label] = self.elapsed.get(label, 0.0) + dt
        self.regime[label] = regime


def advance_clock_and_decohere(
    rho: DensityMatrix,
    qubit,
    dt: float,
    regime: str,
    timing: TimingParams,
    clock: QubitClock | None = None,
) -> DensityMatrix:
    try:
        rho.index(qubit)
    except StateError:
        raise NoiseError(f"unknown qubit {qubit!r}") from None
    if clock is not None:
        clock.advance(qubit, dt, regime)
    if dt == 0:
        return rho
    ch = decoherence(dt, timing.coherence(regime))
    return apply_kraus(rho, ch.kraus, [qubit])


def pauli_weights_1q_decoherence(t: float, T: float) -> dict:
    """Pauli-twirled weights of GAD then PD for duration t (diagonal PTM)."""
    g = decay_probability(t, T)
    # PTM diagonal: (1, l_x, l_x, l_z) with l_x = sqrt(1-g)*sqrt(1-g), l_z = 1-g
    lx = (1 - g)
    lz = 1 - g
    pI = (1 + 2 * lx + lz) / 4
    pX = (1 - lz) / 4
    pY = (1 - lz) / 4
    pZ = (1 - 2 * lx + lz) / 4
    return {"I": pI, "X": pX, "Y": pY, "Z": pZ}
