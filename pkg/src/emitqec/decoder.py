"""Union-Find decoder front end.

The compiled kernel is used when it imports; otherwise the pure-Python
implementation with the same interface is selected. Set EMITQEC_PURE_PYTHON=1
to force the fallback.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _uf_py

if os.environ.get("EMITQEC_PURE_PYTHON") == "1":
    _kernel = None
else:
    try:
        from . import _uf_kernel as _kernel
    except ImportError:  # extension not built
        _kernel = None

BACKEND = "cython" if _kernel is not None else "python"
MIN_WEIGHT = 8


class DecoderError(ValueError):
    pass


def integer_weights(probs, min_weight: int = MIN_WEIGHT, p_floor: float = 1e-15) -> np.ndarray:
    """Integer edge weights round(k * -ln p), with k chosen so the smallest weight is min_weight."""
    p = np.clip(np.asarray(probs, dtype=float), p_floor, 0.5)
    lw = -np.log(p)
    base = lw.min()
    if base <= 0:
        # p = 0.5 carries no information; give it the minimum weight
        lw = np.maximum(lw, np.log(2.0))
        base = lw.min()
    kappa = min_weight / base
    return np.maximum(np.rint(kappa * lw), 1).astype(np.int32)


@dataclass
class DecodingGraph:
    n_nodes: int
    eu: np.ndarray
    ev: np.ndarray
    ew: np.ndarray
    eq: np.ndarray
    n_qubits: int

    def __post_init__(self):
        self.eu = np.ascontiguousarray(self.eu, dtype=np.int32)
        self.ev = np.ascontiguousarray(self.ev, dtype=np.int32)
        self.ew = np.ascontiguousarray(self.ew, dtype=np.int32)
        self.eq = np.ascontiguousarray(self.eq, dtype=np.int32)
        n = len(self.eu)
        if not (len(self.ev) == len(self.ew) == len(self.eq) == n):
            raise DecoderError("edge arrays differ in length")
        if n and (self.eu.min() < 0 or self.ev.max() >= self.n_nodes or self.eu.max() >= self.n_nodes):
            raise DecoderError("edge endpoint out of range")
        if n and self.ew.min() < 1:
            raise DecoderError("edge weights must be positive integers")


def decode(graph: DecodingGraph, defects, backend: str | None = None) -> np.ndarray:
    """Correction (data-qubit parity vector) for one defect vector."""
    d = np.asarray(defects, dtype=np.uint8).reshape(1, -1)
    return decode_batch(graph, d, backend)[0]


def decode_batch(graph: DecodingGraph, defects, backend: str | None = None, weights=None) -> np.ndarray:
    """Decode many shots; weights optionally gives per-shot edge weights (shots, edges)."""
    defects = np.ascontiguousarray(defects, dtype=np.uint8)
    if defects.ndim != 2 or defects.shape[1] != graph.n_nodes:
        raise DecoderError("defects must have shape (shots, n_nodes)")
    if np.any(defects.sum(axis=1) % 2):
        raise DecoderError("odd number of defects on a graph without boundary")
    mod = _select(backend)
    ew = graph.ew if weights is None else np.ascontiguousarray(weights, dtype=np.int32)
    return mod.uf_decode_batch(graph.n_nodes, graph.eu, graph.ev, ew, graph.eq, defects, graph.n_qubits)


def _select(backend):
    if backend is None:
        backend = BACKEND
    if backend == "python":
        return _uf_py
    if backend == "cython":
        if _kernel is None:
            raise DecoderError("compiled kernel is not available")
        return _kernel
    raise DecoderError(f"unknown backend {backend!r}")
