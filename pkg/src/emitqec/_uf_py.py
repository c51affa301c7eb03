"""Weighted Union-Find decoder with peeling, pure-Python implementation.

The graph is given as edge arrays (u, v, weight, qubit); qubit < 0 marks an
edge that carries no data-qubit correction (a time edge). Clusters grow by one
unit per odd side per step until every cluster holds an even number of
defects; the spanning forest of fully grown edges is then peeled.
"""
from __future__ import annotations

import numpy as np


def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


def uf_decode(n_nodes, eu, ev, ew, eq, defects, n_qubits):
    eu = np.asarray(eu)
    ev = np.asarray(ev)
    ew = np.asarray(ew)
    eq = np.asarray(eq)
    n_edges = len(eu)
    parent = list(range(n_nodes))
    rank = [0] * n_nodes
    odd = [int(b) for b in defects]
    growth = [0] * n_edges
    fused = [False] * n_edges
    n_odd = sum(odd)
    while n_odd:
        # boundary edges of odd clusters and the smallest step that fuses one
        cand = []
        step = None
        for e in range(n_edges):
            if fused[e]:
                continue
            ru, rv = _find(parent, eu[e]), _find(parent, ev[e])
            if ru == rv:
                continue
            k = odd[ru] + odd[rv]
            if k == 0:
                continue
            need = -(-(ew[e] - growth[e]) // k)
            cand.append((e, k))
            if step is None or need < step:
                step = need
        if not cand:
            raise RuntimeError("odd cluster cannot grow; defects cannot be matched")
        grown = []
        for e, k in cand:
            growth[e] += k * step
            if growth[e] >= ew[e]:
                grown.append(e)
        for e in grown:
            fused[e] = True
            ru, rv = _find(parent, eu[e]), _find(parent, ev[e])
            if ru == rv:
                continue
            n_odd -= odd[ru] + odd[rv]
            if rank[ru] < rank[rv]:
                ru, rv = rv, ru
            parent[rv] = ru
            if rank[ru] == rank[rv]:
                rank[ru] += 1
            odd[ru] ^= odd[rv]
            n_odd += odd[ru]
    return _peel(n_nodes, eu, ev, eq, fused, defects, n_qubits)


def _peel(n_nodes, eu, ev, eq, fused, defects, n_qubits):
    adj = [[] for _ in range(n_nodes)]
    for e in range(len(eu)):
        if fused[e]:
            adj[eu[e]].append(e)
            adj[ev[e]].append(e)
    seen = [False] * n_nodes
    parent_edge = [-1] * n_nodes
    order = []
    for root in range(n_nodes):
        if seen[root] or not adj[root]:
            continue
        seen[root] = True
        queue = [root]
        head = 0
        while head < len(queue):
            x = queue[head]
            head += 1
            order.append(x)
            for e in adj[x]:
                y = ev[e] if eu[e] == x else eu[e]
                if not seen[y]:
                    seen[y] = True
                    parent_edge[y] = e
                    queue.append(y)
    d = [int(b) for b in defects]
    corr = np.zeros(n_qubits, dtype=np.uint8)
    for x in reversed(order):
        e = parent_edge[x]
        if e < 0 or not d[x]:
            continue
        d[x] = 0
        y = ev[e] if eu[e] == x else eu[e]
        d[y] ^= 1
        if eq[e] >= 0:
            corr[eq[e]] ^= 1
    if any(d):
        raise RuntimeError("peeling left unmatched defects")
    return corr


def uf_decode_batch(n_nodes, eu, ev, ew, eq, defects, n_qubits):
    defects = np.asarray(defects, dtype=np.uint8)
    ew = np.atleast_2d(ew)
    out = np.zeros((defects.shape[0], n_qubits), dtype=np.uint8)
    for i in range(defects.shape[0]):
        if defects[i].any():
            w = ew[i] if ew.shape[0] > 1 else ew[0]
            out[i] = uf_decode(n_nodes, eu, ev, w, eq, defects[i], n_qubits)
    return out
