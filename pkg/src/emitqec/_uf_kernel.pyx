# cython: boundscheck=False, wraparound=False, cdivision=True
"""Weighted Union-Find decoder with peeling, compiled kernel.

Same algorithm and edge conventions as the pure-Python module _uf_py.
"""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline int _find(int* parent, int x) noexcept nogil:
    cdef int root = x
    cdef int nxt
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


cdef int _decode_one(int n_nodes, int n_edges, const int* eu, const int* ev, const int* ew,
                     const int* eq, const unsigned char* defects, unsigned char* corr,
                     int* parent, int* rank, unsigned char* odd, int* growth,
                     unsigned char* fused, int* cand, int* adj_start, int* adj,
                     int* parent_edge, int* order, unsigned char* seen,
                     unsigned char* dwork) noexcept nogil:
    cdef int i, e, ru, rv, k, need, step, n_cand, n_odd = 0, x, y, root, head, tail, p
    for i in range(n_nodes):
        parent[i] = i
        rank[i] = 0
        odd[i] = defects[i]
        n_odd += defects[i]
    for e in range(n_edges):
        growth[e] = 0
        fused[e] = 0
    while n_odd > 0:
        n_cand = 0
        step = -1
        for e in range(n_edges):
            if fused[e]:
                continue
            ru = _find(parent, eu[e])
            rv = _find(parent, ev[e])
            if ru == rv:
                continue
            k = odd[ru] + odd[rv]
            if k == 0:
                continue
            need = (ew[e] - growth[e] + k - 1) // k
            cand[n_cand] = e
            n_cand += 1
            if step < 0 or need < step:
                step = need
        if n_cand == 0:
            return -1
        # grow, then merge the edges that became full
        for i in range(n_cand):
            e = cand[i]
            ru = _find(parent, eu[e])
            rv = _find(parent, ev[e])
            growth[e] += (odd[ru] + odd[rv]) * step
        for i in range(n_cand):
            e = cand[i]
            if growth[e] < ew[e]:
                continue
            fused[e] = 1
            ru = _find(parent, eu[e])
            rv = _find(parent, ev[e])
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

    # adjacency of fused edges (CSR)
    for i in range(n_nodes + 1):
        adj_start[i] = 0
    for e in range(n_edges):
        if fused[e]:
            adj_start[eu[e] + 1] += 1
            adj_start[ev[e] + 1] += 1
    for i in range(n_nodes):
        adj_start[i + 1] += adj_start[i]
    for i in range(n_nodes):
        parent[i] = adj_start[i]
    for e in range(n_edges):
        if fused[e]:
            adj[parent[eu[e]]] = e
            parent[eu[e]] += 1
            adj[parent[ev[e]]] = e
            parent[ev[e]] += 1

    for i in range(n_nodes):
        seen[i] = 0
        parent_edge[i] = -1
        dwork[i] = defects[i]
    tail = 0
    for root in range(n_nodes):
        if seen[root] or adj_start[root] == adj_start[root + 1]:
            continue
        seen[root] = 1
        head = tail
        order[tail] = root
        tail += 1
        while head < tail:
            x = order[head]
            head += 1
            for p in range(adj_start[x], adj_start[x + 1]):
                e = adj[p]
                y = ev[e] if eu[e] == x else eu[e]
                if not seen[y]:
                    seen[y] = 1
                    parent_edge[y] = e
                    order[tail] = y
                    tail += 1
    for i in range(tail - 1, -1, -1):
        x = order[i]
        e = parent_edge[x]
        if e < 0 or not dwork[x]:
            continue
        dwork[x] = 0
        y = ev[e] if eu[e] == x else eu[e]
        dwork[y] ^= 1
        if eq[e] >= 0:
            corr[eq[e]] ^= 1
    for i in range(n_nodes):
        if dwork[i]:
            return -2
    return 0


def uf_decode_batch(int n_nodes, eu, ev, ew, eq, defects, int n_qubits):
    cdef int[::1] u = np.ascontiguousarray(eu, dtype=np.int32)
    cdef int[::1] v = np.ascontiguousarray(ev, dtype=np.int32)
    cdef int[:, ::1] w = np.ascontiguousarray(np.atleast_2d(ew), dtype=np.int32)
    cdef int[::1] q = np.ascontiguousarray(eq, dtype=np.int32)
    cdef unsigned char[:, ::1] dfc = np.ascontiguousarray(defects, dtype=np.uint8)
    cdef int n_shots = dfc.shape[0]
    cdef int n_edges = u.shape[0]
    if dfc.shape[1] != n_nodes:
        raise ValueError("defect array does not match node count")
    if w.shape[1] != n_edges or w.shape[0] not in (1, n_shots):
        raise ValueError("weight array does not match edges or shots")
    cdef int per_shot = w.shape[0] > 1
    out_arr = np.zeros((n_shots, n_qubits), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef int s, j, status = 0, any_defect
    cdef int* parent = <int*>malloc(n_nodes * sizeof(int))
    cdef int* rank = <int*>malloc(n_nodes * sizeof(int))
    cdef unsigned char* odd = <unsigned char*>malloc(n_nodes)
    cdef int* growth = <int*>malloc(n_edges * sizeof(int))
    cdef unsigned char* fused = <unsigned char*>malloc(n_edges)
    cdef int* cand = <int*>malloc(n_edges * sizeof(int))
    cdef int* adj_start = <int*>malloc((n_nodes + 1) * sizeof(int))
    cdef int* adj = <int*>malloc(2 * n_edges * sizeof(int) + sizeof(int))
    cdef int* parent_edge = <int*>malloc(n_nodes * sizeof(int))
    cdef int* order = <int*>malloc(n_nodes * sizeof(int))
    cdef unsigned char* seen = <unsigned char*>malloc(n_nodes)
    cdef unsigned char* dwork = <unsigned char*>malloc(n_nodes)
    try:
        with nogil:
            for s in range(n_shots):
                any_defect = 0
                for j in range(n_nodes):
                    if dfc[s, j]:
                        any_defect = 1
                        break
                if not any_defect:
                    continue
                status = _decode_one(n_nodes, n_edges, &u[0], &v[0], &w[s if per_shot else 0, 0], &q[0], &dfc[s, 0],
                                     &out[s, 0], parent, rank, odd, growth, fused, cand,
                                     adj_start, adj, parent_edge, order, seen, dwork)
                if status != 0:
                    break
    finally:
        free(parent); free(rank); free(odd); free(growth); free(fused); free(cand)
        free(adj_start); free(adj); free(parent_edge); free(order); free(seen); free(dwork)
    if status == -1:
        raise RuntimeError("odd cluster cannot grow; defects cannot be matched")
    if status == -2:
        raise RuntimeError("peeling left unmatched defects")
    return out_arr


def uf_decode(int n_nodes, eu, ev, ew, eq, defects, int n_qubits):
    d = np.asarray(defects, dtype=np.uint8).reshape(1, -1)
    return uf_decode_batch(n_nodes, eu, ev, ew, eq, d, n_qubits)[0]
