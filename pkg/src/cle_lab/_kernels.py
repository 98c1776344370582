"""Compiled inner loops for the hexagonal loop gas.

Array conventions (local indices of a lattice spec):
  face_edges  (F, 6)  edge k joins face_verts[f, k] and face_verts[f, k+1]
  face_verts  (F, 6)
  face_spokes (F, 6)  third edge at face_verts[f, k], -1 if not active
  edge_verts  (E, 2)
  edge_faces  (E, 2)  movable faces on either side, -1 for a frozen side
  vert_edges  (V, 3)  -1 padded
"""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def _other(edge_verts, e, v):
    a = edge_verts[e, 0]
    return edge_verts[e, 1] if a == v else a


@numba.njit(cache=True, nogil=True)
def _count_cycles(S, ext, inn):
    seen = np.zeros(6, np.bool_)
    c = 0
    for k in range(6):
        if not S[k] or seen[k]:
            continue
        c += 1
        cur = k
        while True:
            seen[cur] = True
            nxt = ext[cur]
            seen[nxt] = True
            cur = inn[nxt]
            if cur == k:
                break
    return c


@numba.njit(cache=True, nogil=True)
def _inner_pairing(S, h, flipped):
    inn = np.full(6, -1, np.int64)
    for k in range(6):
        if not S[k]:
            continue
        hk = h[k] ^ flipped
        if hk:
            j = (k + 1) % 6
            while not S[j]:
                j = (j + 1) % 6
        else:
            j = (k + 5) % 6
            while not S[j]:
                j = (j + 5) % 6
        inn[k] = j
    return inn


@numba.njit(cache=True, nogil=True)
def delta_loops(f, face_edges, face_verts, face_spokes, edge_verts, vert_edges, occ):
    """Change in loop count if face f were toggled."""
    h = np.zeros(6, np.uint8)
    S = np.zeros(6, np.bool_)
    hs = 0
    ns = 0
    for k in range(6):
        h[k] = occ[face_edges[f, k]]
        hs += h[k]
        sp = face_spokes[f, k]
        if sp >= 0 and occ[sp]:
            S[k] = True
            ns += 1
    if ns == 0:
        return 1 if hs == 0 else -1
    ext = np.full(6, -1, np.int64)
    for k in range(6):
        if not S[k] or ext[k] >= 0:
            continue
        prev = face_spokes[f, k]
        v = _other(edge_verts, prev, face_verts[f, k])
        while True:
            j = -1
            for t in range(6):
                if face_verts[f, t] == v:
                    j = t
                    break
            if j >= 0:
                ext[k] = j
                ext[j] = k
                break
            nxt = -1
            for t in range(3):
                e2 = vert_edges[v, t]
                if e2 >= 0 and e2 != prev and occ[e2]:
                    nxt = e2
                    break
            if nxt < 0:
                raise RuntimeError("degree violation while tracing")
            v = _other(edge_verts, nxt, v)
            prev = nxt
    before = _count_cycles(S, ext, _inner_pairing(S, h, 0))
    after = _count_cycles(S, ext, _inner_pairing(S, h, 1))
    return after - before


@numba.njit(cache=True, nogil=True)
def _check_degrees(f, face_verts, vert_edges, occ):
    for k in range(6):
        v = face_verts[f, k]
        d = 0
        for t in range(3):
            e = vert_edges[v, t]
            if e >= 0:
                d += occ[e]
        if d != 0 and d != 2:
            raise RuntimeError("plaquette update broke the degree invariant")


@numba.njit(cache=True, nogil=True)
def metropolis_sweep(face_edges, face_verts, face_spokes, edge_verts, vert_edges,
                     occ, spins, logx, logn, u, s, ell, track_loops, debug):
    """One sequential pass of plaquette Metropolis updates.

    Returns the updated (s, ell, accepted).
    """
    F = face_edges.shape[0]
    acc = 0
    for f in range(F):
        k_occ = 0
        for k in range(6):
            k_occ += occ[face_edges[f, k]]
        ds = 6 - 2 * k_occ
        dl = 0
        if track_loops:
            dl = delta_loops(f, face_edges, face_verts, face_spokes, edge_verts, vert_edges, occ)
        logr = ds * logx + dl * logn
        if logr >= 0.0 or u[f] < np.exp(logr):
            for k in range(6):
                e = face_edges[f, k]
                occ[e] ^= 1
            spins[f] ^= 1
            s += ds
            ell += dl
            acc += 1
            if debug:
                _check_degrees(f, face_verts, vert_edges, occ)
    return s, ell, acc


@numba.njit(cache=True, nogil=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@numba.njit(cache=True, nogil=True)
def cluster_sweep(edge_faces, occ, spins, p_bond, u_bond, u_flip):
    """Swendsen-Wang update of the face spins (n = 1 only).

    Frozen faces are a single ghost node with spin 0 that never flips.
    Returns the new occupied-edge count.
    """
    F = spins.shape[0]
    E = edge_faces.shape[0]
    parent = np.arange(F + 1)
    for e in range(E):
        a = edge_faces[e, 0]
        b = edge_faces[e, 1]
        sa = spins[a] if a >= 0 else 0
        sb = spins[b] if b >= 0 else 0
        if sa != sb or u_bond[e] >= p_bond:
            continue
        ia = a if a >= 0 else F
        ib = b if b >= 0 else F
        ra = _find(parent, ia)
        rb = _find(parent, ib)
        if ra != rb:
            parent[ra] = rb
    ghost = _find(parent, F)
    for f in range(F):
        r = _find(parent, f)
        if r != ghost and u_flip[r] < 0.5:
            spins[f] ^= 1
    s = 0
    for e in range(E):
        a = edge_faces[e, 0]
        b = edge_faces[e, 1]
        sa = spins[a] if a >= 0 else 0
        sb = spins[b] if b >= 0 else 0
        o = 1 if sa != sb else 0
        occ[e] = o
        s += o
    return s


@numba.njit(cache=True, nogil=True)
def trace_loops(occ, edge_verts, vert_edges):
    """Decompose occupied edges into cycles.

    Returns (labels, vseq, eseq, offsets): labels[e] is the loop of edge e
    (-1 if empty); loop i visits vseq[offsets[i]:offsets[i+1]] with
    eseq[j] the edge from vseq[j] to the next vertex.
    """
    E = occ.shape[0]
    labels = np.full(E, -1, np.int64)
    vseq = np.empty(E, np.int64)
    eseq = np.empty(E, np.int64)
    offsets = np.zeros(E + 1, np.int64)
    n = 0
    pos = 0
    for e0 in range(E):
        if occ[e0] == 0 or labels[e0] >= 0:
            continue
        start = edge_verts[e0, 0]
        v = start
        e = e0
        while True:
            labels[e] = n
            vseq[pos] = v
            eseq[pos] = e
            pos += 1
            v = _other(edge_verts, e, v)
            if v == start:
                break
            nxt = -1
            for t in range(3):
                e2 = vert_edges[v, t]
                if e2 >= 0 and e2 != e and occ[e2]:
                    nxt = e2
                    break
            if nxt < 0:
                raise RuntimeError("degree violation: open path in state")
            e = nxt
        n += 1
        offsets[n] = pos
    return labels, vseq[:pos], eseq[:pos], offsets[: n + 1]


@numba.njit(cache=True, nogil=True)
def check_state(occ, vert_edges):
    V = vert_edges.shape[0]
    for v in range(V):
        d = 0
        for t in range(3):
            e = vert_edges[v, t]
            if e >= 0:
                d += occ[e]
        if d != 0 and d != 2:
            return False
    return True
