"""Critical O(n) loop gas on the hexagonal lattice.

A configuration is a set of disjoint cycles on the honeycomb with weight
x**s * n**l (s occupied edges, l loops).  The state space is generated by
toggling the six edges of a hexagonal face, so the chain acts on face
"spins": an edge is occupied iff the spins on its two sides differ, with
faces that cannot be toggled frozen at spin 0.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Callable, Iterator

import numpy as np
import shapely

from . import _kernels as K
from .geometry import (
    Configuration,
    Domain,
    GeneralizedDisk,
    LoopPath,
    PolygonDomain,
    TAU_GEOM,
)

SQ3 = math.sqrt(3.0)
# vertex offsets at angles 30 + 60k degrees, in units (sqrt3 a / 2, a / 2)
_VDX = np.array([1, 0, -1, -1, 0, 1])
_VDY = np.array([1, 2, 1, -1, -2, -1])
# neighbour across edge k (edge k joins vertex k and k+1)
_NDQ = np.array([0, -1, -1, 0, 1, 1])
_NDR = np.array([1, 1, 0, -1, -1, 0])
_KEY = 1 << 24

MAX_ENUM_EDGES = 24


def critical_x(n: float) -> float:
    """Critical fugacity of the dilute O(n) model on the honeycomb."""
    if not (0 < n <= 2):
        raise ValueError("n must lie in (0, 2]")
    return 1.0 / math.sqrt(2.0 + math.sqrt(2.0 - n))


def _closed_inside(domain: Domain, z: np.ndarray) -> np.ndarray:
    """Strictly inside (by more than the geometric tolerance)."""
    if isinstance(domain, GeneralizedDisk):
        w = domain.canonical_map.apply(z)
        return np.abs(w) < 1 - 1e-12
    poly = domain.boundary_loop.polygon
    inside = shapely.contains_xy(poly, z.real, z.imag)
    near = shapely.dwithin(shapely.points(z.real, z.imag), poly.exterior, TAU_GEOM)
    return inside & ~near


def _bbox(domain: Domain) -> tuple[float, float, float, float]:
    if isinstance(domain, GeneralizedDisk):
        c, r = domain.circle()
        return c.real - r, c.imag - r, c.real + r, c.imag + r
    return domain.boundary_loop.bbox


class HexLattice:
    """Honeycomb cells covering a domain (cells with all vertices inside)."""

    def __init__(self, domain: Domain, spacing: float, origin: complex = 0j):
        self.domain = domain
        self.spacing = float(spacing)
        self.origin = complex(origin)
        a = self.spacing
        x0, y0, x1, y1 = _bbox(domain)
        x0 -= self.origin.real
        x1 -= self.origin.real
        y0 -= self.origin.imag
        y1 -= self.origin.imag
        r_lo = int(math.floor(y0 / (1.5 * a))) - 1
        r_hi = int(math.ceil(y1 / (1.5 * a))) + 1
        qs, rs = [], []
        for r in range(r_lo, r_hi + 1):
            q_lo = int(math.floor(x0 / (SQ3 * a) - r / 2)) - 1
            q_hi = int(math.ceil(x1 / (SQ3 * a) - r / 2)) + 1
            q = np.arange(q_lo, q_hi + 1)
            qs.append(q)
            rs.append(np.full_like(q, r))
        q = np.concatenate(qs)
        r = np.concatenate(rs)
        X = (2 * q + r)[:, None] + _VDX[None, :]
        Y = (3 * r)[:, None] + _VDY[None, :]
        pos = self._pos(X, Y)
        keep = _closed_inside(domain, pos.ravel()).reshape(pos.shape).all(axis=1)
        q, r, X, Y = q[keep], r[keep], X[keep], Y[keep]
        if len(q) == 0:
            raise ValueError("domain too small for the lattice spacing")
        self.cell_q = q
        self.cell_r = r
        ckey = q.astype(np.int64) * _KEY + r
        order = np.argsort(ckey)
        self._cell_keys = ckey[order]
        self._cell_order = order
        vkey = X.astype(np.int64) * _KEY + Y
        ukeys, vinv = np.unique(vkey.ravel(), return_inverse=True)
        self.vertex_keys = ukeys
        self.vertex_X = ukeys // _KEY
        self.vertex_Y = ukeys - self.vertex_X * _KEY
        # recover signed values
        fix = self.vertex_Y > _KEY // 2
        self.vertex_Y = np.where(fix, self.vertex_Y - _KEY, self.vertex_Y)
        self.vertex_X = np.where(fix, self.vertex_X + 1, self.vertex_X)
        self.vertex_pos = self._pos(self.vertex_X, self.vertex_Y)
        cell_verts = vinv.reshape(-1, 6)
        self.cell_verts = cell_verts
        va = cell_verts
        vb = np.roll(cell_verts, -1, axis=1)
        lo, hi = np.minimum(va, vb), np.maximum(va, vb)
        ekey = lo.astype(np.int64) * (len(ukeys) + 1) + hi
        uek, einv = np.unique(ekey.ravel(), return_inverse=True)
        self.cell_edges = einv.reshape(-1, 6)
        E = len(uek)
        self.edge_verts = np.column_stack([uek // (len(ukeys) + 1), uek % (len(ukeys) + 1)]).astype(np.int64)
        edge_cells = np.full((E, 2), -1, np.int64)
        flat_e = self.cell_edges.ravel()
        flat_c = np.repeat(np.arange(len(q)), 6)
        o = np.argsort(flat_e, kind="stable")
        fe, fc = flat_e[o], flat_c[o]
        first = np.ones(len(fe), bool)
        first[1:] = fe[1:] != fe[:-1]
        edge_cells[fe[first], 0] = fc[first]
        edge_cells[fe[~first], 1] = fc[~first]
        self.edge_cells = edge_cells
        # edges with a missing neighbour are boundary edges of the cell set
        self.interior_edges = edge_cells[:, 1] >= 0

    def _pos(self, X, Y) -> np.ndarray:
        a = self.spacing
        return self.origin + X * (SQ3 * a / 2) + 1j * Y * (a / 2)

    @property
    def n_cells(self) -> int:
        return len(self.cell_q)

    @property
    def n_edges(self) -> int:
        return len(self.edge_verts)

    def cell_centers(self) -> np.ndarray:
        a = self.spacing
        return self.origin + SQ3 * a * (self.cell_q + self.cell_r / 2) + 1j * 1.5 * a * self.cell_r

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        p = self.vertex_pos[self.edge_verts]
        return 0.5 * (p[:, 0] + p[:, 1])

    @cached_property
    def edge_lines(self) -> np.ndarray:
        p = self.vertex_pos[self.edge_verts]
        coords = np.stack([np.column_stack([p[:, 0].real, p[:, 0].imag]),
                           np.column_stack([p[:, 1].real, p[:, 1].imag])], axis=1)
        return shapely.linestrings(coords)

    def edges_near(self, geom, tol: float = TAU_GEOM) -> np.ndarray:
        """Root edges whose closed segment lies within ``tol`` of ``geom``."""
        return shapely.dwithin(self.edge_lines, geom, tol)

    def edges_crossing_ray(self, p: complex) -> np.ndarray:
        """Edges crossing the horizontal ray from p to +infinity (half-open rule)."""
        z = self.vertex_pos[self.edge_verts]
        a, b = z[:, 0], z[:, 1]
        cond = (a.imag > p.imag) != (b.imag > p.imag)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (p.imag - a.imag) / (b.imag - a.imag)
            xc = a.real + t * (b.real - a.real)
        return cond & (xc > p.real)

    def fingerprint(self) -> dict:
        return {
            "spacing": self.spacing,
            "origin": [self.origin.real, self.origin.imag],
            "domain": self.domain.to_json(),
        }


class LatticeSpec:
    """Allowed-edge subset of a root lattice, with derived kernel arrays.

    Movable faces are cells whose six edges are all allowed; loops live on
    the edges of movable faces.  Edges on the outer rim of the cell set are
    never allowed, so loops stay off the domain boundary.
    """

    def __init__(self, lattice: HexLattice, allowed: np.ndarray | None = None,
                 domain: Domain | None = None, label: str = ""):
        self.lattice = lattice
        base = lattice.interior_edges.copy()
        if allowed is not None:
            base &= np.asarray(allowed, bool)
        self.allowed = base
        self.domain = lattice.domain if domain is None else domain
        self.label = label
        movable = base[lattice.cell_edges].all(axis=1)
        self.face_root = np.flatnonzero(movable)
        F = len(self.face_root)
        if F == 0:
            raise ValueError("lattice spec has no movable face (non-ergodic mask)")
        fe_root = lattice.cell_edges[self.face_root]
        self.edge_root = np.unique(fe_root)
        E = len(self.edge_root)
        fv_root = lattice.cell_verts[self.face_root]
        self.vert_root = np.unique(lattice.edge_verts[self.edge_root])
        self.face_edges = np.searchsorted(self.edge_root, fe_root).astype(np.int64)
        self.face_verts = np.searchsorted(self.vert_root, fv_root).astype(np.int64)
        self.edge_verts = np.searchsorted(self.vert_root, lattice.edge_verts[self.edge_root]).astype(np.int64)
        V = len(self.vert_root)
        ve = np.full((V, 3), -1, np.int64)
        fill = np.zeros(V, np.int64)
        flat_v = self.edge_verts.ravel()
        flat_e = np.repeat(np.arange(E), 2)
        o = np.argsort(flat_v, kind="stable")
        for v, e in zip(flat_v[o], flat_e[o]):
            ve[v, fill[v]] = e
            fill[v] += 1
        self.vert_edges = ve
        spokes = np.full((F, 6), -1, np.int64)
        for k in range(6):
            v = self.face_verts[:, k]
            e_out = self.face_edges[:, k]
            e_in = self.face_edges[:, (k - 1) % 6]
            cand = ve[v]
            ok = (cand >= 0) & (cand != e_out[:, None]) & (cand != e_in[:, None])
            has = ok.any(axis=1)
            idx = np.argmax(ok, axis=1)
            spokes[has, k] = cand[has, idx[has]]
        self.face_spokes = spokes
        root_to_face = np.full(lattice.n_cells, -1, np.int64)
        root_to_face[self.face_root] = np.arange(F)
        ec = lattice.edge_cells[self.edge_root]
        self.edge_faces = np.where(ec >= 0, root_to_face[np.maximum(ec, 0)], -1)

    # construction helpers -------------------------------------------------
    @classmethod
    def for_domain(cls, domain: Domain, spacing: float | None = None, cells_across: float | None = None,
                   origin: complex = 0j, label: str = "") -> "LatticeSpec":
        if spacing is None:
            if cells_across is None:
                raise ValueError("give spacing or cells_across")
            x0, y0, x1, y1 = _bbox(domain)
            spacing = max(x1 - x0, y1 - y0) / (SQ3 * cells_across)
        return cls(HexLattice(domain, spacing, origin), label=label)

    def restrict(self, mask: np.ndarray, domain: Domain | None = None, label: str = "") -> "LatticeSpec":
        """Sub-spec using only root edges in ``mask`` (and allowed here)."""
        return LatticeSpec(self.lattice, self.allowed & np.asarray(mask, bool), domain or self.domain, label)

    @property
    def spacing(self) -> float:
        return self.lattice.spacing

    @property
    def n_faces(self) -> int:
        return len(self.face_root)

    @property
    def n_edges(self) -> int:
        return len(self.edge_root)

    @cached_property
    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.lattice.fingerprint(), sort_keys=True).encode())
        h.update(self.edge_root.astype(np.int64).tobytes())
        return h.hexdigest()[:16]

    def edge_positions(self) -> np.ndarray:
        return self.lattice.vertex_pos[self.lattice.edge_verts[self.edge_root]]

    def local_mask(self, root_mask: np.ndarray) -> np.ndarray:
        return np.asarray(root_mask, bool)[self.edge_root]

    def empty_state(self) -> "LoopGasState":
        return LoopGasState(np.zeros(self.n_edges, np.uint8), np.zeros(self.n_faces, np.uint8), 0, 0, self)

    def state_from_root_edges(self, root_edges) -> "LoopGasState":
        """State whose occupied edges are the given root edges."""
        occ = np.zeros(self.n_edges, np.uint8)
        idx = np.searchsorted(self.edge_root, root_edges)
        if np.any(idx >= self.n_edges) or np.any(self.edge_root[np.minimum(idx, self.n_edges - 1)] != root_edges):
            raise ValueError("edges are not active in this spec")
        occ[idx] = 1
        return state_from_occupancy(self, occ)


@dataclass(frozen=True, eq=False)
class LoopGasState:
    """Snapshot of occupied edges (local indices of ``spec``)."""

    occupied: np.ndarray
    spins: np.ndarray
    s: int
    ell: int
    spec: LatticeSpec = field(repr=False)

    def key(self) -> bytes:
        return np.packbits(self.occupied).tobytes()

    def root_edges(self) -> np.ndarray:
        return self.spec.edge_root[self.occupied.astype(bool)]

    @cached_property
    def trace(self):
        return K.trace_loops(self.occupied, self.spec.edge_verts, self.spec.vert_edges)

    @property
    def labels(self) -> np.ndarray:
        return self.trace[0]

    @property
    def n_loops(self) -> int:
        return len(self.trace[3]) - 1


def state_from_occupancy(spec: LatticeSpec, occ: np.ndarray) -> LoopGasState:
    occ = np.asarray(occ, np.uint8)
    if not K.check_state(occ, spec.vert_edges):
        raise ValueError("degree violation: occupied edges do not form cycles")
    spins = _spins_from_occupancy(spec, occ)
    st = LoopGasState(occ, spins, int(occ.sum()), 0, spec)
    object.__setattr__(st, "ell", st.n_loops)
    return st


def _spins_from_occupancy(spec: LatticeSpec, occ: np.ndarray) -> np.ndarray:
    """Face spins by propagation from frozen faces (spin 0)."""
    F = spec.n_faces
    spins = np.full(F, -1, np.int64)
    ef = spec.edge_faces
    # seed: faces adjacent to a frozen face
    queue = []
    for e in range(spec.n_edges):
        a, b = ef[e]
        if (a < 0) != (b < 0):
            f = a if a >= 0 else b
            if spins[f] < 0:
                spins[f] = occ[e]
                queue.append(f)
    face_nb = spec.face_edges
    while queue:
        f = queue.pop()
        for e in face_nb[f]:
            a, b = ef[e]
            g = b if a == f else a
            if g >= 0 and spins[g] < 0:
                spins[g] = spins[f] ^ occ[e]
                queue.append(g)
    spins[spins < 0] = 0
    return spins.astype(np.uint8)


def _loop_path(spec: LatticeSpec, state: LoopGasState, i: int) -> LoopPath:
    _, vseq, eseq, offsets = state.trace
    vs = vseq[offsets[i]:offsets[i + 1]]
    es = eseq[offsets[i]:offsets[i + 1]]
    rv = spec.vert_root[vs]
    return LoopPath(spec.lattice.vertex_pos[rv], trusted=True, edge_ids=spec.edge_root[es], vertex_ids=rv)


def loops_around(state: LoopGasState, p: complex) -> list[LoopPath]:
    """Loops whose interior contains p (p must not lie on a lattice edge)."""
    spec = state.spec
    cache = spec.__dict__.setdefault("_ray_masks", {})
    key = complex(p)
    mask = cache.get(key)
    if mask is None:
        mask = spec.lattice.edges_crossing_ray(key)[spec.edge_root]
        cache[key] = mask
    labels = state.labels
    hit = labels[mask & (state.occupied > 0)]
    if len(hit) == 0:
        return []
    odd = np.flatnonzero(np.bincount(hit, minlength=state.n_loops) % 2 == 1)
    return [_loop_path(spec, state, int(i)) for i in odd]


def extract_loops(state: LoopGasState, spec: LatticeSpec | None = None) -> Configuration:
    """Decompose a state into loops (LoopPath per cycle)."""
    spec = state.spec if spec is None else spec
    loops = [_loop_path(spec, state, i) for i in range(state.n_loops)]
    return Configuration(loops, spec.domain, lattice=spec)


# ---------------------------------------------------------------------------
# sampler


@dataclass(frozen=True)
class SamplerParams:
    n: float = 1.0
    x: float | None = None
    sweeps: int = 1
    thermalization: int | None = None
    seed: int = 0
    cluster: bool | None = None
    debug: bool = False

    def __post_init__(self):
        if not (0 < self.n <= 2):
            raise ValueError("n must lie in (0, 2]")
        if self.x is not None and self.x <= 0:
            raise ValueError("x must be positive")
        if self.sweeps < 0:
            raise ValueError("sweeps must be >= 0")
        if self.thermalization is not None and self.thermalization < 0:
            raise ValueError("thermalization must be >= 0")

    @property
    def fugacity(self) -> float:
        return critical_x(self.n) if self.x is None else float(self.x)

    @property
    def use_cluster(self) -> bool:
        if self.cluster is None:
            return self.n == 1.0
        if self.cluster and self.n != 1.0:
            raise ValueError("cluster moves are only valid at n = 1")
        return bool(self.cluster)

    def child(self, *key: int, **changes) -> "SamplerParams":
        seed = derive_seed(self.seed, *key)
        return SamplerParams(**{**asdict(self), "seed": seed, **changes})


def derive_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed) % (1 << 64), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(2, np.uint32).view(np.uint64)[0])


def integrated_time(x: np.ndarray) -> float:
    """Integrated autocorrelation time (initial positive sequence)."""
    from .estimators import autocorrelation_time

    return autocorrelation_time(x)


class Sampler:
    """Markov chain on loop-gas states of one lattice spec."""

    def __init__(self, spec: LatticeSpec, params: SamplerParams | None = None):
        self.spec = spec
        self.params = SamplerParams() if params is None else params
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(self.params.seed) % (1 << 64))))
        x = self.params.fugacity
        self.logx = math.log(x)
        self.logn = math.log(self.params.n)
        self.track_loops = self.params.n != 1.0
        self.use_cluster = self.params.use_cluster
        self.p_bond = 1.0 - x
        self.occ = np.zeros(spec.n_edges, np.uint8)
        self.spins = np.zeros(spec.n_faces, np.uint8)
        self.s = 0
        self.ell = 0
        self.sweeps_done = 0
        self.accepted = 0
        self.thermalized = False
        self.thermalization_sweeps = 0
        self.s_trace: list[int] = []

    def spawn(self, spec: LatticeSpec, *key: int, **changes) -> "Sampler":
        return Sampler(spec, self.params.child(*key, **changes))

    def sweep(self, count: int = 1) -> None:
        sp = self.spec
        for _ in range(count):
            if self.use_cluster:
                ub = self.rng.random(sp.n_edges)
                uf = self.rng.random(sp.n_faces + 1)
                self.s = int(K.cluster_sweep(sp.edge_faces, self.occ, self.spins, self.p_bond, ub, uf))
            u = self.rng.random(sp.n_faces)
            s, ell, acc = K.metropolis_sweep(sp.face_edges, sp.face_verts, sp.face_spokes, sp.edge_verts,
                                             sp.vert_edges, self.occ, self.spins, self.logx, self.logn, u,
                                             self.s, self.ell, self.track_loops, self.params.debug)
            self.s, self.ell = int(s), int(ell)
            self.accepted += int(acc)
            self.sweeps_done += 1

    def thermalize(self) -> int:
        if self.thermalized:
            return self.thermalization_sweeps
        t = self.params.thermalization
        if t is not None:
            self.sweep(t)
            done = t
        else:
            done = self._auto_thermalize()
        self.thermalized = True
        self.thermalization_sweeps = done
        return done

    def _auto_thermalize(self, chunk: int = 50, cap: int = 20000, minimum: int = 50) -> int:
        trace = []
        done = 0
        while done < cap:
            for _ in range(chunk):
                self.sweep()
                trace.append(self.s)
            done += chunk
            tail = np.asarray(trace[len(trace) // 2:], float)
            tau = integrated_time(tail)
            if done >= max(minimum, 10 * tau) and len(tail) >= 10 * tau:
                break
        self.s_trace = trace
        return done

    def snapshot(self) -> LoopGasState:
        st = LoopGasState(self.occ.copy(), self.spins.copy(), self.s, self.ell, self.spec)
        if not self.track_loops:
            object.__setattr__(st, "ell", st.n_loops)
        return st

    def states(self, count: int | None = None) -> Iterator[LoopGasState]:
        """Emit states separated by ``params.sweeps`` sweeps."""
        self.thermalize()
        i = 0
        while count is None or i < count:
            self.sweep(self.params.sweeps)
            yield self.snapshot()
            i += 1

    def configurations(self, count: int | None = None) -> Iterator[Configuration]:
        for st in self.states(count):
            yield extract_loops(st)

    def manifest(self, s_series=None, l_series=None) -> dict:
        out = {
            "n": self.params.n,
            "x": self.params.fugacity,
            "spec_hash": self.spec.hash,
            "seed": int(self.params.seed),
            "sweeps": self.params.sweeps,
            "thermalization": self.thermalization_sweeps,
            "cluster": self.use_cluster,
            "faces": self.spec.n_faces,
            "edges": self.spec.n_edges,
        }
        if s_series is not None and len(s_series) > 2:
            out["tau_s"] = integrated_time(np.asarray(s_series, float))
        if l_series is not None and len(l_series) > 2:
            out["tau_ell"] = integrated_time(np.asarray(l_series, float))
        return out


def sample_config(spec: LatticeSpec, params: SamplerParams) -> Iterator[LoopGasState]:
    return Sampler(spec, params).states()


# ---------------------------------------------------------------------------
# exact enumeration


def enumerate_states(spec: LatticeSpec) -> Iterator[LoopGasState]:
    """All cycle configurations of a tiny spec (one per face subset)."""
    if spec.n_edges > MAX_ENUM_EDGES:
        raise ValueError(f"patch too large for enumeration ({spec.n_edges} > {MAX_ENUM_EDGES} edges)")
    F = spec.n_faces
    fe = spec.face_edges
    for bits in itertools.product((0, 1), repeat=F):
        spins = np.array(bits, np.uint8)
        occ = np.zeros(spec.n_edges, np.uint8)
        for f in np.flatnonzero(spins):
            occ[fe[f]] ^= 1
        st = LoopGasState(occ, spins, int(occ.sum()), 0, spec)
        object.__setattr__(st, "ell", st.n_loops)
        yield st


def exact_enumerate(spec: LatticeSpec, n: float, x: float, event) -> float:
    """Exact probability of ``event`` under the weight x**s n**l.

    ``event`` is an Event or a predicate on LoopGasState.
    """
    if spec.n_edges > MAX_ENUM_EDGES:
        raise ValueError(f"patch too large for enumeration ({spec.n_edges} > {MAX_ENUM_EDGES} edges)")
    pred = _as_predicate(event)
    num, den = [], []
    for st in enumerate_states(spec):
        w = x ** st.s * n ** st.ell
        den.append(w)
        if pred(st):
            num.append(w)
    return math.fsum(num) / math.fsum(den)


def _as_predicate(event) -> Callable[[LoopGasState], bool]:
    if callable(event) and not hasattr(event, "atoms"):
        return event
    from .events import evaluate

    return lambda st: evaluate(event, extract_loops(st))


def patch_spec(cells: list[tuple[int, int]], spacing: float = 1.0, origin: complex = 0j) -> LatticeSpec:
    """Spec whose movable faces are exactly the given axial cells.

    The root domain is a polygon hugging the cells and their neighbours,
    with allowed edges restricted to the listed cells' edges.
    """
    a = spacing
    cells = list(dict.fromkeys(cells))
    ring = set(cells)
    for q, r in cells:
        for k in range(6):
            ring.add((q + int(_NDQ[k]), r + int(_NDR[k])))
    centers = [origin + SQ3 * a * (q + r / 2) + 1j * 1.5 * a * r for q, r in ring]
    hexes = [shapely.Polygon([(c.real + 1.2 * a * math.cos(math.pi / 6 + math.pi / 3 * k),
                               c.imag + 1.2 * a * math.sin(math.pi / 6 + math.pi / 3 * k)) for k in range(6)])
             for c in centers]
    hull = shapely.unary_union(hexes).buffer(0.05 * a).exterior
    coords = np.asarray(hull.coords)[:-1]
    dom = PolygonDomain(LoopPath(coords[:, 0] + 1j * coords[:, 1]), "patch")
    lat = HexLattice(dom, a, origin)
    want = {(int(q), int(r)) for q, r in cells}
    ok = np.array([(int(q), int(r)) in want for q, r in zip(lat.cell_q, lat.cell_r)])
    allowed = np.zeros(lat.n_edges, bool)
    allowed[lat.cell_edges[ok].ravel()] = True
    spec = LatticeSpec(lat, allowed, dom, "patch")
    got = {(int(lat.cell_q[i]), int(lat.cell_r[i])) for i in spec.face_root}
    if got != want:
        raise ValueError("patch construction failed")
    return spec
