"""Re-randomisation inside chosen loops and restriction components.

Resampling works on the lattice: a sub-spec keeps the parent's edges that
lie inside the chosen region and avoid every conditioned loop, and a fresh
child chain draws the new interior.  Because the sub-spec is an exact edge
subset of the parent, the redraw has exactly the parent's conditional law.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np
import shapely

from .events import Event, SeparationE, evaluate
from .geometry import (
    Configuration,
    Domain,
    LoopPath,
    PolygonDomain,
    TAU_GEOM,
    loop_inside,
    loops_intersect,
)
from .lattice import LatticeSpec, Sampler, extract_loops

DEFAULT_CAP = 10**6


class ResampleError(RuntimeError):
    """Capped rejection loop found no acceptable draw."""


# ---------------------------------------------------------------------------
# choice rules


@dataclass(frozen=True)
class OutermostAroundPoint:
    p: complex

    def __post_init__(self):
        object.__setattr__(self, "p", complex(self.p))


@dataclass(frozen=True)
class LastSurrounding:
    alpha: LoopPath
    beta: LoopPath


ChoiceRule = Union[OutermostAroundPoint, LastSurrounding]


def choose_loop(cfg: Configuration, rule: ChoiceRule) -> int | None:
    """Index of the loop picked by ``rule`` or ``None``."""
    if not cfg.loops:
        return None
    if isinstance(rule, OutermostAroundPoint):
        m = cfg.containing_point(rule.p)
        if not m.any():
            return None
        idx = np.flatnonzero(m)
        return int(idx[np.argmax(cfg.areas[idx])])
    if isinstance(rule, LastSurrounding):
        m = cfg.touching(rule.alpha.ring) & cfg.surrounding(rule.beta)
        if not m.any():
            return None
        idx = np.flatnonzero(m)
        return int(idx[np.argmin(cfg.areas[idx])])
    raise TypeError(f"unknown choice rule {rule!r}")


def same_loop(a: LoopPath, b: LoopPath) -> bool:
    if a.edge_ids is not None and b.edge_ids is not None:
        return set(a.edge_ids.tolist()) == set(b.edge_ids.tolist())
    return a == b


# ---------------------------------------------------------------------------
# sub-lattices


def _root_spec(cfg: Configuration) -> LatticeSpec:
    spec = cfg.lattice
    if spec is None:
        raise ValueError("configuration carries no lattice; resampling needs a sampler state")
    return spec


def _incident(spec: LatticeSpec, vertex_ids) -> np.ndarray:
    lat = spec.lattice
    if vertex_ids is None or len(vertex_ids) == 0:
        return np.zeros(lat.n_edges, bool)
    bad = np.zeros(len(lat.vertex_pos), bool)
    bad[np.asarray(vertex_ids)] = True
    ev = lat.edge_verts
    return bad[ev[:, 0]] | bad[ev[:, 1]]


def region_spec(spec: LatticeSpec, region, fixed_loops=(), blocked=None, domain: Domain | None = None,
                label: str = "") -> LatticeSpec | None:
    """Sub-spec of edges with midpoint inside ``region`` (shapely polygon).

    Edges meeting ``blocked`` (shapely geometry) or incident to a vertex of
    a fixed loop are removed.  Returns ``None`` if nothing can move.
    """
    lat = spec.lattice
    mid = lat.edge_midpoints
    mask = spec.allowed.copy()
    cand = np.flatnonzero(mask)
    ins = shapely.contains_xy(region, mid[cand].real, mid[cand].imag)
    mask[:] = False
    mask[cand[ins]] = True
    for l in fixed_loops:
        mask &= ~_incident(spec, l.vertex_ids)
    if blocked is not None:
        cand = np.flatnonzero(mask)
        if len(cand):
            near = shapely.dwithin(lat.edge_lines[cand], blocked, TAU_GEOM)
            mask[cand[near]] = False
    if not mask.any():
        return None
    try:
        return spec.restrict(mask, domain, label)
    except ValueError:
        return None


def interior_spec(spec: LatticeSpec, loop: LoopPath) -> LatticeSpec | None:
    """Edges strictly inside a lattice loop and not touching it."""
    return region_spec(spec, loop.polygon, (loop,), domain=PolygonDomain(loop, "interior"), label="interior")


class _ChildCounter:
    def __init__(self):
        self.k = 0

    def next(self) -> int:
        self.k += 1
        return self.k


def _counter(sampler: Sampler) -> _ChildCounter:
    c = getattr(sampler, "_children", None)
    if c is None:
        c = _ChildCounter()
        sampler._children = c
    return c


def fresh_draw(sampler: Sampler, sub: LatticeSpec | None, restrict_to: Event | None = None,
               cap: int = DEFAULT_CAP, thermalization: int | None = None) -> list[LoopPath]:
    """Loops of one draw on ``sub`` from a new child chain (empty start)."""
    if sub is None:
        if restrict_to is not None and not evaluate(restrict_to, Configuration([])):
            raise ResampleError("restriction fails on the only (empty) configuration")
        return []
    changes = {} if thermalization is None else {"thermalization": thermalization}
    child = sampler.spawn(sub, 7919, _counter(sampler).next(), **changes)
    stream = child.states()
    for _ in range(cap):
        cfg = extract_loops(next(stream))
        if restrict_to is None or evaluate(restrict_to, Configuration(cfg.loops)):
            return list(cfg.loops)
    raise ResampleError(f"restriction not met after {cap} draws")


def _combine(cfg: Configuration, keep_idx, new_loops) -> Configuration:
    loops = [cfg.loops[i] for i in keep_idx] + list(new_loops)
    return Configuration(loops, cfg.domain, lattice=cfg.lattice)


def loops_inside(cfg: Configuration, k: int) -> np.ndarray:
    g = cfg.loops[k]
    if len(cfg.loops) <= 1:
        return np.zeros(len(cfg.loops), bool)
    first = np.array([l.vertices[0] for l in cfg.loops])
    m = shapely.contains_xy(g.polygon, first.real, first.imag)
    m[k] = False
    return m


def resample_interior(cfg: Configuration, k: int, sampler: Sampler, restrict_to: Event | None = None,
                      rule: ChoiceRule | None = None, cap: int = DEFAULT_CAP,
                      thermalization: int | None = None) -> Configuration:
    """Replace the loops strictly inside loop ``k`` by a fresh draw."""
    spec = _root_spec(cfg)
    g = cfg.loops[k]
    inside = loops_inside(cfg, k)
    sub = interior_spec(spec, g)
    new = fresh_draw(sampler, sub, restrict_to, cap, thermalization)
    out = _combine(cfg, np.flatnonzero(~inside), new)
    if rule is not None:
        j = choose_loop(out, rule)
        if j is None or not same_loop(out.loops[j], g):
            raise AssertionError("choice map changed after interior resampling")
    return out


# ---------------------------------------------------------------------------
# conformal restriction


@dataclass
class RestrictionResult:
    b_tilde: object
    absorbed: tuple
    components: tuple
    members: tuple
    B: object = None
    meeting: tuple = ()

    def component_of(self, p: complex) -> int | None:
        for i, d in enumerate(self.components):
            if shapely.contains_xy(d.geometry, p.real, p.imag):
                return i
        return None


def _region_geometry(B):
    if hasattr(B, "geometry"):
        return B.geometry
    if isinstance(B, LoopPath):
        return B.polygon
    return B


def _domain_polygon(d: Domain):
    if hasattr(d, "boundary_loop"):
        return d.boundary_loop.polygon
    return d.boundary(1024).polygon


def _polygon_parts(geom) -> list:
    if geom.is_empty:
        return []
    if geom.geom_type == "Polygon":
        return [geom]
    return [g for g in getattr(geom, "geoms", []) if g.geom_type == "Polygon" and g.area > 0]


def restriction_components(cfg: Configuration, B) -> RestrictionResult:
    """Actual domains of restriction: C minus B and the loops meeting it."""
    if cfg.domain is None:
        raise ValueError("configuration needs a domain")
    Bg = _region_geometry(B)
    Cg = _domain_polygon(cfg.domain)
    n = len(cfg.loops)
    meet = cfg.touching(Bg) if n else np.zeros(0, bool)
    absorbed = meet.copy()
    if n and meet.any():
        first = np.array([l.vertices[0] for l in cfg.loops])
        for i in np.flatnonzero(meet):
            absorbed |= shapely.contains_xy(cfg.loops[i].polygon, first.real, first.imag)
    polys = [Bg] + [cfg.loops[i].polygon for i in np.flatnonzero(meet)]
    bt = shapely.unary_union(polys)
    rest = Cg.difference(bt)
    parts = _polygon_parts(rest)
    parts.sort(key=lambda p: (-round(p.area, 12), p.representative_point().x, p.representative_point().y))
    comps, members = [], []
    first = np.array([l.vertices[0] for l in cfg.loops]) if n else np.zeros(0, complex)
    for j, p in enumerate(parts):
        if len(p.interiors):
            raise ValueError(f"degenerate restriction component {j} (has holes)")
        xy = np.asarray(p.exterior.coords)[:-1]
        comps.append(PolygonDomain(LoopPath(xy[:, 0] + 1j * xy[:, 1], trusted=True), f"component {j}"))
        if n:
            inside = shapely.contains_xy(p, first.real, first.imag) & ~absorbed
            members.append(tuple(int(i) for i in np.flatnonzero(inside)))
        else:
            members.append(())
    return RestrictionResult(bt, tuple(int(i) for i in np.flatnonzero(absorbed)), tuple(comps),
                             tuple(members), Bg, tuple(int(i) for i in np.flatnonzero(meet)))


def resample_component(cfg: Configuration, res: RestrictionResult, A: int, sampler: Sampler,
                       cap: int = DEFAULT_CAP, thermalization: int | None = None) -> Configuration:
    """Redraw the loops of restriction component ``A``; keep everything else."""
    spec = _root_spec(cfg)
    comp = res.components[A]
    fixed = [cfg.loops[i] for i in res.meeting]
    sub = region_spec(spec, comp.geometry, fixed, res.B, comp, f"component {A}")
    new = fresh_draw(sampler, sub, None, cap, thermalization)
    drop = set(res.members[A])
    keep = [i for i in range(len(cfg.loops)) if i not in drop]
    return _combine(cfg, keep, new)


# ---------------------------------------------------------------------------
# gamma loops and omega sampling


def gamma_loop(cfg: Configuration, alpha: LoopPath, beta: LoopPath) -> LoopPath:
    """Boundary of the component containing beta of int(alpha) cut by loops crossing alpha."""
    if not loop_inside(beta, alpha):
        raise ValueError("beta must lie inside alpha")
    if not evaluate(SeparationE(alpha, beta), cfg):
        raise ValueError("separation event fails on this configuration")
    region = alpha.polygon
    if cfg.loops:
        cross = cfg.touching(alpha.ring)
        surr = cross & cfg.surrounding(beta)
        for i in np.flatnonzero(surr):
            region = region.intersection(cfg.loops[i].polygon)
        for i in np.flatnonzero(cross & ~surr):
            region = region.difference(cfg.loops[i].polygon)
    p = beta.vertices[0]
    pick = None
    for part in _polygon_parts(region):
        if shapely.contains_xy(part, p.real, p.imag):
            pick = part
            break
    if pick is None:
        raise ValueError("no component contains beta")
    xy = np.asarray(pick.exterior.coords)[:-1]
    return LoopPath(xy[:, 0] + 1j * xy[:, 1], trusted=True)


def gamma_in_annulus(gamma: LoopPath, beta_p: LoopPath) -> bool:
    """gamma lies in the annulus between alpha and beta' (open at beta')."""
    if loops_intersect(gamma, beta_p):
        return False
    return not loop_inside(gamma, beta_p)


def gamma_component_spec(cfg: Configuration, alpha: LoopPath, gamma: LoopPath) -> LatticeSpec | None:
    """Lattice of the restriction component bounded by gamma."""
    spec = _root_spec(cfg)
    cross = [cfg.loops[i] for i in np.flatnonzero(cfg.touching(alpha.ring))] if cfg.loops else []
    return region_spec(spec, gamma.polygon, cross, alpha.ring, PolygonDomain(gamma, "gamma"), "gamma")


@dataclass(frozen=True)
class OmegaSample:
    gamma: LoopPath
    attempts: int
    cfg: Configuration = field(repr=False)

    def to_json(self, seed: int) -> dict:
        return {"gamma": self.gamma.to_json(), "acceptance_count": self.attempts, "seed": seed}


def omega_stream(alpha: LoopPath, beta: LoopPath, sampler: Sampler, max_reject: int = DEFAULT_CAP
                 ) -> Iterator[OmegaSample]:
    """Gamma loops of configurations accepted under the separation event."""
    from .events import compile_event

    ev = SeparationE(alpha, beta)
    f = compile_event(ev, sampler.spec)
    tries = 0
    for st in sampler.states():
        tries += 1
        if f(st):
            cfg = extract_loops(st)
            yield OmegaSample(gamma_loop(cfg, alpha, beta), tries, cfg)
            tries = 0
        elif tries >= max_reject:
            raise ResampleError(f"acceptance below 1/{max_reject}")


def omega_sample(C: Domain, alpha: LoopPath, beta: LoopPath, sampler: Sampler,
                 max_reject: int = DEFAULT_CAP) -> LoopPath:
    if not (np.all(C.contains(alpha.vertices)) and np.all(C.contains(beta.vertices))):
        raise ValueError("alpha and beta must lie inside C")
    return next(omega_stream(alpha, beta, sampler, max_reject)).gamma
