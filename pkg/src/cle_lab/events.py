"""Finite event algebra over loop configurations.

Atoms:
  SeparationE(alpha, beta)   no loop meets both curves
  Surrounds(target, cap)     some loop (of radius < cap) has target inside
  CrossCount(sets, op, k)    number of loops meeting every set, compared to k
  FattenedBoundaryE          separation of a boundary and its displaced copy

Combinators are Not, And, Or; ``And(())`` is the sure event and ``Or(())``
the impossible one.
"""
from __future__ import annotations

import hashlib
import json
import math
import operator
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import shapely
from shapely.geometry import Point as ShapelyPoint

from .geometry import (
    TAU_GEOM,
    Configuration,
    Disk,
    circle,
    Domain,
    LoopPath,
    MobiusMap,
    domain_from_json,
    loop_radius,
    loops_intersect,
    minimum_enclosing_circle,
    shape_from_json,
    shape_geometry,
    shape_hits_point,
    shape_points,
    shape_to_json,
    transform_loop,
    transform_shape,
)

_OPS = {"==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
        ">": operator.gt, ">=": operator.ge}


class InvalidEpsilonError(ValueError):
    """Partner boundary is not simple, leaves A, or touches its boundary."""


class Event:
    def __and__(self, other: "Event") -> "Event":
        return And((self, other))

    def __or__(self, other: "Event") -> "Event":
        return Or((self, other))

    def __invert__(self) -> "Event":
        return Not(self)

    def children(self) -> tuple:
        return ()

    def atoms(self):
        if not self.children() and not isinstance(self, (And, Or)):
            yield self
        for c in self.children():
            yield from c.atoms()


@dataclass(frozen=True)
class SeparationE(Event):
    alpha: LoopPath
    beta: LoopPath

    def __post_init__(self):
        if loops_intersect(self.alpha, self.beta):
            raise ValueError("separation curves must be disjoint")


@dataclass(frozen=True)
class Surrounds(Event):
    target: object
    radius_cap: float | None = None


@dataclass(frozen=True)
class CrossCount(Event):
    sets: tuple
    op: str = ">="
    k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(self.sets))
        if self.op not in _OPS:
            raise ValueError(f"unknown comparator {self.op!r}")
        if not self.sets:
            raise ValueError("CrossCount needs at least one set")


@dataclass(frozen=True)
class FattenedBoundaryE(SeparationE):
    """E(A, eps, u): separation of dA and its displaced partner."""

    A: Domain | None = None
    eps: float = 0.0
    u: "BoundaryField | None" = None


@dataclass(frozen=True)
class Not(Event):
    e: Event

    def children(self):
        return (self.e,)


@dataclass(frozen=True)
class And(Event):
    items: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def children(self):
        return self.items


@dataclass(frozen=True)
class Or(Event):
    items: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def children(self):
        return self.items


TRIVIAL = And(())
EMPTY = Or(())


# ---------------------------------------------------------------------------
# evaluation


def _touch_mask(cfg: Configuration, s) -> np.ndarray:
    if isinstance(s, Disk):
        return cfg.touching(ShapelyPoint(s.center.real, s.center.imag), s.radius + TAU_GEOM)
    return cfg.touching(shape_geometry(s))


def evaluate(e: Event, cfg: Configuration) -> bool:
    """Characteristic function of ``e`` at ``cfg``."""
    if isinstance(e, SeparationE):
        if not cfg.loops:
            return True
        return not bool(np.any(_touch_mask(cfg, e.alpha) & _touch_mask(cfg, e.beta)))
    if isinstance(e, Surrounds):
        if not cfg.loops:
            return False
        m = cfg.surrounding(e.target)
        if e.radius_cap is not None:
            for i in np.flatnonzero(m):
                if loop_radius(cfg.loops[i]) < e.radius_cap:
                    return True
            return False
        return bool(np.any(m))
    if isinstance(e, CrossCount):
        if cfg.loops:
            m = np.ones(len(cfg.loops), bool)
            for s in e.sets:
                m &= _touch_mask(cfg, s)
            count = int(m.sum())
        else:
            count = 0
        return _OPS[e.op](count, e.k)
    if isinstance(e, Not):
        return not evaluate(e.e, cfg)
    if isinstance(e, And):
        return all(evaluate(c, cfg) for c in e.items)
    if isinstance(e, Or):
        return any(evaluate(c, cfg) for c in e.items)
    raise TypeError(f"not an event: {e!r}")


# ---------------------------------------------------------------------------
# supports


@dataclass(frozen=True)
class SupportSet:
    components: tuple = ()
    closed: bool = True

    @property
    def is_empty(self) -> bool:
        return not self.components

    @cached_property
    def geometry(self):
        if not self.components:
            return shapely.GeometryCollection()
        return shapely.unary_union([_support_geom(c) for c in self.components])

    def points(self) -> np.ndarray:
        if not self.components:
            return np.zeros(0, complex)
        return np.concatenate([shape_points(c) for c in self.components])

    def contains(self, other: "SupportSet", tol: float = 1e-7) -> bool:
        if other.is_empty:
            return True
        if self.is_empty:
            return False
        return bool(self.geometry.buffer(tol).covers(other.geometry))

    def union(self, other: "SupportSet") -> "SupportSet":
        comps = list(self.components)
        for c in other.components:
            if not any(c is d or _same_shape(c, d) for d in comps):
                comps.append(c)
        return SupportSet(tuple(comps))

    def transform(self, m: MobiusMap, tol: float = 1e-3) -> "SupportSet":
        return SupportSet(tuple(transform_shape(m, c, tol) for c in self.components))

    def hits_point(self, p: complex) -> bool:
        return any(shape_hits_point(c, p) for c in self.components)

    def max_modulus(self) -> float:
        """Radius of the smallest origin-centered closed disk containing the set."""
        r = 0.0
        for c in self.components:
            if isinstance(c, Disk):
                r = max(r, abs(c.center) + c.radius)
            else:
                r = max(r, float(np.abs(shape_points(c)).max()))
        return r


def _same_shape(a, b) -> bool:
    if type(a) is not type(b):
        return False
    return a == b


def _support_geom(c):
    if isinstance(c, Disk):
        # outer polygon so that the closed disk is covered
        return ShapelyPoint(c.center.real, c.center.imag).buffer(c.radius / math.cos(math.pi / 128) + 1e-12,
                                                                   quad_segs=32)
    return shape_geometry(c)


def support(e: Event) -> SupportSet:
    if isinstance(e, SeparationE):
        return SupportSet((e.alpha, e.beta))
    if isinstance(e, Surrounds):
        return SupportSet((e.target,))
    if isinstance(e, CrossCount):
        return SupportSet(tuple(e.sets))
    if isinstance(e, Not):
        return support(e.e)
    if isinstance(e, (And, Or)):
        out = SupportSet()
        for c in e.items:
            out = out.union(support(c))
        return out
    raise TypeError(f"not an event: {e!r}")


def support_inside(e: Event, domain: Domain) -> bool:
    """Whether the support lies in the open domain."""
    sup = support(e)
    if sup.is_empty:
        return True
    pts = []
    for c in sup.components:
        if isinstance(c, Disk):
            pts.append(c.sample_points(256))
            pts.append(np.array([c.center]))
        else:
            pts.append(shape_points(c))
    pts = np.concatenate(pts)
    return bool(np.all(domain.contains(pts)))


# ---------------------------------------------------------------------------
# Moebius transport


def transform_event(m: MobiusMap, e: Event, tol: float = 1e-3) -> Event:
    """Image of an event under a Moebius map (payloads mapped pointwise)."""
    sup = support(e)
    if not m.is_affine and sup.hits_point(m.pole):
        raise ValueError("event support contains the pole of the map")
    return _transform(m, e, tol)


def _transform(m: MobiusMap, e: Event, tol: float) -> Event:
    if isinstance(e, FattenedBoundaryE):
        return SeparationE(transform_loop(m, e.alpha, tol), transform_loop(m, e.beta, tol))
    if isinstance(e, SeparationE):
        return SeparationE(transform_loop(m, e.alpha, tol), transform_loop(m, e.beta, tol))
    if isinstance(e, Surrounds):
        cap = e.radius_cap
        if cap is not None:
            k = m.similarity_scale()
            if k is None:
                raise ValueError("radius caps only transform under similarities")
            cap = cap * k
        return Surrounds(transform_shape(m, e.target, tol), cap)
    if isinstance(e, CrossCount):
        return CrossCount(tuple(transform_shape(m, s, tol) for s in e.sets), e.op, e.k)
    if isinstance(e, Not):
        return Not(_transform(m, e.e, tol))
    if isinstance(e, And):
        return And(tuple(_transform(m, c, tol) for c in e.items))
    if isinstance(e, Or):
        return Or(tuple(_transform(m, c, tol) for c in e.items))
    raise TypeError(f"not an event: {e!r}")


# ---------------------------------------------------------------------------
# partner boundaries


@dataclass(frozen=True)
class BoundaryField:
    """Displacement field u on a boundary curve.

    kinds: ``inward_normal``, ``radial`` (toward ``center``),
    ``modulated_normal`` (inward normal times 1 + amp cos(freq theta)),
    ``values`` (per-vertex vectors) and ``callable`` (func(z, eps)).
    """

    kind: str = "inward_normal"
    center: complex = 0j
    amp: float = 0.0
    freq: int = 1
    values: tuple | None = None
    func: Callable | None = field(default=None, compare=False)

    def displacement(self, loop: LoopPath, eps: float) -> np.ndarray:
        v = loop.vertices
        if self.kind in ("inward_normal", "modulated_normal"):
            t = np.roll(v, -1) - np.roll(v, 1)
            nrm = 1j * t / np.abs(t)
            if self.kind == "modulated_normal":
                th = np.angle(v - self.center)
                nrm = nrm * (1 + self.amp * np.cos(self.freq * th))
            return nrm
        if self.kind == "radial":
            d = self.center - v
            return d / np.abs(d)
        if self.kind == "values":
            vals = np.asarray(self.values, complex)
            if len(vals) != len(v):
                raise ValueError("field has the wrong number of vertices")
            return vals
        if self.kind == "callable":
            return np.asarray(self.func(v, eps), complex)
        raise ValueError(f"unknown boundary field kind {self.kind!r}")

    def to_json(self) -> dict:
        if self.kind == "callable":
            raise ValueError("callable fields are not serializable")
        d = {"kind": self.kind, "center": [self.center.real, self.center.imag], "amp": self.amp,
             "freq": self.freq}
        if self.values is not None:
            d["values"] = [[z.real, z.imag] for z in self.values]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "BoundaryField":
        vals = d.get("values")
        return cls(d.get("kind", "inward_normal"), complex(*d.get("center", [0, 0])), float(d.get("amp", 0.0)),
                   int(d.get("freq", 1)), None if vals is None else tuple(complex(*p) for p in vals))


def make_partner_event(A: Domain, eps: float, u: BoundaryField | None = None,
                       n_boundary: int = 256) -> FattenedBoundaryE:
    """Separation event between dA and (eps u + id)(dA)."""
    if eps <= 0:
        raise InvalidEpsilonError("eps must be positive")
    u = BoundaryField() if u is None else u
    bd = A.boundary(n_boundary)
    raw = bd.vertices + eps * u.displacement(bd, eps)
    x, y = raw.real, raw.imag
    signed = 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
    if signed <= 0:
        raise InvalidEpsilonError("partner boundary folds over")
    try:
        partner = LoopPath(raw)
    except ValueError as exc:
        raise InvalidEpsilonError(f"partner boundary is not simple: {exc}") from None
    if loops_intersect(bd, partner):
        raise InvalidEpsilonError("partner boundary touches dA")
    if not bool(shapely.contains_xy(bd.polygon, raw[0].real, raw[0].imag)):
        raise InvalidEpsilonError("partner boundary lies outside A")
    return FattenedBoundaryE(bd, partner, A, float(eps), u)


def partner_domain(e: FattenedBoundaryE):
    from .geometry import PolygonDomain

    return PolygonDomain(e.beta, "partner")


# ---------------------------------------------------------------------------
# serialization and hashing


def event_to_json(e: Event) -> dict:
    if isinstance(e, FattenedBoundaryE):
        return {"type": "fattened", "A": e.A.to_json(), "eps": e.eps,
                "u": None if e.u is None else e.u.to_json(),
                "alpha": e.alpha.to_json(), "beta": e.beta.to_json()}
    if isinstance(e, SeparationE):
        return {"type": "separation", "alpha": e.alpha.to_json(), "beta": e.beta.to_json()}
    if isinstance(e, Surrounds):
        return {"type": "surrounds", "target": shape_to_json(e.target), "radius_cap": e.radius_cap}
    if isinstance(e, CrossCount):
        return {"type": "crosscount", "sets": [shape_to_json(s) for s in e.sets], "op": e.op, "k": e.k}
    if isinstance(e, Not):
        return {"type": "not", "e": event_to_json(e.e)}
    if isinstance(e, And):
        return {"type": "and", "items": [event_to_json(c) for c in e.items]}
    if isinstance(e, Or):
        return {"type": "or", "items": [event_to_json(c) for c in e.items]}
    raise TypeError(f"not an event: {e!r}")


def event_from_json(d) -> Event:
    t = d["type"]
    if t == "trivial":
        return TRIVIAL
    if t == "empty":
        return EMPTY
    if t == "separation":
        return SeparationE(_curve(d["alpha"]), _curve(d["beta"]))
    if t == "fattened":
        A = domain_from_json(d["A"])
        u = BoundaryField.from_json(d["u"]) if d.get("u") else None
        return make_partner_event(A, float(d["eps"]), u, int(d.get("n_boundary", 256)))
    if t == "surrounds":
        return Surrounds(shape_from_json(d["target"]), d.get("radius_cap"))
    if t == "crosscount":
        return CrossCount(tuple(shape_from_json(s) for s in d["sets"]), d.get("op", ">="), int(d.get("k", 1)))
    if t == "not":
        return Not(event_from_json(d["e"]))
    if t == "and":
        return And(tuple(event_from_json(c) for c in d["items"]))
    if t == "or":
        return Or(tuple(event_from_json(c) for c in d["items"]))
    raise ValueError(f"unknown event type {t!r}")


def _curve(d) -> LoopPath:
    if isinstance(d, list):
        return LoopPath.from_json(d)
    s = shape_from_json(d)
    if not isinstance(s, LoopPath):
        raise ValueError("separation curves must be loops")
    return s


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def event_hash(e: Event) -> str:
    return hashlib.sha256(canonical_json(event_to_json(e)).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# lattice-compiled evaluation


class CompiledEvent:
    """Evaluates an event directly on lattice states via per-edge masks.

    Loop/target incidences are precomputed once per lattice spec, so each
    evaluation only needs the loop labels of the occupied edges.
    """

    def __init__(self, e: Event, spec):
        self.event = e
        self.spec = spec
        self._masks: dict = {}
        self._fn = self._build(e)

    def __call__(self, state) -> bool:
        return bool(self._fn(state))

    # masks ---------------------------------------------------------------
    def _edge_lines(self):
        lat = self.spec.lattice
        return lat.edge_lines[self.spec.edge_root]

    def _touch(self, s) -> np.ndarray:
        key = ("touch", id(s))
        if key not in self._masks:
            lines = self._edge_lines()
            if isinstance(s, Disk):
                m = shapely.dwithin(lines, ShapelyPoint(s.center.real, s.center.imag), s.radius + TAU_GEOM)
            else:
                m = shapely.dwithin(lines, shape_geometry(s), TAU_GEOM)
            self._masks[key] = (m, s)
        return self._masks[key][0]

    def _ray(self, p: complex) -> np.ndarray:
        key = ("ray", p)
        if key not in self._masks:
            lat = self.spec.lattice
            self._masks[key] = (lat.edges_crossing_ray(p)[self.spec.edge_root], None)
        return self._masks[key][0]

    @staticmethod
    def _hits(state, mask) -> np.ndarray:
        lab = state.labels
        out = np.zeros(state.n_loops, bool)
        sel = lab[mask]
        out[sel[sel >= 0]] = True
        return out

    def _inside(self, state, p) -> np.ndarray:
        lab = state.labels
        sel = lab[self._ray(p)]
        sel = sel[sel >= 0]
        return (np.bincount(sel, minlength=state.n_loops) % 2).astype(bool)

    def _surround_mask(self, state, target) -> np.ndarray:
        touch = self._hits(state, self._touch(target))
        if isinstance(target, Disk):
            pts = [target.center]
        elif isinstance(target, LoopPath):
            pts = [target.vertices[0]]
        else:
            pts = list(target.points)
        m = ~touch
        for p in pts:
            m &= self._inside(state, p)
        return m

    def _loop_radius(self, state, i: int) -> float:
        _, vseq, _, off = state.trace
        sp = self.spec
        v = sp.lattice.vertex_pos[sp.vert_root[vseq[off[i]:off[i + 1]]]]
        pts = np.concatenate([v, 0.5 * (v + np.roll(v, -1))])
        return minimum_enclosing_circle(pts)[1]

    # builder -------------------------------------------------------------
    def _build(self, e: Event):
        if isinstance(e, SeparationE):
            ma, mb = self._touch(e.alpha), self._touch(e.beta)
            return lambda st: not bool(np.any(self._hits(st, ma) & self._hits(st, mb)))
        if isinstance(e, Surrounds):
            self._touch(e.target)
            cap = e.radius_cap

            def surr(st):
                m = self._surround_mask(st, e.target)
                if cap is None:
                    return bool(np.any(m))
                return any(self._loop_radius(st, i) < cap for i in np.flatnonzero(m))

            return surr
        if isinstance(e, CrossCount):
            masks = [self._touch(s) for s in e.sets]
            op = _OPS[e.op]

            def cc(st):
                m = np.ones(st.n_loops, bool)
                for mk in masks:
                    m &= self._hits(st, mk)
                return op(int(m.sum()), e.k)

            return cc
        if isinstance(e, Not):
            f = self._build(e.e)
            return lambda st: not f(st)
        if isinstance(e, And):
            fs = [self._build(c) for c in e.items]
            return lambda st: all(f(st) for f in fs)
        if isinstance(e, Or):
            fs = [self._build(c) for c in e.items]
            return lambda st: any(f(st) for f in fs)
        raise TypeError(f"not an event: {e!r}")


def compile_event(e: Event, spec) -> CompiledEvent:
    return CompiledEvent(e, spec)


# ---------------------------------------------------------------------------
# random events for calibration


def random_event(rng: np.random.Generator, centers: np.ndarray, scale: float, depth: int = 1) -> Event:
    """Random event built from disks and circles placed near ``centers``.

    ``scale`` is the typical feature size (a lattice spacing).  Atoms are
    Surrounds, CrossCount and SeparationE; with ``depth`` > 0 they may be
    negated or combined.
    """
    centers = np.asarray(centers, complex)

    def near() -> complex:
        c = centers[rng.integers(len(centers))]
        return c + scale * 0.6 * complex(*rng.uniform(-1, 1, 2))

    def atom() -> Event:
        kind = rng.integers(3)
        if kind == 0:
            return Surrounds(Disk(near(), float(scale * rng.uniform(0.0, 0.5))))
        if kind == 1:
            sets = tuple(Disk(near(), float(scale * rng.uniform(0.05, 0.6))) for _ in range(rng.integers(1, 3)))
            return CrossCount(sets, str(rng.choice([">=", "==", "<="])), int(rng.integers(0, 3)))
        for _ in range(50):
            a = circle(near(), float(scale * rng.uniform(0.2, 0.9)), 24, float(rng.uniform(0, 1)))
            b = circle(near(), float(scale * rng.uniform(0.2, 0.9)), 24, float(rng.uniform(0, 1)))
            if not loops_intersect(a, b):
                return SeparationE(a, b)
        return Surrounds(Disk(near(), 0.0))

    if depth <= 0:
        return atom()
    r = rng.uniform()
    if r < 0.5:
        return atom()
    if r < 0.65:
        return Not(random_event(rng, centers, scale, depth - 1))
    items = (random_event(rng, centers, scale, depth - 1), random_event(rng, centers, scale, depth - 1))
    return And(items) if r < 0.85 else Or(items)
