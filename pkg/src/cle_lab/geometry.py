"""Planar and Moebius geometry on the extended complex plane.

Points are plain Python ``complex`` numbers; the point at infinity is the
sentinel :data:`INF`.  Loops are closed piecewise-linear curves stored as
complex vertex arrays, normalised to counterclockwise orientation.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, Union

import numba
import numpy as np
import shapely
from shapely.geometry import LinearRing, Point as ShapelyPoint, Polygon

TAU_GEOM = 1e-9
INF = complex(math.inf, 0.0)

Point = complex


def is_inf(z: complex) -> bool:
    return cmath.isinf(z)


def as_point(re: float, im: float = 0.0, at_infinity: bool = False) -> complex:
    if at_infinity:
        return INF
    if not (math.isfinite(re) and math.isfinite(im)):
        raise ValueError("finite points need finite coordinates")
    return complex(re, im)


# ---------------------------------------------------------------------------
# Moebius maps


@dataclass(frozen=True)
class MobiusMap:
    """z -> (a z + b) / (c z + d), stored with a d - b c = 1."""

    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        a, b, c, d = (complex(v) for v in (self.a, self.b, self.c, self.d))
        det = a * d - b * c
        scale = max(abs(a), abs(b), abs(c), abs(d))
        if scale == 0 or not np.isfinite(scale) or abs(det) < 1e-14 * scale * scale:
            raise ValueError("degenerate Moebius map (ad - bc ~ 0)")
        s = cmath.sqrt(det)
        object.__setattr__(self, "a", a / s)
        object.__setattr__(self, "b", b / s)
        object.__setattr__(self, "c", c / s)
        object.__setattr__(self, "d", d / s)

    # constructors
    @classmethod
    def identity(cls) -> "MobiusMap":
        return cls(1, 0, 0, 1)

    @classmethod
    def affine(cls, scale: complex, shift: complex = 0) -> "MobiusMap":
        return cls(scale, shift, 0, 1)

    @classmethod
    def rotation(cls, theta: float, center: complex = 0) -> "MobiusMap":
        w = cmath.exp(1j * theta)
        return cls(w, center - w * center, 0, 1)

    @classmethod
    def scaling(cls, lam: float, center: complex = 0) -> "MobiusMap":
        return cls(lam, center - lam * center, 0, 1)

    @classmethod
    def inversion(cls) -> "MobiusMap":
        return cls(0, 1, 1, 0)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=complex)

    @property
    def det(self) -> complex:
        return self.a * self.d - self.b * self.c

    @property
    def pole(self) -> complex:
        """Preimage of infinity."""
        return INF if self.c == 0 else -self.d / self.c

    @property
    def is_affine(self) -> bool:
        return self.c == 0

    def __call__(self, z: complex) -> complex:
        if is_inf(z):
            return INF if self.c == 0 else self.a / self.c
        den = self.c * z + self.d
        if den == 0:
            return INF
        return (self.a * z + self.b) / den

    def apply(self, z: np.ndarray) -> np.ndarray:
        """Vectorised application to finite points (poles map to inf)."""
        z = np.asarray(z, dtype=complex)
        if self.c == 0:
            return (self.a * z + self.b) / self.d
        with np.errstate(divide="ignore", invalid="ignore"):
            den = self.c * z + self.d
            out = (self.a * z + self.b) / den
        out = np.where(den == 0, INF, out)
        return out

    def compose(self, other: "MobiusMap") -> "MobiusMap":
        """self o other."""
        m = self.matrix @ other.matrix
        return MobiusMap(m[0, 0], m[0, 1], m[1, 0], m[1, 1])

    def __matmul__(self, other: "MobiusMap") -> "MobiusMap":
        return self.compose(other)

    def inverse(self) -> "MobiusMap":
        return MobiusMap(self.d, -self.b, -self.c, self.a)

    def derivative(self, z: complex) -> complex:
        return 1.0 / (self.c * z + self.d) ** 2

    def similarity_scale(self) -> float | None:
        """|scale| for affine maps, ``None`` otherwise."""
        if self.c != 0:
            return None
        return abs(self.a / self.d)

    def to_json(self) -> dict:
        return {k: [getattr(self, k).real, getattr(self, k).imag] for k in "abcd"}

    @classmethod
    def from_json(cls, d: dict) -> "MobiusMap":
        return cls(*(complex(*d[k]) for k in "abcd"))


def mobius(op: str, m: MobiusMap, arg=None):
    """Small dispatcher: ``apply``, ``compose`` or ``invert``."""
    if op == "apply":
        return m(arg)
    if op == "compose":
        return m.compose(arg)
    if op == "invert":
        return m.inverse()
    raise ValueError(f"unknown Moebius operation {op!r}")


def lambda_flow(z1: complex, z2: complex, lam: float) -> MobiusMap:
    """Flow fixing z1 and z2 that contracts toward z1 as lam -> 0.

    It conjugates z -> lam z by g(z) = (z - z1) / (z - z2).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if is_inf(z1) and is_inf(z2):
        raise ValueError("z1 and z2 must differ")
    if not is_inf(z1) and not is_inf(z2) and abs(z1 - z2) == 0:
        raise ValueError("z1 and z2 must differ")
    if is_inf(z2):
        return MobiusMap(lam, z1 * (1 - lam), 0, 1)
    if is_inf(z1):
        return MobiusMap(1 / lam, z2 * (1 - 1 / lam), 0, 1)
    g = MobiusMap(1, -z1, 1, -z2)
    return g.inverse() @ MobiusMap(lam, 0, 0, 1) @ g


# ---------------------------------------------------------------------------
# loops


def _signed_area(v: np.ndarray) -> float:
    x, y = v.real, v.imag
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


class LoopPath:
    """Closed simple polyline, counterclockwise.

    ``edge_ids`` / ``vertex_ids`` optionally record the lattice edges and
    vertices of a loop extracted from a sampler state.
    """

    __slots__ = ("vertices", "edge_ids", "vertex_ids", "__dict__")

    def __init__(self, vertices, *, trusted: bool = False,
                 edge_ids: np.ndarray | None = None,
                 vertex_ids: np.ndarray | None = None):
        v = np.array(vertices, dtype=complex).ravel()
        if len(v) > 1 and v[0] == v[-1]:
            v = v[:-1]
            if vertex_ids is not None:
                vertex_ids = np.asarray(vertex_ids)[:-1]
        if len(v) < 3:
            raise ValueError("a loop needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("loop vertices must be finite")
        area = _signed_area(v)
        if area == 0.0:
            raise ValueError("loop encloses zero area")
        if area < 0:
            v = v[::-1].copy()
            if vertex_ids is not None:
                vertex_ids = np.asarray(vertex_ids)[::-1].copy()
            if edge_ids is not None:
                # edge k joined vertex k and k+1; after reversal edge k joins
                # new vertices k and k+1, which was old edge (m-2-k) mod m
                e = np.asarray(edge_ids)
                edge_ids = np.roll(e[::-1], -1).copy()
        v.setflags(write=False)
        self.vertices = v
        self.edge_ids = None if edge_ids is None else np.asarray(edge_ids)
        self.vertex_ids = None if vertex_ids is None else np.asarray(vertex_ids)
        if not trusted and not self.ring.is_simple:
            raise ValueError("loop is not simple")

    def __len__(self) -> int:
        return len(self.vertices)

    def __repr__(self) -> str:
        return f"LoopPath(n={len(self)}, area={self.area:.4g})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, LoopPath) or len(other) != len(self):
            return False
        # equal up to cyclic relabeling
        i = np.flatnonzero(other.vertices == self.vertices[0])
        return any(np.array_equal(np.roll(other.vertices, -k), self.vertices) for k in i)

    def __hash__(self) -> int:
        return hash((len(self), round(self.area, 9)))

    @cached_property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @cached_property
    def ring(self) -> LinearRing:
        return LinearRing(np.column_stack([self.vertices.real, self.vertices.imag]))

    @cached_property
    def polygon(self) -> Polygon:
        return Polygon(self.ring)

    @cached_property
    def bbox(self) -> tuple[float, float, float, float]:
        v = self.vertices
        return (v.real.min(), v.imag.min(), v.real.max(), v.imag.max())

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices, np.roll(self.vertices, -1)

    def sample_points(self) -> np.ndarray:
        """Vertices plus edge midpoints."""
        p, q = self.edges()
        return np.concatenate([p, 0.5 * (p + q)])

    def translate(self, t: complex) -> "LoopPath":
        return LoopPath(self.vertices + t, trusted=True)

    def scale(self, lam: float, center: complex = 0) -> "LoopPath":
        return LoopPath(center + lam * (self.vertices - center), trusted=True)

    def to_json(self) -> list:
        return [[float(z.real), float(z.imag)] for z in self.vertices]

    @classmethod
    def from_json(cls, pts) -> "LoopPath":
        return cls([complex(x, y) for x, y in pts])


def circle(center: complex = 0, radius: float = 1.0, n: int = 64, phase: float = 0.0) -> LoopPath:
    t = phase + 2 * np.pi * np.arange(n) / n
    return LoopPath(center + radius * np.exp(1j * t), trusted=True)


def polygon_loop(points: Iterable[complex]) -> LoopPath:
    return LoopPath(list(points))


@dataclass(frozen=True)
class Disk:
    """Closed Euclidean disk used as an event target or crossing set."""

    center: complex
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("negative radius")
        object.__setattr__(self, "center", complex(self.center))

    def sample_points(self, n: int = 64) -> np.ndarray:
        t = 2 * np.pi * np.arange(n) / n
        return self.center + self.radius * np.exp(1j * t)

    @cached_property
    def geometry(self):
        return ShapelyPoint(self.center.real, self.center.imag).buffer(self.radius, quad_segs=32)

    def to_json(self) -> dict:
        return {"kind": "disk", "center": [self.center.real, self.center.imag], "radius": self.radius}


@dataclass(frozen=True)
class PointSet:
    """Finite set of points."""

    points: tuple

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(complex(p) for p in self.points))
        if not self.points:
            raise ValueError("empty point set")

    @property
    def array(self) -> np.ndarray:
        return np.array(self.points, dtype=complex)

    def sample_points(self) -> np.ndarray:
        return self.array

    @cached_property
    def geometry(self):
        return shapely.MultiPoint([(p.real, p.imag) for p in self.points])

    def to_json(self) -> dict:
        return {"kind": "points", "points": [[p.real, p.imag] for p in self.points]}


Shape = Union[LoopPath, Disk, PointSet]


def shape_points(s) -> np.ndarray:
    """Finite sample of a shape (vertices + midpoints for loops)."""
    if isinstance(s, LoopPath):
        return s.sample_points()
    if isinstance(s, Disk):
        return s.sample_points(128)
    if isinstance(s, PointSet):
        return s.array
    arr = np.asarray(s, dtype=complex).ravel()
    return arr


def shape_geometry(s):
    if isinstance(s, LoopPath):
        return s.ring
    return s.geometry


def shape_to_json(s):
    if isinstance(s, LoopPath):
        return {"kind": "loop", "vertices": s.to_json()}
    return s.to_json()


def shape_from_json(d):
    kind = d["kind"]
    if kind == "loop":
        return LoopPath.from_json(d["vertices"])
    if kind == "disk":
        return Disk(complex(*d["center"]), float(d["radius"]))
    if kind == "points":
        return PointSet(tuple(complex(*p) for p in d["points"]))
    if kind == "circle":
        return circle(complex(*d.get("center", [0, 0])), float(d["radius"]), int(d.get("n", 64)))
    if kind == "polygon":
        return LoopPath([complex(*p) for p in d["vertices"]])
    raise ValueError(f"unknown shape kind {kind!r}")


# ---------------------------------------------------------------------------
# incidence


def _segment_distances(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from points p (m,) to segments a->b (k,), shape (m, k)."""
    ab = b - a
    ap = p[:, None] - a[None, :]
    L2 = np.abs(ab) ** 2
    t = np.clip((ap.real * ab.real + ap.imag * ab.imag) / np.where(L2 == 0, 1, L2), 0, 1)
    proj = a[None, :] + t * ab[None, :]
    return np.abs(p[:, None] - proj)


def distance_to_loop(l: LoopPath, pts) -> np.ndarray:
    pts = np.atleast_1d(np.asarray(pts, dtype=complex))
    a, b = l.edges()
    return _segment_distances(pts, a, b).min(axis=1)


def winding_number(l: LoopPath, p: complex) -> int:
    v = l.vertices - p
    ang = np.angle(np.roll(v, -1) / v)
    return int(round(ang.sum() / (2 * np.pi)))


def point_in_loop(l: LoopPath, p: complex) -> str:
    """``'inside'``, ``'outside'`` or ``'boundary'`` (boundary wins ties)."""
    if is_inf(p):
        return "outside"
    if distance_to_loop(l, p)[0] < TAU_GEOM:
        return "boundary"
    return "inside" if winding_number(l, p) != 0 else "outside"


def contains_points(l: LoopPath, pts) -> np.ndarray:
    """Strict containment test for many finite points (boundary excluded)."""
    pts = np.asarray(pts, dtype=complex)
    inside = shapely.contains_xy(l.polygon, pts.real, pts.imag)
    near = distance_to_loop(l, pts) < TAU_GEOM if len(pts) else np.zeros(0, bool)
    return inside & ~near


def loops_intersect(l1: LoopPath, l2: LoopPath) -> bool:
    return bool(shapely.dwithin(l1.ring, l2.ring, TAU_GEOM))


def loop_inside(inner: LoopPath, outer: LoopPath) -> bool:
    """True if ``inner`` lies strictly inside ``outer`` (disjoint curves)."""
    if loops_intersect(inner, outer):
        return False
    return bool(shapely.contains_xy(outer.polygon, inner.vertices[0].real, inner.vertices[0].imag))


def surrounds_shape(l: LoopPath, s) -> bool:
    """Whether the closed shape ``s`` lies in the open interior of ``l``."""
    if isinstance(s, Disk):
        if not shapely.contains_xy(l.polygon, s.center.real, s.center.imag):
            return False
        return float(distance_to_loop(l, s.center)[0]) > s.radius + TAU_GEOM
    if isinstance(s, LoopPath):
        return loop_inside(s, l)
    pts = shape_points(s)
    return bool(np.all(contains_points(l, pts)))


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class GeneralizedDisk:
    """Image of the unit disk under a Moebius map."""

    map: MobiusMap = field(default_factory=MobiusMap.identity)
    label: str = field(default="", compare=False)

    kind = "generalized_disk"

    @property
    def canonical_map(self) -> MobiusMap:
        """The fixed conformal map from this domain onto the unit disk."""
        return self.map.inverse()

    @property
    def contains_infinity(self) -> bool:
        w = self.canonical_map(INF)
        return (not is_inf(w)) and abs(w) < 1

    @property
    def bounded(self) -> bool:
        w = self.canonical_map(INF)
        return is_inf(w) or abs(w) > 1

    def circle(self) -> tuple[complex, float]:
        """Center and radius of the boundary circle (bounded case)."""
        if not self.bounded:
            raise ValueError("unbounded generalized disk")
        z = self.map.apply(np.exp(2j * np.pi * np.array([0, 1, 2]) / 3))
        return _circumcircle(*z)

    def contains(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        w = self.canonical_map.apply(z)
        return np.abs(w) < 1

    def boundary(self, n: int = 256) -> LoopPath:
        c, r = self.circle()
        return circle(c, r, n)

    @cached_property
    def geometry(self) -> Polygon:
        return self.boundary(512).polygon

    def to_json(self) -> dict:
        return {"kind": self.kind, "map": self.map.to_json(), "label": self.label}


@dataclass(frozen=True)
class PolygonDomain:
    """Jordan domain bounded by a polygon."""

    boundary_loop: LoopPath
    label: str = field(default="", compare=False)

    kind = "polygon"

    @property
    def bounded(self) -> bool:
        return True

    def contains(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return shapely.contains_xy(self.boundary_loop.polygon, z.real, z.imag)

    def boundary(self, n: int | None = None) -> LoopPath:
        return self.boundary_loop

    @property
    def geometry(self) -> Polygon:
        return self.boundary_loop.polygon

    def to_json(self) -> dict:
        return {"kind": self.kind, "boundary": self.boundary_loop.to_json(), "label": self.label}

    def __hash__(self):
        return hash((self.kind, len(self.boundary_loop), self.boundary_loop.area))


Domain = Union[GeneralizedDisk, PolygonDomain]


class UnsupportedDomainError(ValueError):
    pass


def unit_disk() -> GeneralizedDisk:
    return GeneralizedDisk(MobiusMap.identity(), "unit disk")


def disk_domain(center: complex = 0, radius: float = 1.0, label: str = "") -> GeneralizedDisk:
    return GeneralizedDisk(MobiusMap.affine(radius, center), label)


def domain_from_json(d: dict) -> Domain:
    kind = d["kind"]
    if kind == "generalized_disk":
        return GeneralizedDisk(MobiusMap.from_json(d["map"]), d.get("label", ""))
    if kind == "disk":
        return disk_domain(complex(*d.get("center", [0, 0])), float(d["radius"]), d.get("label", ""))
    if kind == "polygon":
        return PolygonDomain(LoopPath.from_json(d["boundary"]), d.get("label", ""))
    raise ValueError(f"unknown domain kind {kind!r}")


def transform_domain(m: MobiusMap, d: Domain, n: int = 512) -> Domain:
    if isinstance(d, GeneralizedDisk):
        return GeneralizedDisk(m @ d.map, d.label)
    return PolygonDomain(transform_loop(m, d.boundary_loop), d.label)


def domain_hash_payload(d: Domain) -> dict:
    return d.to_json()


# ---------------------------------------------------------------------------
# configurations


class Configuration:
    """Finite set of disjoint loops tagged with their domain."""

    def __init__(self, loops: Sequence[LoopPath], domain: Domain | None = None, *, lattice=None):
        self.loops = tuple(loops)
        self.domain = domain
        self.lattice = lattice

    def __len__(self) -> int:
        return len(self.loops)

    def __iter__(self):
        return iter(self.loops)

    def __repr__(self) -> str:
        return f"Configuration({len(self.loops)} loops)"

    @cached_property
    def rings(self) -> np.ndarray:
        return np.array([l.ring for l in self.loops], dtype=object)

    @cached_property
    def polygons(self) -> np.ndarray:
        return np.array([l.polygon for l in self.loops], dtype=object)

    @cached_property
    def areas(self) -> np.ndarray:
        return np.array([l.area for l in self.loops], dtype=float)

    def touching(self, geom, tol: float = TAU_GEOM) -> np.ndarray:
        """Boolean mask of loops within ``tol`` of a shapely geometry."""
        if not self.loops:
            return np.zeros(0, bool)
        return shapely.dwithin(self.rings, geom, tol)

    def surrounding(self, s) -> np.ndarray:
        if not self.loops:
            return np.zeros(0, bool)
        if isinstance(s, Disk):
            inside = shapely.contains_xy(self.polygons, s.center.real, s.center.imag)
            far = ~shapely.dwithin(self.rings, ShapelyPoint(s.center.real, s.center.imag), s.radius + TAU_GEOM)
            return inside & far
        if isinstance(s, LoopPath):
            p = s.vertices[0]
            inside = shapely.contains_xy(self.polygons, p.real, p.imag)
            return inside & ~self.touching(s.ring)
        pts = shape_points(s)
        out = np.ones(len(self.loops), bool)
        for p in pts:
            out &= shapely.contains_xy(self.polygons, p.real, p.imag)
        return out & ~self.touching(shape_geometry(s))

    def containing_point(self, p: complex) -> np.ndarray:
        if not self.loops:
            return np.zeros(0, bool)
        inside = shapely.contains_xy(self.polygons, p.real, p.imag)
        return inside & ~self.touching(ShapelyPoint(p.real, p.imag))

    def subset(self, idx) -> "Configuration":
        return Configuration([self.loops[i] for i in idx], self.domain, lattice=self.lattice)

    def with_domain(self, domain: Domain) -> "Configuration":
        return Configuration(self.loops, domain, lattice=self.lattice)

    def inside_loop(self, k: int) -> list[int]:
        """Indices of loops strictly inside loop ``k``."""
        g = self.loops[k]
        return [j for j in range(len(self.loops)) if j != k and loop_inside(self.loops[j], g)]

    def to_json(self) -> dict:
        return {
            "domain": None if self.domain is None else self.domain.to_json(),
            "loops": [l.to_json() for l in self.loops],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Configuration":
        dom = None if d.get("domain") is None else domain_from_json(d["domain"])
        return cls([LoopPath.from_json(p) for p in d["loops"]], dom)


def transform_configuration(m: MobiusMap, cfg: Configuration, tol: float = 1e-3) -> Configuration:
    loops = [transform_loop(m, l, tol) for l in cfg.loops]
    dom = None if cfg.domain is None else transform_domain(m, cfg.domain)
    return Configuration(loops, dom)


def validate_configuration(cfg: Configuration) -> None:
    """Raise if loops intersect each other or touch the domain boundary."""
    if len(cfg.loops) > 1:
        tree = shapely.STRtree(list(cfg.rings))
        a, b = tree.query(cfg.rings, predicate="dwithin", distance=TAU_GEOM)
        bad = a < b
        if np.any(bad):
            i, j = int(a[bad][0]), int(b[bad][0])
            raise ValueError(f"loops {i} and {j} intersect")
    if cfg.domain is not None and cfg.loops:
        bd = cfg.domain.geometry.exterior
        hit = np.flatnonzero(cfg.touching(bd))
        if len(hit):
            raise ValueError(f"loop {int(hit[0])} meets the domain boundary")


def nesting_forest(cfg: Configuration) -> list[int]:
    """Parent index per loop (-1 for outer loops).

    The parent is the innermost loop strictly containing the loop; for
    disjoint loops containing loops are nested, so innermost = least area.
    """
    n = len(cfg.loops)
    parent = [-1] * n
    if n == 0:
        return parent
    validate_configuration(Configuration(cfg.loops))
    tree = shapely.STRtree(list(cfg.polygons))
    pts = np.array([l.vertices[0] for l in cfg.loops])
    probe = shapely.points(pts.real, pts.imag)
    inner, outer = tree.query(probe, predicate="within")
    areas = cfg.areas
    best = np.full(n, np.inf)
    for i, j in zip(inner, outer):
        if i == j:
            continue
        if areas[j] < best[i]:
            best[i] = areas[j]
            parent[i] = int(j)
    return parent


def nesting_depth(parent: list[int]) -> list[int]:
    depth = []
    for i in range(len(parent)):
        d, k = 0, parent[i]
        while k >= 0:
            d += 1
            k = parent[k]
        depth.append(d)
    return depth


# ---------------------------------------------------------------------------
# Moebius images of curves


def transform_loop(m: MobiusMap, l: LoopPath, tol: float = 1e-3, max_rounds: int = 12) -> LoopPath:
    """Image of a loop, refined so image edges track the true image arcs."""
    v = l.vertices
    if m.is_affine:
        return LoopPath(m.apply(v), trusted=True)
    pole = m.pole
    if float(distance_to_loop(l, pole)[0]) < TAU_GEOM:
        raise ValueError("loop passes through the pole of the map")
    pts = v
    for _ in range(max_rounds):
        q = np.roll(pts, -1)
        mid = 0.5 * (pts + q)
        fp, fq, fm = m.apply(pts), m.apply(q), m.apply(mid)
        dev = np.abs(fm - 0.5 * (fp + fq))
        bad = dev > tol
        if not np.any(bad):
            return LoopPath(m.apply(pts), trusted=True)
        out = np.empty(len(pts) + int(bad.sum()), dtype=complex)
        idx = np.arange(len(pts)) + np.concatenate([[0], np.cumsum(bad)[:-1]])
        out[idx] = pts
        out[idx[bad] + 1] = mid[bad]
        pts = out
    return LoopPath(m.apply(pts), trusted=True)


def _circumcircle(z1: complex, z2: complex, z3: complex) -> tuple[complex, float]:
    ax, ay = z1.real, z1.imag
    bx, by = z2.real, z2.imag
    cx, cy = z3.real, z3.imag
    d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) < 1e-300:
        raise ValueError("collinear points")
    ux = ((ax**2 + ay**2) * (by - cy) + (bx**2 + by**2) * (cy - ay) + (cx**2 + cy**2) * (ay - by)) / d
    uy = ((ax**2 + ay**2) * (cx - bx) + (bx**2 + by**2) * (ax - cx) + (cx**2 + cy**2) * (bx - ax)) / d
    c = complex(ux, uy)
    return c, abs(z1 - c)


def transform_disk(m: MobiusMap, s: Disk) -> Disk:
    if m.is_affine:
        return Disk(m(s.center), s.radius * abs(m.a / m.d))
    p = m.pole
    if abs(p - s.center) <= s.radius + TAU_GEOM:
        raise ValueError("disk contains the pole of the map")
    z = s.center + s.radius * np.exp(2j * np.pi * np.array([0, 1, 2]) / 3)
    c, r = _circumcircle(*m.apply(z))
    return Disk(c, r)


def transform_shape(m: MobiusMap, s, tol: float = 1e-3):
    if isinstance(s, LoopPath):
        return transform_loop(m, s, tol)
    if isinstance(s, Disk):
        return transform_disk(m, s)
    if isinstance(s, PointSet):
        if not m.is_affine and any(abs(p - m.pole) < TAU_GEOM for p in s.points):
            raise ValueError("point set contains the pole of the map")
        return PointSet(tuple(m.apply(s.array)))
    raise TypeError(type(s))


def shape_hits_point(s, p: complex) -> bool:
    if is_inf(p):
        return False
    if isinstance(s, LoopPath):
        return float(distance_to_loop(s, p)[0]) < TAU_GEOM
    if isinstance(s, Disk):
        return abs(p - s.center) <= s.radius + TAU_GEOM
    return any(abs(q - p) < TAU_GEOM for q in s.points)


# ---------------------------------------------------------------------------
# radius / extent


def _circle_two(a: complex, b: complex):
    c = 0.5 * (a + b)
    return c, abs(a - c)


def _circle_three(a: complex, b: complex, c: complex):
    try:
        return _circumcircle(a, b, c)
    except ValueError:
        # collinear: widest pair
        pairs = [(a, b), (a, c), (b, c)]
        p = max(pairs, key=lambda t: abs(t[0] - t[1]))
        return _circle_two(*p)


def minimum_enclosing_circle(points, seed: int = 0) -> tuple[complex, float]:
    """Welzl's randomized incremental algorithm (iterative form)."""
    pts = np.unique(np.asarray(points, dtype=complex).ravel())
    if len(pts) == 0:
        raise ValueError("empty point set")
    rng = np.random.default_rng(seed)
    pts = list(pts[rng.permutation(len(pts))])
    eps = 1e-12

    def inside(c, r, p):
        return abs(p - c) <= r * (1 + eps) + eps

    c, r = pts[0], 0.0
    for i in range(1, len(pts)):
        p = pts[i]
        if inside(c, r, p):
            continue
        c, r = p, 0.0
        for j in range(i):
            q = pts[j]
            if inside(c, r, q):
                continue
            c, r = _circle_two(p, q)
            for k in range(j):
                s = pts[k]
                if not inside(c, r, s):
                    c, r = _circle_three(p, q, s)
    return complex(c), float(r)


def extent_radius(s, d: Domain) -> tuple[float, float]:
    """(radius, extent) of a set measured in the unit-disk chart of ``d``."""
    if not isinstance(d, GeneralizedDisk):
        raise UnsupportedDomainError("radius is only defined for generalized disks")
    pts = shape_points(s)
    w = d.canonical_map.apply(pts)
    if not np.all(np.isfinite(w)) or np.any(np.abs(w) > 1 + 1e-9):
        raise ValueError("set is not inside the domain")
    _, r = minimum_enclosing_circle(w)
    r = min(r, 1.0)
    return r, 2 * r


def loop_radius(l: LoopPath) -> float:
    """Radius in the identity chart (minimal enclosing disk)."""
    return minimum_enclosing_circle(l.sample_points())[1]


# ---------------------------------------------------------------------------
# Hausdorff distances


def _densify(l: LoopPath, k: int) -> np.ndarray:
    p, q = l.edges()
    t = np.arange(k) / k
    return (p[:, None] + t[None, :] * (q - p)[:, None]).ravel()


def loop_hausdorff(a: LoopPath, b: LoopPath, k: int = 8) -> float:
    """Hausdorff distance between two polylines.

    Each side is densified (k points per edge) and measured exactly against
    the other polyline.
    """
    pa, pb = _densify(a, k), _densify(b, k)
    da = distance_to_loop(b, pa).max()
    db = distance_to_loop(a, pb).max()
    return float(max(da, db))


def hausdorff_distance(a: Configuration, b: Configuration, k: int = 8) -> float:
    """Two-level Hausdorff distance between configurations."""
    na, nb = len(a.loops), len(b.loops)
    if na == 0 and nb == 0:
        return 0.0
    if na == 0 or nb == 0:
        return math.inf
    D = np.array([[loop_hausdorff(x, y, k) for y in b.loops] for x in a.loops])
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


# ---------------------------------------------------------------------------
# conformal radius (walk on spheres)


@numba.njit(cache=True, nogil=True)
def _wos(px, py, qx, qy, z0x, z0y, n_walks, eps, seed):
    np.random.seed(seed)
    m = px.shape[0]
    out = np.empty(n_walks)
    for w in range(n_walks):
        x, y = z0x, z0y
        for _ in range(100000):
            best = 1e300
            bx, by = x, y
            for k in range(m):
                ex, ey = qx[k] - px[k], qy[k] - py[k]
                L2 = ex * ex + ey * ey
                t = ((x - px[k]) * ex + (y - py[k]) * ey) / L2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
                cx, cy = px[k] + t * ex, py[k] + t * ey
                d2 = (x - cx) ** 2 + (y - cy) ** 2
                if d2 < best:
                    best = d2
                    bx, by = cx, cy
            d = np.sqrt(best)
            if d < eps:
                x, y = bx, by
                break
            th = 2.0 * np.pi * np.random.random()
            x += d * np.cos(th)
            y += d * np.sin(th)
        out[w] = 0.5 * np.log((x - z0x) ** 2 + (y - z0y) ** 2)
    return out


@dataclass(frozen=True)
class ConformalRadius:
    value: float
    stderr: float
    log_mean: float
    log_stderr: float
    n_walks: int


def conformal_radius(l: LoopPath, z0: complex, n_walks: int = 10000, eps: float | None = None,
                     seed: int = 0) -> ConformalRadius:
    """Conformal radius of the interior of ``l`` seen from ``z0``.

    log crad = E[log|W - z0|] with W the harmonic-measure exit point.
    """
    if point_in_loop(l, z0) != "inside":
        raise ValueError("z0 must lie strictly inside the loop")
    p, q = l.edges()
    if eps is None:
        eps = 1e-6 * math.sqrt(abs(l.area))
    logs = _wos(p.real.copy(), p.imag.copy(), q.real.copy(), q.imag.copy(),
                z0.real, z0.imag, int(n_walks), float(eps), int(seed) % (2**32))
    mu = float(logs.mean())
    se = float(logs.std(ddof=1) / math.sqrt(len(logs))) if len(logs) > 1 else 0.0
    val = math.exp(mu)
    return ConformalRadius(val, val * se, mu, se, int(n_walks))
