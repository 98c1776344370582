"""Probabilities on annular regions C minus closure(A).

Loops are forbidden from crossing a thin band inside dA (between dA and a
partner curve displaced by eps*u); conditioning on that and sending eps to
zero separates the two sides.  The checks compare limits obtained along
different routes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .estimators import Estimate, LimitFit, estimate_prob, extrapolate_limit, ratio_estimate
from .events import (
    BoundaryField,
    Event,
    FattenedBoundaryE,
    InvalidEpsilonError,
    SeparationE,
    canonical_json,
    compile_event,
    event_to_json,
    evaluate,
    make_partner_event,
    support,
    support_inside,
    transform_event,
)
from .geometry import (
    INF,
    Domain,
    GeneralizedDisk,
    MobiusMap,
    PolygonDomain,
    UnsupportedDomainError,
    disk_domain,
    distance_to_loop,
    lambda_flow,
    transform_domain,
)
from .lattice import LatticeSpec, Sampler, SamplerParams, extract_loops

DEFAULT_BUDGET_CAP = 200_000
MIN_ACCEPTED = 30


class AcceptanceCollapseError(RuntimeError):
    """Fewer than three usable eps points."""


def _domain_geometry(d: Domain):
    if isinstance(d, PolygonDomain):
        return d.boundary_loop.polygon
    return d.geometry


@dataclass(frozen=True)
class AnnularDomain:
    C: Domain
    A: Domain

    def __post_init__(self):
        gc, ga = _domain_geometry(self.C), _domain_geometry(self.A)
        if not gc.contains(ga) or gc.boundary.distance(ga.boundary) <= 0:
            raise ValueError("closure(A) must lie strictly inside C")

    def contains_support(self, e: Event) -> bool:
        sup = support(e)
        if sup.is_empty:
            return True
        return support_inside(e, self.C) and not sup.geometry.intersects(_domain_geometry(self.A))

    def to_json(self) -> dict:
        return {"C": self.C.to_json(), "A": self.A.to_json()}


def _separation(e: SeparationE) -> float:
    return float(np.min(distance_to_loop(e.alpha, e.beta.vertices)))


@dataclass
class PartnerFamily:
    """Partner events E(A, eps, u) on a decreasing eps grid."""

    A: Domain
    u: BoundaryField = field(default_factory=BoundaryField)
    epsilons: tuple = ()
    n_boundary: int = 256

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        self.epsilons = eps
        for e in eps:
            make_partner_event(self.A, e, self.u, self.n_boundary)

    @classmethod
    def geometric(cls, A: Domain, eps0: float, spacing: float, u: BoundaryField | None = None,
                  min_sep: float = 4.0, max_points: int = 6, n_boundary: int = 256) -> "PartnerFamily":
        """eps_k = eps0 2^-k while the band stays at least ``min_sep`` spacings wide."""
        u = BoundaryField() if u is None else u
        out = []
        for k in range(max_points):
            e = eps0 * 2.0**-k
            try:
                ev = make_partner_event(A, e, u, n_boundary)
            except InvalidEpsilonError:
                continue
            if _separation(ev) < min_sep * spacing:
                break
            out.append(e)
        return cls(A, u, tuple(out), n_boundary)

    def event(self, eps: float) -> FattenedBoundaryE:
        return make_partner_event(self.A, eps, self.u, self.n_boundary)

    def events(self) -> list[FattenedBoundaryE]:
        return [self.event(e) for e in self.epsilons]

    def to_json(self) -> dict:
        return {"A": self.A.to_json(), "u": self.u.to_json(), "epsilons": list(self.epsilons)}


# ---------------------------------------------------------------------------
# conditioned limits


@dataclass(frozen=True)
class EpsPoint:
    eps: float
    estimate: Estimate
    acceptance: float
    n_states: int
    accepted: int

    def to_json(self) -> dict:
        return {"eps": self.eps, "estimate": self.estimate.to_json(), "acceptance": self.acceptance,
                "n_states": self.n_states, "accepted": self.accepted}


@dataclass(frozen=True)
class ConditionedLimit:
    fit: LimitFit
    points: tuple
    dropped: tuple = ()

    @property
    def limit(self) -> Estimate:
        return self.fit.limit

    @property
    def acceptance_decreasing(self) -> bool:
        acc = [p.acceptance for p in self.points]
        return all(b <= a for a, b in zip(acc, acc[1:]))

    def to_json(self) -> dict:
        return {"fit": self.fit.to_json(), "points": [p.to_json() for p in self.points],
                "dropped": list(self.dropped)}


def conditional_point(X: Event, E: Event, sampler: Sampler, budget: int, cap: int = DEFAULT_BUDGET_CAP,
                      audit: int = 0) -> tuple[Estimate | None, float, int, int]:
    """P(X | E) by rejection on one chain; the budget is in accepted samples.

    A pilot of ``budget`` states sets the acceptance rate, then the chain
    runs to about budget/acceptance states (at most ``cap``).  ``audit``
    re-checks that many accepted states with the geometric evaluator.
    """
    fx = compile_event(X, sampler.spec)
    fe = compile_event(E, sampler.spec)
    a_list, b_list = [], []
    stream = sampler.states()
    target = budget
    checked = 0
    while len(b_list) < target:
        st = next(stream)
        e = fe(st)
        x = fx(st) if e else False
        if e and checked < audit:
            cfg = extract_loops(st)
            if not evaluate(E, cfg) or evaluate(X, cfg) != x:
                raise AssertionError("conditioned sample fails the defining predicate")
            checked += 1
        a_list.append(x and e)
        b_list.append(e)
        if len(b_list) == budget:
            acc = sum(b_list) / budget
            target = min(cap, int(math.ceil(budget / max(acc, 1.0 / budget))))
    b = np.asarray(b_list, float)
    a = np.asarray(a_list, float)
    acc = float(b.mean())
    k = int(b.sum())
    if k < MIN_ACCEPTED:
        return None, acc, len(b), k
    return ratio_estimate(a, b, "rejection"), acc, len(b), k


def conditioned_limit(X: Event, events: Sequence[tuple[float, Event]], spec: LatticeSpec, params: SamplerParams,
                      budget: int, cap: int = DEFAULT_BUDGET_CAP, model: str = "linear", audit: int = 0,
                      key: tuple = ()) -> ConditionedLimit:
    """lim_{eps -> 0} P(X | E_eps) on ``spec``; one child chain per eps."""
    pts, dropped = [], []
    for k, (eps, E) in enumerate(events):
        sampler = Sampler(spec, params.child(*key, 6007, k))
        est, acc, n, kacc = conditional_point(X, E, sampler, budget, cap, audit)
        if est is None:
            dropped.append(eps)
            continue
        pts.append(EpsPoint(eps, est, acc, n, kacc))
    if len(pts) < 3:
        raise AcceptanceCollapseError(f"only {len(pts)} usable eps points (dropped {dropped})")
    fit = extrapolate_limit([(p.eps, p.estimate) for p in pts], model)
    return ConditionedLimit(fit, tuple(pts), tuple(dropped))


def estimate_prob_annulus(X: Event, ann: AnnularDomain, fam: PartnerFamily, spec: LatticeSpec,
                          params: SamplerParams, budget: int, cap: int = DEFAULT_BUDGET_CAP,
                          model: str = "linear", audit: int = 0, key: tuple = ()) -> ConditionedLimit:
    """P(X) on C minus closure(A) as the eps -> 0 limit of P(X | E(A, eps, u))_C."""
    if not ann.contains_support(X):
        raise ValueError("event support must lie in C minus closure(A)")
    if fam.A != ann.A:
        raise ValueError("partner family is built on a different A")
    return conditioned_limit(X, [(e, fam.event(e)) for e in fam.epsilons], spec, params, budget, cap, model,
                             audit, key)


# ---------------------------------------------------------------------------
# checks


@dataclass(frozen=True)
class BoundaryReport:
    mode: str
    inputs_hash: str
    left: Estimate
    right: Estimate
    discrepancy: float
    sigma: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"mode": self.mode, "inputs_hash": self.inputs_hash, "left": self.left.to_json(),
                "right": self.right.to_json(), "discrepancy": self.discrepancy, "sigma": self.sigma,
                "verdict": "pass" if self.passed else "fail", **self.detail}


def _inputs_hash(inputs: dict) -> str:
    import hashlib

    def enc(v):
        if isinstance(v, Event):
            return event_to_json(v)
        if hasattr(v, "to_json"):
            try:
                return v.to_json()
            except (TypeError, ValueError):
                return repr(v)
        if isinstance(v, LatticeSpec):
            return v.hash
        if isinstance(v, complex):
            return [v.real, v.imag]
        if isinstance(v, (list, tuple)):
            return [enc(x) for x in v]
        if isinstance(v, SamplerParams):
            return repr(v)
        return v if isinstance(v, (int, float, str, type(None))) else repr(v)

    s = canonical_json({k: enc(v) for k, v in sorted(inputs.items())})
    return hashlib.sha256(s.encode()).hexdigest()[:16]


def _compare(mode: str, inputs: dict, left: Estimate, right: Estimate, k: float = 3.0, **detail) -> BoundaryReport:
    d = left.mean - right.mean
    s = math.hypot(left.stderr, right.stderr)
    ok = abs(d) <= k * s if s > 0 else abs(d) < 1e-12
    return BoundaryReport(mode, _inputs_hash(inputs), left, right, float(d), float(s), bool(ok), detail)


def _spec_like(spec: LatticeSpec, D: Domain, cells_across: float | None = None) -> LatticeSpec:
    """Lattice for D: the same spacing and origin unless a cell count is given."""
    if cells_across is not None:
        return LatticeSpec.for_domain(D, cells_across=cells_across)
    return LatticeSpec.for_domain(D, spacing=spec.spacing, origin=spec.lattice.origin)


def _disk_of(d: Domain) -> tuple[complex, float]:
    if not isinstance(d, GeneralizedDisk):
        raise UnsupportedDomainError("a round domain is needed here")
    c, r = d.circle()
    if math.isinf(r) or d.contains_infinity:
        raise UnsupportedDomainError("A must be a bounded disk")
    return complex(c), float(r)


def _eps_events(fam: PartnerFamily) -> list[tuple[float, Event]]:
    return [(e, fam.event(e)) for e in fam.epsilons]


def outside_picture(A: Domain) -> MobiusMap:
    """Map sending the complement of closure(A) to a bounded disk (A round)."""
    c, _ = _disk_of(A)
    return MobiusMap(0, 1, 1, -c)


def verify_boundary_limits(mode: str, inputs: dict) -> BoundaryReport:
    """thcr1 | thcr2 | theopt | thcr3 two-route comparisons with 3 sigma verdicts.

    Common inputs: X, spec (lattice on C), params, budget; optionally cap,
    model, audit.
    """
    X: Event = inputs["X"]
    spec: LatticeSpec = inputs["spec"]
    params: SamplerParams = inputs["params"]
    budget: int = inputs["budget"]
    cap = inputs.get("cap", DEFAULT_BUDGET_CAP)
    model = inputs.get("model", "linear")
    audit = inputs.get("audit", 0)
    C = spec.domain

    if mode == "thcr1":
        fam: PartnerFamily = inputs["fam"]
        A = fam.A
        AnnularDomain(C, A)
        if not support_inside(X, A):
            raise ValueError("X must be supported inside A")
        left = conditioned_limit(X, _eps_events(fam), spec, params, budget, cap, model, audit, key=(1,))
        spec_A = _spec_like(spec, A)
        direct = estimate_prob(X, A, Sampler(spec_A, params.child(2, 1)), inputs.get("direct_budget", budget * 4))
        return _compare(mode, inputs, left.limit, direct, left_fit=left.to_json(),
                        acceptance_decreasing=left.acceptance_decreasing)

    if mode == "thcr2":
        fam: PartnerFamily = inputs["fam"]
        fam_C: PartnerFamily = inputs["fam_C"]
        A = fam.A
        ann = AnnularDomain(C, A)
        if fam_C.A != C:
            raise ValueError("fam_C must be built on C")
        left = estimate_prob_annulus(X, ann, fam, spec, params, budget, cap, model, audit, key=(1,))
        M = outside_picture(A)
        D = _outer_disk(A)
        spec_out = _spec_like(spec, D, inputs.get("cells_across_out"))
        MX = transform_event(M, X)
        evs = []
        for e in fam_C.epsilons:
            ev = transform_event(M, fam_C.event(e))
            if _separation(ev) >= inputs.get("min_sep", 4.0) * spec_out.spacing:
                evs.append((e, ev))
        right = conditioned_limit(MX, evs, spec_out, params, budget, cap, model, audit, key=(2,))
        return _compare(mode, inputs, left.limit, right.limit, left_fit=left.to_json(), right_fit=right.to_json())

    if mode == "theopt":
        A: Domain = inputs["A"]
        z = inputs.get("z", 0j)
        zp = inputs.get("zp", INF)
        lambdas = sorted(inputs["lambdas"], reverse=True)
        u = inputs.get("u", BoundaryField())
        eps_frac = inputs.get("eps_frac", 0.8)
        pts, per = [], []
        for j, lam in enumerate(lambdas):
            A_l = transform_domain(lambda_flow(z, zp, lam), A)
            _, r = _disk_of(A_l)
            fam = PartnerFamily.geometric(A_l, eps_frac * r, spec.spacing, u, inputs.get("min_sep", 4.0))
            cl = estimate_prob_annulus(X, AnnularDomain(C, A_l), fam, spec, params, budget, cap, model, audit,
                                       key=(3, j))
            pts.append((lam, cl.limit))
            per.append({"lambda": lam, **cl.to_json()})
        fit = extrapolate_limit(pts, model)
        direct = estimate_prob(X, C, Sampler(spec, params.child(2, 3)), inputs.get("direct_budget", budget * 4))
        return _compare(mode, inputs, fit.limit, direct, per_lambda=per, fit=fit.to_json())

    if mode == "thcr3":
        fam: PartnerFamily = inputs["fam"]
        g: MobiusMap = inputs["g"]
        A = fam.A
        ann = AnnularDomain(C, A)
        left = estimate_prob_annulus(X, ann, fam, spec, params, budget, cap, model, audit, key=(4,))
        Cs = transform_domain(g, C)
        As = transform_domain(g, A)
        spec_s = spec if Cs == C else LatticeSpec.for_domain(Cs, cells_across=_cells_across(spec))
        fam_s = PartnerFamily(As, fam.u, fam.epsilons, fam.n_boundary)
        right = estimate_prob_annulus(transform_event(g, X), AnnularDomain(Cs, As), fam_s, spec_s, params, budget,
                                      cap, model, audit, key=(4,))
        return _compare(mode, inputs, left.limit, right.limit, left_fit=left.to_json(), right_fit=right.to_json())

    raise ValueError(f"unknown mode {mode!r}")


def _outer_disk(A: Domain) -> GeneralizedDisk:
    """Image of the complement of closure(A) under ``outside_picture(A)``."""
    _, r = _disk_of(A)
    # 1/(z - c) sends |z - c| = r to |w| = 1/r and infinity to 0
    return disk_domain(0j, 1.0 / r)


def _cells_across(spec: LatticeSpec) -> float:
    import shapely

    x0, y0, x1, y1 = shapely.bounds(_domain_geometry(spec.domain))
    return max(x1 - x0, y1 - y0) / (math.sqrt(3) * spec.spacing)


# ---------------------------------------------------------------------------
# ratio of partner-event probabilities


@dataclass(frozen=True)
class CorssReport:
    inputs_hash: str
    left: LimitFit
    right: LimitFit
    discrepancy: float
    sigma: float
    passed: bool
    table: tuple = ()

    def to_json(self) -> dict:
        return {"mode": "corss", "inputs_hash": self.inputs_hash, "left": self.left.to_json(),
                "right": self.right.to_json(), "discrepancy": self.discrepancy, "sigma": self.sigma,
                "verdict": "pass" if self.passed else "fail", "acceptance_table": list(self.table)}


def _indicators(events: Sequence[Event], sampler: Sampler, budget: int, cap: int) -> np.ndarray:
    """Indicator rows; the run lasts until the rarest event has about ``budget`` hits."""
    comp = [compile_event(e, sampler.spec) for e in events]
    rows = []
    target = budget
    for st in sampler.states():
        rows.append([f(st) for f in comp])
        if len(rows) == budget:
            acc = max(float(np.asarray(rows).mean(axis=0).min()), 1.0 / budget)
            target = min(cap, int(math.ceil(budget / acc)))
        if len(rows) >= target:
            break
    return np.asarray(rows, bool)


def _quotient(num: Estimate, den: Estimate) -> Estimate:
    if den.mean <= 0:
        raise AcceptanceCollapseError("zero acceptance in a denominator")
    q = num.mean / den.mean
    s = abs(q) * math.hypot(num.stderr / num.mean if num.mean > 0 else 0.0, den.stderr / den.mean)
    if num.mean <= 0:
        s = num.stderr / den.mean
    return Estimate(q, s, min(num.n_effective, den.n_effective), (q - 1.96 * s, q + 1.96 * s), "quotient",
                    num.n_samples + den.n_samples)


def _series(x: np.ndarray) -> Estimate:
    from .estimators import series_estimate

    return series_estimate(x.astype(float))


def ratio_limit_corss(fam_A: PartnerFamily, fam_B: PartnerFamily, spec: LatticeSpec, params: SamplerParams,
                      budget: int, cap: int = DEFAULT_BUDGET_CAP, model: str = "linear",
                      inner: PartnerFamily | None = None) -> CorssReport:
    """Both sides of the partner-event ratio identity for A in B in C.

    left(eps)  = P(E(A,eps,u))_B / P(E(A,eps,u))_C
    right(eps) = P(E(B,eps,u'))_{C minus closure(A)} / P(E(B,eps,u'))_C

    The annulus probability on the right is itself an eps2 -> 0 limit of
    P(E(B,eps,u') | E(A,eps2,u))_C over the ``inner`` family (default
    fam_A).  Numerators and denominators come from independent chains.
    """
    A, B, C = fam_A.A, fam_B.A, spec.domain
    degenerate = B == C
    if not degenerate:
        AnnularDomain(C, B)
    AnnularDomain(B, A)
    inner = fam_A if inner is None else inner
    EA = fam_A.events()
    EB = fam_B.events()
    EI = inner.events()
    inputs = {"A": A, "B": B, "C": C, "u": fam_A.u, "u_prime": fam_B.u, "eps_A": fam_A.epsilons,
              "eps_B": fam_B.epsilons, "spec": spec, "params": params, "budget": budget}

    # denominators on C (one chain), left numerators on B
    den = _indicators(EA + EB, Sampler(spec, params.child(11)), budget, cap)
    spec_B = spec if degenerate else _spec_like(spec, B)
    num_left = _indicators(EA + (EB if degenerate else []), Sampler(spec_B, params.child(11 if degenerate else 12)),
                           budget, cap)
    left_pts, table = [], []
    for k, e in enumerate(fam_A.epsilons):
        q = _quotient(_series(num_left[:, k]), _series(den[:, k]))
        left_pts.append((e, q))
        table.append({"side": "left", "eps": e, "acc_B": float(num_left[:, k].mean()),
                      "acc_C": float(den[:, k].mean())})

    right_pts = []
    for k, e in enumerate(fam_B.epsilons):
        cl = conditioned_limit(EB[k], [(e2, EI[j]) for j, e2 in enumerate(inner.epsilons)], spec, params,
                               budget, cap, model, key=(13, k))
        d = _series(den[:, len(EA) + k])
        right_pts.append((e, _quotient(cl.limit, d)))
        table.append({"side": "right", "eps": e, "acc_C": float(d.mean),
                      "inner": [p.to_json() for p in cl.points]})
    left = extrapolate_limit(left_pts, model)
    right = extrapolate_limit(right_pts, model)
    dlt = left.limit.mean - right.limit.mean
    s = math.hypot(left.limit.stderr, right.limit.stderr)
    ok = abs(dlt) <= 1.959963984540054 * s if s > 0 else abs(dlt) < 1e-12
    return CorssReport(_inputs_hash(inputs), left, right, float(dlt), float(s), bool(ok), tuple(table))
