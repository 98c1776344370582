"""Whole-plane probabilities from rescaled loops around a shrinking set.

A configuration on the unit disk is drawn, a scale lam is drawn log-uniformly
from a window, and the innermost loop surrounding the disk lam*D_B is
rescaled by 1/lam.  Averaging inner-domain probabilities over these loops
gives the whole-plane estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .conditioning import interior_spec
from .estimators import Estimate, LimitFit, extrapolate_limit, series_estimate
from .events import (
    Event,
    Not,
    Surrounds,
    compile_event,
    evaluate,
    support,
    transform_event,
)
from .geometry import (
    INF,
    Configuration,
    Disk,
    LoopPath,
    MobiusMap,
    conformal_radius,
    distance_to_loop,
    lambda_flow,
    surrounds_shape,
)
from .lattice import LatticeSpec, LoopGasState, Sampler, SamplerParams, derive_seed, loops_around


class FallbackRateError(RuntimeError):
    """Too many draws had no loop around the shrunken disk."""


@dataclass
class NuBSampler:
    """Sampler of rescaled innermost loops around lam * D_B."""

    radius: float
    base: Sampler
    lambda_window: tuple[float, float] | None = None
    max_fallback_rate: float = 0.995
    min_draws: int = 2000  # draws before the fallback rate is judged
    rng: np.random.Generator | None = None
    draws: int = 0
    fallbacks: int = 0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("D_B must have positive radius")
        if self.lambda_window is None:
            a = self.base.spec.spacing
            self.lambda_window = (8 * a / self.radius, 0.25)
        lo, hi = self.lambda_window
        if not (0 < lo < hi):
            raise ValueError(f"empty lambda window {self.lambda_window}")
        if hi * self.radius >= 1:
            raise ValueError("lambda window too large for the unit disk")
        if self.rng is None:
            self.rng = np.random.default_rng(derive_seed(self.base.params.seed, 104729))
        self._stream = None

    @classmethod
    def for_support(cls, B, base: Sampler, **kw) -> "NuBSampler":
        """B is a SupportSet or an array of points."""
        r = B.max_modulus() if hasattr(B, "max_modulus") else float(np.abs(np.asarray(B)).max())
        return cls(r, base, **kw)

    @property
    def fallback_rate(self) -> float:
        return self.fallbacks / self.draws if self.draws else 0.0

    def draw_lambda(self) -> float:
        lo, hi = self.lambda_window
        return float(math.exp(self.rng.uniform(math.log(lo), math.log(hi))))

    def next_state(self):
        if self._stream is None:
            self._stream = self.base.states()
        return next(self._stream)


@dataclass(frozen=True)
class NuBSample:
    loop: LoopPath
    lam: float
    source: LoopPath = field(repr=False)

    def to_json(self) -> dict:
        return {"loop": self.loop.to_json(), "lambda": self.lam, "fallback": False}


def innermost_surrounding(loops: Sequence[LoopPath], target: Disk) -> LoopPath | None:
    best = None
    for g in loops:
        if surrounds_shape(g, target) and (best is None or g.area < best.area):
            best = g
    return best


def sample_nu_B(s: NuBSampler, rng: np.random.Generator | None = None, min_draws: int | None = None) -> NuBSample:
    """One rescaled loop; fallback draws are counted and skipped."""
    if rng is not None:
        s.rng = rng
    if min_draws is None:
        min_draws = s.min_draws
    while True:
        st = s.next_state()
        lam = s.draw_lambda()
        s.draws += 1
        g = innermost_surrounding(loops_around(st, 0j), Disk(0j, lam * s.radius))
        if g is None:
            s.fallbacks += 1
            if s.draws >= min_draws and s.fallback_rate > s.max_fallback_rate:
                raise FallbackRateError(f"fallback rate {s.fallback_rate:.3f} above threshold")
            continue
        return NuBSample(LoopPath(g.vertices / lam, trusted=True), lam, g)


# ---------------------------------------------------------------------------
# successive scales


@dataclass(frozen=True)
class ScaleRatioStats:
    ratios: np.ndarray
    crads: np.ndarray
    depths: np.ndarray
    max_jump_ratio: float
    max_jump_crad: float

    def to_json(self) -> dict:
        return {"n_ratios": int(len(self.ratios)), "n_crads": int(len(self.crads)),
                "mean_depth": float(self.depths.mean()) if len(self.depths) else 0.0,
                "max_depth": int(self.depths.max()) if len(self.depths) else 0,
                "ratio_quantiles": _quantiles(self.ratios), "crad_quantiles": _quantiles(self.crads),
                "max_jump_ratio": self.max_jump_ratio, "max_jump_crad": self.max_jump_crad}


def _quantiles(x) -> list:
    if len(x) == 0:
        return []
    return [float(v) for v in np.quantile(x, [0.1, 0.25, 0.5, 0.75, 0.9])]


def _max_jump(x: np.ndarray) -> float:
    if len(x) == 0:
        return 0.0
    _, counts = np.unique(np.round(x, 12), return_counts=True)
    return float(counts.max() / len(x))


def nested_around_origin(item) -> list[LoopPath]:
    """Loops containing the origin, outermost first (state or configuration)."""
    if isinstance(item, LoopGasState):
        loops = loops_around(item, 0j)
    else:
        if not item.loops:
            return []
        loops = [item.loops[i] for i in np.flatnonzero(item.containing_point(0j))]
    return sorted(loops, key=lambda g: -g.area)


def scale_ratio_stats(cfgs, n_walks: int = 400, seed: int = 0, min_loops: int = 2) -> ScaleRatioStats:
    """Successive-scale ratios and rescaled conformal radii around the origin."""
    ratios, crads, depths = [], [], []
    for j, cfg in enumerate(cfgs):
        chain = nested_around_origin(cfg)
        depths.append(len(chain))
        d_prev = None
        for n, g in enumerate(chain):
            d = float(distance_to_loop(g, 0j)[0])
            if d_prev is not None:
                ratios.append(d_prev / d)
            d_prev = d
            if n_walks:
                cr = conformal_radius(g, 0j, n_walks=n_walks, seed=derive_seed(seed, j, n) % (2**32))
                crads.append(cr.value / d)
    ratios = np.asarray(ratios)
    if len(ratios) < min_loops - 1:
        raise ValueError("too few nested loops")
    crads = np.asarray(crads)
    return ScaleRatioStats(ratios, crads, np.asarray(depths), _max_jump(ratios), _max_jump(crads))


def ks_same(a, b) -> float:
    """Two-sample KS p-value."""
    return float(stats.ks_2samp(np.asarray(a), np.asarray(b)).pvalue)


# ---------------------------------------------------------------------------
# whole-plane estimator


@dataclass
class SpherePlan:
    """Settings of the nested whole-plane estimator.

    ``condition_inner`` conditions each inner draw on no loop inside the
    rescaled loop surrounding the shrunken disk, which is what the innermost
    choice implies for the interior; without it the literal unconditioned
    inner probability is averaged.
    """

    base_spec: LatticeSpec
    params: SamplerParams = field(default_factory=SamplerParams)
    h: MobiusMap = field(default_factory=MobiusMap.identity)
    lambda_window: tuple[float, float] | None = None
    n_outer: int = 200
    inner_budget: int = 200
    inner_thermalization: int | None = None
    condition_inner: bool = True
    transform_tol: float = 1e-3
    max_fallback_rate: float = 0.995
    fallback_min_draws: int = 2000

    def with_h(self, h: MobiusMap) -> "SpherePlan":
        return SpherePlan(self.base_spec, self.params, h, self.lambda_window, self.n_outer, self.inner_budget,
                          self.inner_thermalization, self.condition_inner, self.transform_tol,
                          self.max_fallback_rate, self.fallback_min_draws)


@dataclass(frozen=True)
class SphereResult:
    estimate: Estimate
    inner_means: np.ndarray = field(repr=False)
    lambdas: np.ndarray = field(repr=False)
    fallback_rate: float = 0.0
    radius: float = 0.0
    skipped: int = 0

    def to_json(self) -> dict:
        return {"estimate": self.estimate.to_json(), "fallback_rate": self.fallback_rate, "radius": self.radius,
                "skipped": self.skipped, "n_outer": int(len(self.inner_means))}


def _inner_probability(event: Event, Y: Event | None, sub: LatticeSpec | None, sampler_params: SamplerParams,
                       budget: int) -> float | None:
    if sub is None:
        empty = Configuration([])
        if Y is not None and not evaluate(Y, empty):
            return None
        return float(evaluate(event, empty))
    chain = Sampler(sub, sampler_params)
    fe = compile_event(event, sub)
    fy = None if Y is None else compile_event(Y, sub)
    a = np.zeros(budget)
    b = np.ones(budget)
    for i, st in enumerate(chain.states(budget)):
        if fy is not None:
            b[i] = fy(st)
        a[i] = fe(st) if b[i] else 0.0
    if b.sum() == 0:
        return None
    return float(a.sum() / b.sum())


def estimate_prob_sphere(X: Event, plan: SpherePlan) -> SphereResult:
    """Nested estimate of the whole-plane probability of X."""
    hX = transform_event(plan.h, X, plan.transform_tol)
    sup = support(hX)
    if sup.is_empty:
        e = Estimate.exact(float(evaluate(X, Configuration([]))), "sphere")
        return SphereResult(e, np.zeros(0), np.zeros(0))
    R = sup.max_modulus()
    base = Sampler(plan.base_spec, plan.params)
    nu = NuBSampler(R, base, plan.lambda_window, plan.max_fallback_rate, plan.fallback_min_draws)
    vals, lams = [], []
    skipped = 0
    for j in range(plan.n_outer):
        smp = sample_nu_B(nu)
        lam = smp.lam
        inner_event = transform_event(MobiusMap.scaling(lam), hX, plan.transform_tol)
        if not np.all(_inside(smp.source, support(inner_event).points())):
            raise AssertionError("inner support exits the sampled domain")
        Y = Not(Surrounds(Disk(0j, lam * R))) if plan.condition_inner else None
        sub = interior_spec(plan.base_spec, smp.source)
        changes = {} if plan.inner_thermalization is None else {"thermalization": plan.inner_thermalization}
        p = _inner_probability(inner_event, Y, sub, plan.params.child(31337, j, **changes), plan.inner_budget)
        if p is None:
            skipped += 1
            continue
        vals.append(p)
        lams.append(lam)
    vals = np.asarray(vals)
    est = series_estimate(vals, "sphere", binary=False)
    lo, hi = est.ci95
    est = Estimate(est.mean, est.stderr, est.n_effective, (max(lo, 0.0), min(hi, 1.0)), "sphere",
                   est.n_samples, est.tau)
    return SphereResult(est, vals, np.asarray(lams), nu.fallback_rate, R, skipped)


def _inside(loop: LoopPath, pts) -> np.ndarray:
    import shapely

    pts = np.asarray(pts)
    return shapely.contains_xy(loop.polygon, pts.real, pts.imag)


# ---------------------------------------------------------------------------
# checks


@dataclass(frozen=True)
class InvarianceReport:
    mode: str
    left: Estimate
    right: Estimate
    discrepancy: float
    sigma: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"mode": self.mode, "left": self.left.to_json(), "right": self.right.to_json(),
                "discrepancy": self.discrepancy, "sigma": self.sigma, "passed": self.passed, **self.detail}


def _report(mode, left: Estimate, right: Estimate, k: float = 3.0, **detail) -> InvarianceReport:
    d = left.mean - right.mean
    s = math.hypot(left.stderr, right.stderr)
    ok = abs(d) <= k * s if s > 0 else d == 0
    return InvarianceReport(mode, left, right, d, s, bool(ok), detail)


def shrink_route(X: Event, spec: LatticeSpec, params: SamplerParams, lambdas: Sequence[float], budget: int,
                 z: complex = 0j, zp: complex = INF, Xp: Event | None = None, model: str = "linear") -> LimitFit:
    """lim_{lam -> 0} P(lam_{z,z'} X [, X'])_C by extrapolation over a lam grid."""
    from .estimators import estimate_prob

    pts = []
    for k, lam in enumerate(sorted(lambdas, reverse=True)):
        e = transform_event(lambda_flow(z, zp, lam), X)
        if Xp is not None:
            e = e & Xp
        est = estimate_prob(e, spec.domain, Sampler(spec, params.child(4243, k)), budget)
        pts.append((lam, est))
    return extrapolate_limit(pts, model)


def check_invariance_factorization(mode: str, inputs: dict) -> InvarianceReport:
    """global_invariance | factorization | mirror_symmetry."""
    plan: SpherePlan = inputs["plan"]
    X: Event = inputs["X"]
    if mode == "global_invariance":
        G: MobiusMap = inputs["G"]
        if support(X).hits_point(G.pole):
            raise ValueError("G sends a support point to infinity")
        left = estimate_prob_sphere(X, plan).estimate
        right = estimate_prob_sphere(transform_event(G, X), plan).estimate
        return _report(mode, left, right)
    if mode == "mirror_symmetry":
        sup = support(X)
        if sup.hits_point(1j) or sup.hits_point(-1j):
            raise ValueError("support must avoid +i and -i")
        h = MobiusMap(1, -1j, 1, 1j)
        hs = MobiusMap(1, 1j, 1, -1j)
        left = estimate_prob_sphere(X, plan.with_h(h)).estimate
        right = estimate_prob_sphere(X, plan.with_h(hs)).estimate
        return _report(mode, left, right)
    if mode == "factorization":
        Xp: Event = inputs["Xp"]
        spec: LatticeSpec = inputs["spec"]
        lambdas = inputs["lambdas"]
        budget = inputs["budget"]
        z = inputs.get("z", 0j)
        zp = inputs.get("zp", INF)
        fit = shrink_route(X, spec, plan.params, lambdas, budget, z, zp, Xp)
        pX = estimate_prob_sphere(X, plan).estimate
        from .estimators import estimate_prob

        pXp = estimate_prob(Xp, spec.domain, Sampler(spec, plan.params.child(977)), budget)
        m = pX.mean * pXp.mean
        s = math.hypot(pX.stderr * pXp.mean, pXp.stderr * pX.mean)
        right = Estimate(m, s, min(pX.n_effective, pXp.n_effective), (m - 1.96 * s, m + 1.96 * s), "product")
        return _report(mode, fit.limit, right, fit=fit.to_json())
    raise ValueError(f"unknown mode {mode!r}")
