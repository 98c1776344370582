"""Monte Carlo estimates with autocorrelation-aware errors and limit fits."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize

from .events import (
    And,
    Event,
    Or,
    compile_event,
    support_inside,
)
from .geometry import Domain, MobiusMap, transform_domain
from .lattice import LatticeSpec, Sampler, SamplerParams


# ---------------------------------------------------------------------------
# autocorrelation


def autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of a series (FFT)."""
    x = np.asarray(x, float)
    n = len(x)
    if n == 0:
        return np.zeros(0)
    y = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, size)
    ac = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return ac


def _ips_tau(gamma: np.ndarray) -> tuple[float, bool]:
    """Initial positive (monotone) sequence estimate from autocovariances."""
    g0 = gamma[0]
    if g0 <= 0:
        return 1.0, True
    n = len(gamma)
    pairs = []
    for m in range(n // 2):
        G = gamma[2 * m] + gamma[2 * m + 1]
        if G <= 0:
            break
        if pairs and G > pairs[-1]:
            G = pairs[-1]
        pairs.append(G)
    terminated = len(pairs) < n // 2
    tau = (-g0 + 2.0 * sum(pairs)) / g0
    return max(tau, 1.0 / max(n, 1)), terminated


def autocorrelation_time(x) -> float:
    """Integrated autocorrelation time, tau = 1 + 2 sum rho_k."""
    x = np.asarray(x, float)
    if len(x) < 2:
        return 1.0
    tau, _ = _ips_tau(autocovariance(x))
    return float(tau)


# ---------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n_effective: float
    ci95: tuple[float, float]
    method: str = "mc"
    n_samples: int = 0
    tau: float = 1.0

    def __post_init__(self):
        lo, hi = self.ci95
        if not (lo <= self.mean <= hi) and not math.isnan(self.mean):
            raise ValueError("confidence interval must contain the mean")

    def to_json(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_eff": self.n_effective,
                "ci95": list(self.ci95), "method": self.method, "n": self.n_samples, "tau": self.tau}

    @classmethod
    def from_json(cls, d) -> "Estimate":
        return cls(d["mean"], d["stderr"], d["n_eff"], tuple(d["ci95"]), d.get("method", "mc"),
                   d.get("n", 0), d.get("tau", 1.0))

    @classmethod
    def exact(cls, value: float, method: str = "exact") -> "Estimate":
        return cls(value, 0.0, math.inf, (value, value), method)

    def z_to(self, other: "Estimate") -> float:
        s = math.hypot(self.stderr, other.stderr)
        d = self.mean - other.mean
        if s == 0:
            return 0.0 if d == 0 else math.inf
        return abs(d) / s


def wilson_interval(p: float, n_eff: float, z: float = 1.959963984540054) -> tuple[float, float]:
    if n_eff <= 0 or not math.isfinite(n_eff):
        return (p, p)
    den = 1 + z * z / n_eff
    c = (p + z * z / (2 * n_eff)) / den
    h = z * math.sqrt(p * (1 - p) / n_eff + z * z / (4 * n_eff * n_eff)) / den
    return (min(p, max(0.0, c - h)), max(p, min(1.0, c + h)))


def _estimate_from_stats(mean: float, var: float, tau: float, n: int, method: str,
                         binary: bool) -> Estimate:
    if n == 0:
        raise ValueError("no samples")
    if var <= 0:
        return Estimate(mean, 0.0, float(n), (mean, mean), method, n, 1.0)
    n_eff = n / tau
    se = math.sqrt(var / n_eff)
    if binary and min(mean, 1 - mean) * n_eff < 10:
        ci = wilson_interval(mean, n_eff)
    else:
        ci = (mean - 1.959963984540054 * se, mean + 1.959963984540054 * se)
    return Estimate(mean, se, n_eff, ci, method, n, tau)


class Accumulator:
    """Mergeable accumulator of per-chain series.

    Chains are kept separately and canonically ordered, so merging is
    associative and commutative and results do not depend on merge order.
    """

    def __init__(self, chains: Iterable[np.ndarray] = ()):
        self.chains: list[np.ndarray] = [np.asarray(c, float) for c in chains if len(c)]

    def push_chain(self, x) -> "Accumulator":
        x = np.asarray(x, float)
        if len(x):
            self.chains.append(x)
        return self

    def merge(self, other: "Accumulator") -> "Accumulator":
        return Accumulator(self.chains + other.chains)

    def __add__(self, other: "Accumulator") -> "Accumulator":
        return self.merge(other)

    @property
    def count(self) -> int:
        return int(sum(len(c) for c in self.chains))

    def _ordered(self) -> list[np.ndarray]:
        return sorted(self.chains, key=lambda c: (len(c), hashlib.sha256(c.tobytes()).digest()))

    def estimate(self, method: str = "mc", binary: bool = True) -> Estimate:
        chains = self._ordered()
        n = self.count
        if n == 0:
            raise ValueError("no samples")
        mean = math.fsum(math.fsum(c) for c in chains) / n
        L = max(len(c) for c in chains)
        num = np.zeros(L)
        cnt = np.zeros(L)
        for c in chains:
            y = c - mean
            m = len(c)
            size = 1 << (2 * m - 1).bit_length()
            f = np.fft.rfft(y, size)
            ac = np.fft.irfft(f * np.conj(f), size)[:m]
            num[:m] += ac
            cnt[:m] += m
        gamma = num / np.maximum(cnt, 1)
        var = float(gamma[0])
        tau, _ = _ips_tau(gamma)
        return _estimate_from_stats(mean, var, tau, n, method, binary)


def series_estimate(x, method: str = "mc", binary: bool = True) -> Estimate:
    return Accumulator([np.asarray(x, float)]).estimate(method, binary)


# ---------------------------------------------------------------------------
# probabilities


def _indicator_stream(events: Sequence[Event], sampler: Sampler, budget: int) -> np.ndarray:
    """(budget, len(events)) indicator matrix over emitted states."""
    comp = [compile_event(e, sampler.spec) for e in events]
    out = np.zeros((budget, len(events)), bool)
    cache: dict[bytes, tuple] = {}
    small = sampler.spec.n_edges <= 64
    for i, st in enumerate(sampler.states(budget)):
        if small:
            k = st.key()
            row = cache.get(k)
            if row is None:
                row = tuple(f(st) for f in comp)
                cache[k] = row
        else:
            row = tuple(f(st) for f in comp)
        out[i] = row
    return out


def _check_support(e: Event, d: Domain | None):
    if d is not None and not support_inside(e, d):
        raise ValueError("event support is not inside the domain")


def estimate_prob(e: Event, d: Domain | None, sampler: Sampler, budget: int) -> Estimate:
    """P(e) on the sampler's lattice from ``budget`` emitted states."""
    _check_support(e, d)
    if isinstance(e, And) and not e.items:
        return Estimate.exact(1.0, "trivial")
    if isinstance(e, Or) and not e.items:
        return Estimate.exact(0.0, "empty")
    x = _indicator_stream([e], sampler, budget)[:, 0]
    return series_estimate(x.astype(float))


def estimate_many(events: Sequence[Event], d: Domain | None, sampler: Sampler, budget: int) -> list[Estimate]:
    """Several events on one shared stream."""
    for e in events:
        _check_support(e, d)
    X = _indicator_stream(events, sampler, budget).astype(float)
    return [series_estimate(X[:, j]) for j in range(len(events))]


def ratio_estimate(a: np.ndarray, b: np.ndarray, method: str = "ratio") -> Estimate:
    """Ratio of means with a delta-method, autocorrelation-aware error."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    mb = b.mean()
    if mb <= 0:
        raise ValueError("zero accepted samples")
    R = a.mean() / mb
    z = (a - R * b) / mb
    tau = autocorrelation_time(z)
    n = len(a)
    var = float(np.mean((z - z.mean()) ** 2))
    acc = int(b.sum())
    if var <= 0:
        return Estimate(R, 0.0, float(acc), (R, R), method, n, 1.0)
    n_eff = n / tau
    se = math.sqrt(var / n_eff)
    k_eff = acc / tau
    if min(R, 1 - R) * k_eff < 10 and 0 <= R <= 1:
        ci = wilson_interval(R, k_eff)
    else:
        ci = (R - 1.959963984540054 * se, R + 1.959963984540054 * se)
    return Estimate(R, se, k_eff, ci, method, n, tau)


def estimate_conditional(X: Event, Xp: Event, d: Domain | None, sampler: Sampler, budget: int,
                         mode: str = "ratio") -> Estimate:
    """P(X | Xp) by ratio of means (default) or by conditioning the stream."""
    _check_support(X, d)
    _check_support(Xp, d)
    M = _indicator_stream([X, Xp], sampler, budget)
    a, b = M[:, 0] & M[:, 1], M[:, 1]
    if not b.any():
        raise ValueError("zero accepted samples")
    if mode == "ratio":
        return ratio_estimate(a.astype(float), b.astype(float))
    if mode == "rejection":
        return series_estimate(M[b, 0].astype(float), "rejection")
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# limits


@dataclass(frozen=True)
class LimitFit:
    abscissae: tuple
    estimates: tuple
    model: str
    limit: Estimate
    goodness: float
    params: tuple = ()
    cov: tuple = ()

    def to_json(self) -> dict:
        return {"abscissae": list(self.abscissae), "estimates": [e.to_json() for e in self.estimates],
                "model": self.model, "limit": self.limit.to_json(), "goodness": self.goodness,
                "params": list(self.params)}


def extrapolate_limit(points: Sequence[tuple[float, Estimate]], model: str = "linear",
                      power: float | None = None) -> LimitFit:
    """Weighted least-squares extrapolation to abscissa 0."""
    if len(points) < 3:
        raise ValueError("need at least 3 points")
    xs = np.array([p[0] for p in points], float)
    if np.any(np.diff(xs) >= 0) or np.any(xs <= 0):
        raise ValueError("abscissae must be positive and strictly decreasing")
    ests = [p[1] for p in points]
    ys = np.array([e.mean for e in ests])
    se = np.array([e.stderr for e in ests])
    floor = max(1e-12, 1e-6 * float(np.max(np.abs(ys))) if len(ys) else 1e-12)
    se = np.where(se > 0, se, floor)
    w = 1 / se**2
    if model in ("constant", "linear"):
        cols = [np.ones_like(xs)]
        if model == "linear":
            cols.append(xs)
        A = np.column_stack(cols)
        AtW = A.T * w
        M = AtW @ A
        if np.linalg.cond(M) > 1e14:
            raise ValueError("singular fit")
        cov = np.linalg.inv(M)
        beta = cov @ (AtW @ ys)
        resid = ys - A @ beta
    elif model == "power":
        def f(x, c0, c1, p):
            return c0 + c1 * x**p

        p0 = [ys[-1], ys[0] - ys[-1], 1.0 if power is None else power]
        try:
            beta, cov = optimize.curve_fit(f, xs, ys, p0=p0, sigma=se, absolute_sigma=True, maxfev=20000)
        except (RuntimeError, optimize.OptimizeWarning) as exc:
            raise ValueError(f"singular fit: {exc}") from None
        if not np.all(np.isfinite(cov)):
            raise ValueError("singular fit")
        resid = ys - f(xs, *beta)
    else:
        raise ValueError(f"unknown model {model!r}")
    k = len(beta)
    dof = len(xs) - k
    chi2 = float(np.sum(resid**2 * w))
    red = chi2 / dof if dof > 0 else 0.0
    scale = max(1.0, red) if dof > 0 else 1.0
    c0 = float(beta[0])
    s0 = math.sqrt(max(float(cov[0][0]) * scale, 0.0))
    h = 1.959963984540054 * s0
    lim = Estimate(c0, s0, float(len(xs)), (c0 - h, c0 + h),
                   f"extrapolate:{model}", int(sum(e.n_samples for e in ests)))
    return LimitFit(tuple(float(x) for x in xs), tuple(ests), model, lim, red,
                    tuple(float(b) for b in beta), tuple(tuple(float(v) for v in row) for row in np.asarray(cov)))


# ---------------------------------------------------------------------------
# continuity probes


def map_displacement(g: MobiusMap, C: Domain, n: int = 1024) -> float:
    """sup over the closure of C of |g(z) - z| (attained on the boundary)."""
    z = C.boundary(n).vertices
    return float(np.max(np.abs(g.apply(z) - z)))


@dataclass(frozen=True)
class ProbeRow:
    eps: float
    estimate: Estimate
    delta: float
    delta_se: float
    ratio: float
    ratio_se: float

    def to_json(self):
        return {"eps": self.eps, "estimate": self.estimate.to_json(), "delta": self.delta,
                "delta_se": self.delta_se, "ratio": self.ratio, "ratio_se": self.ratio_se}


@dataclass(frozen=True)
class ProbeResult:
    base: Estimate
    rows: tuple
    sup_ratio: float | None = None
    sup_ratio_ci: tuple | None = None
    slope: float | None = None
    slope_ci: tuple | None = None

    def to_json(self):
        return {"base": self.base.to_json(), "rows": [r.to_json() for r in self.rows],
                "sup_ratio": self.sup_ratio, "sup_ratio_ci": self.sup_ratio_ci,
                "slope": self.slope, "slope_ci": self.slope_ci}


def continuity_probe(e: Event, C: Domain, maps: Sequence[MobiusMap],
                     sampler_factory: Callable[[Domain, int], Sampler], budget: int,
                     lipschitz: bool = False) -> ProbeResult:
    """P(e) on deformed domains g_n(C), each on a freshly masked lattice.

    ``sampler_factory(domain, index)`` builds an independent sampler.
    """
    _check_support(e, C)
    doms = [transform_domain(g, C) for g in maps]
    for k, d in enumerate(doms):
        if not support_inside(e, d):
            raise ValueError(f"event support exits deformed domain {k}")
    base = estimate_prob(e, C, sampler_factory(C, 0), budget)
    rows = []
    for k, (g, d) in enumerate(zip(maps, doms)):
        est = estimate_prob(e, d, sampler_factory(d, k + 1), budget)
        eps = map_displacement(g, C)
        dP = est.mean - base.mean
        dse = math.hypot(est.stderr, base.stderr)
        r = dP / eps if eps > 0 else 0.0
        rse = dse / eps if eps > 0 else 0.0
        rows.append(ProbeRow(eps, est, dP, dse, r, rse))
    res = ProbeResult(base, tuple(rows))
    if lipschitz and len(rows) >= 3 and all(r.eps > 0 for r in rows):
        ratios = np.array([r.ratio for r in rows])
        rse = np.array([max(r.ratio_se, 1e-12) for r in rows])
        i = int(np.argmax(ratios))
        sup_ci = (ratios[i] - 1.96 * rse[i], ratios[i] + 1.96 * rse[i])
        idx = np.arange(len(rows), dtype=float)
        w = 1 / rse**2
        A = np.column_stack([np.ones_like(idx), idx])
        cov = np.linalg.inv((A.T * w) @ A)
        beta = cov @ ((A.T * w) @ ratios)
        s = math.sqrt(cov[1, 1])
        res = ProbeResult(base, tuple(rows), float(ratios[i]), tuple(map(float, sup_ci)), float(beta[1]),
                          (float(beta[1] - 1.96 * s), float(beta[1] + 1.96 * s)))
    return res


# ---------------------------------------------------------------------------
# calibration against exact enumeration


@dataclass(frozen=True)
class CalibrationRow:
    exact: float
    estimate: Estimate
    z: float
    ok: bool

    def to_json(self) -> dict:
        return {"exact": self.exact, "estimate": self.estimate.to_json(), "z": self.z, "ok": self.ok}


def covers(est: Estimate, value: float, k: float = 3.0) -> bool:
    """|mean - value| <= k stderr; degenerate (all-equal) runs use a Wilson interval at k."""
    if est.stderr > 0:
        return abs(est.mean - value) <= k * est.stderr
    lo, hi = wilson_interval(est.mean, est.n_effective, k)
    return lo - 1e-12 <= value <= hi + 1e-12


def calibrate_against_exact(spec: LatticeSpec, params: SamplerParams, events: Sequence[Event], budget: int,
                            k: float = 3.0) -> list[CalibrationRow]:
    """MC estimates on one chain vs exact enumeration, one row per event."""
    from .lattice import exact_enumerate

    ests = estimate_many(events, None, Sampler(spec, params), budget)
    rows = []
    for e, est in zip(events, ests):
        p = exact_enumerate(spec, params.n, params.fugacity, e)
        z = abs(est.mean - p) / est.stderr if est.stderr > 0 else (0.0 if est.mean == p else math.inf)
        rows.append(CalibrationRow(p, est, float(z), covers(est, p, k)))
    return rows
