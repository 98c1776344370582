from __future__ import annotations

import numpy as np
import pytest

from cle_lab.events import TRIVIAL, CrossCount, SeparationE, Surrounds
from cle_lab.geometry import Disk, MobiusMap, circle, conformal_radius, surrounds_shape
from cle_lab.lattice import Sampler, SamplerParams
from cle_lab.sphere import (
    FallbackRateError,
    NuBSampler,
    SpherePlan,
    check_invariance_factorization,
    estimate_prob_sphere,
    innermost_surrounding,
    ks_same,
    sample_nu_B,
    scale_ratio_stats,
)


def _window(spec):
    a = spec.spacing
    return (1.1 * a, 2.5 * a)


def _nu(spec, seed, radius=1.0, window=None):
    base = Sampler(spec, SamplerParams(n=1.0, thermalization=50, seed=seed))
    return NuBSampler(radius, base, window or _window(spec))


def test_innermost_surrounding_picks_smallest():
    loops = [circle(0, 1.0), circle(0, 0.5), circle(0.3, 0.1)]
    assert innermost_surrounding(loops, Disk(0, 0.2)).area == pytest.approx(circle(0, 0.5).area)
    assert innermost_surrounding(loops, Disk(0, 0.7)).area == pytest.approx(circle(0, 1.0).area)
    assert innermost_surrounding(loops, Disk(0, 2.0)) is None


def test_window_validation(disk24):
    base = Sampler(disk24, SamplerParams(thermalization=5))
    with pytest.raises(ValueError):
        NuBSampler(1.0, base, (0.5, 0.2))
    with pytest.raises(ValueError):
        NuBSampler(2.0, base, (0.1, 0.6))
    with pytest.raises(ValueError):
        NuBSampler(0.0, base)
    with pytest.raises(ValueError):
        NuBSampler(0.5, base)  # default window (8a/R, 0.25) is empty here
    lo, hi = NuBSampler(3.0, base).lambda_window
    assert lo == pytest.approx(8 * disk24.spacing / 3.0) and hi == 0.25


def test_emitted_loops_surround_unit_disk(disk24):
    nu = _nu(disk24, 1)
    for _ in range(20):
        smp = sample_nu_B(nu)
        assert surrounds_shape(smp.loop, Disk(0, 1.0))
        assert nu.lambda_window[0] <= smp.lam <= nu.lambda_window[1]
        cr = conformal_radius(smp.loop, 0j, n_walks=300, seed=1)
        # Koebe: the conformal radius is at least the distance to the loop
        assert cr.value >= 1.0 - 3 * cr.stderr
    assert 0 < nu.fallback_rate < 1


def test_fallback_rate_threshold(disk24):
    nu = _nu(disk24, 2, window=(0.3, 0.5))
    with pytest.raises(FallbackRateError):
        sample_nu_B(nu, min_draws=200)


def _log_sizes(spec, seed, n, window=None):
    nu = _nu(spec, seed, window=window)
    return np.array([np.log(np.abs(sample_nu_B(nu).loop.vertices).min()) for _ in range(n)])


def test_loop_law_stable_across_seeds_and_windows(disk24):
    a = _log_sizes(disk24, 3, 80)
    b = _log_sizes(disk24, 4, 80)
    assert ks_same(a, b) > 1e-3
    w = _window(disk24)
    c = _log_sizes(disk24, 5, 80, window=(w[0], 2.0 * disk24.spacing))
    assert ks_same(a, c) > 1e-3


def test_scale_ratio_stats(disk48):
    sampler = Sampler(disk48, SamplerParams(n=1.0, thermalization=50, sweeps=2, seed=8))
    stats = scale_ratio_stats(sampler.states(400), n_walks=50, seed=1, min_loops=1)
    assert np.all(stats.ratios >= 1.0)
    assert np.all(stats.crads >= 1.0 - 0.2)
    assert stats.to_json()["n_crads"] == len(stats.crads)


def test_scale_ratio_needs_loops(disk24):
    with pytest.raises(ValueError):
        scale_ratio_stats([disk24.empty_state()] * 3, n_walks=0, min_loops=2)


def _plan(spec, **kw):
    return SpherePlan(spec, SamplerParams(n=1.0, thermalization=30, seed=11), lambda_window=_window(spec),
                      n_outer=kw.pop("n_outer", 8), inner_budget=kw.pop("inner_budget", 20),
                      inner_thermalization=10, **kw)


def test_trivial_event_on_sphere(disk24):
    assert estimate_prob_sphere(TRIVIAL, _plan(disk24)).estimate.mean == 1.0


def test_sphere_estimate_in_range(disk24):
    X = CrossCount((Disk(0, 0.2),), ">=", 1)
    res = estimate_prob_sphere(X, _plan(disk24))
    assert 0.0 <= res.estimate.mean <= 1.0
    assert len(res.inner_means) + res.skipped == 8
    assert np.all((res.lambdas > 0) & (res.lambdas < 1))
    assert res.to_json()["n_outer"] == len(res.inner_means)


def test_sphere_seeded(disk24):
    X = SeparationE(circle(0, 0.1, 24), circle(0, 0.4, 24))
    a = estimate_prob_sphere(X, _plan(disk24)).estimate
    b = estimate_prob_sphere(X, _plan(disk24)).estimate
    assert a == b


def test_identity_global_map_zero_discrepancy(disk24):
    X = Surrounds(Disk(0.1, 0.1))
    rep = check_invariance_factorization("global_invariance", {"plan": _plan(disk24), "X": X,
                                                               "G": MobiusMap.identity()})
    assert rep.discrepancy == 0.0 and rep.passed


def test_invariance_mode_checks(disk24):
    plan = _plan(disk24)
    with pytest.raises(ValueError):
        check_invariance_factorization("mirror_symmetry", {"plan": plan, "X": Surrounds(Disk(1j, 0.1))})
    with pytest.raises(ValueError):
        check_invariance_factorization("global_invariance", {"plan": plan, "X": Surrounds(Disk(0.5, 0.1)),
                                                             "G": MobiusMap(0, 1, 1, -0.5)})
    with pytest.raises(ValueError):
        check_invariance_factorization("nonsense", {"plan": plan, "X": TRIVIAL})
