from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cle_lab.estimators import (
    Accumulator,
    Estimate,
    autocorrelation_time,
    calibrate_against_exact,
    continuity_probe,
    covers,
    estimate_conditional,
    estimate_prob,
    extrapolate_limit,
    ratio_estimate,
    series_estimate,
    wilson_interval,
)
from cle_lab.events import EMPTY, TRIVIAL, CrossCount, Surrounds
from cle_lab.geometry import Disk, MobiusMap, unit_disk
from cle_lab.lattice import LatticeSpec, Sampler, SamplerParams, patch_spec


def test_trivial_and_empty_are_exact(disk24):
    s = Sampler(disk24, SamplerParams(thermalization=5))
    assert estimate_prob(TRIVIAL, unit_disk(), s, 10).mean == 1.0
    e = estimate_prob(EMPTY, unit_disk(), s, 10)
    assert e.mean == 0.0 and e.stderr == 0.0


def test_support_outside_domain_rejected(disk24):
    s = Sampler(disk24, SamplerParams(thermalization=5))
    with pytest.raises(ValueError):
        estimate_prob(Surrounds(Disk(0.95, 0.2)), unit_disk(), s, 10)


def test_iid_autocorrelation_near_one():
    x = np.random.default_rng(0).normal(size=20000)
    assert autocorrelation_time(x) == pytest.approx(1.0, abs=0.15)


def test_ar1_autocorrelation_time():
    rng = np.random.default_rng(1)
    phi = 0.8
    x = np.zeros(100000)
    for i in range(1, len(x)):
        x[i] = phi * x[i - 1] + rng.normal()
    want = (1 + phi) / (1 - phi)
    assert autocorrelation_time(x) == pytest.approx(want, rel=0.15)


def test_series_estimate_binary():
    x = np.r_[np.ones(30), np.zeros(70)]
    np.random.default_rng(2).shuffle(x)
    e = series_estimate(x)
    assert e.mean == pytest.approx(0.3)
    assert e.ci95[0] < 0.3 < e.ci95[1]


def test_constant_series_has_zero_error():
    e = series_estimate(np.ones(50))
    assert e.mean == 1.0 and e.stderr == 0.0
    assert covers(e, 1.0)
    assert not covers(series_estimate(np.zeros(5000)), 0.5)
    # a Wilson interval at k sigma tolerates small true values
    assert covers(series_estimate(np.zeros(20)), 0.01)


def test_wilson_interval_bounds():
    lo, hi = wilson_interval(0.0, 100)
    assert lo == 0.0 and 0 < hi < 0.05
    assert wilson_interval(0.5, math.inf) == (0.5, 0.5)


def test_estimate_rejects_bad_ci():
    with pytest.raises(ValueError):
        Estimate(0.5, 0.1, 10, (0.6, 0.7))


def test_estimate_json_round_trip():
    e = series_estimate(np.array([0, 1, 1, 0, 1], float))
    assert Estimate.from_json(e.to_json()) == e


def test_ratio_estimate_matches_plain_ratio():
    rng = np.random.default_rng(3)
    b = rng.random(5000) < 0.4
    a = b & (rng.random(5000) < 0.25)
    r = ratio_estimate(a.astype(float), b.astype(float))
    assert r.mean == pytest.approx(a.sum() / b.sum())
    assert abs(r.mean - 0.25) < 4 * r.stderr
    with pytest.raises(ValueError):
        ratio_estimate(np.zeros(5), np.zeros(5))


def _patch():
    return patch_spec([(0, 0), (1, 0), (0, 1)])


def test_conditional_on_patch_matches_exact():
    from cle_lab.lattice import exact_enumerate

    spec = _patch()
    c = complex(spec.lattice.cell_centers()[spec.face_root[0]])
    X = Surrounds(Disk(c, 0.1))
    Y = CrossCount((Disk(c, 1.2),), ">=", 1)
    params = SamplerParams(n=1.0, thermalization=50, seed=4)
    p_xy = exact_enumerate(spec, 1.0, params.fugacity, X & Y)
    p_y = exact_enumerate(spec, 1.0, params.fugacity, Y)
    for mode in ("ratio", "rejection"):
        est = estimate_conditional(X, Y, None, Sampler(spec, params), 40000, mode)
        assert abs(est.mean - p_xy / p_y) < 4 * est.stderr + 1e-9
    with pytest.raises(ValueError):
        estimate_conditional(X, Y, None, Sampler(spec, params), 10, "bogus")


def test_conditional_zero_acceptance_raises(disk24):
    s = Sampler(disk24, SamplerParams(thermalization=2))
    with pytest.raises(ValueError):
        estimate_conditional(TRIVIAL, EMPTY, None, s, 5)


def _synthetic(eps_list, f, se=0.002, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for e in eps_list:
        m = f(e) + rng.normal(0, se)
        out.append((e, Estimate(m, se, 1e4, (m - 2 * se, m + 2 * se))))
    return out


def test_linear_extrapolation_recovers_intercept():
    pts = _synthetic([0.2, 0.1, 0.05, 0.025], lambda e: 0.5 + 0.3 * e)
    fit = extrapolate_limit(pts)
    assert abs(fit.limit.mean - 0.5) < 3 * fit.limit.stderr
    assert fit.params[1] == pytest.approx(0.3, abs=0.1)


def test_power_extrapolation():
    pts = _synthetic([0.4, 0.2, 0.1, 0.05, 0.025], lambda e: 0.7 - 0.5 * e**0.5, se=5e-4, seed=1)
    fit = extrapolate_limit(pts, "power")
    assert abs(fit.limit.mean - 0.7) < 4 * fit.limit.stderr + 0.01


def test_extrapolation_input_checks():
    pts = _synthetic([0.1, 0.2, 0.05], lambda e: 0.5)
    with pytest.raises(ValueError):
        extrapolate_limit(pts)
    with pytest.raises(ValueError):
        extrapolate_limit(pts[:2])
    with pytest.raises(ValueError):
        extrapolate_limit(_synthetic([0.2, 0.1, 0.05], lambda e: 0.5), "cubic")


def test_constant_data_extrapolates_to_constant():
    pts = [(e, Estimate.exact(0.25)) for e in (0.3, 0.2, 0.1)]
    fit = extrapolate_limit(pts, "constant")
    assert fit.limit.mean == pytest.approx(0.25)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(0, 1), min_size=1, max_size=30), min_size=3, max_size=3))
def test_accumulator_merge_associative(chains):
    a, b, c = (Accumulator([np.array(x, float)]) for x in chains)
    left = ((a + b) + c).estimate(binary=False)
    right = (a + (b + c)).estimate(binary=False)
    swapped = (c + (b + a)).estimate(binary=False)
    assert left == right == swapped


def test_calibration_on_patch():
    rows = calibrate_against_exact(_patch(), SamplerParams(n=2.0, thermalization=50, seed=6),
                                   [TRIVIAL, CrossCount((Disk(0, 3.0),), ">=", 1)], 5000)
    assert all(r.ok for r in rows)
    assert rows[0].exact == pytest.approx(1.0)


def test_continuity_probe_identity_and_rotation():
    C = unit_disk()
    e = Surrounds(Disk(0, 0.1))

    def factory(d, k):
        spec = LatticeSpec.for_domain(d, spacing=2 / (math.sqrt(3) * 16))
        return Sampler(spec, SamplerParams(thermalization=20, seed=100))

    res = continuity_probe(e, C, [MobiusMap.identity(), MobiusMap.rotation(0.3)], factory, 200)
    assert res.rows[0].eps == 0.0
    assert res.rows[0].delta == 0.0
    assert res.rows[1].eps == pytest.approx(2 * math.sin(0.15), rel=1e-6)
    assert abs(res.rows[1].delta) <= 4 * res.rows[1].delta_se + 1e-12
