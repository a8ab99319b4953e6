import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from walshembed.dubins import (
    analytic_law,
    direct_law,
    dubins_rule,
    exact_depth,
    refine,
    refined_measure,
    wasserstein_gap,
    write_law_csv,
)
from walshembed.measure import MeasureError, RadialMeasure, SpinningMeasure, centered_spinning, polar_decompose, second_moment


def test_m1_level_sets(m1):
    tree = refine(m1, 2)
    assert tree.level("A", 1) == [0.0, 2.0, math.inf]
    assert tree.level("A", 2) == [0.0, 1.0, 2.0, 3.0, math.inf]
    # empty intervals reuse their left endpoint
    assert tree.level("B", 2) == [0.0, 0.0, 2.0, 2.0, math.inf]


def test_m1_depth_two_law(m1):
    law = analytic_law(m1, 2)
    assert law.law("A") == pytest.approx({1.0: 0.5, 3.0: 0.5}, abs=1e-12)
    assert law.law("B") == pytest.approx({2.0: 1.0}, abs=1e-12)
    assert law.expected_tau == pytest.approx((4.0, 4.5), abs=1e-12)
    assert exact_depth(m1) == 2


def test_m1_depth_one_is_the_barycenter(m1):
    law = analytic_law(m1, 1)
    assert law.law("A") == {2.0: 1.0}
    assert law.expected_time == pytest.approx(4.0, abs=1e-12)


def test_m2_exact_at_depth_one(m2):
    assert exact_depth(m2) == 1
    assert analytic_law(m2, 1).expected_time == pytest.approx(second_moment(m2), abs=1e-12)


def test_expected_tau_stalls_once_exact(m1):
    law = analytic_law(m1, 4)
    assert law.expected_tau[1:] == pytest.approx((4.5, 4.5, 4.5), abs=1e-12)


def test_uniform_depth_two_and_w1_halving():
    u = RadialMeasure.build(pieces=[(0.0, 2.0, 0.5)])
    r2 = refined_measure(u, 2)
    assert np.array(r2.atoms) == pytest.approx(np.array([[0.5, 0.5], [1.5, 0.5]]))
    t = polar_decompose({"rays": [{"id": "U", "weight": 1, "pieces": [[0, 2, 0.5]]}]})
    gaps = [wasserstein_gap(t, d)["U"] for d in range(1, 6)]
    assert gaps == pytest.approx([0.5, 0.25, 0.125, 0.0625, 0.03125], abs=1e-12)
    assert exact_depth(t) is None


def test_law_csv(m1):
    import io

    buf = io.StringIO()
    write_law_csv(analytic_law(m1, 2), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "ray_id,radius,probability"
    assert lines[1:] == ["A,1,0.25", "A,3,0.25", "B,2,0.5"]


def test_rule_requires_centered_kappa(m1):
    with pytest.raises(MeasureError):
        dubins_rule(m1, SpinningMeasure({"A": 0.3, "B": 0.7}), 2)
    rule = dubins_rule(m1, centered_spinning(m1), 2)
    assert rule.levels("A") == [1.0, 2.0, 3.0]
    assert rule.levels("B") == [0.0, 2.0]


eight_atoms = st.lists(st.tuples(st.floats(0.05, 20.0), st.floats(0.01, 1.0)), min_size=8, max_size=8)


def _target(raw):
    tot = sum(p for _, p in raw)
    return polar_decompose({"rays": [
        {"id": "A", "weight": 0.4, "atoms": [[x, p / tot] for x, p in raw]},
        {"id": "B", "weight": 0.6, "atoms": [[1.0, 1.0]]},
    ]})


@settings(max_examples=40, deadline=None)
@given(eight_atoms)
def test_expected_tau_monotone_up_to_second_moment(raw):
    t = _target(raw)
    et = analytic_law(t, 5).expected_tau
    assert all(b >= a - 1e-10 for a, b in zip(et[:-1], et[1:]))
    assert et[-1] <= second_moment(t) * (1 + 1e-12) + 1e-12


@settings(max_examples=40, deadline=None)
@given(eight_atoms, st.integers(1, 5))
def test_refined_measure_keeps_mean_and_grows_second_moment(raw, depth):
    nu = _target(raw).ray("A").radial
    prev = None
    for d in range(1, depth + 1):
        r = refined_measure(nu, d)
        assert r.moment(0, math.inf) == pytest.approx(nu.moment(0, math.inf), rel=1e-10)
        m2 = r.moment(0, math.inf, 2)
        assert m2 <= nu.moment(0, math.inf, 2) * (1 + 1e-10)
        if prev is not None:
            assert m2 >= prev * (1 - 1e-10)
        prev = m2


@settings(max_examples=40, deadline=None)
@given(eight_atoms)
def test_w1_to_target_non_increasing(raw):
    t = _target(raw)
    gaps = [wasserstein_gap(t, d)["A"] for d in range(1, 6)]
    assert all(b <= a + 1e-10 for a, b in zip(gaps[:-1], gaps[1:]))


@settings(max_examples=40, deadline=None)
@given(eight_atoms, st.integers(1, 5))
def test_exit_odds_recursion_matches_interval_masses(raw, depth):
    t = _target(raw)
    a = analytic_law(t, depth).law("A")
    b = direct_law(t, "A", depth)
    assert sorted(a) == pytest.approx(sorted(b))
    for x in a:
        assert a[x] == pytest.approx(b[x], abs=1e-10)
