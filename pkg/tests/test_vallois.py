import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from walshembed.measure import MeasureError, SpinningMeasure, first_moment, polar_decompose
from walshembed.sim import StoppedBatch
from walshembed.vallois import (
    build_barrier,
    local_time_survival,
    potential,
    tangent,
    ui_diagnostic,
    write_barrier_csv,
)

UNIFORM = {"rays": [{"id": "U", "weight": 1, "pieces": [[0.0, 2.0, 0.5]]}]}


def test_m1_lambda_and_breakpoint(m1):
    bar = build_barrier(m1)
    assert bar.Lambda(1.0) == pytest.approx(7 / 12, abs=1e-12)
    assert bar.Lambda(0.0) == 1.0
    assert bar.H(1.5) == pytest.approx(-2.4 * math.log(0.375), abs=1e-9)
    assert bar.tail == "constant"


def test_m1_barrier_levels(m1):
    bar = build_barrier(m1)
    h = -2.4 * math.log(0.375)
    assert bar.a("A", [0.0, 1.0, h - 1e-6]) == pytest.approx([3.0, 3.0, 3.0])
    assert bar.a("A", [h + 1e-9, h + 1, 50.0]) == pytest.approx([1.0, 1.0, 1.0])
    assert bar.a("B", [0.0, h, 50.0]) == pytest.approx([2.0, 2.0, 2.0])
    assert bar.b("A", 2.0) == pytest.approx(h, abs=1e-12)
    assert bar.b("A", 3.0) == 0.0
    assert bar.b("A", 0.5) == math.inf


def test_m2_point_masses_give_flat_barrier(m2):
    bar = build_barrier(m2)
    m = 7 / 3
    for g, x in zip("123", (1.0, 2.0, 4.0)):
        assert np.max(np.abs(bar.a_table[bar.ray_ids.index(g)] - x)) <= 1e-9
    for s in (0.3, 1.0, 2.0):
        assert bar.Lambda(s) == pytest.approx(1 - s / m, abs=1e-12)
        assert bar.H(s) == pytest.approx(-m * math.log(1 - s / m), abs=1e-10)
        assert local_time_survival(bar, s) == pytest.approx(1 - s / m, abs=1e-12)


def test_uniform_ray_barrier_is_linear():
    bar = build_barrier(polar_decompose(UNIFORM))
    assert bar.tail == "origin"
    assert bar.l_max == pytest.approx(2.0, abs=1e-9)
    ls = np.linspace(0.0, 1.999, 400)
    assert np.max(np.abs(bar.a("U", ls) - (2.0 - ls))) <= 1e-9
    for s in (0.1, 0.5, 0.9):
        assert bar.Lambda(s) == pytest.approx(math.sqrt(1 - s), abs=1e-12)
        assert bar.H(s) == pytest.approx(2 * (1 - math.sqrt(1 - s)), abs=1e-9)
        assert bar.H_inv(bar.H(s)) == pytest.approx(s, abs=1e-9)


def test_barrier_csv_columns(m1):
    buf = io.StringIO()
    write_barrier_csv(build_barrier(m1), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "l,a_A,a_B,lambda"
    assert lines[1] == "0,3,2,1"


def test_tangent_from_origin_level():
    c = potential(polar_decompose(UNIFORM))["U"]
    assert tangent(c, 0.0) == (math.inf, 1.0)
    z, phi = tangent(c, 0.75)
    assert z == pytest.approx(1.0) and phi == pytest.approx(0.5)
    with pytest.raises(MeasureError):
        tangent(c, 1.0)


def test_origin_only_ray_rejected():
    t = polar_decompose({"rays": [{"id": "A", "weight": 1, "atoms": [[1, 1]]},
                                  {"id": "B", "weight": 1, "atoms": [[0, 1]]}]})
    with pytest.raises(MeasureError):
        build_barrier(t)


def test_ui_diagnostic_on_synthetic_batch():
    # half the paths reached radius 3 on ray B, none went anywhere on A
    n = 1000
    maxr = np.zeros((n, 2))
    maxr[: n // 2, 1] = 3.0
    batch = StoppedBatch(("A", "B"), np.zeros(n, np.int64), np.ones(n), np.ones(n), np.ones(n),
                         np.ones(n, bool), np.ones(n, np.int64), maxr)
    out = ui_diagnostic(batch, SpinningMeasure({"A": 0.5, "B": 0.5}), ["A"], [0.5, 1.0, 1.5, 2.0])
    vals = [r.value for r in out["rows"]]
    assert vals == pytest.approx([0.25, 0.5, 0.75, 0.0])
    assert out["decays"]
    assert not out["non_increasing"]


def _random_target(u_hi, dens_atoms):
    tot = sum(p for _, p in dens_atoms)
    return polar_decompose({"rays": [
        {"id": "U", "weight": 0.5, "pieces": [[0.0, u_hi, 1.0 / u_hi]]},
        {"id": "P", "weight": 0.5, "atoms": [[x, p / tot] for x, p in dens_atoms]},
    ]})


targets = st.builds(
    _random_target,
    st.floats(0.5, 4.0),
    st.lists(st.tuples(st.floats(0.1, 5.0), st.floats(0.05, 1.0)), min_size=1, max_size=4),
)


@settings(max_examples=25, deadline=None)
@given(targets)
def test_potential_shape(t):
    m = first_moment(t)
    for c in potential(t).values():
        r = np.linspace(0.0, 3 * max(c.x[-1], 1.0), 301)
        v = c(r)
        assert v[0] == pytest.approx(m)
        assert np.all(v >= r - 1e-12) and np.all(v >= m - 1e-12)
        assert np.all(np.diff(v, 2) >= -1e-9)  # convex
        far = r > c.x[-1]
        assert np.allclose(v[far], r[far], atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(targets, st.floats(0.01, 0.99))
def test_tangent_slope_identity(t, frac):
    m = first_moment(t)
    s = frac * m
    for c in potential(t).values():
        z, phi = tangent(c, s)
        # the tangent line through (0, s) meets c at zeta with slope phi
        assert c(z) == pytest.approx(s + phi * z, abs=1e-9)
        lo = c.right_derivative(max(z - 1e-7, 0.0))
        hi = c.right_derivative(z)
        assert lo - 1e-6 <= phi <= hi + 1e-12


@settings(max_examples=15, deadline=None)
@given(targets)
def test_barrier_monotone_and_survival_starts_at_one(t):
    bar = build_barrier(t)
    assert np.all(np.diff(bar.a_table, axis=1) <= 1e-12)
    assert np.all(np.diff(bar.l_grid) >= 0)
    ss = np.linspace(0.0, 0.99 * bar.m, 30)
    lam = [bar.Lambda(s) for s in ss]
    assert lam[0] == 1.0
    assert all(b <= a + 1e-12 for a, b in zip(lam[:-1], lam[1:]))
    hs = [bar.H(s) for s in ss]
    assert all(b >= a for a, b in zip(hs[:-1], hs[1:]))
    for g in bar.ray_ids:
        for r in (0.3, 1.0, 2.5):
            l = bar.b(g, r)
            if math.isfinite(l):
                assert bar.a(g, l) <= r + 1e-9
