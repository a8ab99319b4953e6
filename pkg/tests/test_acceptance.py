"""Acceptance criteria 1-12 at full scale.

Default scale: 1e5 paths, dt = 1e-4, bridge refinement on, seeds SEEDS.
Criterion 1 runs 1e5 paths on every seed; the others pool 1e5 paths split
over the three seeds.  Simulations shared between criteria are cached.
Each test prints one PASS/FAIL line.
"""

import functools
import json
import math

import numpy as np
import pytest
from scipy import integrate
from scipy import stats as sst

from walshembed import cli
from walshembed.dual import dual_certificate, dual_M, gap_values, get_cost
from walshembed.dubins import analytic_law, dubins_rule
from walshembed.measure import SpinningMeasure, centered_spinning, polar_decompose, second_moment
from walshembed.rules import FixedTime, HitSurface
from walshembed.sim import SimParams, StoppedBatch, count_excursions, run_batch, simulate_path, write_samples_csv
from walshembed.stats import (
    EmpiricalLaw,
    compare_cost,
    ks_critical,
    ks_distance,
    law_checks,
    mean_se,
    poisson_gof,
)
from walshembed.vallois import build_barrier, ui_diagnostic

from conftest import M1_SPEC, M2_SPEC

SEEDS = (1, 2, 3)
N_PATHS = 100_000
DT = 1e-4
T_MAX = 200.0
HALF = SpinningMeasure({"A": 0.5, "B": 0.5})
M1 = polar_decompose(M1_SPEC)
M2 = polar_decompose(M2_SPEC)


def _split(n=N_PATHS):
    base = n // len(SEEDS)
    return [base + (1 if i < n - base * len(SEEDS) else 0) for i in range(len(SEEDS))]


def _pooled(rule, kappa, t_max=T_MAX):
    parts = [run_batch(rule, kappa, SimParams(DT, t_max, n, seed, True))
             for n, seed in zip(_split(), SEEDS)]
    return StoppedBatch.concat(parts)


@functools.cache
def m1_vallois():
    return _pooled(build_barrier(M1).rule(), centered_spinning(M1))


@functools.cache
def m1_dubins():
    return _pooled(dubins_rule(M1, centered_spinning(M1), 2), centered_spinning(M1))


@functools.cache
def m2_vallois():
    return _pooled(build_barrier(M2).rule(), centered_spinning(M2))


def report(criterion, passed, **detail):
    parts = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in detail.items())
    return f"[acceptance] C{criterion:<2} {'PASS' if passed else 'FAIL'}  {parts}"


@pytest.fixture
def emit(capsys):
    def _emit(criterion, passed, **detail):
        with capsys.disabled():
            print("\n" + report(criterion, passed, **detail), flush=True)
        assert passed, report(criterion, passed, **detail)
    return _emit


def test_c01_marginal_at_time_one(emit):
    crit = ks_critical(N_PATHS)
    worst = 0.0
    for seed in SEEDS:
        b = run_batch(FixedTime(1.0), HALF, SimParams(DT, 1.0, N_PATHS, seed, True))
        worst = max(worst, ks_distance(b.radius, sst.halfnorm.cdf))
    emit(1, worst < crit, ks_max=worst, threshold=crit)


def test_c02_excursion_counts(emit):
    counts = []
    for n, seed in zip(_split(), SEEDS):
        c, done = count_excursions(SimParams(DT, 1e9, n, seed, True), 1.0, 2.0)
        assert done.all()
        counts.append(c)
    c = np.concatenate(counts)
    gof = poisson_gof(c, 2.0)
    mean = float(c.mean())
    sigma = math.sqrt(2.0 / c.size)
    ok = gof.passed and abs(mean - 2.0) <= 3 * sigma
    emit(2, ok, chi2=gof.statistic, chi2_threshold=gof.threshold, mean=mean, three_sigma=3 * sigma)


def test_c03_surface_hitting(emit):
    b = _pooled(HitSurface({"A": 1.0, "B": 2.0}), HALF)
    assert b.stopped.all()
    p = float(np.mean(b.ray == 0))
    sp = math.sqrt((2 / 3) * (1 / 3) / len(b))
    tau, se = mean_se(b.tau)
    ok = abs(p - 2 / 3) <= 3 * sp and abs(tau - 2.0) <= 3 * se + 0.02 * 2.0
    emit(3, ok, p_A=p, p_tol=3 * sp, tau_mean=tau, tau_tol=3 * se + 0.04)


def test_c04_dubins_exact_on_m1(emit):
    law = analytic_law(M1, 2)
    exact = (abs(law.law("A")[1.0] - 0.5) <= 1e-12 and abs(law.law("A")[3.0] - 0.5) <= 1e-12
             and law.law("B") == {2.0: 1.0} and abs(law.expected_time - 4.5) <= 1e-12)
    b = m1_dubins()
    checks = law_checks(EmpiricalLaw.from_batch(b), {"A": 0.5, "B": 0.5},
                        {r.ray_id: r.radial for r in M1.rays})
    chi2 = checks[0]
    w1 = max(c.statistic for c in checks if c.name.startswith("w1"))
    tau, se = mean_se(b.tau)
    ok = exact and b.stopped.all() and chi2.passed and w1 <= 0.05 and abs(tau - 4.5) <= 3 * se
    emit(4, ok, analytic_exact=exact, chi2=chi2.statistic, w1_max=w1, tau_mean=tau, tau_tol=3 * se)


def test_c05_dubins_moment_identity(emit):
    errs = [abs(analytic_law(M1, 2).expected_time - second_moment(M1)),
            abs(analytic_law(M2, 1).expected_time - second_moment(M2))]
    rng = np.random.default_rng(5)
    x = rng.uniform(0.1, 10.0, 8)
    p = rng.uniform(0.05, 1.0, 8)
    t = polar_decompose({"rays": [{"id": "R", "weight": 1.0, "atoms": np.c_[x, p / p.sum()].tolist()}]})
    et = analytic_law(t, 8).expected_tau
    monotone = all(b >= a - 1e-12 for a, b in zip(et[:-1], et[1:]))
    ok = max(errs) <= 1e-12 and monotone
    emit(5, ok, identity_err=max(errs), monotone=monotone, tau_depth8=et[-1], second_moment=second_moment(t))


def test_c06_barrier_closed_forms(emit):
    b2 = build_barrier(M2)
    flat = max(float(np.max(np.abs(b2.a_table[b2.ray_ids.index(g)] - x)))
               for g, x in zip("123", (1.0, 2.0, 4.0)))
    b1 = build_barrier(M1)
    lam = b1.Lambda(1.0)
    quad, _ = integrate.quad(lambda s: 1.0 / b1.Lambda(s), 0.0, 1.5, points=[1.0], epsabs=1e-12, epsrel=1e-12)
    h = b1.H(1.5)
    closed = -2.4 * math.log(0.375)
    ok = flat <= 1e-9 and abs(lam - 7 / 12) <= 1e-12 and abs(h - quad) <= 1e-6 and abs(closed - quad) <= 1e-6
    emit(6, ok, flat_err=flat, lambda_1=lam, H_15=h, quad=quad, closed=closed)


def _survival(b, bar, s):
    lt = b.local_time[b.stopped]
    p = float(np.mean(lt >= bar.H(s)))
    lam = bar.Lambda(s)
    sd = math.sqrt(lam * (1 - lam) / lt.size)
    return p, lam, abs(p - lam) <= 3 * sd


def test_c07_vallois_law(emit):
    ok = True
    detail = {}
    for name, target, batch in (("M1", M1, m1_vallois()), ("M2", M2, m2_vallois())):
        checks = law_checks(EmpiricalLaw.from_batch(batch), {r.ray_id: r.weight for r in target.rays},
                            {r.ray_id: r.radial for r in target.rays})
        chi2 = checks[0]
        w1 = max(c.statistic for c in checks if c.name.startswith("w1"))
        ok &= bool(batch.stopped.all()) and chi2.passed and w1 <= 0.05
        detail[f"{name}_chi2"] = chi2.statistic
        detail[f"{name}_w1"] = w1
    bar = build_barrier(M1)
    for s in (0.5, 1.0, 1.5):
        p, lam, good = _survival(m1_vallois(), bar, s)
        ok &= good
        detail[f"P[L>=H({s})]"] = p
        detail[f"Lambda({s})"] = lam
    emit(7, ok, **detail)


def test_c08_exponential_local_time(emit):
    b = m2_vallois()
    lt = b.local_time[b.stopped]
    m = 7 / 3
    mean, se = mean_se(lt)
    d = ks_distance(lt, lambda x: 1.0 - math.exp(-max(x, 0.0) / m))
    crit = ks_critical(lt.size)
    ok = abs(mean - m) <= 3 * se and d < crit
    emit(8, ok, mean=mean, tol=3 * se, ks=d, ks_threshold=crit)


def test_c09_vallois_beats_dubins(emit):
    cost = get_cost("exp")
    v, d = m1_vallois(), m1_dubins()
    diff, half = compare_cost(v.local_time[v.stopped], d.local_time[d.stopped], cost.psi)
    ev = float(np.mean(cost.psi(v.local_time)))
    ed = float(np.mean(cost.psi(d.local_time)))
    emit(9, diff <= half and diff <= 0, vallois=ev, dubins=ed, diff=diff, ci=half)


def _dual_run(cert, rule, kappa, dt, n=1000, seed=SEEDS[0]):
    params = SimParams(dt, T_MAX, n, seed, True)
    max_gap, hit_gap, skel_gap, m_end = -math.inf, 0.0, [], []
    for i in range(n):
        path, s = simulate_path(kappa, params, i, rule)
        k = cert.ray_ids.index(s.ray_id)
        order = np.array([cert.ray_ids.index(g) for g in path.ray_ids])
        gaps = gap_values(order[path.ray], path.R, path.M, cert)
        max_gap = max(max_gap, float(gaps.max()))
        skel_gap.append(abs(float(gaps[-1])))
        hit = gap_values(np.array([k]), np.array([s.radius]), np.array([s.local_time]), cert)[0]
        hit_gap = max(hit_gap, abs(float(hit)))
        m_end.append(float(dual_M(path, cert)[-1]))
    return max_gap, hit_gap, float(np.mean(skel_gap)), m_end


def test_c10_dual_certificate(emit):
    bar = build_barrier(M1)
    cert = dual_certificate(bar, get_cost("exp"))
    kappa = centered_spinning(M1)
    rule = bar.rule()
    max_gap, hit_gap, skel_fine, m_end = _dual_run(cert, rule, kappa, DT)
    _, _, skel_coarse, _ = _dual_run(cert, rule, kappa, 2 * DT)
    m_mean, m_se = mean_se(m_end)
    ok = (max_gap <= 0.02 and hit_gap <= 0.02 and skel_fine < skel_coarse
          and abs(m_mean) <= 3 * m_se)
    emit(10, ok, max_gap=max_gap, stop_gap=hit_gap, skel_gap_dt=skel_fine, skel_gap_2dt=skel_coarse,
         M_mean=m_mean, M_tol=3 * m_se)


def test_c11_uniform_integrability(emit):
    ui = ui_diagnostic(m1_vallois(), centered_spinning(M1), ["A"], [0.5, 1.0, 2.0, 4.0])
    rows = ui["rows"]
    ok = ui["non_increasing"] and ui["decays"]
    emit(11, ok, **{f"x={r.x:g}": r.value for r in rows}, last_3se=3 * rows[-1].stderr)


def test_c12_determinism(emit, tmp_path):
    rule = build_barrier(M1).rule()
    blobs = []
    for i in range(2):
        p = tmp_path / f"lib{i}.csv"
        with open(p, "w") as fh:
            write_samples_csv(run_batch(rule, centered_spinning(M1), SimParams(DT, T_MAX, 20_000, SEEDS[1], True)), fh)
        blobs.append(p.read_bytes())
    spec = tmp_path / "m1.json"
    spec.write_text(json.dumps(M1_SPEC))
    cli_blobs = []
    for i in range(2):
        out = tmp_path / f"cli{i}"
        cli.main(["embed", "--spec", str(spec), "--method", "dubins", "--paths", "5000",
                  "--seed", str(SEEDS[2]), "--out", str(out)])
        cli_blobs.append(b"".join((out / f).read_bytes() for f in ("samples.csv", "law.csv", "embed.json")))
    ok = blobs[0] == blobs[1] and cli_blobs[0] == cli_blobs[1]
    emit(12, ok, library_bytes=len(blobs[0]), cli_bytes=len(cli_blobs[0]))
