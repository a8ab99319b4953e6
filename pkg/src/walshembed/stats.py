"""Comparisons of stopped samples against analytic laws."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats as st

from .measure import RadialMeasure

SCHEMA_VERSION = 1
KS_C95 = 1.36


# --------------------------------------------------------------------------
# distances to a law


def _as_sorted(sample) -> np.ndarray:
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("empty sample")
    return x


def _ecdf(x: np.ndarray):
    n = x.size
    return (lambda r: np.searchsorted(x, r, side="right") / n,
            lambda r: np.searchsorted(x, r, side="left") / n)


def _law_cdfs(law):
    if isinstance(law, RadialMeasure):
        return law.cdf, law.cdf_left, law.breakpoints()
    f = np.vectorize(law, otypes=[float])
    return f, f, []


def ks_distance(sample, law: RadialMeasure | Callable[[float], float]) -> float:
    """sup_r |F_n(r) - F(r)|, evaluated at every jump of either side.

    ``law`` is a RadialMeasure or a continuous cdf callable.
    """
    x = _as_sorted(sample)
    fn, fn_left = _ecdf(x)
    F, F_left, extra = _law_cdfs(law)
    pts = np.union1d(x, np.asarray(extra, dtype=float))
    right = np.abs(fn(pts) - F(pts))
    left = np.abs(fn_left(pts) - F_left(pts))
    return float(max(right.max(), left.max()))


def ks_critical(n: int, multiple: float = 3.0) -> float:
    return multiple * KS_C95 / math.sqrt(n)


def _abs_integral(F1, F1_left, F2, F2_left, grid: np.ndarray) -> float:
    # both cdfs are linear strictly between consecutive grid points
    g = np.unique(grid[np.isfinite(grid)])
    if g.size < 2:
        return 0.0
    s = F1(g[:-1]) - F2(g[:-1])
    e = F1_left(g[1:]) - F2_left(g[1:])
    h = np.diff(g)
    same = s * e >= 0
    tot = np.abs(s) + np.abs(e)
    cross = np.divide(s * s + e * e, 2.0 * tot, out=np.zeros_like(tot), where=tot > 0)
    return float(np.sum(np.where(same, 0.5 * tot, cross) * h))


def wasserstein1(sample, law: RadialMeasure) -> float:
    """int |F_n - F| dr, exact for atoms plus piecewise-constant densities."""
    x = _as_sorted(sample)
    fn, fn_left = _ecdf(x)
    grid = np.union1d(np.union1d(x, law.breakpoints()), [0.0])
    return _abs_integral(fn, fn_left, law.cdf, law.cdf_left, grid)


def wasserstein_between(a: RadialMeasure, b: RadialMeasure) -> float:
    grid = np.union1d(np.union1d(a.breakpoints(), b.breakpoints()), [0.0])
    return _abs_integral(a.cdf, a.cdf_left, b.cdf, b.cdf_left, grid)


# --------------------------------------------------------------------------
# goodness of fit


@dataclass(frozen=True)
class Check:
    """One statistic with its threshold."""

    name: str
    statistic: float
    threshold: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "statistic": _num(self.statistic), "threshold": _num(self.threshold),
                "passed": bool(self.passed), **{k: _num(v) for k, v in self.detail.items()}}


def _num(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, dict):
        return {k: _num(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_num(x) for x in v]
    return v


def chi2_rays(counts, pmf) -> tuple[float, int]:
    """Pearson statistic of ray counts against a pmf; cells with p = 0 must be empty."""
    c = np.asarray(counts, dtype=float)
    p = np.asarray(pmf, dtype=float)
    n = c.sum()
    if n <= 0:
        raise ValueError("no samples")
    live = p > 0
    if np.any(c[~live] > 0):
        return math.inf, int(live.sum()) - 1
    e = n * p[live]
    stat = float(np.sum((c[live] - e) ** 2 / e))
    return stat, int(live.sum()) - 1


def chi2_threshold(dof: int, alpha: float = 1e-3) -> float:
    if dof <= 0:
        return 0.0
    return float(st.chi2.ppf(1.0 - alpha, dof))


def poisson_gof(counts, rate: float, alpha: float = 1e-3) -> Check:
    """Binned chi-square of counts against Poisson(rate); bins merged to expected >= 5."""
    c = np.asarray(counts, dtype=np.int64)
    n = c.size
    if rate <= 0:
        bad = int(np.count_nonzero(c))
        return Check("poisson_gof", float(bad), 0.0, bad == 0, {"rate": rate, "n": n})
    top = int(max(c.max(), st.poisson.ppf(1 - 1e-12, rate))) + 1
    probs = st.poisson.pmf(np.arange(top), rate)
    probs[-1] += st.poisson.sf(top - 1, rate)
    obs = np.bincount(np.minimum(c, top - 1), minlength=top).astype(float)
    exp = probs * n
    # merge from both tails until every bin expects at least 5
    bins_o, bins_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= 5:
            bins_o.append(acc_o)
            bins_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if bins_e:
            bins_o[-1] += acc_o
            bins_e[-1] += acc_e
        else:
            bins_o.append(acc_o)
            bins_e.append(acc_e)
    bo, be = np.array(bins_o), np.array(bins_e)
    stat = float(np.sum((bo - be) ** 2 / be))
    dof = bo.size - 1
    thr = chi2_threshold(dof, alpha)
    return Check("poisson_gof", stat, thr, stat <= thr, {"rate": rate, "n": n, "bins": int(bo.size),
                                                          "mean": float(c.mean())})


# --------------------------------------------------------------------------
# means and costs


def mean_ci(samples, level: float = 0.95) -> tuple[float, float]:
    """Sample mean and CLT half-width at the given two-sided level."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    z = float(st.norm.ppf(0.5 + level / 2))
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return float(x.mean()), z * sd / math.sqrt(x.size)


def mean_se(samples) -> tuple[float, float]:
    x = np.asarray(samples, dtype=float).ravel()
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return float(x.mean()), sd / math.sqrt(x.size)


def compare_cost(samples_a, samples_b, cost: Callable, sigmas: float = 3.0) -> tuple[float, float]:
    """E[cost(a)] - E[cost(b)] and the half-width sigmas * combined standard error.

    Passing the same array twice gives (0, 0): the samples are then treated
    as paired.
    """
    a = np.asarray(cost(np.asarray(samples_a, dtype=float)))
    b = np.asarray(cost(np.asarray(samples_b, dtype=float)))
    if samples_a is samples_b or (a.shape == b.shape and np.array_equal(a, b)):
        return 0.0, 0.0
    ma, sa = mean_se(a)
    mb, sb = mean_se(b)
    return ma - mb, sigmas * math.hypot(sa, sb)


# --------------------------------------------------------------------------
# aggregation


@dataclass
class EmpiricalLaw:
    """Ray counts, per-ray sorted radii and running sums for tau and L.

    ``merge`` is associative and commutative.
    """

    ray_ids: tuple[str, ...]
    counts: np.ndarray
    radii: dict[str, np.ndarray]
    n: int = 0
    tau_sum: float = 0.0
    tau_sq: float = 0.0
    lt_sum: float = 0.0
    lt_sq: float = 0.0

    @classmethod
    def from_batch(cls, batch) -> "EmpiricalLaw":
        ok = batch.stopped
        ray = batch.ray[ok]
        radii = {g: np.sort(batch.radius[ok][ray == j]) for j, g in enumerate(batch.ray_ids)}
        tau, lt = batch.tau[ok], batch.local_time[ok]
        return cls(tuple(batch.ray_ids), np.bincount(ray, minlength=len(batch.ray_ids)), radii,
                   int(ok.sum()), float(tau.sum()), float((tau * tau).sum()),
                   float(lt.sum()), float((lt * lt).sum()))

    def merge(self, other: "EmpiricalLaw") -> "EmpiricalLaw":
        if self.ray_ids != other.ray_ids:
            raise ValueError("cannot merge laws over different rays")
        radii = {g: np.sort(np.concatenate([self.radii[g], other.radii[g]])) for g in self.ray_ids}
        return EmpiricalLaw(self.ray_ids, self.counts + other.counts, radii, self.n + other.n,
                            self.tau_sum + other.tau_sum, self.tau_sq + other.tau_sq,
                            self.lt_sum + other.lt_sum, self.lt_sq + other.lt_sq)

    def pmf(self) -> dict[str, float]:
        return {g: float(c) / self.n for g, c in zip(self.ray_ids, self.counts)}

    def _mean_se(self, s: float, sq: float) -> tuple[float, float]:
        mu = s / self.n
        var = max(sq / self.n - mu * mu, 0.0) * self.n / max(self.n - 1, 1)
        return mu, math.sqrt(var / self.n)

    def tau_mean(self) -> tuple[float, float]:
        return self._mean_se(self.tau_sum, self.tau_sq)

    def local_time_mean(self) -> tuple[float, float]:
        return self._mean_se(self.lt_sum, self.lt_sq)


def law_checks(emp: EmpiricalLaw, ray_pmf: dict[str, float], radial: dict[str, RadialMeasure],
               w1_tol: float = 0.05, alpha: float = 1e-3) -> list[Check]:
    """Ray chi-square plus per-ray W1 and KS (3x critical) against the target."""
    out = []
    stat, dof = chi2_rays(emp.counts, [ray_pmf.get(g, 0.0) for g in emp.ray_ids])
    thr = chi2_threshold(dof, alpha)
    out.append(Check("ray_chi2", stat, thr, stat <= thr, {"dof": dof}))
    for g in emp.ray_ids:
        if g not in radial or emp.radii[g].size == 0:
            continue
        w = wasserstein1(emp.radii[g], radial[g])
        out.append(Check(f"w1[{g}]", w, w1_tol, w <= w1_tol, {"n": emp.radii[g].size}))
        d = ks_distance(emp.radii[g], radial[g])
        crit = ks_critical(emp.radii[g].size)
        out.append(Check(f"ks[{g}]", d, crit, d <= crit, {"n": emp.radii[g].size}))
    return out


def report_json(checks: Sequence[Check], **meta) -> str:
    body = {"schema_version": SCHEMA_VERSION, **{k: _num(v) for k, v in meta.items()},
            "checks": [c.as_dict() for c in checks],
            "passed": all(c.passed for c in checks)}
    return json.dumps(body, indent=2, sort_keys=True) + "\n"
