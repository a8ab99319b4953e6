"""Barrier (Vallois-type) embedding.

Per ray, the potential c(r) = m + int_0^r F(u) du of the target's radial law
rescaled to mean m gives, through its tangents from (0, s), a radius zeta(s)
and a slope phi(s).  Averaging the slopes gives Lambda(s); H = int ds/Lambda
maps s to local time, and the barrier is a(l) = (m_ray/m) zeta(H^-1(l)).
The process stops once its radius reaches the barrier at the current local
time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq

from .measure import (
    MeasureError,
    RadialMeasure,
    SpinningMeasure,
    TargetMeasure,
    first_moment,
)
from .rules import BarrierRule, interp_barrier

_GL_X, _GL_W = leggauss(20)
PINNED, CURVED = 0, 1


# --------------------------------------------------------------------------
# potentials and tangents


@dataclass(frozen=True)
class PotentialFn:
    """c(r) = m + int_0^r F(u) du for the ray law pushed to mean m.

    Knots ``x`` start at 0; on (x_j, x_{j+1}) the cdf is ``F[j] + f[j] (r - x_j)``.
    Beyond the last knot F = 1 and c(r) = r.
    """

    ray_id: str
    m: float
    scale: float
    x: np.ndarray
    c: np.ndarray
    F: np.ndarray
    F_left: np.ndarray
    f: np.ndarray

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        j = np.clip(np.searchsorted(self.x, r, side="right") - 1, 0, self.x.size - 1)
        u = r - self.x[j]
        out = self.c[j] + self.F[j] * u + 0.5 * self.f[j] * u * u
        return out if out.ndim else float(out)

    def right_derivative(self, r):
        r = np.asarray(r, dtype=float)
        j = np.clip(np.searchsorted(self.x, r, side="right") - 1, 0, self.x.size - 1)
        out = np.minimum(self.F[j] + self.f[j] * (r - self.x[j]), 1.0)
        return out if out.ndim else float(out)

    def intercepts(self, j: int) -> tuple[float, float]:
        """Intercepts at 0 of the extreme supporting lines at knot j (left, right)."""
        return (self.c[j] - self.x[j] * self.F_left[j], self.c[j] - self.x[j] * self.F[j])

    def s_breaks(self) -> list[float]:
        out = set()
        for j in range(1, self.x.size):
            for v in self.intercepts(j):
                if 0.0 < v < self.m:
                    out.add(float(v))
        return sorted(out)

    def locate(self, s: float) -> tuple[int, int]:
        """(kind, j) of the tangency from (0, s): pinned at knot j or inside segment j."""
        tol = 1e-12 * max(1.0, self.m)
        for j in range(self.x.size - 1, 0, -1):
            if self.intercepts(j)[0] >= s - tol:
                return PINNED, j
            i = j - 1
            if self.f[i] > 0 and self.intercepts(i)[1] > s:
                return CURVED, i
        raise MeasureError("tangent point not found (s outside [0, m)?)")

    def zeta_at(self, kind: int, j: int, s):
        if kind == PINNED:
            return np.full_like(np.asarray(s, dtype=float), self.x[j])
        alpha = self.intercepts(j)[1]
        r2 = self.x[j] ** 2 + 2.0 * (alpha - np.asarray(s, dtype=float)) / self.f[j]
        return np.minimum(np.sqrt(np.maximum(r2, 0.0)), self.x[j + 1])

    def phi_at(self, kind: int, j: int, s):
        s = np.asarray(s, dtype=float)
        if kind == PINNED:
            return (self.c[j] - s) / self.x[j]
        z = self.zeta_at(kind, j, s)
        return self.F[j] + self.f[j] * (z - self.x[j])


def _potential(ray_id: str, radial: RadialMeasure, m: float, m_ray: float) -> PotentialFn:
    scale = m / m_ray
    nu = radial.scaled(scale)
    x = np.array(sorted({0.0, *nu.breakpoints()}))
    F = np.asarray(nu.cdf(x), dtype=float)
    F_left = np.asarray(nu.cdf_left(x), dtype=float)
    f = np.zeros(x.size)
    for j in range(x.size - 1):
        mid = 0.5 * (x[j] + x[j + 1])
        f[j] = sum(d for a, b, d in nu.pieces if a <= mid < b)
    F[-1] = 1.0
    c = np.empty(x.size)
    c[0] = m
    for j in range(x.size - 1):
        h = x[j + 1] - x[j]
        c[j + 1] = c[j] + F[j] * h + 0.5 * f[j] * h * h
    return PotentialFn(ray_id, m, scale, x, c, F, F_left, f)


def potential(target: TargetMeasure) -> dict[str, PotentialFn]:
    m = first_moment(target)
    if m <= 0:
        raise MeasureError("target has zero first moment")
    out = {}
    for ray in target.rays:
        if ray.barycenter <= 0:
            raise MeasureError(f"ray {ray.ray_id} carries only origin mass")
        out[ray.ray_id] = _potential(ray.ray_id, ray.radial, m, ray.barycenter)
    return out


def tangent(c: PotentialFn, s: float) -> tuple[float, float]:
    """(zeta, phi): farthest tangency point from (0, s) and the tangent slope."""
    if not 0 <= s < c.m:
        raise MeasureError(f"need 0 <= s < m = {c.m}, got {s}")
    if s == 0:
        return math.inf, 1.0
    kind, j = c.locate(s)
    return float(c.zeta_at(kind, j, s)), float(c.phi_at(kind, j, s))


# --------------------------------------------------------------------------
# barrier


@dataclass(frozen=True)
class _Piece:
    s0: float
    s1: float
    modes: tuple[tuple[int, int], ...]  # per ray
    linear: bool
    subst: bool  # integrate with s = s1 - u**2 (square-root end at s1)


@dataclass(frozen=True)
class Barrier:
    """Tables for the barrier embedding.

    ``s_grid``/``l_grid`` hold matching (s, H(s)) points; piece boundaries
    appear twice so that ``a_table`` can jump there.  ``tail`` says what
    happens past the last knot: ``"constant"`` keeps the last level,
    ``"origin"`` drops the barrier to 0 (stop at the origin), ``"capped"``
    keeps the last level of a table cut where Lambda fell below the floor.
    """

    ray_ids: tuple[str, ...]
    m: float
    weights: np.ndarray
    kappa: SpinningMeasure
    potentials: dict[str, PotentialFn]
    pieces: tuple[_Piece, ...]
    s_grid: np.ndarray
    l_grid: np.ndarray
    a_table: np.ndarray
    lam_grid: np.ndarray
    h_piece_start: np.ndarray
    tail: str
    truncated_mass: float

    # -- pointwise evaluation --

    def _piece_index(self, s: float) -> int:
        for i, p in enumerate(self.pieces):
            if s <= p.s1:
                return i
        return len(self.pieces) - 1

    def zeta(self, ray_id: str, s: float) -> float:
        return tangent(self.potentials[ray_id], s)[0]

    def phi(self, ray_id: str, s: float) -> float:
        return tangent(self.potentials[ray_id], s)[1]

    def _lam_piece(self, p: _Piece, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for w, g, (kind, j) in zip(self.weights, self.ray_ids, p.modes):
            out = out + w * self.potentials[g].phi_at(kind, j, s)
        return out

    def Lambda(self, s: float) -> float:
        if s <= 0:
            return 1.0
        return float(sum(w * tangent(self.potentials[g], s)[1] for w, g in zip(self.weights, self.ray_ids)))

    def _h_increment(self, p: _Piece, s0: float, s1: float) -> float:
        if s1 <= s0:
            return 0.0
        if p.linear:
            q = float(sum(w / self.potentials[g].x[j] for w, g, (_, j) in zip(self.weights, self.ray_ids, p.modes)))
            l0, l1 = float(self._lam_piece(p, s0)), float(self._lam_piece(p, s1))
            if l1 <= 0:
                return math.inf
            return math.log(l0 / l1) / q
        return _quad_inv(lambda s: self._lam_piece(p, s), s0, s1, p.s1 if p.subst else None)

    def H(self, s: float) -> float:
        """int_0^s du / Lambda(u)."""
        if s <= 0:
            return 0.0
        if s >= self.m:
            return math.inf if self.tail != "origin" else float(self.l_grid[-1])
        k = self._piece_index(s)
        p = self.pieces[k]
        if p.linear:
            return float(self.h_piece_start[k] + self._h_increment(p, p.s0, s))
        i = int(np.searchsorted(self.s_grid, s, side="right")) - 1
        return float(self.l_grid[i] + self._h_increment(p, float(self.s_grid[i]), s))

    def H_inv(self, l: float) -> float:
        if l <= 0:
            return 0.0
        i = int(np.searchsorted(self.h_piece_start, l, side="right")) - 1
        i = min(max(i, 0), len(self.pieces) - 1)
        p = self.pieces[i]
        if p.linear:
            q = float(sum(w / self.potentials[g].x[j] for w, g, (_, j) in zip(self.weights, self.ray_ids, p.modes)))
            lam0 = float(self._lam_piece(p, p.s0))
            lam = lam0 * math.exp(-q * (l - float(self.h_piece_start[i])))
            # Lambda = lam(p.s0) - q (s - p.s0) on a pinned piece
            return min(p.s0 + (lam0 - lam) / q, p.s1)
        k = int(np.searchsorted(self.l_grid, l, side="right")) - 1
        if k >= self.l_grid.size - 1:
            return float(self.s_grid[-1])
        s0, s1 = float(self.s_grid[k]), float(self.s_grid[k + 1])
        if s1 <= s0:
            return s0
        l0 = float(self.l_grid[k])
        return brentq(lambda x: l0 + self._h_increment(p, s0, x) - l, s0, s1, xtol=1e-15, rtol=1e-15)

    def a(self, ray_id: str, l):
        """Barrier level by table lookup (exact on pinned pieces)."""
        return interp_barrier(self.l_grid, self.a_table[self.ray_ids.index(ray_id)], l)

    def a_exact(self, ray_id: str, l: float) -> float:
        s = self.H_inv(l)
        c = self.potentials[ray_id]
        if s >= self.m:
            return 0.0
        if s <= 0:
            s = 0.0
            p = self.pieces[0]
        else:
            p = self.pieces[self._piece_index(s)]
        kind, j = p.modes[self.ray_ids.index(ray_id)]
        return float(c.zeta_at(kind, j, s)) / c.scale

    def b(self, ray_id: str, r):
        """Right-continuous inverse: inf{l : a(l) <= r} (inf when never)."""
        return _right_inverse(self.l_grid, self.a_table[self.ray_ids.index(ray_id)], r)

    @property
    def l_max(self) -> float:
        return float(self.l_grid[-1])

    def survival(self, s: float) -> float:
        return self.Lambda(s)

    def rule(self) -> BarrierRule:
        return BarrierRule(self.ray_ids, self.l_grid.copy(), self.a_table.copy())


def _quad_inv(lam, s0: float, s1: float, sqrt_end: float | None, parts: int = 8) -> float:
    """int_{s0}^{s1} ds / lam(s) by composite Gauss-Legendre.

    With ``sqrt_end`` the substitution s = sqrt_end - u**2 removes a
    square-root zero of lam at that end.
    """
    if sqrt_end is None:
        edges = np.linspace(s0, s1, parts + 1)
        tot = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            s = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
            tot += 0.5 * (b - a) * float(np.dot(_GL_W, 1.0 / lam(s)))
        return tot
    u0, u1 = math.sqrt(max(sqrt_end - s1, 0.0)), math.sqrt(max(sqrt_end - s0, 0.0))
    edges = np.linspace(u0, u1, parts + 1)
    tot = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        u = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
        tot += 0.5 * (b - a) * float(np.dot(_GL_W, 2.0 * u / lam(sqrt_end - u * u)))
    return tot


def _split_long_steps(proto: Barrier, p: _Piece, grid: np.ndarray, max_dl: float) -> np.ndarray:
    pts = list(grid)
    out = [pts[0]]
    stack = list(zip(pts[:-1], pts[1:]))[::-1]
    while stack:
        a, b = stack.pop()
        if proto._h_increment(p, a, b) > max_dl and b - a > 1e-13 * max(1.0, proto.m):
            mid = 0.5 * (a + b)
            stack.append((mid, b))
            stack.append((a, mid))
        else:
            out.append(b)
    return np.array(out)


def _right_inverse(knots: np.ndarray, vals: np.ndarray, r):
    r = np.asarray(r, dtype=float)
    out = np.full(r.shape, math.inf)
    neg = -vals  # non-decreasing
    j = np.searchsorted(neg, -r, side="left")  # first index with vals <= r
    ok = j < vals.size
    jj = np.where(ok, j, 0)
    prev = np.maximum(jj - 1, 0)
    span = knots[jj] - knots[prev]
    drop = vals[prev] - vals[jj]
    interp = (jj > 0) & (span > 0) & (drop > 0)
    frac = np.divide(vals[prev] - r, drop, out=np.zeros_like(r), where=interp)
    lvals = np.where(interp, knots[prev] + frac * span, knots[jj])
    out = np.where(ok, lvals, out)
    return out if out.ndim else float(out)


def build_barrier(target: TargetMeasure, refine: int = 64, lam_floor: float = 1e-6,
                  max_dl: float = 0.05) -> Barrier:
    """Barrier tables for a target.

    Curved s-pieces get ``refine`` sub-steps, further halved until each
    spans at most ``max_dl`` of local time.
    """
    if refine < 1:
        raise MeasureError("grid refinement must be >= 1")
    pots = potential(target)
    ray_ids = tuple(target.ray_ids)
    m = first_moment(target)
    w = np.array([r.weight for r in target.rays])
    kappa = SpinningMeasure({r.ray_id: r.weight * r.barycenter / m for r in target.rays})

    breaks = sorted({0.0, m, *[s for g in ray_ids for s in pots[g].s_breaks()]})
    merged = [breaks[0]]
    for s in breaks[1:]:
        if s - merged[-1] > 1e-13 * max(1.0, m):
            merged.append(s)
    merged[-1] = m
    if len(merged) < 2:
        raise MeasureError("degenerate s-grid")

    pieces = []
    for s0, s1 in zip(merged[:-1], merged[1:]):
        mid = 0.5 * (s0 + s1)
        modes = tuple(pots[g].locate(mid) for g in ray_ids)
        linear = all(k == PINNED for k, _ in modes)
        subst = (not linear) and s1 == m and any(
            k == CURVED and pots[g].x[j] == 0 for g, (k, j) in zip(ray_ids, modes))
        pieces.append(_Piece(s0, s1, modes, linear, subst))

    proto = Barrier(ray_ids, m, w, kappa, pots, tuple(pieces), np.zeros(0), np.zeros(0),
                    np.zeros((len(ray_ids), 0)), np.zeros(0), np.zeros(len(pieces)), "constant", 0.0)

    # how the last piece ends
    last = pieces[-1]
    lam_end = float(proto._lam_piece(last, m))
    tail = "origin"
    truncated = 0.0
    if lam_end <= 1e-14 and not last.subst:
        if last.linear:
            tail = "constant"
        else:
            tail = "capped"
            s_cap = brentq(lambda s: float(proto._lam_piece(last, s)) - lam_floor, last.s0, m,
                           xtol=1e-15, rtol=1e-15) if float(proto._lam_piece(last, last.s0)) > lam_floor else last.s0
            truncated = float(proto._lam_piece(last, s_cap))
            pieces[-1] = _Piece(last.s0, s_cap, last.modes, False, False)

    h_start = np.zeros(len(pieces))
    s_pts, l_pts, a_cols, lam_pts = [], [], [], []
    h = 0.0
    scales = np.array([pots[g].scale for g in ray_ids])
    for i, p in enumerate(pieces):
        h_start[i] = h
        if i == len(pieces) - 1 and tail == "constant":
            grid = np.array([p.s0])
        elif p.linear:
            grid = np.array([p.s0, p.s1])
        elif p.subst:
            u = np.linspace(math.sqrt(p.s1 - p.s0), 0.0, refine + 1)
            grid = p.s1 - u * u
            grid[0], grid[-1] = p.s0, p.s1
        else:
            grid = np.linspace(p.s0, p.s1, refine + 1)
        if not p.linear:
            grid = _split_long_steps(proto, p, grid, max_dl)
        ls = [h]
        for a, b in zip(grid[:-1], grid[1:]):
            ls.append(ls[-1] + proto._h_increment(p, float(a), float(b)))
        zetas = np.array([pots[g].zeta_at(k, j, grid) for g, (k, j) in zip(ray_ids, p.modes)])
        s_pts.append(grid)
        l_pts.append(np.array(ls))
        a_cols.append(zetas / scales[:, None])
        lam_pts.append(np.asarray(proto._lam_piece(p, grid), dtype=float))
        h = ls[-1]

    s_grid = np.concatenate(s_pts)
    l_grid = np.concatenate(l_pts)
    a_table = np.concatenate(a_cols, axis=1)
    lam_grid = np.concatenate(lam_pts)
    if tail == "origin":
        s_grid = np.append(s_grid, m)
        l_grid = np.append(l_grid, l_grid[-1])
        a_table = np.concatenate([a_table, np.zeros((len(ray_ids), 1))], axis=1)
        lam_grid = np.append(lam_grid, lam_grid[-1])
    if l_grid.size < 2 or l_grid[-1] == l_grid[0]:
        # constant barrier: pad with a second knot
        s_grid = np.append(s_grid, s_grid[-1])
        l_grid = np.append(l_grid, l_grid[-1] + 1.0)
        a_table = np.concatenate([a_table, a_table[:, -1:]], axis=1)
        lam_grid = np.append(lam_grid, lam_grid[-1])
    if not np.all(np.isfinite(l_grid)) or np.any(np.diff(l_grid) < 0):
        raise MeasureError("local-time grid is not monotone; refine the s-grid")
    if np.any(np.diff(a_table, axis=1) > 1e-9):
        raise MeasureError("barrier table is not non-increasing; refine the s-grid")
    a_table = np.minimum.accumulate(a_table, axis=1)
    return Barrier(ray_ids, m, w, kappa, pots, tuple(pieces), s_grid, l_grid, a_table, lam_grid,
                   h_start, tail, truncated)


def local_time_survival(barrier: Barrier, s: float) -> float:
    """P[L_tau >= H(s)] = Lambda(s)."""
    if not 0 <= s < barrier.m:
        raise MeasureError(f"need 0 <= s < m = {barrier.m}")
    return barrier.Lambda(s)


def vallois_rule(barrier: Barrier) -> BarrierRule:
    return barrier.rule()


def write_barrier_csv(barrier: Barrier, fh) -> None:
    fh.write("l," + ",".join(f"a_{g}" for g in barrier.ray_ids) + ",lambda\n")
    for i in range(barrier.l_grid.size):
        vals = ",".join(f"{barrier.a_table[k, i]:.17g}" for k in range(len(barrier.ray_ids)))
        fh.write(f"{barrier.l_grid[i]:.17g},{vals},{barrier.lam_grid[i]:.17g}\n")


# --------------------------------------------------------------------------
# uniform integrability diagnostic


@dataclass(frozen=True)
class UIRow:
    x: float
    value: float
    stderr: float


def ui_diagnostic(batch, kappa: SpinningMeasure, subset: Sequence[str], x_grid: Sequence[float]) -> dict:
    """x * P[tau > H_x] over the grid, where H_x is the first time h_{A,A^c} reaches x.

    For x > 0 the level is radius x / kappa(A) on a ray outside A, for x < 0
    radius |x| / kappa(A^c) on a ray in A.  Reaching is read off the maximal
    radius per ray strictly before the stopping step.
    """
    ka = kappa.mass(subset)
    if not 0 < ka < 1:
        raise ValueError("need 0 < kappa(A) < 1")
    in_a = np.array([g in set(subset) for g in batch.ray_ids])
    rows = []
    n = len(batch)
    max_out = batch.max_radius[:, ~in_a].max(axis=1) if (~in_a).any() else np.zeros(n)
    max_in = batch.max_radius[:, in_a].max(axis=1) if in_a.any() else np.zeros(n)
    for x in x_grid:
        x = float(x)
        if x == 0:
            rows.append(UIRow(0.0, 0.0, 0.0))
            continue
        hit = max_out >= x / ka if x > 0 else max_in >= -x / (1 - ka)
        p = float(hit.mean())
        rows.append(UIRow(x, abs(x) * p, abs(x) * math.sqrt(max(p * (1 - p), 0.0) / n)))
    diffs_ok = all(b.value - a.value <= 3 * math.hypot(a.stderr, b.stderr)
                   for a, b in zip(rows[:-1], rows[1:]))
    last = rows[-1]
    return {"rows": rows, "non_increasing": diffs_ok,
            "decays": last.value <= 3 * last.stderr if last.stderr > 0 else last.value == 0.0}
