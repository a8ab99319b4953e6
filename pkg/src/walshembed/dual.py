"""Dual certificate for the barrier embedding.

With Delta(l) = int_0^l sum_g kappa_g / a_g and J(u) = int_u^inf e^{-Delta} Psi'',
the functions

    A_g(l) = Psi'(inf) - int_l^inf e^{Delta(u)} J(u) / a_g(u) du
    K(l)   = int_0^l e^{Delta} J
    G(g, r) = r A_g(b_g(r)) + Psi(0) - K(b_g(r))

and M_t = int_0^{L_t} sum_g kappa_g A_g - A_{ray}(L_t) R_t satisfy
M_t + G(Z_t) <= Psi(L_t) along every path, with equality on the barrier.
Everything is tabulated on a fine local-time grid; past the last barrier
knot the barrier is constant, Delta is affine and the tails are explicit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad

from .measure import MeasureError
from .rules import interp_barrier
from .sim import WalshPath
from .vallois import Barrier

_NODES = 8


def _cumulative_matrix(n: int):
    """GL nodes/weights on [-1, 1] and S with S[k, j] = int_{-1}^{x_k} l_j(t) dt."""
    x, w = leggauss(n)
    V = np.vander(x, n, increasing=True)
    coef = np.linalg.inv(V)  # column j: monomial coefficients of l_j
    powers = np.arange(1, n + 1)
    S = np.empty((n, n))
    for k in range(n):
        S[k] = ((x[k] ** powers - (-1.0) ** powers) / powers) @ coef
    return x, w, S


_X, _W, _S = _cumulative_matrix(_NODES)


@dataclass(frozen=True)
class ConvexCost:
    name: str
    psi: Callable
    dpsi: Callable
    d2psi: Callable
    dpsi_inf: float
    K: float
    tail: Callable  # (l, d) -> int_l^inf e^{-d (v - l)} Psi''(v) dv

    def __post_init__(self):
        probe = np.linspace(0.0, 50.0, 101)
        if np.any(self.d2psi(probe) <= 0):
            raise ValueError("cost must be strictly convex on [0, inf)")
        if self.dpsi_inf > self.K:
            raise ValueError("cost derivative exceeds its bound")


def _sqrt_tail(l, d):
    def one(x):
        return quad(lambda v: math.exp(-d * (v - x)) * (1 + v * v) ** -1.5, x, math.inf,
                    epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    l = np.asarray(l, dtype=float)
    out = np.vectorize(one, otypes=[float])(l)
    return out if out.ndim else float(out)


COSTS = {
    "exp": ConvexCost(
        "exp",
        lambda x: x + np.exp(-x),
        lambda x: 1.0 - np.exp(-x),
        lambda x: np.exp(-x),
        1.0, 1.0,
        lambda l, d: np.exp(-np.asarray(l, dtype=float)) / (d + 1.0),
    ),
    "sqrt": ConvexCost(
        "sqrt",
        lambda x: np.sqrt(1.0 + x * x),
        lambda x: x / np.sqrt(1.0 + x * x),
        lambda x: (1.0 + x * x) ** -1.5,
        1.0, 1.0,
        _sqrt_tail,
    ),
}


def get_cost(name: str) -> ConvexCost:
    try:
        return COSTS[name]
    except KeyError:
        raise ValueError(f"unknown cost {name!r}; choose from {sorted(COSTS)}") from None


@dataclass(frozen=True)
class DualCertificate:
    barrier: Barrier
    cost: ConvexCost
    kappa: np.ndarray
    grid: np.ndarray
    delta: np.ndarray
    J: np.ndarray
    A: np.ndarray  # (rays, grid)
    K_tab: np.ndarray
    Phi: np.ndarray  # int_0^l sum_g kappa_g A_g
    a_inf: np.ndarray
    d_inf: float

    @property
    def ray_ids(self) -> tuple[str, ...]:
        return self.barrier.ray_ids

    @property
    def l_end(self) -> float:
        return float(self.grid[-1])

    def _t1(self, l):
        c = self.cost
        return (c.dpsi_inf - c.dpsi(l) - c.tail(l, self.d_inf)) / self.d_inf

    def _eval(self, table: np.ndarray, l, tail_fn):
        l = np.asarray(l, dtype=float)
        out = np.interp(l, self.grid, table)
        far = l > self.grid[-1]
        if np.any(far):
            out = np.where(far, tail_fn(np.where(far, l, self.grid[-1])), out)
        return out if out.ndim else float(out)

    def Delta(self, l):
        return self._eval(self.delta, l, lambda x: self.delta[-1] + self.d_inf * (x - self.grid[-1]))

    def J_at(self, l):
        return self._eval(self.J, l, lambda x: np.exp(-self.Delta(x)) * self.cost.tail(x, self.d_inf))

    def A_ray(self, ray: int, l):
        return self._eval(self.A[ray], l, lambda x: self.cost.dpsi_inf - self._t1(x) / self.a_inf[ray])

    def K(self, l):
        l = np.asarray(l, dtype=float)
        inf = np.isinf(l)
        safe = np.where(inf, self.grid[-1], l)
        out = self._eval(self.K_tab, safe, lambda x: self.K_tab[-1] + self._t1(self.grid[-1]) - self._t1(x))
        out = np.where(inf, self.K_inf, out)
        return out if out.ndim else float(out)

    @property
    def K_inf(self) -> float:
        return float(self.K_tab[-1] + self._t1(self.grid[-1]))

    def Phi_at(self, l):
        c = self.cost
        return self._eval(self.Phi, l, lambda x: self.Phi[-1] + c.psi(x) - c.psi(self.grid[-1])
                          + self._t1(self.grid[-1]) - self._t1(x))

    def G(self, ray: int, r):
        """G(ray, r) = r A(b(r)) + Psi(0) - K(b(r)); b = inf gives r Psi'(inf) + Psi(0) - K(inf)."""
        r = np.asarray(r, dtype=float)
        b = self.barrier.b(self.ray_ids[ray], r)
        b = np.asarray(b, dtype=float)
        fin = np.isfinite(b)
        bb = np.where(fin, b, 0.0)
        psi0 = float(self.cost.psi(0.0))
        val = np.where(fin, r * self.A_ray(ray, bb) + psi0 - self.K(bb),
                       r * self.cost.dpsi_inf + psi0 - self.K_inf)
        return val if val.ndim else float(val)

    def consistency_residual(self) -> float:
        """max_l |sum_g kappa_g A_g(l) - Psi'(l) - e^{Delta(l)} J(l)| over the grid."""
        lhs = self.kappa @ self.A
        rhs = self.cost.dpsi(self.grid) + np.exp(self.delta) * self.J
        return float(np.max(np.abs(lhs - rhs)))


def _grid(barrier: Barrier, step: float, far: float) -> np.ndarray:
    knots = np.unique(barrier.l_grid)
    end = knots[-1] + far
    pts = [np.array([0.0])]
    for a, b in list(zip(knots[:-1], knots[1:])) + [(knots[-1], end)]:
        n = max(1, int(math.ceil((b - a) / step)))
        pts.append(np.linspace(a, b, n + 1)[1:])
    return np.concatenate(pts)


def dual_certificate(barrier: Barrier, cost: ConvexCost, step: float = 2e-3, far: float = 40.0) -> DualCertificate:
    """Tabulate Delta, J, A_g, K and the integral of sum kappa A on a local-time grid."""
    if barrier.tail == "origin" or np.any(barrier.a_table <= 0):
        raise MeasureError("dual certificate needs a barrier bounded away from 0 (no stopping at the origin)")
    kap = np.array([barrier.kappa[g] for g in barrier.ray_ids])
    a_inf = barrier.a_table[:, -1].copy()
    d_inf = float(np.sum(kap / a_inf))

    L = _grid(barrier, step, far)
    h = np.diff(L)[:, None]
    u = L[:-1, None] + 0.5 * h * (_X[None, :] + 1.0)  # nodes (intervals, n)
    inv_a = np.stack([1.0 / interp_barrier(barrier.l_grid, barrier.a_table[k], u)
                      for k in range(len(barrier.ray_ids))])  # (rays, intervals, n)
    g = np.tensordot(kap, inv_a, axes=1)

    half = 0.5 * h
    dlt_inc = half[:, 0] * (g @ _W)
    delta = np.concatenate([[0.0], np.cumsum(dlt_inc)])
    dlt_nodes = delta[:-1, None] + half * (g @ _S.T)

    e1 = np.exp(-dlt_nodes) * cost.d2psi(u)
    j_inc = half[:, 0] * (e1 @ _W)
    j_end = math.exp(-delta[-1]) * float(cost.tail(L[-1], d_inf))
    J = np.concatenate([np.cumsum(j_inc[::-1])[::-1], [0.0]]) + j_end
    J_nodes = J[1:, None] + half * (e1 @ (_W[None, :] - _S).T)

    ej = np.exp(dlt_nodes) * J_nodes  # e^Delta J at nodes
    t1_end = float((cost.dpsi_inf - cost.dpsi(L[-1]) - cost.tail(L[-1], d_inf)) / d_inf)

    A = np.empty((len(barrier.ray_ids), L.size))
    A_nodes = np.empty_like(inv_a)
    for k in range(len(barrier.ray_ids)):
        f = ej * inv_a[k]
        inc = half[:, 0] * (f @ _W)
        I = np.concatenate([np.cumsum(inc[::-1])[::-1], [0.0]]) + t1_end / a_inf[k]
        A[k] = cost.dpsi_inf - I
        A_nodes[k] = cost.dpsi_inf - (I[1:, None] + half * (f @ (_W[None, :] - _S).T))

    K_tab = np.concatenate([[0.0], np.cumsum(half[:, 0] * (ej @ _W))])
    phi_nodes = np.tensordot(kap, A_nodes, axes=1)
    Phi = np.concatenate([[0.0], np.cumsum(half[:, 0] * (phi_nodes @ _W))])
    return DualCertificate(barrier, cost, kap, L, delta, J, A, K_tab, Phi, a_inf, d_inf)


def _ray_index(path: WalshPath, cert: DualCertificate) -> np.ndarray:
    order = [cert.ray_ids.index(g) for g in path.ray_ids]
    return np.asarray(order)[path.ray]


def dual_M(path: WalshPath, cert: DualCertificate) -> np.ndarray:
    """M_t = int_0^{L_t} sum kappa A - A_ray(L_t) R_t along the skeleton."""
    return _dual_M(_ray_index(path, cert), path.R, path.M, cert)


def _dual_M(ray, R, L, cert):
    out = np.asarray(cert.Phi_at(L), dtype=float).copy()
    for k in range(len(cert.ray_ids)):
        sel = ray == k
        if np.any(sel):
            out[sel] -= cert.A_ray(k, L[sel]) * R[sel]
    return out


def gap_values(ray, R, L, cert: DualCertificate) -> np.ndarray:
    """M + G(Z) - Psi(L) at arbitrary states."""
    ray, R, L = np.asarray(ray), np.asarray(R, dtype=float), np.asarray(L, dtype=float)
    out = _dual_M(ray, R, L, cert) - cert.cost.psi(L)
    for k in range(len(cert.ray_ids)):
        sel = ray == k
        if np.any(sel):
            out[sel] += cert.G(k, R[sel])
    return out


def pathwise_gap(path: WalshPath, cert: DualCertificate, cost: ConvexCost | None = None) -> tuple[float, float]:
    """(max over the skeleton of M + G(Z) - Psi(L), the same quantity at the last step)."""
    if cost is not None and cost.name != cert.cost.name:
        raise ValueError("certificate was built for a different cost")
    gaps = gap_values(_ray_index(path, cert), path.R, path.M, cert)
    return float(gaps.max()), float(gaps[-1])


def write_certificate_csv(cert: DualCertificate, fh_l, fh_r, r_max: float | None = None, n_r: int = 401) -> None:
    """(l, Delta, A per ray) on the barrier's local-time knots and (r, G per ray) on a radius grid."""
    ids = cert.ray_ids
    fh_l.write("l,Delta," + ",".join(f"A_{g}" for g in ids) + "\n")
    ls = np.unique(np.concatenate([cert.barrier.l_grid, np.linspace(0.0, cert.l_end, 201)]))
    dl = cert.Delta(ls)
    As = [cert.A_ray(k, ls) for k in range(len(ids))]
    for i, l in enumerate(ls):
        fh_l.write(f"{l:.17g},{dl[i]:.17g}," + ",".join(f"{a[i]:.17g}" for a in As) + "\n")
    top = r_max if r_max is not None else 1.25 * float(cert.barrier.a_table.max())
    rs = np.linspace(0.0, top, n_r)
    Gs = [cert.G(k, rs) for k in range(len(ids))]
    fh_r.write("r," + ",".join(f"G_{g}" for g in ids) + "\n")
    for i, r in enumerate(rs):
        fh_r.write(f"{r:.17g}," + ",".join(f"{G[i]:.17g}" for G in Gs) + "\n")
