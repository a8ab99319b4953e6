"""Walsh Brownian motion on finitely many rays.

Paths are built from a driving Brownian skeleton W through the Levy
identity: M is the running maximum of W, the radius is R = M - W and the
local time at the origin is L = M.  With bridge refinement the maximum of
the Brownian bridge inside each step is sampled exactly, so (R, L) have
their exact joint law at skeleton times.  A new ray is drawn from the
spinning measure at every step in which L increased.

Randomness is counter-based: the draws for step i of path p depend only on
(seed, p, i), so batches, single paths and parallel workers agree bit for
bit.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numba as nb
import numpy as np

from . import rng
from .measure import SpinningMeasure
from .rules import (
    BarrierRule,
    FixedTime,
    HitLevelSet,
    HitSurface,
    RuleError,
    StoppingRule,
)

KIND_FIXED, KIND_SURFACE, KIND_LEVELSET, KIND_BARRIER = 0, 1, 2, 3

# a bridge crossing with probability below exp(-40) is treated as impossible
_EXPO_CUT = 40.0


@dataclass(frozen=True)
class SimParams:
    dt: float = 1e-4
    t_max: float = 100.0
    n_paths: int = 1000
    seed: int = 0
    bridge_refinement: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if not (self.t_max > 0):
            raise ValueError("t_max must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_max / self.dt - 1e-9))


@dataclass
class WalshPath:
    """One skeleton trajectory; arrays have length n_steps + 1."""

    times: np.ndarray
    W: np.ndarray
    M: np.ndarray
    ray: np.ndarray
    ray_ids: tuple[str, ...]

    @property
    def R(self) -> np.ndarray:
        return self.M - self.W

    @property
    def L(self) -> np.ndarray:
        return self.M

    @property
    def labels(self) -> list[str]:
        return [self.ray_ids[g] for g in self.ray]

    def truncate(self, n: int) -> "WalshPath":
        """Keep steps 0..n inclusive."""
        s = slice(0, n + 1)
        return WalshPath(self.times[s], self.W[s], self.M[s], self.ray[s], self.ray_ids)


@dataclass(frozen=True)
class StoppedSample:
    ray_id: str
    radius: float
    tau: float
    local_time: float
    stopped: bool


@dataclass
class StoppedBatch:
    """Columnar stopped samples for a run of paths.

    ``max_radius`` holds, per path and ray, the largest skeleton radius seen
    strictly before the stopping step; it feeds the uniform-integrability
    diagnostic.
    """

    ray_ids: tuple[str, ...]
    ray: np.ndarray
    radius: np.ndarray
    tau: np.ndarray
    local_time: np.ndarray
    stopped: np.ndarray
    stop_step: np.ndarray
    max_radius: np.ndarray
    dt: float = field(default=0.0)

    def __len__(self) -> int:
        return self.ray.size

    def __iter__(self) -> Iterator[StoppedSample]:
        for i in range(len(self)):
            yield StoppedSample(
                self.ray_ids[self.ray[i]],
                float(self.radius[i]),
                float(self.tau[i]),
                float(self.local_time[i]),
                bool(self.stopped[i]),
            )

    def labels(self) -> np.ndarray:
        return np.array(self.ray_ids, dtype=object)[self.ray]

    def ray_radii(self, ray_id: str, stopped_only: bool = True) -> np.ndarray:
        sel = self.ray == self.ray_ids.index(ray_id)
        if stopped_only:
            sel &= self.stopped
        return self.radius[sel]

    def ray_counts(self, stopped_only: bool = True) -> np.ndarray:
        sel = self.stopped if stopped_only else np.ones(len(self), bool)
        return np.bincount(self.ray[sel], minlength=len(self.ray_ids))

    @classmethod
    def concat(cls, parts: Sequence["StoppedBatch"]) -> "StoppedBatch":
        first = parts[0]
        return cls(
            first.ray_ids,
            *(np.concatenate([getattr(p, f) for p in parts]) for f in
              ("ray", "radius", "tau", "local_time", "stopped", "stop_step", "max_radius")),
            dt=first.dt,
        )


# --------------------------------------------------------------------------
# kernels


@nb.njit(inline="always", cache=True)
def _pick_ray(kcum, u):
    n = kcum.size
    for g in range(n - 1):
        if u < kcum[g]:
            return g
    return n - 1


@nb.njit(inline="always", cache=True)
def _barrier_at(knots, row, l):
    n = knots.size
    if l >= knots[n - 1]:
        return row[n - 1]
    lo, hi = 0, n - 1
    # last index with knots[j] <= l
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if knots[mid] <= l:
            lo = mid
        else:
            hi = mid
    while lo + 1 < n - 1 and knots[lo + 1] <= l:
        lo += 1
    span = knots[lo + 1] - knots[lo]
    if span <= 0.0:
        return row[lo + 1]
    return row[lo] + (l - knots[lo]) / span * (row[lo + 1] - row[lo])


@nb.njit(inline="always", cache=True)
def _crossed(d0, d1, dt, word):
    """Did a Brownian bridge at distances d0, d1 > 0 from a level touch it?"""
    e = 2.0 * d0 * d1 / dt
    if e >= _EXPO_CUT:
        return False
    return rng.open_unit(word) < math.exp(-e)


@nb.njit(cache=True)
def _run_path(path, k0, k1, dt, n_max, bridge, kcum, kind, levels, tree, depth,
              knots, atab, n_fix, maxrad, rec_W, rec_M, rec_ray):
    """Simulate one path until the rule fires or n_max steps elapse.

    Returns (ray, radius, stop_step, local_time, stopped).  Recording arrays
    of length zero disable recording.
    """
    sq = math.sqrt(dt)
    record = rec_W.size > 0
    n_rays = kcum.size
    a0, _, _, _ = rng.draw(k0, k1, path, 0, rng.TAG_INIT)
    g = _pick_ray(kcum, rng.open_unit(a0))
    W = 0.0
    M = 0.0
    R = 0.0
    for j in range(n_rays):
        maxrad[j] = 0.0
    mr = 0.0  # running max radius on the current ray, flushed on ray change

    up = math.inf
    lo = -1.0
    node = 0
    leaf_start = 1 << (depth - 1)
    if kind == KIND_SURFACE:
        up = levels[g]
    elif kind == KIND_BARRIER:
        up = _barrier_at(knots, atab[g], 0.0)
    elif kind == KIND_LEVELSET:
        up = tree[g, 1]
    if record:
        rec_W[0] = 0.0
        rec_M[0] = 0.0
        rec_ray[0] = g
    if kind == KIND_FIXED and n_fix == 0:
        return g, 0.0, 0, 0.0, True
    if kind == KIND_BARRIER and up <= 0.0:
        return g, 0.0, 0, 0.0, True

    z0 = z1 = z2 = 0.0
    slot = 3
    block = 0
    i = 0
    while i < n_max:
        if slot == 3:
            z0, z1, z2 = rng.normal_triple(k0, k1, path, block)
            block += 1
            slot = 0
        z = z0 if slot == 0 else (z1 if slot == 1 else z2)
        slot += 1
        Wn = W + sq * z
        Mn = M
        have_aux = False
        w0 = np.uint32(0)
        w1 = np.uint32(0)
        w2 = np.uint32(0)
        w3 = np.uint32(0)
        if bridge:
            d0 = M - W
            d1 = M - Wn
            if d1 <= 0.0 or 2.0 * d0 * d1 / dt < _EXPO_CUT:
                w0, w1, w2, w3 = rng.draw(k0, k1, path, i, rng.TAG_AUX)
                have_aux = True
                dw = Wn - W
                bm = 0.5 * (W + Wn + math.sqrt(dw * dw - 2.0 * dt * math.log(rng.open_unit(w0))))
                if bm > Mn:
                    Mn = bm
        elif Wn > Mn:
            Mn = Wn
        Rn = Mn - Wn
        lchanged = Mn > M

        hit_up = False
        hit_lo = False
        if lchanged:
            if kind == KIND_LEVELSET and node > 0:
                # the radius reached the origin inside a later stage
                hit_lo = True
            else:
                if n_rays > 1:
                    if not have_aux:
                        w0, w1, w2, w3 = rng.draw(k0, k1, path, i, rng.TAG_AUX)
                        have_aux = True
                    if mr > maxrad[g]:
                        maxrad[g] = mr
                    g = _pick_ray(kcum, rng.open_unit(w3))
                    mr = maxrad[g]
                if kind == KIND_SURFACE:
                    up = levels[g]
                elif kind == KIND_BARRIER:
                    up = _barrier_at(knots, atab[g], Mn)
                elif kind == KIND_LEVELSET:
                    up = tree[g, 1]
        if not hit_lo:
            if Rn >= up:
                hit_up = True
            elif bridge and not lchanged and up < math.inf:
                e = 2.0 * (up - R) * (up - Rn) / dt
                if e < _EXPO_CUT:
                    if not have_aux:
                        w0, w1, w2, w3 = rng.draw(k0, k1, path, i, rng.TAG_AUX)
                        have_aux = True
                    hit_up = rng.open_unit(w1) < math.exp(-e)
            if not hit_up and lo > 0.0:
                if Rn <= lo:
                    hit_lo = True
                elif bridge and not lchanged:
                    e = 2.0 * (R - lo) * (Rn - lo) / dt
                    if e < _EXPO_CUT:
                        if not have_aux:
                            w0, w1, w2, w3 = rng.draw(k0, k1, path, i, rng.TAG_AUX)
                            have_aux = True
                        hit_lo = rng.open_unit(w2) < math.exp(-e)

        W = Wn
        M = Mn
        R = Rn
        i += 1
        if record:
            rec_W[i] = W
            rec_M[i] = M
            rec_ray[i] = g

        if kind == KIND_FIXED:
            if i >= n_fix:
                maxrad[g] = mr
                return g, R, i, M, True
            if R > mr:
                mr = R
            continue

        if not (hit_up or hit_lo):
            if R > mr:
                mr = R
            continue

        if kind != KIND_LEVELSET:
            maxrad[g] = mr
            return g, (up if bridge else R), i, M, True

        # advance through the level tree
        if node == 0:
            node = 1
        elif hit_up:
            node = 2 * node + 1
        else:
            node = 2 * node
        pos = tree[g, node]
        while node < leaf_start:
            lv = tree[g, 2 * node]
            hv = tree[g, 2 * node + 1]
            if hv == pos:
                node = 2 * node + 1
            elif lv == pos:
                node = 2 * node
            else:
                break
        if node >= leaf_start:
            maxrad[g] = mr
            return g, (pos if bridge else R), i, M, True
        lo = tree[g, 2 * node]
        up = tree[g, 2 * node + 1]
        if R > mr:
            mr = R

    maxrad[g] = mr
    return g, R, i, M, False


@nb.njit(cache=True)
def _run_batch(first, n_paths, k0, k1, dt, n_max, bridge, kcum, kind, levels, tree,
               depth, knots, atab, n_fix):
    n_rays = kcum.size
    ray = np.empty(n_paths, np.int64)
    radius = np.empty(n_paths)
    step = np.empty(n_paths, np.int64)
    ltime = np.empty(n_paths)
    stopped = np.empty(n_paths, np.bool_)
    maxrad = np.zeros((n_paths, n_rays))
    empty_f = np.empty(0)
    empty_i = np.empty(0, np.int64)
    for p in range(n_paths):
        g, r, s, l, ok = _run_path(np.uint64(first + p), k0, k1, dt, n_max, bridge, kcum,
                                   kind, levels, tree, depth, knots, atab, n_fix,
                                   maxrad[p], empty_f, empty_f, empty_i)
        ray[p] = g
        radius[p] = r
        step[p] = s
        ltime[p] = l
        stopped[p] = ok
    return ray, radius, step, ltime, stopped, maxrad


@nb.njit(cache=True)
def _count_path(path, k0, k1, dt, n_max, bridge, x, lcut):
    """Excursions reaching radius x that start before local time lcut.

    Once an excursion is counted the rest of it is skipped: it adds no local
    time and the process restarts afresh at the origin when it ends.
    Returns (count, finished).
    """
    sq = math.sqrt(dt)
    W = 0.0
    M = 0.0
    R = 0.0
    count = 0
    z0 = z1 = z2 = 0.0
    slot = 3
    block = 0
    i = 0
    while i < n_max:
        if slot == 3:
            z0, z1, z2 = rng.normal_triple(k0, k1, path, block)
            block += 1
            slot = 0
        z = z0 if slot == 0 else (z1 if slot == 1 else z2)
        slot += 1
        Wn = W + sq * z
        Mn = M
        if bridge:
            d0 = M - W
            d1 = M - Wn
            if d1 <= 0.0 or 2.0 * d0 * d1 / dt < _EXPO_CUT:
                w0, w1, _, _ = rng.draw(k0, k1, path, i, rng.TAG_AUX)
                dw = Wn - W
                bm = 0.5 * (W + Wn + math.sqrt(dw * dw - 2.0 * dt * math.log(rng.open_unit(w0))))
                if bm > Mn:
                    Mn = bm
        elif Wn > Mn:
            Mn = Wn
        Rn = Mn - Wn
        lchanged = Mn > M
        i += 1
        if Mn >= lcut:
            return count, True
        hit = Rn >= x
        if not hit and bridge and not lchanged:
            e = 2.0 * (x - R) * (x - Rn) / dt
            if e < _EXPO_CUT:
                _, w1, _, _ = rng.draw(k0, k1, path, i - 1, rng.TAG_AUX)
                hit = rng.open_unit(w1) < math.exp(-e)
        if hit:
            count += 1
            Wn = Mn
            Rn = 0.0
        W = Wn
        M = Mn
        R = Rn
    return count, False


@nb.njit(cache=True)
def _count_batch(first, n_paths, k0, k1, dt, n_max, bridge, x, lcut):
    counts = np.empty(n_paths, np.int64)
    done = np.empty(n_paths, np.bool_)
    for p in range(n_paths):
        c, ok = _count_path(np.uint64(first + p), k0, k1, dt, n_max, bridge, x, lcut)
        counts[p] = c
        done[p] = ok
    return counts, done


# --------------------------------------------------------------------------
# python surface


def _kappa_arrays(kappa: SpinningMeasure, ray_ids: Sequence[str]) -> np.ndarray:
    p = kappa.vector(ray_ids)
    c = np.cumsum(p)
    c[-1] = 1.0 + 1e-12
    return c


def _encode(rule: StoppingRule, kappa: SpinningMeasure, dt: float):
    """Rule -> (ray order, kernel arguments)."""
    ray_ids = tuple(g for g in kappa.ray_ids if kappa[g] > 0)
    nr = len(ray_ids)
    levels = np.zeros(nr)
    tree = np.zeros((nr, 2))
    depth = 1
    knots = np.zeros(2)
    atab = np.zeros((nr, 2))
    n_fix = 0
    if isinstance(rule, FixedTime):
        kind = KIND_FIXED
        n_fix = int(round(rule.t / dt))
    elif isinstance(rule, HitSurface):
        kind = KIND_SURFACE
        missing = [g for g in ray_ids if g not in rule.levels]
        if missing:
            raise RuleError(f"surface has no level on charged rays {missing}")
        levels = np.array([rule.levels[g] for g in ray_ids], dtype=float)
    elif isinstance(rule, HitLevelSet):
        kind = KIND_LEVELSET
        missing = [g for g in ray_ids if g not in rule.ray_ids]
        if missing:
            raise RuleError(f"level set has no tree on charged rays {missing}")
        tree = np.ascontiguousarray(rule.tree[[rule.ray_ids.index(g) for g in ray_ids]], dtype=float)
        depth = rule.depth
    elif isinstance(rule, BarrierRule):
        kind = KIND_BARRIER
        missing = [g for g in ray_ids if g not in rule.ray_ids]
        if missing:
            raise RuleError(f"barrier has no curve on charged rays {missing}")
        knots = np.ascontiguousarray(rule.l_knots, dtype=float)
        atab = np.ascontiguousarray(rule.a_table[[rule.ray_ids.index(g) for g in ray_ids]], dtype=float)
    else:
        raise RuleError(f"unknown rule {rule!r}")
    return ray_ids, (_kappa_arrays(kappa, ray_ids), kind, levels, tree, depth, knots, atab, n_fix)


def default_threads() -> int:
    """Worker count from WALSHEMBED_THREADS (default 1)."""
    raw = os.environ.get("WALSHEMBED_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"WALSHEMBED_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _run_range(rule, kappa, params, first_path, chunk):
    ray_ids, args = _encode(rule, kappa, params.dt)
    k0, k1 = rng.split_seed(params.seed)
    n_max = params.n_steps
    parts = []
    done = 0
    while done < params.n_paths:
        n = min(chunk, params.n_paths - done)
        ray, radius, step, ltime, stopped, maxrad = _run_batch(
            first_path + done, n, k0, k1, params.dt, n_max, params.bridge_refinement, *args)
        parts.append(StoppedBatch(ray_ids, ray, radius, step * params.dt, ltime, stopped, step,
                                  maxrad, dt=params.dt))
        done += n
    return StoppedBatch.concat(parts)


def run_batch(rule: StoppingRule, kappa: SpinningMeasure, params: SimParams,
              first_path: int = 0, chunk: int = 4096, threads: int = 1) -> StoppedBatch:
    """Run ``params.n_paths`` paths (indices first_path, first_path+1, ...).

    With ``threads > 1`` contiguous index ranges go to worker processes; the
    result is identical to a serial run.
    """
    _encode(rule, kappa, params.dt)  # validate before forking
    if threads <= 1 or params.n_paths < 2 * threads:
        return _run_range(rule, kappa, params, first_path, chunk)
    bounds = np.linspace(0, params.n_paths, threads + 1).astype(int)
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futs = [pool.submit(_run_range, rule, kappa, replace(params, n_paths=int(b - a)), first_path + int(a), chunk)
                for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        return StoppedBatch.concat([f.result() for f in futs])


def run_until(rule: StoppingRule, kappa: SpinningMeasure, params: SimParams) -> Iterator[StoppedSample]:
    """Stream one StoppedSample per path; ``stopped`` is False on horizon exhaustion."""
    chunk = 4096
    for start in range(0, params.n_paths, chunk):
        n = min(chunk, params.n_paths - start)
        sub = SimParams(params.dt, params.t_max, n, params.seed, params.bridge_refinement)
        yield from run_batch(rule, kappa, sub, first_path=start)


def simulate_path(kappa: SpinningMeasure, params: SimParams, path_index: int = 0,
                  rule: StoppingRule | None = None) -> tuple[WalshPath, StoppedSample]:
    """Materialize one skeleton path.

    With a rule the path is cut at its stopping step; without one it runs to
    ``t_max``.  The same draws as in :func:`run_batch` are used, so the
    stopped sample agrees with the batch run for that path index.
    """
    rule = FixedTime(params.n_steps * params.dt) if rule is None else rule
    ray_ids, args = _encode(rule, kappa, params.dt)
    k0, k1 = rng.split_seed(params.seed)
    n_max = params.n_steps
    rec_W = np.zeros(n_max + 1)
    rec_M = np.zeros(n_max + 1)
    rec_ray = np.zeros(n_max + 1, np.int64)
    maxrad = np.zeros(len(ray_ids))
    g, r, s, l, ok = _run_path(np.uint64(path_index), k0, k1, params.dt, n_max,
                               params.bridge_refinement, *args, maxrad, rec_W, rec_M, rec_ray)
    times = np.arange(n_max + 1) * params.dt
    path = WalshPath(times, rec_W, rec_M, rec_ray, ray_ids).truncate(s)
    return path, StoppedSample(ray_ids[g], float(r), s * params.dt, float(l), bool(ok))


def count_excursions(params: SimParams, x: float, l: float, first_path: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per path: number of excursions with maximum >= x begun before local time l.

    Returns (counts, finished); unfinished paths ran out of steps first.
    """
    if not x > 0:
        raise ValueError("level x must be positive")
    k0, k1 = rng.split_seed(params.seed)
    if l <= 0:
        return np.zeros(params.n_paths, np.int64), np.ones(params.n_paths, bool)
    return _count_batch(first_path, params.n_paths, k0, k1, params.dt, params.n_steps,
                        params.bridge_refinement, float(x), float(l))


def surface_hit_law(kappa: SpinningMeasure, rho: dict[str, float]) -> tuple[dict[str, float], float]:
    """Exit direction pmf and mean time of the first hit of a per-ray level from the origin."""
    charged = [g for g in kappa.ray_ids if kappa[g] > 0]
    for g in charged:
        if g not in rho or not (rho[g] > 0 and math.isfinite(rho[g])):
            raise ValueError(f"level on charged ray {g} must be positive and finite")
    inv = sum(kappa[g] / rho[g] for g in charged)
    pmf = {g: (kappa[g] / rho[g]) / inv for g in charged}
    mean = sum(kappa[g] * rho[g] for g in charged) / inv
    return pmf, mean


def excursion_counts(path: WalshPath, x: float, l: float) -> int:
    """Excursions of a skeleton path with max radius >= x that start before local time l.

    Excursion boundaries are the steps in which L increased.
    """
    if l <= 0:
        return 0
    R = path.R
    M = path.M
    inc = np.flatnonzero(np.diff(M) > 0) + 1
    bounds = np.concatenate(([0], inc, [M.size]))
    count = 0
    for a, b in zip(bounds[:-1], bounds[1:]):
        if M[a] >= l:
            break
        if b > a and R[a:b].max() >= x:
            count += 1
    return count


def h_linear(path: WalshPath, subset: Sequence[str], kappa: SpinningMeasure) -> np.ndarray:
    """h(Z_t) = (kappa(A) 1{ray not in A} - kappa(A^c) 1{ray in A}) R_t along the path."""
    kA = kappa.mass(subset)
    if not 0 < kA < 1:
        raise ValueError("need 0 < kappa(A) < 1")
    in_a = np.isin(np.array(path.ray_ids, dtype=object)[path.ray], list(subset))
    return np.where(in_a, -(1.0 - kA), kA) * path.R


def h_at(ray_labels: np.ndarray, radius: np.ndarray, subset: Sequence[str], kappa: SpinningMeasure) -> np.ndarray:
    """h_{A,A^c} evaluated on (ray, radius) pairs."""
    kA = kappa.mass(subset)
    in_a = np.isin(ray_labels, list(subset))
    return np.where(in_a, -(1.0 - kA), kA) * radius


def write_path_csv(path: WalshPath, fh) -> None:
    fh.write("t,W,R,L,ray_id\n")
    R = path.R
    for i in range(path.times.size):
        fh.write(f"{path.times[i]:.10g},{path.W[i]:.17g},{R[i]:.17g},{path.M[i]:.17g},{path.ray_ids[path.ray[i]]}\n")


def write_samples_csv(batch: StoppedBatch, fh) -> None:
    fh.write("ray_id,radius,tau,local_time,stopped\n")
    for s in batch:
        fh.write(f"{s.ray_id},{s.radius:.17g},{s.tau:.10g},{s.local_time:.17g},{int(s.stopped)}\n")
