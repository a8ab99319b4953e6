"""Iterated-barycenter (Dubins-type) embedding on each ray.

Level sets are refined by inserting the barycenter of every interval.  The
stopped law after ``depth`` stages and the expected stopping time are
available in closed form; :func:`dubins_rule` turns the construction into a
rule the simulator can run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .measure import (
    MeasureError,
    RadialMeasure,
    SpinningMeasure,
    TargetMeasure,
    interval_barycenter,
    is_centered,
    second_moment,
)
from .rules import HitLevelSet


def _barycenter(nu: RadialMeasure, a: float, b: float) -> float:
    # collapsed intervals carry no mass and reuse the left endpoint
    if b <= a:
        return float(a)
    return interval_barycenter(nu, a, b)


@dataclass(frozen=True)
class RayRefinement:
    """Level sets of one ray.

    ``points[l]`` is A_l (length 2**l + 1, from 0 to inf, repeats allowed),
    ``masses[l][i]`` and ``barycenters[l][i]`` describe its i-th interval.
    """

    ray_id: str
    points: tuple[np.ndarray, ...]
    masses: tuple[np.ndarray, ...]
    barycenters: tuple[np.ndarray, ...]

    def heap(self, depth: int) -> np.ndarray:
        """Levels as a heap of size 2**depth (slot 0 unused).

        Node k sits at stage floor(log2 k) + 1; its children are the
        barycenters of the two halves its own level splits.
        """
        out = np.zeros(2**depth)
        for stage in range(1, depth + 1):
            bary = self.barycenters[stage - 1]
            first = 2 ** (stage - 1)
            out[first: 2 * first] = bary
        return out


@dataclass(frozen=True)
class RefinementTree:
    depth: int
    rays: tuple[RayRefinement, ...]

    @property
    def ray_ids(self) -> tuple[str, ...]:
        return tuple(r.ray_id for r in self.rays)

    def ray(self, ray_id: str) -> RayRefinement:
        return self.rays[self.ray_ids.index(ray_id)]

    def level(self, ray_id: str, l: int) -> list[float]:
        """A_l on one ray as a sorted list (duplicates kept)."""
        return self.ray(ray_id).points[l].tolist()


def _refine_ray(ray_id: str, nu: RadialMeasure, depth: int) -> RayRefinement:
    pts = [np.array([0.0, math.inf])]
    masses, barys = [], []
    for _ in range(depth):
        a = pts[-1]
        w = np.array([nu.mass(a[i], a[i + 1]) for i in range(a.size - 1)])
        b = np.array([_barycenter(nu, a[i], a[i + 1]) for i in range(a.size - 1)])
        if not np.all(np.isfinite(b)):
            raise MeasureError(f"ray {ray_id}: infinite barycenter (first moment must be finite)")
        masses.append(w)
        barys.append(b)
        nxt = np.empty(2 * a.size - 1)
        nxt[0::2] = a
        nxt[1::2] = b
        pts.append(nxt)
    return RayRefinement(ray_id, tuple(pts), tuple(masses), tuple(barys))


def refine(target: TargetMeasure, depth: int) -> RefinementTree:
    """Level sets A_0 .. A_depth on every ray."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    return RefinementTree(depth, tuple(_refine_ray(r.ray_id, r.radial, depth) for r in target.rays))


def _merge(points, probs) -> tuple[np.ndarray, np.ndarray]:
    acc: dict[float, float] = {}
    for x, p in zip(points, probs):
        if p > 0:
            acc[float(x)] = acc.get(float(x), 0.0) + float(p)
    xs = np.array(sorted(acc))
    return xs, np.array([acc[x] for x in xs])


def refined_measure(radial: RadialMeasure, depth: int) -> RadialMeasure:
    """Discrete law on the barycenters of A_{depth-1} with the interval masses."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    rr = _refine_ray("_", radial, depth)
    xs, ps = _merge(rr.barycenters[depth - 1], rr.masses[depth - 1])
    return RadialMeasure.build(zip(xs, ps))


@dataclass(frozen=True)
class DubinsLaw:
    """Closed-form law of the stopped process after ``depth`` stages.

    ``laws[ray][l - 1]`` is (points, probabilities) after stage l given the
    ray; ``expected_tau[l - 1]`` is E[tau_l].
    """

    depth: int
    ray_ids: tuple[str, ...]
    ray_pmf: dict[str, float]
    laws: dict[str, tuple[tuple[np.ndarray, np.ndarray], ...]]
    expected_tau: tuple[float, ...]

    def law(self, ray_id: str, stage: int | None = None) -> dict[float, float]:
        xs, ps = self.laws[ray_id][(stage or self.depth) - 1]
        return dict(zip(xs.tolist(), ps.tolist()))

    @property
    def expected_time(self) -> float:
        return self.expected_tau[-1]

    def radial(self, ray_id: str, stage: int | None = None) -> RadialMeasure:
        xs, ps = self.laws[ray_id][(stage or self.depth) - 1]
        return RadialMeasure.build(zip(xs, ps))


def _split_step(rr: RayRefinement, stage: int, probs: np.ndarray) -> np.ndarray:
    """Node probabilities one stage down, from exit odds of [b1, b2] started at b."""
    b = rr.barycenters[stage - 1]
    child = rr.barycenters[stage]
    out = np.zeros(child.size)
    for i in range(b.size):
        b1, b2 = child[2 * i], child[2 * i + 1]
        if b2 > b1:
            q = (b2 - b[i]) / (b2 - b1)
            out[2 * i] = probs[i] * q
            out[2 * i + 1] = probs[i] * (1.0 - q)
        else:
            out[2 * i] = probs[i]
    return out


def analytic_law(target: TargetMeasure, depth: int) -> DubinsLaw:
    """Stopped law per stage by the exit-probability recursion, and E[tau_l].

    E[tau_l] = sum_gamma w_gamma sum_i nu([a_i, a_{i+1})) b_i**2 over the
    intervals of A_{l-1}.
    """
    tree = refine(target, depth)
    laws = {}
    for ray, rr in zip(target.rays, tree.rays):
        probs = np.ones(1)
        per_stage = [_merge(rr.barycenters[0], probs)]
        for stage in range(1, depth):
            probs = _split_step(rr, stage, probs)
            per_stage.append(_merge(rr.barycenters[stage], probs))
        laws[ray.ray_id] = tuple(per_stage)
    etau = []
    for stage in range(1, depth + 1):
        etau.append(float(sum(ray.weight * np.dot(rr.masses[stage - 1], rr.barycenters[stage - 1] ** 2)
                              for ray, rr in zip(target.rays, tree.rays))))
    return DubinsLaw(depth, tree.ray_ids, {r.ray_id: r.weight for r in target.rays}, laws, tuple(etau))


def direct_law(target: TargetMeasure, ray_id: str, stage: int) -> dict[float, float]:
    """Stage law on one ray read straight off the interval masses."""
    rr = _refine_ray(ray_id, target.ray(ray_id).radial, stage)
    xs, ps = _merge(rr.barycenters[stage - 1], rr.masses[stage - 1])
    return dict(zip(xs.tolist(), ps.tolist()))


def exact_depth(target: TargetMeasure, max_depth: int = 20, tol: float = 1e-12) -> int | None:
    """Smallest depth whose stopped law equals the target (W1 <= tol), if any."""
    if any(r.radial.pieces for r in target.rays):
        return None
    for d in range(1, max_depth + 1):
        if max(wasserstein_gap(target, d).values()) <= tol:
            return d
    return None


def wasserstein_gap(target: TargetMeasure, depth: int) -> dict[str, float]:
    """W1 between the depth-stage law and the target, per ray."""
    from .stats import wasserstein_between

    return {r.ray_id: wasserstein_between(refined_measure(r.radial, depth), r.radial)
            for r in target.rays}


def dubins_rule(target: TargetMeasure, kappa: SpinningMeasure, depth: int) -> HitLevelSet:
    if not math.isfinite(second_moment(target)):
        raise MeasureError("target has infinite second moment")
    if not is_centered(target, kappa):
        raise MeasureError("spinning measure is not centered for this target")
    tree = refine(target, depth)
    heaps = np.array([rr.heap(depth) for rr in tree.rays])
    return HitLevelSet(tree.ray_ids, heaps, depth)


def write_law_csv(law: DubinsLaw, fh) -> None:
    fh.write("ray_id,radius,probability\n")
    for g in law.ray_ids:
        xs, ps = law.laws[g][-1]
        for x, p in zip(xs, ps):
            fh.write(f"{g},{x:.17g},{law.ray_pmf[g] * p:.17g}\n")
