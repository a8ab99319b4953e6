"""Target measures in polar form.

A target on R^n is handled ray by ray: a finite set of labelled rays, a
weight per ray, and a radial law on [0, inf) per ray.  Radial laws are
finite atoms plus piecewise-constant densities, which keeps barycenters,
moments and potentials exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

NORM_TOL = 1e-12
RENORM_TOL = 1e-6


class MeasureError(ValueError):
    """Raised for malformed or inadmissible measures."""


@dataclass(frozen=True)
class RadialMeasure:
    """Probability measure on [0, inf): atoms plus piecewise-constant density.

    atoms are ``(r, mass)`` pairs, pieces are ``(a, b, density)`` triples on
    ``[a, b)``.  Use :meth:`build` to normalize inputs that are off by a
    rounding error.
    """

    atoms: tuple[tuple[float, float], ...] = ()
    pieces: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        locs = [r for r, _ in self.atoms]
        if any(r < 0 or not math.isfinite(r) for r in locs):
            raise MeasureError(f"atom locations must be finite and >= 0: {locs}")
        if len(set(locs)) != len(locs):
            raise MeasureError("atom locations must be distinct")
        if any(w <= 0 for _, w in self.atoms):
            raise MeasureError("atom masses must be positive")
        prev_b = -math.inf
        for a, b, f in sorted(self.pieces):
            if not (0 <= a < b < math.inf):
                raise MeasureError(f"bad density interval [{a}, {b})")
            if f < 0:
                raise MeasureError("densities must be >= 0")
            if a < prev_b:
                raise MeasureError("density intervals overlap")
            prev_b = b
        total = self.total_mass()
        if abs(total - 1.0) > NORM_TOL:
            raise MeasureError(f"total mass {total!r} is not 1")

    @classmethod
    def build(cls, atoms: Iterable[Sequence[float]] = (), pieces: Iterable[Sequence[float]] = ()) -> "RadialMeasure":
        """Sort, merge duplicate atoms, drop empty parts and renormalize.

        Inputs whose total mass is off by more than 1e-6 are rejected.
        """
        merged: dict[float, float] = {}
        for r, w in atoms:
            r, w = float(r), float(w)
            if w < 0:
                raise MeasureError("atom masses must be >= 0")
            if w > 0:
                merged[r] = merged.get(r, 0.0) + w
        pcs = []
        for a, b, f in pieces:
            a, b, f = float(a), float(b), float(f)
            if f < 0:
                raise MeasureError("densities must be >= 0")
            if f > 0 and b > a:
                pcs.append((a, b, f))
        total = sum(merged.values()) + sum(f * (b - a) for a, b, f in pcs)
        if not math.isfinite(total) or abs(total - 1.0) > RENORM_TOL:
            raise MeasureError(f"radial part has mass {total!r}, expected 1")
        at = tuple(sorted((r, w / total) for r, w in merged.items()))
        pc = tuple(sorted((a, b, f / total) for a, b, f in pcs))
        # absorb the last rounding residue in the largest atom or piece
        resid = 1.0 - (sum(w for _, w in at) + sum(f * (b - a) for a, b, f in pc))
        if resid and at:
            i = max(range(len(at)), key=lambda j: at[j][1])
            at = at[:i] + ((at[i][0], at[i][1] + resid),) + at[i + 1:]
        elif resid and pc:
            i = max(range(len(pc)), key=lambda j: pc[j][2] * (pc[j][1] - pc[j][0]))
            a, b, f = pc[i]
            pc = pc[:i] + ((a, b, f + resid / (b - a)),) + pc[i + 1:]
        return cls(at, pc)

    @classmethod
    def point(cls, r: float) -> "RadialMeasure":
        return cls(((float(r), 1.0),))

    def total_mass(self) -> float:
        return sum(w for _, w in self.atoms) + sum(f * (b - a) for a, b, f in self.pieces)

    @property
    def support_max(self) -> float:
        hi = [r for r, _ in self.atoms] + [b for _, b, _ in self.pieces]
        return max(hi)

    def mass(self, a: float, b: float) -> float:
        """nu([a, b))."""
        if b <= a:
            return 0.0
        out = sum(w for r, w in self.atoms if a <= r < b)
        for lo, hi, f in self.pieces:
            lo2, hi2 = max(lo, a), min(hi, b)
            if hi2 > lo2:
                out += f * (hi2 - lo2)
        return out

    def moment(self, a: float, b: float, k: int = 1) -> float:
        """int_[a,b) r^k nu(dr)."""
        if b <= a:
            return 0.0
        out = sum(w * r**k for r, w in self.atoms if a <= r < b)
        for lo, hi, f in self.pieces:
            lo2, hi2 = max(lo, a), min(hi, b)
            if hi2 > lo2:
                out += f * (hi2 ** (k + 1) - lo2 ** (k + 1)) / (k + 1)
        return out

    def cdf(self, r):
        """nu([0, r]); right-continuous, vectorized over r."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for loc, w in self.atoms:
            out += np.where(r >= loc, w, 0.0)
        for lo, hi, f in self.pieces:
            out += f * np.clip(r - lo, 0.0, hi - lo)
        return np.minimum(out, 1.0) if out.ndim else float(min(out, 1.0))

    def cdf_left(self, r):
        """nu([0, r))."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for loc, w in self.atoms:
            out += np.where(r > loc, w, 0.0)
        for lo, hi, f in self.pieces:
            out += f * np.clip(r - lo, 0.0, hi - lo)
        return np.minimum(out, 1.0) if out.ndim else float(min(out, 1.0))

    def scaled(self, factor: float) -> "RadialMeasure":
        """Pushforward under r -> factor * r (factor > 0)."""
        return RadialMeasure(
            tuple((r * factor, w) for r, w in self.atoms),
            tuple((a * factor, b * factor, f / factor) for a, b, f in self.pieces),
        )

    def breakpoints(self) -> list[float]:
        pts = {r for r, _ in self.atoms}
        for a, b, _ in self.pieces:
            pts.update((a, b))
        return sorted(pts)

    def is_discrete(self) -> bool:
        return not self.pieces


def ray_barycenter(radial: RadialMeasure) -> float:
    """Mean radius of a radial law."""
    return radial.moment(0.0, math.inf, 1)


def interval_barycenter(radial: RadialMeasure, a: float, b: float) -> float:
    """Conditional mean over [a, b); returns ``a`` when the interval is null."""
    if not (0 <= a < b):
        raise MeasureError(f"need 0 <= a < b, got [{a}, {b})")
    w = radial.mass(a, b)
    if w <= 0:
        return float(a)
    return radial.moment(a, b, 1) / w


@dataclass(frozen=True)
class Ray:
    ray_id: str
    weight: float
    radial: RadialMeasure
    coords: tuple[float, ...] | None = None

    @property
    def barycenter(self) -> float:
        return ray_barycenter(self.radial)


@dataclass(frozen=True)
class TargetMeasure:
    """Rays with weights mu~_1(gamma) and radial laws mu~_gamma.

    ``origin_mass`` is the original mass k at the origin; it is already
    folded into each radial law as an atom at r = 0.
    """

    rays: tuple[Ray, ...]
    origin_mass: float = 0.0

    def __post_init__(self):
        if not self.rays:
            raise MeasureError("empty ray set")
        ids = [r.ray_id for r in self.rays]
        if len(set(ids)) != len(ids):
            raise MeasureError("duplicate ray ids")
        tot = sum(r.weight for r in self.rays)
        if abs(tot - 1.0) > NORM_TOL:
            raise MeasureError(f"ray weights sum to {tot!r}")
        if any(not (0 < r.weight <= 1) for r in self.rays):
            raise MeasureError("ray weights must lie in (0, 1]")
        for r in self.rays:
            if not math.isfinite(r.barycenter):
                raise MeasureError(f"ray {r.ray_id} has infinite barycenter")

    @property
    def ray_ids(self) -> list[str]:
        return [r.ray_id for r in self.rays]

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.rays])

    @property
    def barycenters(self) -> np.ndarray:
        return np.array([r.barycenter for r in self.rays])

    def ray(self, ray_id: str) -> Ray:
        for r in self.rays:
            if r.ray_id == ray_id:
                return r
        raise KeyError(ray_id)

    def index(self, ray_id: str) -> int:
        return self.ray_ids.index(ray_id)


@dataclass(frozen=True)
class SpinningMeasure:
    """Discrete law of excursion directions."""

    probs: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.probs:
            raise MeasureError("spinning measure has empty support")
        if any(p < 0 for p in self.probs.values()):
            raise MeasureError("negative spinning probability")
        tot = sum(self.probs.values())
        if abs(tot - 1.0) > NORM_TOL:
            raise MeasureError(f"spinning probabilities sum to {tot!r}")

    @classmethod
    def from_weights(cls, weights: Mapping[str, float]) -> "SpinningMeasure":
        tot = sum(weights.values())
        if tot <= 0:
            raise MeasureError("spinning weights must have positive total")
        return cls({k: v / tot for k, v in weights.items()})

    def __getitem__(self, ray_id: str) -> float:
        return self.probs.get(ray_id, 0.0)

    @property
    def ray_ids(self) -> list[str]:
        return list(self.probs)

    def vector(self, ray_ids: Sequence[str]) -> np.ndarray:
        return np.array([self[r] for r in ray_ids])

    def mass(self, subset: Iterable[str]) -> float:
        return sum(self[r] for r in set(subset))


def polar_decompose(raw_spec: Mapping) -> TargetMeasure:
    """Build a normalized target from a raw description.

    ``raw_spec`` has ``rays: [{id, weight, atoms, pieces}]`` and optional
    ``origin_mass``.  Origin mass k is spread over the rays in proportion to
    their weights as an atom at radius 0.
    """
    rays_in = raw_spec.get("rays") or []
    if not rays_in:
        raise MeasureError("empty ray set")
    k = float(raw_spec.get("origin_mass", 0.0))
    if not 0 <= k < 1:
        raise MeasureError(f"origin mass must lie in [0, 1), got {k}")
    weights = []
    for r in rays_in:
        w = float(r.get("weight", 0.0))
        if w < 0 or not math.isfinite(w):
            raise MeasureError(f"ray {r.get('id')!r} has invalid weight {w}")
        weights.append(w)
    wtot = sum(weights)
    if wtot <= 0:
        raise MeasureError("ray weights must have positive total")
    rays = []
    for r, w in zip(rays_in, weights):
        if w == 0:
            continue
        base = RadialMeasure.build(r.get("atoms", ()), r.get("pieces", ()))
        if k > 0:
            atoms = [(x, (1 - k) * p) for x, p in base.atoms] + [(0.0, k)]
            pieces = [(a, b, (1 - k) * f) for a, b, f in base.pieces]
            base = RadialMeasure.build(atoms, pieces)
        coords = r.get("coords")
        rays.append(Ray(str(r["id"]), w / wtot, base, tuple(coords) if coords else None))
    # weights renormalized above can drift by an ulp; pin the sum to 1
    tot = sum(r.weight for r in rays)
    rays = [Ray(r.ray_id, r.weight / tot, r.radial, r.coords) for r in rays]
    return TargetMeasure(tuple(rays), k)


def first_moment(target: TargetMeasure) -> float:
    """m = sum_gamma w_gamma m_gamma."""
    return float(sum(r.weight * r.barycenter for r in target.rays))


def second_moment(target: TargetMeasure) -> float:
    return float(sum(r.weight * r.radial.moment(0.0, math.inf, 2) for r in target.rays))


def centered_spinning(target: TargetMeasure) -> SpinningMeasure:
    """The unique spinning measure kappa(gamma) = m_gamma w_gamma / m."""
    m = first_moment(target)
    if m <= 0:
        raise MeasureError("target has zero first moment")
    for r in target.rays:
        if r.barycenter <= 0:
            raise MeasureError(f"ray {r.ray_id} carries only origin mass; no centered embedding")
    probs = {r.ray_id: r.weight * r.barycenter / m for r in target.rays}
    tot = sum(probs.values())
    return SpinningMeasure({k: v / tot for k, v in probs.items()})


def is_admissible(target: TargetMeasure, kappa: SpinningMeasure) -> bool:
    """True iff kappa charges every ray that carries target mass."""
    return all(kappa[r.ray_id] > 0 for r in target.rays if r.weight > 0)


def is_centered(target: TargetMeasure, kappa: SpinningMeasure, tol: float = 1e-12) -> bool:
    m = first_moment(target)
    if m <= 0:
        return False
    ids = set(target.ray_ids) | set(kappa.ray_ids)
    expected = {r.ray_id: r.weight * r.barycenter / m for r in target.rays}
    return max(abs(kappa[g] - expected.get(g, 0.0)) for g in ids) <= tol
