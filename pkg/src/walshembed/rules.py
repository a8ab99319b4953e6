"""Stopping rules executable by the simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class FixedTime:
    t: float

    def __post_init__(self):
        if not (self.t >= 0 and math.isfinite(self.t)):
            raise RuleError(f"fixed time must be finite and >= 0, got {self.t}")


@dataclass(frozen=True)
class HitSurface:
    """Stop at the first time R reaches ``levels[ray]`` on the current ray."""

    levels: Mapping[str, float]

    def __post_init__(self):
        for g, v in self.levels.items():
            if not (v > 0 and math.isfinite(v)):
                raise RuleError(f"surface level on ray {g} must be positive and finite")


@dataclass(frozen=True)
class HitLevelSet:
    """Sequential interval exits along a per-ray binary tree of levels.

    ``tree[g]`` is a heap (index 1 is the root, children of k are 2k and
    2k + 1) holding ``2**depth - 1`` levels.  Stage one is the first hit of
    the root level on whichever ray the process is on; each later stage,
    started at node k, is the exit from ``[tree[2k], tree[2k+1]]`` on that
    ray.  A child equal to the current level is taken at once, which also
    absorbs the process once it rests at the origin.
    """

    ray_ids: tuple[str, ...]
    tree: np.ndarray
    depth: int

    def __post_init__(self):
        if self.depth < 1:
            raise RuleError("depth must be >= 1")
        if self.tree.shape != (len(self.ray_ids), 2**self.depth):
            raise RuleError("tree shape does not match rays and depth")
        body = self.tree[:, 1:]
        if not np.all(np.isfinite(body)) or np.any(body < 0):
            raise RuleError("levels must be finite and >= 0")
        if np.any(self.tree[:, 1] <= 0):
            raise RuleError("root levels must be positive")
        for k in range(1, 2 ** (self.depth - 1)):
            lo, mid, hi = self.tree[:, 2 * k], self.tree[:, k], self.tree[:, 2 * k + 1]
            if np.any(lo > mid) or np.any(hi < mid):
                raise RuleError(f"node {k} does not bracket its parent level")

    def levels(self, ray_id: str, depth: int | None = None) -> list[float]:
        """Distinct levels used up to ``depth`` on one ray."""
        d = self.depth if depth is None else depth
        row = self.tree[self.ray_ids.index(ray_id)]
        return sorted(set(row[1: 2**d].tolist()))


@dataclass(frozen=True)
class BarrierRule:
    """Stop once R >= a_ray(L): a per-ray non-increasing barrier in local time.

    The barrier is piecewise linear on ``l_knots`` (repeated knots encode
    jumps) and constant beyond the last knot.
    """

    ray_ids: tuple[str, ...]
    l_knots: np.ndarray
    a_table: np.ndarray

    def __post_init__(self):
        if self.l_knots.ndim != 1 or self.l_knots.size < 2:
            raise RuleError("barrier needs at least two local-time knots")
        if np.any(np.diff(self.l_knots) < 0) or self.l_knots[0] != 0:
            raise RuleError("local-time knots must start at 0 and be non-decreasing")
        if self.a_table.shape != (len(self.ray_ids), self.l_knots.size):
            raise RuleError("barrier table shape mismatch")
        if np.any(np.diff(self.a_table, axis=1) > 1e-12):
            raise RuleError("barrier must be non-increasing in local time")
        if np.any(self.a_table < 0) or not np.all(np.isfinite(self.a_table)):
            raise RuleError("barrier levels must be finite and >= 0")

    def level(self, ray_id: str, l):
        """a_ray(l), vectorized."""
        return interp_barrier(self.l_knots, self.a_table[self.ray_ids.index(ray_id)], l)


StoppingRule = Union[FixedTime, HitSurface, HitLevelSet, BarrierRule]


def interp_barrier(knots: np.ndarray, values: np.ndarray, l):
    """Right-continuous piecewise-linear lookup honoring repeated knots."""
    l = np.asarray(l, dtype=float)
    j = np.searchsorted(knots, l, side="right") - 1
    j = np.clip(j, 0, knots.size - 1)
    jn = np.minimum(j + 1, knots.size - 1)
    span = knots[jn] - knots[j]
    frac = np.where(span > 0, (l - knots[j]) / np.where(span > 0, span, 1.0), 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    out = values[j] + frac * (values[jn] - values[j])
    return out if out.ndim else float(out)


def rule_rays(rule: StoppingRule) -> Sequence[str] | None:
    if isinstance(rule, HitSurface):
        return tuple(rule.levels)
    if isinstance(rule, (HitLevelSet, BarrierRule)):
        return rule.ray_ids
    return None
