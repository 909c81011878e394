"""Random-radius components, earliest-birth assignment and the coarsen-only group layer."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import MetricSpace, keyed_uniform


@dataclass(frozen=True)
class Component:
    center: int
    radius: float
    birth: int


def _chi(j_count: int) -> float:
    if j_count < 1:
        raise ValueError("component index must be >= 1")
    return 2.0 * j_count


def radius_density(z, j_count: int, s: float):
    chi = _chi(j_count)
    lc = math.log(chi)
    z = np.asarray(z, dtype=float)
    p = 32 * chi**2 * lc / (s * (1 - chi**-2)) * np.exp(-32 * z * lc / s)
    return np.where((z >= s / 16) & (z <= s / 8), p, 0.0)


def radius_cdf(z, j_count: int, s: float):
    chi = _chi(j_count)
    lc = math.log(chi)
    z = np.clip(np.asarray(z, dtype=float), s / 16, s / 8)
    return chi**2 * (chi**-2 - np.exp(-32 * z * lc / s)) / (1 - chi**-2)


def sample_radius(j_count: int, s: float, u: float) -> float:
    """Inverse-CDF draw on [s/16, s/8] for uniform u in [0, 1)."""
    chi = _chi(j_count)
    a, b = chi**-2, chi**-4
    z = -(s / (32 * math.log(chi))) * math.log(a - u * (a - b))
    return min(max(z, s / 16), s / 8)


def cuts(c: Component, M: MetricSpace, u: int, w: int) -> bool:
    du, dw = M.d(c.center, u), M.d(c.center, w)
    return du <= c.radius < dw or dw <= c.radius < du


class ScaleState:
    """Components of one scale 2**j plus a merge-only grouping of them.

    Groups are kept as labels: glab[c] for component c and plab[v] for point v, both
    relabelled to the smaller label on every merge.
    """

    def __init__(self, j: int, M: MetricSpace, seed: int, dist: np.ndarray | None = None):
        self.j = j
        self.s = 2.0**j
        self.M = M
        self.D = M.dist if dist is None else dist
        self.seed = seed
        n = len(M)
        self.comp_of = np.full(n, -1, dtype=np.int64)
        self.plab = np.full(n, -1, dtype=np.int64)
        self.alive_in = np.zeros(0, dtype=np.int64)
        self.centers = np.zeros(0, dtype=np.int64)
        self.radii = np.zeros(0)
        self.births = np.zeros(0, dtype=np.int64)
        self.present = np.zeros(0, dtype=bool)
        self.glab = np.zeros(0, dtype=np.int64)
        self.count = 0
        self.num_present = 0

    def _reserve(self, k: int) -> None:
        if k <= len(self.centers):
            return
        cap = max(k, 2 * len(self.centers), 8)
        for name in ("alive_in", "centers", "radii", "births", "present", "glab"):
            old = getattr(self, name)
            new = np.zeros(cap, dtype=old.dtype)
            new[: len(old)] = old
            setattr(self, name, new)

    def component(self, c: int) -> Component:
        return Component(int(self.centers[c]), float(self.radii[c]), int(self.births[c]))

    def add_component(self, center: int, birth: int, radius: float | None = None) -> int:
        c = self.count
        self._reserve(c + 1)
        if radius is None:
            radius = sample_radius(self.num_present + 1, self.s, keyed_uniform(self.seed, self.j, birth))
        self.centers[c] = center
        self.radii[c] = radius
        self.births[c] = birth
        self.present[c] = True
        self.glab[c] = c
        self.count += 1
        self.num_present += 1
        return c

    def covering(self, u: int) -> int:
        k = self.count
        hit = (self.D[self.centers[:k], u] <= self.radii[:k]) & self.present[:k]
        if not hit.any():
            raise RuntimeError(f"no component covers point {u} at scale {self.j}")
        return int(hit.argmax())

    def assign(self, u: int) -> int:
        c = self.covering(u)
        self.comp_of[u] = c
        self.plab[u] = self.glab[c]
        self.alive_in[c] += 1
        return c

    def merge_groups(self, a: int, b: int) -> bool:
        if not (0 <= a < self.count and 0 <= b < self.count):
            raise KeyError(f"unknown component {a if not 0 <= a < self.count else b}")
        la, lb = self.glab[a], self.glab[b]
        if la == lb:
            return False
        keep, drop = min(la, lb), max(la, lb)
        self.glab[: self.count][self.glab[: self.count] == drop] = keep
        self.plab[self.plab == drop] = keep
        return True

    def same_group(self, a: int, b: int) -> bool:
        return self.glab[a] == self.glab[b]

    def group_members(self, c: int) -> np.ndarray:
        k = self.count
        return np.flatnonzero((self.glab[:k] == self.glab[c]) & self.present[:k])

    def depart(self, u: int) -> list[int]:
        c = int(self.comp_of[u])
        self.alive_in[c] -= 1
        if self.alive_in[c] == 0 and self.present[c]:
            self.present[c] = False
            self.num_present -= 1
            return [c]
        return []

    def prune_empty(self, alive) -> list[int]:
        """Drop every present component without an alive assigned point.

        Alive points keep their assignment: their own component survives, and no component
        born earlier covers them.
        """
        counts = np.zeros(self.count, dtype=np.int64)
        for u in alive:
            counts[self.comp_of[u]] += 1
        self.alive_in[: self.count] = counts
        removed = [c for c in range(self.count) if self.present[c] and counts[c] == 0]
        for c in removed:
            self.present[c] = False
        self.num_present -= len(removed)
        return removed

    def labels(self, points) -> np.ndarray:
        return self.plab[points]

    def to_json(self) -> dict:
        return {
            "j": self.j,
            "components": [
                {
                    "id": c,
                    "center": int(self.centers[c]),
                    "radius": float(self.radii[c]),
                    "birth": int(self.births[c]),
                    "present": bool(self.present[c]),
                    "group": int(self.glab[c]),
                }
                for c in range(self.count)
            ],
            "assignment": {str(u): int(c) for u, c in enumerate(self.comp_of) if c >= 0},
        }
