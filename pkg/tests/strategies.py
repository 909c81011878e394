"""Shared random generators for tests."""
import numpy as np

from monohst.hst import PartitionStack


def random_nested_stack(rng, m, levels=None, shuffle_points=True):
    """Singletons at the lowest level, one cluster at the top, random coarsening in between."""
    levels = levels or int(rng.integers(2, 7))
    points = rng.permutation(40)[:m].tolist() if shuffle_points else list(range(m))
    lab = np.arange(m)
    rows = [lab.copy()]
    for _ in range(levels - 2):
        ids = np.unique(lab)
        target = rng.integers(0, max(1, len(ids) // 2 + 1), size=len(ids))
        lab = target[np.searchsorted(ids, lab)]
        rows.append(lab.copy())
    rows.append(np.zeros(m, dtype=int))
    j0 = int(rng.integers(-3, 3))
    js = list(range(j0, j0 + len(rows)))
    return PartitionStack(points, [2.0**j for j in js], np.array(rows), np.array(js))


def random_line_instance(rng, n, length=None):
    return rng.uniform(0, length or n, size=n)
