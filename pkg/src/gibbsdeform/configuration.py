"""Finite configurations, bond sets, clusters, cluster range and temperedness."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import CoreSet, Point, Window


class InvalidBondError(ValueError):
    pass


class Configuration:
    """Ordered finite point set; interior means inside the simulation window."""

    __slots__ = ("_pts", "simWindow", "_interior")

    def __init__(self, points, simWindow: Window, check: bool = True):
        pts = np.array(points, dtype=np.float64).reshape(-1, 2)
        if check:
            if not np.all(np.isfinite(pts)):
                raise ValueError("configuration coordinates must be finite")
            if len(pts) > 1 and len(np.unique(pts, axis=0)) != len(pts):
                raise ValueError("configuration contains identical points")
        pts.setflags(write=False)
        self._pts = pts
        self.simWindow = simWindow
        self._interior = None

    @property
    def points(self) -> np.ndarray:
        return self._pts

    @property
    def interior(self) -> np.ndarray:
        if self._interior is None:
            self._interior = self.simWindow.contains(self._pts)
        return self._interior

    def __len__(self):
        return len(self._pts)

    def point(self, i: int) -> Point:
        return Point(float(self._pts[i, 0]), float(self._pts[i, 1]))

    def interior_points(self) -> np.ndarray:
        return self._pts[self.interior]

    def exterior_points(self) -> np.ndarray:
        return self._pts[~self.interior]

    @classmethod
    def empty(cls, window: Window) -> "Configuration":
        return cls(np.zeros((0, 2)), window)

    def with_points(self, pts, check: bool = False) -> "Configuration":
        return Configuration(pts, self.simWindow, check=check)

    def __repr__(self):
        return f"Configuration({len(self)} points, interior={int(self.interior.sum())}, window=Λ_{self.simWindow.r})"


@dataclass(frozen=True)
class Bond:
    i: int
    j: int

    def __post_init__(self):
        if not self.i < self.j:
            raise InvalidBondError(f"bond requires i < j, got ({self.i}, {self.j})")


class BondSet:
    """Duplicate-free set of index pairs stored as a sorted (M, 2) array with i < j."""

    __slots__ = ("pairs",)

    def __init__(self, pairs=(), n_points: int | None = None):
        arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        if len(arr):
            if np.any(arr[:, 0] == arr[:, 1]):
                raise InvalidBondError("a bond needs two distinct endpoints")
            arr = np.sort(arr, axis=1)
            arr = np.unique(arr, axis=0)
            if arr.min() < 0 or (n_points is not None and arr.max() >= n_points):
                raise InvalidBondError("bond index out of range")
        arr.setflags(write=False)
        self.pairs = arr

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        for i, j in self.pairs:
            yield Bond(int(i), int(j))

    def __contains__(self, bond):
        i, j = (bond.i, bond.j) if isinstance(bond, Bond) else sorted(bond)
        return bool(np.any((self.pairs[:, 0] == i) & (self.pairs[:, 1] == j)))

    def __eq__(self, other):
        return isinstance(other, BondSet) and np.array_equal(self.pairs, other.pairs)

    def __hash__(self):
        return hash(self.pairs.tobytes())

    def union(self, other: "BondSet") -> "BondSet":
        return BondSet(np.vstack([self.pairs, other.pairs]))

    def validate(self, n_points: int):
        if len(self.pairs) and self.pairs.max() >= n_points:
            raise InvalidBondError("bond index out of range")

    def __repr__(self):
        return f"BondSet({len(self)} bonds)"


@dataclass(frozen=True)
class ClusterPartition:
    clusterId: np.ndarray
    clusters: list

    def members(self, idx: int) -> np.ndarray:
        return np.flatnonzero(self.clusterId == self.clusterId[idx])


def cluster_labels(n_points: int, pairs: np.ndarray) -> np.ndarray:
    """Label each index by the smallest index of its connected component."""
    if n_points == 0:
        return np.zeros(0, dtype=np.int64)
    if len(pairs) == 0:
        return np.arange(n_points, dtype=np.int64)
    if pairs.max() >= n_points or pairs.min() < 0:
        raise InvalidBondError("bond index out of range")
    graph = coo_matrix((np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])),
                       shape=(n_points, n_points))
    _, comp = connected_components(graph, directed=False)
    smallest = np.full(comp.max() + 1, n_points, dtype=np.int64)
    np.minimum.at(smallest, comp, np.arange(n_points))
    return smallest[comp]


def clusters(X: Configuration, B: BondSet) -> ClusterPartition:
    labels = cluster_labels(len(X), B.pairs)
    order = np.argsort(labels, kind="stable")
    cuts = np.flatnonzero(np.diff(labels[order])) + 1
    groups = [np.sort(g) for g in np.split(order, cuts)] if len(order) else []
    return ClusterPartition(labels, groups)


def candidate_pairs(pts: np.ndarray, radius: float) -> np.ndarray:
    """All index pairs (i < j) at maximum-norm distance <= radius."""
    if len(pts) < 2 or radius <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius, p=np.inf, output_type="ndarray").astype(np.int64)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))] if len(pairs) else pairs


def touching_window(X: Configuration, pairs: np.ndarray) -> np.ndarray:
    inner = X.interior
    return inner[pairs[:, 0]] | inner[pairs[:, 1]] if len(pairs) else np.zeros(0, dtype=bool)


def _window_for(X: Configuration, n: float) -> Configuration:
    return X if X.simWindow.r == n else Configuration(X.points, Window(n), check=False)


def keps_bonds(X: Configuration, n: float, core: CoreSet) -> BondSet:
    Xn = _window_for(X, n)
    pairs = candidate_pairs(Xn.points, core.c_K)
    if len(pairs) == 0:
        return BondSet()
    pairs = pairs[touching_window(Xn, pairs)]
    diff = Xn.points[pairs[:, 0]] - Xn.points[pairs[:, 1]]
    keep = core.contains(diff, enlarged=True) if len(pairs) else np.zeros(0, dtype=bool)
    return BondSet(pairs[keep])


def b_plus(X: Configuration, B: BondSet, n: float, core: CoreSet) -> BondSet:
    return B.union(keps_bonds(X, n, core))


def cluster_range(X: Configuration, B: BondSet, region: Window) -> float:
    if len(X) == 0:
        return 0.0
    labels = cluster_labels(len(X), B.pairs)
    hit = np.unique(labels[region.contains(X.points)])
    if len(hit) == 0:
        return 0.0
    sel = np.isin(labels, hit)
    return float(np.max(np.abs(X.points[sel])))


def far_point(X: Configuration, B: BondSet, x: int) -> Point:
    labels = cluster_labels(len(X), B.pairs)
    members = np.flatnonzero(labels == labels[x])
    pts = X.points[members]
    size = np.max(np.abs(pts), axis=1)
    top = pts[size == size.max()]
    best = max(map(tuple, top))
    return Point(float(best[0]), float(best[1]))


def temperedness(X: Configuration, nMax: int) -> float:
    if nMax < 0:
        raise ValueError("nMax must be nonnegative")
    if len(X) == 0:
        return 0.0
    cells = np.floor(X.points + 0.5).astype(np.int64)
    uniq, counts = np.unique(cells, axis=0, return_counts=True)
    reach = np.max(np.abs(uniq), axis=1)
    best = 0.0
    for n in range(nMax + 1):
        s = float(np.sum(counts[reach <= n].astype(float) ** 2)) / (2 * n + 1) ** 2
        best = max(best, s)
    return best


# ---- CSV round trip -------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_configuration_csv(path, X: Configuration):
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "interior"])
        for (a, b), inside in zip(X.points, X.interior):
            w.writerow([_fmt(a), _fmt(b), int(inside)])


def read_configuration_csv(path, window: Window) -> Configuration:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    pts = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
    X = Configuration(pts, window)
    flags = np.array([int(r.get("interior", -1)) for r in rows], dtype=int)
    if len(rows) and np.all(flags >= 0) and not np.array_equal(flags.astype(bool), X.interior):
        raise ValueError("interior column disagrees with the simulation window")
    return X


def write_bonds_csv(path, B: BondSet):
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j"])
        w.writerows(B.pairs.tolist())


def read_bonds_csv(path, n_points: int | None = None) -> BondSet:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return BondSet([[int(r["i"]), int(r["j"])] for r in rows], n_points=n_points)


def max_norm(pts) -> np.ndarray:
    return np.max(np.abs(np.asarray(pts, dtype=float)), axis=-1)
