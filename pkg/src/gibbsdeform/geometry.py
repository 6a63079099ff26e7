"""Plane geometry: points, norms, half-open windows, orders and hard-core sets."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit
from scipy import integrate, special

NORM_KINDS = ("maximum", "euclidean", "p-norm", "anisotropic")
_KIND_CODE = {kind: i for i, kind in enumerate(NORM_KINDS)}
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Point:
    x1: float
    x2: float

    def __post_init__(self):
        if not (math.isfinite(self.x1) and math.isfinite(self.x2)):
            raise ValueError(f"point coordinates must be finite, got ({self.x1}, {self.x2})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2], dtype=float)

    def __iter__(self):
        yield self.x1
        yield self.x2


def as_xy(p) -> np.ndarray:
    """Coerce a Point, pair or (N, 2) array to a float array."""
    if isinstance(p, Point):
        return p.as_array()
    return np.asarray(p, dtype=float)


@dataclass(frozen=True)
class NormDescriptor:
    kind: str = "euclidean"
    p: float = 2.0
    scales: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.kind not in _KIND_CODE:
            raise ValueError(f"unknown norm kind {self.kind!r}; expected one of {NORM_KINDS}")
        if self.kind == "p-norm" and not (self.p >= 1.0 and math.isfinite(self.p)):
            raise ValueError("p-norm requires finite p >= 1")
        a, b = self.scales
        if not (a > 0 and b > 0):
            raise ValueError("anisotropic scales must be positive")

    @property
    def code(self) -> int:
        return _KIND_CODE[self.kind]

    def packed(self) -> np.ndarray:
        """(kind code, p, scale1, scale2) for the compiled kernels."""
        return np.array([self.code, self.p, self.scales[0], self.scales[1]], dtype=np.float64)

    def __call__(self, v) -> np.ndarray:
        v = as_xy(v)
        a, b = np.abs(v[..., 0]), np.abs(v[..., 1])
        if self.kind == "maximum":
            return np.maximum(a, b)
        if self.kind == "euclidean":
            return np.hypot(a, b)
        if self.kind == "anisotropic":
            return np.hypot(a / self.scales[0], b / self.scales[1])
        m = np.maximum(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = m * ((a / m) ** self.p + (b / m) ** self.p) ** (1.0 / self.p)
        return np.where(m > 0, out, 0.0)

    def min_on_unit_circle(self) -> float:
        """min |v| over Euclidean unit vectors v."""
        if self.kind == "maximum":
            return 1.0 / math.sqrt(2.0)
        if self.kind == "euclidean":
            return 1.0
        if self.kind == "anisotropic":
            return 1.0 / max(self.scales)
        return min(1.0, 2.0 ** (1.0 / self.p - 0.5))


def norm_eval(norm: NormDescriptor, p) -> float:
    return float(norm(as_xy(p)))


def lex_le(p, q) -> bool:
    p, q = tuple(as_xy(p)), tuple(as_xy(q))
    return p <= q


def e1_le(p, q) -> bool:
    p, q = as_xy(p), as_xy(q)
    return bool(p[1] == q[1] and p[0] <= q[0])


@dataclass(frozen=True)
class Window:
    """Centered square [-r, r)^2."""

    r: float

    def __post_init__(self):
        if not self.r >= 0:
            raise ValueError("window half side must be nonnegative")

    @property
    def area(self) -> float:
        return 4.0 * self.r * self.r

    def contains(self, pts) -> np.ndarray:
        pts = as_xy(pts)
        return np.all((pts >= -self.r) & (pts < self.r), axis=-1)


@dataclass(frozen=True)
class CoreSet:
    hcNorm: NormDescriptor = field(default_factory=NormDescriptor)
    r0: float = 1.0
    epsilon: float = 0.0

    def __post_init__(self):
        if not (self.r0 > 0 and math.isfinite(self.r0)):
            raise ValueError("core radius must be positive")
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValueError("core enlargement must be nonnegative")

    # boundary of K along the direction angle theta
    def boundary(self, theta) -> np.ndarray:
        u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return self.r0 * u / self.hcNorm(u)[..., None]

    def contains(self, x, enlarged: bool = False) -> np.ndarray:
        x = as_xy(x)
        inside = self.hcNorm(x) <= self.r0
        if not enlarged:
            return inside
        if self.epsilon == 0:
            return np.zeros(np.shape(inside), dtype=bool)
        return inside | (self.distance_outside(x) < self.epsilon)

    def distance_outside(self, x) -> np.ndarray:
        """Euclidean distance from points outside K to K (0 inside)."""
        x = as_xy(x)
        kind = self.hcNorm.kind
        if kind == "euclidean":
            return np.maximum(np.hypot(x[..., 0], x[..., 1]) - self.r0, 0.0)
        if kind == "maximum":
            d1 = np.maximum(np.abs(x[..., 0]) - self.r0, 0.0)
            d2 = np.maximum(np.abs(x[..., 1]) - self.r0, 0.0)
            return np.hypot(d1, d2)
        flat = x.reshape(-1, 2)
        out = np.array([self._numeric_distance(pt) for pt in flat])
        return out.reshape(x.shape[:-1])

    def _numeric_distance(self, pt) -> float:
        if self.hcNorm(pt) <= self.r0:
            return 0.0
        grid = np.linspace(0.0, 2 * math.pi, 721)
        d = np.hypot(*(self.boundary(grid) - pt).T)
        i = int(np.argmin(d))
        dist = lambda th: float(np.hypot(*(self.boundary(th) - pt)))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        return min(_golden_min(dist, lo, hi, 1e-10), float(d[i]))

    @cached_property
    def c_K(self) -> float:
        return c_K_of(self)

    @cached_property
    def area(self) -> float:
        kind, r0 = self.hcNorm.kind, self.r0
        if kind == "euclidean":
            return math.pi * r0 * r0
        if kind == "maximum":
            return 4.0 * r0 * r0
        if kind == "anisotropic":
            a, b = self.hcNorm.scales
            return math.pi * a * b * r0 * r0
        p = self.hcNorm.p
        return 4.0 * r0 * r0 * special.gamma(1 + 1 / p) ** 2 / special.gamma(1 + 2 / p)

    @cached_property
    def perimeter(self) -> float:
        kind, r0 = self.hcNorm.kind, self.r0
        if kind == "euclidean":
            return 2 * math.pi * r0
        if kind == "maximum":
            return 8.0 * r0

        def speed(th):
            h = 1e-6
            d = (self.boundary(th + h) - self.boundary(th - h)) / (2 * h)
            return float(np.hypot(*d))

        total, _ = integrate.quad(speed, 0.0, math.pi / 2, limit=200, epsabs=1e-12)
        return 4.0 * total

    @cached_property
    def enlarged_area(self) -> float:
        # Steiner formula for convex bodies
        e = self.epsilon
        return self.area + e * self.perimeter + math.pi * e * e

    def packed(self) -> np.ndarray:
        """Kernel parameters: norm (4 entries), r0, cutoff scale."""
        c_h = self.hcNorm.min_on_unit_circle()
        scale = 1.0 / (self.epsilon * c_h) if self.epsilon > 0 else math.inf
        return np.concatenate([self.hcNorm.packed(), [self.r0, scale]])


def _golden_min(f, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return min(fc, fd, f(0.5 * (a + b)))


def core_contains(core: CoreSet, x, enlarged: bool) -> bool:
    return bool(core.contains(as_xy(x), enlarged))


def c_K_of(core: CoreSet) -> float:
    if core.hcNorm.kind == "euclidean":
        return core.r0 + core.epsilon
    grid = np.linspace(0.0, math.pi / 2, 2049)
    b = np.abs(core.boundary(grid))
    best = 0.0
    for axis in (0, 1):
        vals = b[:, axis]
        i = int(np.argmax(vals))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        neg = lambda th: -float(abs(core.boundary(th)[axis]))
        best = max(best, float(vals[i]), -_golden_min(neg, lo, hi, 1e-12))
    return best + core.epsilon


# ---- compiled scalar helpers shared by the kernels -------------------------

@njit(cache=True, inline="always")
def _nb_norm(np_, v1, v2):
    kind = int(np_[0])
    a, b = abs(v1), abs(v2)
    if kind == 0:
        return max(a, b)
    if kind == 1:
        return math.sqrt(a * a + b * b)
    if kind == 3:
        a /= np_[2]
        b /= np_[3]
        return math.sqrt(a * a + b * b)
    m = max(a, b)
    if m == 0.0:
        return 0.0
    p = np_[1]
    return m * ((a / m) ** p + (b / m) ** p) ** (1.0 / p)


@njit(cache=True, inline="always")
def _nb_norm_d1(np_, v1, v2):
    """Partial derivative along the first coordinate (0 at kinks)."""
    kind = int(np_[0])
    if kind == 0:
        if abs(v1) > abs(v2):
            return 1.0 if v1 > 0 else -1.0
        return 0.0
    if kind == 1:
        r = math.sqrt(v1 * v1 + v2 * v2)
        return v1 / r if r > 0 else 0.0
    if kind == 3:
        a, b = np_[2], np_[3]
        r = math.sqrt((v1 / a) ** 2 + (v2 / b) ** 2)
        return v1 / (a * a * r) if r > 0 else 0.0
    r = _nb_norm(np_, v1, v2)
    if r == 0.0 or v1 == 0.0:
        return 0.0
    p = np_[1]
    s = 1.0 if v1 > 0 else -1.0
    return s * (abs(v1) / r) ** (p - 1.0)
