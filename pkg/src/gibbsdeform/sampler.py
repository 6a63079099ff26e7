"""Poisson and finite-volume Gibbs sampling, Bernoulli bonds, batch-means estimators and the
Monte Carlo tests of translation invariance and of the change-of-variables identity."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from numba import njit

from .configuration import BondSet, Configuration, candidate_pairs, temperedness, touching_window
from .geometry import CoreSet, Window, _nb_norm
from .potentials import Decomposed, IdealGas, InvalidPotential, PairPotential, PureHardCore
from .taper import TaperParams

DEFAULT_MIX = (0.35, 0.35, 0.30)
N_BATCHES = 50
MIN_BATCHES = 10
_CODES = {"ideal": 0, "hardcore": 1, "shoulder": 2}


class InsufficientData(ValueError):
    pass


class InvalidSamplerConfig(ValueError):
    pass


# ---- regions and events -------------------------------------------------------------

@dataclass(frozen=True)
class Rect:
    """Half-open axis-parallel rectangle [x0, x1) x [y0, y1)."""

    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError("rectangle needs x0 < x1 and y0 < y1")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float).reshape(-1, 2)
        return (p[:, 0] >= self.x0) & (p[:, 0] < self.x1) & (p[:, 1] >= self.y0) & (p[:, 1] < self.y1)

    def inside_window(self, r: float) -> bool:
        return -r <= self.x0 and self.x1 <= r and -r <= self.y0 and self.y1 <= r

    @classmethod
    def of_window(cls, w: Window) -> "Rect":
        return cls(-w.r, w.r, -w.r, w.r)


EVENT_KINDS = ("countAtLeast", "countEquals", "emptyRegion")


@dataclass(frozen=True)
class EventSpec:
    kind: str
    region: Rect
    k: int = 0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if isinstance(self.region, Window):
            object.__setattr__(self, "region", Rect.of_window(self.region))
        if self.k < 0:
            raise ValueError("event count must be nonnegative")

    def shifted(self, s: float) -> "EventSpec":
        return EventSpec(self.kind, self.region, self.k, s)

    def holds(self, X) -> bool:
        pts = X.points if isinstance(X, Configuration) else np.asarray(X, dtype=float).reshape(-1, 2)
        if self.shift:
            pts = pts - np.array([self.shift, 0.0])
        c = int(np.count_nonzero(self.region.contains(pts)))
        if self.kind == "countAtLeast":
            return c >= self.k
        if self.kind == "countEquals":
            return c == self.k
        return c == 0

    def complement_holds(self, X) -> bool:
        return not self.holds(X)

    def check_cylinder(self, n_prime: float):
        if not self.region.inside_window(n_prime - 1):
            raise ValueError("event region must lie inside Λ_{n'-1}")


# ---- configuration of a chain --------------------------------------------------------

@dataclass
class SamplerConfig:
    potential: PairPotential
    z: float
    n: float
    boundary: Configuration | None = None
    sweeps: int = 100
    burnIn: int = 10
    thinning: int = 1
    seed: int = 0
    proposalMix: tuple = DEFAULT_MIX
    moveScale: float | None = None
    maxCount: int | None = None
    initial: np.ndarray | None = None

    def __post_init__(self):
        if not self.z > 0:
            raise InvalidSamplerConfig("activity z must be positive")
        if not self.n > 0:
            raise InvalidSamplerConfig("window half side n must be positive")
        mix = tuple(float(v) for v in self.proposalMix)
        if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-12:
            raise InvalidSamplerConfig("proposalMix must be three nonnegative numbers summing to 1")
        if mix[0] == 0 or mix[1] == 0:
            raise InvalidSamplerConfig("birth and death probabilities must be positive")
        self.proposalMix = mix
        for name in ("sweeps", "burnIn", "thinning"):
            if getattr(self, name) < 0 or int(getattr(self, name)) != getattr(self, name):
                raise InvalidSamplerConfig(f"{name} must be a nonnegative integer")
        if self.thinning < 1:
            raise InvalidSamplerConfig("thinning must be at least 1")
        if self.moveScale is None:
            self.moveScale = self.potential.core.r0 if isinstance(self.potential, PureHardCore) else 1.0
        if not self.moveScale > 0:
            raise InvalidSamplerConfig("moveScale must be positive")
        if self.boundary is not None and len(self.boundary):
            if np.any(Window(self.n).contains(self.boundary.points)):
                raise InvalidSamplerConfig("boundary particles must lie outside Λ_n")
            if not math.isfinite(temperedness(self.boundary, int(math.ceil(self.n)) + 50)):
                raise InvalidSamplerConfig("boundary condition is not tempered")

    @property
    def window(self) -> Window:
        return Window(self.n)

    @property
    def sweepLength(self) -> int:
        return max(1, int(math.ceil(self.z * self.window.area)))

    def boundary_points(self) -> np.ndarray:
        if self.boundary is None or len(self.boundary) == 0:
            return np.zeros((0, 2))
        return np.asarray(self.boundary.points, dtype=float)


def lattice_ring_boundary(n: float, core: CoreSet, spacing: float | None = None) -> Configuration:
    """Frozen square-lattice ring outside Λ_n, reaching out to Λ_{n + c_K + 2}."""
    a = spacing if spacing is not None else 2 * core.r0 + 0.1
    reach = n + core.c_K + 2.0
    m = int(math.ceil(reach / a)) + 1
    g = np.arange(-m, m + 1) * a
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    keep = ~Window(n).contains(pts) & Window(reach).contains(pts)
    return Configuration(pts[keep], Window(n))


# ---- compiled chain ---------------------------------------------------------------------

@njit(cache=True)
def _pair_u(code, prm, dx, dy):
    if code == 0:
        return 0.0
    if code == 1:
        if _nb_norm(prm[:4], dx, dy) <= prm[4]:
            return np.inf
        return 0.0
    r = math.sqrt(dx * dx + dy * dy)
    if r <= prm[0]:
        return np.inf
    val = 0.0
    if r < prm[3]:
        rho2 = (r / prm[3]) ** 2
        val = prm[2] * math.exp(1.0 - 1.0 / (1.0 - rho2))
    if prm[1] < r < prm[5]:
        val -= prm[4]
    return val


@njit(cache=True)
def _cell_of(x, y, D, cs, M):
    cx = int((x + D) / cs)
    cy = int((y + D) / cs)
    cx = min(max(cx, 0), M - 1)
    cy = min(max(cy, 0), M - 1)
    return cx * M + cy


@njit(cache=True)
def _local_energy(px, py, skip, xs, ys, head, nxt, D, cs, M, code, prm):
    if code == 0:
        return 0.0
    c = _cell_of(px, py, D, cs, M)
    cx, cy = c // M, c % M
    tot = 0.0
    for ax in range(max(cx - 1, 0), min(cx + 2, M)):
        for ay in range(max(cy - 1, 0), min(cy + 2, M)):
            j = head[ax * M + ay]
            while j >= 0:
                if j != skip:
                    e = _pair_u(code, prm, px - xs[j], py - ys[j])
                    if e == np.inf:
                        return np.inf
                    tot += e
                j = nxt[j]
    return tot


@njit(cache=True)
def _link(s, xs, ys, head, nxt, prv, cell, D, cs, M):
    c = _cell_of(xs[s], ys[s], D, cs, M)
    cell[s] = c
    prv[s] = -1
    nxt[s] = head[c]
    if head[c] >= 0:
        prv[head[c]] = s
    head[c] = s


@njit(cache=True)
def _unlink(s, head, nxt, prv, cell):
    if prv[s] >= 0:
        nxt[prv[s]] = nxt[s]
    else:
        head[cell[s]] = nxt[s]
    if nxt[s] >= 0:
        prv[nxt[s]] = prv[s]
    nxt[s] = -1
    prv[s] = -1


@njit(cache=True)
def _run_block(u, start, xs, ys, head, nxt, prv, cell, ilist, ipos, counts, free,
               n, z, pB, pD, moveScale, maxCount, D, cs, M, code, prm, stats):
    """counts = [n_interior, n_free]; stats = per-kind proposed/accepted counters.
    Returns the index of the first unprocessed proposal (< len(u) means the slot pool ran dry)."""
    area = 4.0 * n * n
    for r in range(start, u.shape[0]):
        kind = u[r, 0]
        k = counts[0]
        if kind < pB:
            if counts[1] == 0:
                return r
            stats[0] += 1
            if maxCount >= 0 and k >= maxCount:
                continue
            px = -n + 2.0 * n * u[r, 1]
            py = -n + 2.0 * n * u[r, 2]
            if px >= n:
                px = np.nextafter(n, -np.inf)
            if py >= n:
                py = np.nextafter(n, -np.inf)
            dE = _local_energy(px, py, -1, xs, ys, head, nxt, D, cs, M, code, prm)
            if dE == np.inf:
                continue
            a = (pD / pB) * z * area / (k + 1) * math.exp(-dE)
            if u[r, 4] < a:
                counts[1] -= 1
                s = free[counts[1]]
                xs[s] = px
                ys[s] = py
                _link(s, xs, ys, head, nxt, prv, cell, D, cs, M)
                ilist[k] = s
                ipos[s] = k
                counts[0] = k + 1
                stats[1] += 1
        elif kind < pB + pD:
            stats[2] += 1
            if k == 0:
                continue
            idx = min(int(u[r, 1] * k), k - 1)
            s = ilist[idx]
            E = _local_energy(xs[s], ys[s], s, xs, ys, head, nxt, D, cs, M, code, prm)
            a = (pB / pD) * k / (z * area) * math.exp(E)
            if u[r, 4] < a:
                _unlink(s, head, nxt, prv, cell)
                last = ilist[k - 1]
                ilist[idx] = last
                ipos[last] = idx
                ipos[s] = -1
                counts[0] = k - 1
                free[counts[1]] = s
                counts[1] += 1
                stats[3] += 1
        else:
            stats[4] += 1
            if k == 0:
                continue
            idx = min(int(u[r, 1] * k), k - 1)
            s = ilist[idx]
            px = xs[s] + (u[r, 2] - 0.5) * moveScale
            py = ys[s] + (u[r, 3] - 0.5) * moveScale
            if not (-n <= px < n and -n <= py < n):
                continue
            Enew = _local_energy(px, py, s, xs, ys, head, nxt, D, cs, M, code, prm)
            if Enew == np.inf:
                continue
            Eold = _local_energy(xs[s], ys[s], s, xs, ys, head, nxt, D, cs, M, code, prm)
            if u[r, 4] < math.exp(-(Enew - Eold)):
                _unlink(s, head, nxt, prv, cell)
                xs[s] = px
                ys[s] = py
                _link(s, xs, ys, head, nxt, prv, cell, D, cs, M)
                stats[5] += 1
    return u.shape[0]


def _support(U: PairPotential, spec) -> float:
    code, prm = spec
    if code == "ideal":
        return 0.0
    if code == "hardcore":
        return float(U.interaction_range)
    return float(max(prm[0], prm[3], prm[5]))


class _Chain:
    """Mutable chain state; compiled kernel when the potential has a kernel spec, Python otherwise."""

    def __init__(self, cfg: SamplerConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        U = cfg.potential
        spec = U.kernel_spec()
        self.compiled = spec is not None
        self.code = _CODES[spec[0]] if spec else -1
        self.prm = np.asarray(spec[1], dtype=np.float64) if spec else np.zeros(9)
        reach = _support(U, spec) if spec else float(U.interaction_range)
        self.reach = reach
        bpts = cfg.boundary_points()
        if len(bpts):
            bpts = bpts[np.max(np.abs(bpts), axis=1) < cfg.n + reach + 1e-9]
        self.D = cfg.n + max(reach, 1e-9)
        self.M = max(1, int(2 * self.D / max(reach, 1e-9))) if reach > 0 else 1
        self.M = min(self.M, 4096)
        self.cs = 2 * self.D / self.M
        self.nb = len(bpts)
        cap = self.nb + max(64, 2 * int(cfg.z * cfg.window.area) + 16)
        self._alloc(cap)
        for i, (x, y) in enumerate(bpts):
            self.xs[i], self.ys[i] = x, y
            _link(i, self.xs, self.ys, self.head, self.nxt, self.prv, self.cell, self.D, self.cs, self.M)
        self.free = np.arange(cap - 1, self.nb - 1, -1, dtype=np.int64)
        self.counts = np.array([0, len(self.free)], dtype=np.int64)
        self.stats = np.zeros(6, dtype=np.int64)
        if cfg.initial is not None and len(cfg.initial):
            self._load_initial(np.asarray(cfg.initial, dtype=float).reshape(-1, 2))

    def _alloc(self, cap):
        self.xs = np.zeros(cap)
        self.ys = np.zeros(cap)
        self.head = np.full(self.M * self.M, -1, dtype=np.int64)
        self.nxt = np.full(cap, -1, dtype=np.int64)
        self.prv = np.full(cap, -1, dtype=np.int64)
        self.cell = np.zeros(cap, dtype=np.int64)
        self.ilist = np.zeros(cap, dtype=np.int64)
        self.ipos = np.full(cap, -1, dtype=np.int64)

    def _grow(self):
        old = len(self.xs)
        new = 2 * old
        for name in ("xs", "ys"):
            setattr(self, name, np.concatenate([getattr(self, name), np.zeros(old)]))
        self.nxt = np.concatenate([self.nxt, np.full(old, -1, dtype=np.int64)])
        self.prv = np.concatenate([self.prv, np.full(old, -1, dtype=np.int64)])
        self.cell = np.concatenate([self.cell, np.zeros(old, dtype=np.int64)])
        self.ilist = np.concatenate([self.ilist, np.zeros(old, dtype=np.int64)])
        self.ipos = np.concatenate([self.ipos, np.full(old, -1, dtype=np.int64)])
        extra = np.arange(new - 1, old - 1, -1, dtype=np.int64)
        self.free = np.concatenate([extra, self.free[: self.counts[1]]])
        self.counts[1] = len(self.free)

    def _load_initial(self, pts):
        inside = Window(self.cfg.n).contains(pts)
        pts = pts[inside]
        energy = 0.0
        for x, y in pts:
            if self.counts[1] == 0:
                self._grow()
            e = self.energy_at(x, y, -1)
            energy += e
            self._insert(x, y)
        if not math.isfinite(energy):
            # non-finite initial energy: start from the empty interior
            for idx in range(int(self.counts[0]) - 1, -1, -1):
                self._remove(int(self.ilist[idx]))

    def _insert(self, x, y):
        self.counts[1] -= 1
        s = int(self.free[self.counts[1]])
        self.xs[s], self.ys[s] = x, y
        _link(s, self.xs, self.ys, self.head, self.nxt, self.prv, self.cell, self.D, self.cs, self.M)
        k = int(self.counts[0])
        self.ilist[k] = s
        self.ipos[s] = k
        self.counts[0] = k + 1

    def _remove(self, s):
        _unlink(s, self.head, self.nxt, self.prv, self.cell)
        k = int(self.counts[0])
        idx = int(self.ipos[s])
        last = int(self.ilist[k - 1])
        self.ilist[idx] = last
        self.ipos[last] = idx
        self.ipos[s] = -1
        self.counts[0] = k - 1
        self.free[self.counts[1]] = s
        self.counts[1] += 1

    def energy_at(self, x, y, skip) -> float:
        if self.compiled:
            return float(_local_energy(x, y, skip, self.xs, self.ys, self.head, self.nxt,
                                       self.D, self.cs, self.M, self.code, self.prm))
        others = self._all_slots()
        others = others[others != skip]
        if len(others) == 0:
            return 0.0
        d = np.stack([x - self.xs[others], y - self.ys[others]], axis=1)
        vals = np.asarray(self.cfg.potential(d), dtype=float)
        return float(np.sum(vals)) if not np.any(np.isinf(vals)) else math.inf

    def _all_slots(self):
        k = int(self.counts[0])
        return np.concatenate([np.arange(self.nb), self.ilist[:k]]).astype(np.int64)

    def interior(self) -> np.ndarray:
        k = int(self.counts[0])
        s = self.ilist[:k]
        return np.stack([self.xs[s], self.ys[s]], axis=1)

    def snapshot(self) -> Configuration:
        bp = np.stack([self.xs[: self.nb], self.ys[: self.nb]], axis=1)
        return Configuration(np.vstack([self.interior(), bp]), self.cfg.window, check=False)

    def advance(self, proposals: int):
        if proposals <= 0:
            return
        u = self.rng.random((proposals, 5))
        cfg = self.cfg
        pB, pD, _ = cfg.proposalMix
        cap = -1 if cfg.maxCount is None else int(cfg.maxCount)
        if not self.compiled:
            self._advance_python(u, pB, pD, cap)
            return
        start = 0
        while start < proposals:
            start = _run_block(u, start, self.xs, self.ys, self.head, self.nxt, self.prv, self.cell,
                               self.ilist, self.ipos, self.counts, self.free, float(cfg.n), float(cfg.z),
                               pB, pD, float(cfg.moveScale), cap, self.D, self.cs, self.M,
                               self.code, self.prm, self.stats)
            if start < proposals:
                self._grow()

    def _advance_python(self, u, pB, pD, cap):
        cfg = self.cfg
        n, z, area = cfg.n, cfg.z, cfg.window.area
        for row in u:
            k = int(self.counts[0])
            if row[0] < pB:
                self.stats[0] += 1
                if 0 <= cap <= k:
                    continue
                px, py = -n + 2 * n * row[1], -n + 2 * n * row[2]
                dE = self.energy_at(px, py, -1)
                if dE == math.inf:
                    continue
                if row[4] < (pD / pB) * z * area / (k + 1) * math.exp(-dE):
                    if self.counts[1] == 0:
                        self._grow()
                    self._insert(px, py)
                    self.stats[1] += 1
            elif row[0] < pB + pD:
                self.stats[2] += 1
                if k == 0:
                    continue
                s = int(self.ilist[min(int(row[1] * k), k - 1)])
                E = self.energy_at(self.xs[s], self.ys[s], s)
                if row[4] < (pB / pD) * k / (z * area) * math.exp(E):
                    self._remove(s)
                    self.stats[3] += 1
            else:
                self.stats[4] += 1
                if k == 0:
                    continue
                s = int(self.ilist[min(int(row[1] * k), k - 1)])
                px = self.xs[s] + (row[2] - 0.5) * cfg.moveScale
                py = self.ys[s] + (row[3] - 0.5) * cfg.moveScale
                if not (-n <= px < n and -n <= py < n):
                    continue
                En = self.energy_at(px, py, s)
                if En == math.inf:
                    continue
                Eo = self.energy_at(self.xs[s], self.ys[s], s)
                if row[4] < math.exp(-(En - Eo)):
                    self._remove(s)
                    self._insert(px, py)
                    self.stats[5] += 1


def run_mcmc(cfg: SamplerConfig) -> Iterator[Configuration]:
    """Yield frames (interior followed by the boundary) after burn-in, one per `thinning` sweeps."""
    chain = _Chain(cfg)
    L = cfg.sweepLength
    chain.advance(cfg.burnIn * L)
    for _ in range(cfg.sweeps // cfg.thinning):
        chain.advance(cfg.thinning * L)
        yield chain.snapshot()


def run_chain(cfg: SamplerConfig, interior_only: bool = False) -> list:
    if not interior_only:
        return list(run_mcmc(cfg))
    chain = _Chain(cfg)
    L = cfg.sweepLength
    chain.advance(cfg.burnIn * L)
    out = []
    for _ in range(cfg.sweeps // cfg.thinning):
        chain.advance(cfg.thinning * L)
        out.append(chain.interior().copy())
    return out


def run_counts(cfg: SamplerConfig, region=None) -> np.ndarray:
    """Interior particle counts (or counts inside `region`) per frame, without storing frames.

    Consumes the random stream exactly like run_chain, so the counts match its frames.
    """
    chain = _Chain(cfg)
    L = cfg.sweepLength
    chain.advance(cfg.burnIn * L)
    rect = Rect.of_window(region) if isinstance(region, Window) else region
    out = np.empty(cfg.sweeps // cfg.thinning, dtype=np.int64)
    for i in range(len(out)):
        chain.advance(cfg.thinning * L)
        out[i] = chain.counts[0] if rect is None else np.count_nonzero(rect.contains(chain.interior()))
    return out


def run_chains(cfg: SamplerConfig, chains: int) -> list:
    """Independent chains with seeds spawned from cfg.seed; returns a list of frame lists."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(chains)
    out = []
    for ss in seeds:
        c = SamplerConfig(**{**cfg.__dict__, "seed": int(ss.generate_state(1, np.uint64)[0])})
        out.append(run_chain(c))
    return out


def birth_acceptance(cfg: SamplerConfig, X: np.ndarray, point) -> float:
    """Acceptance probability of adding `point` to the interior state X, as used by the chain."""
    c = SamplerConfig(**{**cfg.__dict__, "initial": np.asarray(X, dtype=float).reshape(-1, 2)})
    chain = _Chain(c)
    k = int(chain.counts[0])
    dE = chain.energy_at(float(point[0]), float(point[1]), -1)
    pB, pD, _ = c.proposalMix
    if dE == math.inf:
        return 0.0
    return min(1.0, (pD / pB) * c.z * c.window.area / (k + 1) * math.exp(-dE))


def death_acceptance(cfg: SamplerConfig, X: np.ndarray, index: int) -> float:
    c = SamplerConfig(**{**cfg.__dict__, "initial": np.asarray(X, dtype=float).reshape(-1, 2)})
    chain = _Chain(c)
    k = int(chain.counts[0])
    s = int(chain.ilist[index])
    E = chain.energy_at(chain.xs[s], chain.ys[s], s)
    pB, pD, _ = c.proposalMix
    return min(1.0, (pB / pD) * k / (c.z * c.window.area) * math.exp(E))


# ---- Poisson and bonds ------------------------------------------------------------------

def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_poisson(window: Window, intensity: float, boundary: Configuration | None = None,
                   seed=None) -> Configuration:
    if intensity < 0:
        raise ValueError("intensity must be nonnegative")
    rng = _as_rng(seed)
    k = rng.poisson(intensity * window.area) if intensity > 0 else 0
    pts = -window.r + 2 * window.r * rng.random((k, 2))
    if boundary is not None and len(boundary):
        pts = np.vstack([pts, boundary.points])
    return Configuration(pts, window, check=False)


def sample_bonds(X: Configuration, U: PairPotential, n: float, seed=None) -> BondSet:
    rng = _as_rng(seed)
    if not isinstance(U, Decomposed):
        return BondSet()
    Xn = X if X.simWindow.r == n else Configuration(X.points, Window(n), check=False)
    pairs = candidate_pairs(Xn.points, U.rangeCutoff)
    if len(pairs) == 0:
        return BondSet()
    pairs = pairs[touching_window(Xn, pairs)]
    u = U.u_part(Xn.points[pairs[:, 0]] - Xn.points[pairs[:, 1]])
    if np.any(u < 0):
        raise InvalidPotential("the non-smooth part u must be nonnegative")
    prob = -np.expm1(-u)
    draw = rng.random(len(pairs)) < prob
    return BondSet(pairs[draw])


# ---- estimators -----------------------------------------------------------------------

@dataclass
class Estimate:
    estimate: float
    stderr: float
    batches: int
    nEff: float

    def __iter__(self):
        yield self.estimate
        yield self.stderr

    def as_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr, "batches": self.batches, "nEff": self.nEff}


def batch_means(values, n_batches: int = N_BATCHES) -> Estimate:
    v = np.asarray(values, dtype=float)
    b = min(n_batches, len(v))
    if b < MIN_BATCHES:
        raise InsufficientData(f"need at least {MIN_BATCHES} batches, have {b} samples")
    size = len(v) // b
    trimmed = v[len(v) - size * b:]
    means = trimmed.reshape(b, size).mean(axis=1)
    se = float(np.std(means, ddof=1) / math.sqrt(b))
    var = float(np.var(v, ddof=1)) if len(v) > 1 else 0.0
    n_eff = var / se**2 if se > 0 else float(len(v))
    return Estimate(float(trimmed.mean()), se, b, n_eff)


def _frame_points(frame) -> np.ndarray:
    return frame.points if isinstance(frame, Configuration) else np.asarray(frame).reshape(-1, 2)


def estimate_intensity(chain, region) -> Estimate:
    frames = list(chain)
    if not frames:
        raise InsufficientData("chain is empty")
    rect = Rect.of_window(region) if isinstance(region, Window) else region
    counts = [np.count_nonzero(rect.contains(_frame_points(f))) / rect.area for f in frames]
    return batch_means(counts)


def event_series(chain, ev: EventSpec) -> np.ndarray:
    return np.array([float(ev.holds(_frame_points(f))) for f in chain])


def event_prob(chain, ev: EventSpec, n_prime: float | None = None) -> Estimate:
    if n_prime is not None:
        ev.check_cylinder(n_prime)
    return batch_means(event_series(list(chain), ev))


def mw_test(cfg: SamplerConfig | None, events: list, tau: float, frames=None, n_prime: float | None = None) -> dict:
    """Shift inequality p(D + tau e1) + p(D - tau e1) >= p(D) and the invariance gap, per event."""
    if not 0 <= tau <= 0.5:
        raise ValueError("tau must lie in [0, 1/2]")
    frames = list(frames) if frames is not None else run_chain(cfg, interior_only=True)
    rows, ok = [], True
    for ev in events:
        if n_prime is not None:
            ev.check_cylinder(n_prime)
        base = event_series(frames, ev.shifted(0.0))
        plus = event_series(frames, ev.shifted(tau))
        minus = event_series(frames, ev.shifted(-tau))
        margin = batch_means(plus + minus - base)
        gap = batch_means(plus - base)
        p0, pp, pm = batch_means(base), batch_means(plus), batch_means(minus)
        passed = margin.estimate >= -3 * margin.stderr
        gap_ok = abs(gap.estimate) <= 3 * gap.stderr if gap.stderr > 0 else gap.estimate == 0
        ok = ok and passed
        rows.append({"event": {"kind": ev.kind, "region": [ev.region.x0, ev.region.x1, ev.region.y0, ev.region.y1],
                               "k": ev.k},
                     "p": p0.as_dict(), "pPlus": pp.as_dict(), "pMinus": pm.as_dict(),
                     "margin": margin.as_dict(), "gap": gap.as_dict(),
                     "pass": bool(passed), "gapWithin3se": bool(gap_ok)})
    return {"tau": tau, "frames": len(frames), "events": rows, "pass": bool(ok)}


# ---- change of variables -----------------------------------------------------------------

def default_functionals(p: TaperParams, n_prime: float) -> dict:
    R = p.R

    def pair_stat(pts):
        inner = pts[Window(p.n).contains(pts)]
        if len(inner) < 2:
            return 0.0
        d = inner[:, None, :] - inner[None, :, :]
        w = np.exp(-0.5 * np.sum(d * d, axis=-1))
        return float((w.sum() - len(inner)) / 2)

    return {
        "one": lambda pts: 1.0,
        "expCountInner": lambda pts: math.exp(-np.count_nonzero(Window(R).contains(pts))),
        "occupiedCenter": lambda pts: float(np.count_nonzero(Window(n_prime).contains(pts)) >= 1),
        "gaussianPairs": pair_stat,
    }


def change_of_var_test(p: TaperParams, U: PairPotential, boundary: Configuration | None, nSamples: int,
                       seed=None, intensity: float = 1.0, n_prime: float = 2.0,
                       functionals: dict | None = None) -> dict:
    """Poisson check of E[f(T X) phi(X)] = E[f(X)], using paired differences on shared samples."""
    from .deform import deform

    rng = _as_rng(seed)
    fs = functionals or default_functionals(p, n_prime)
    W = Window(p.n)
    names = list(fs)
    lhs = np.zeros((nSamples, len(names)))
    rhs = np.zeros((nSamples, len(names)))
    phis = np.zeros(nSamples)
    for i in range(nSamples):
        X = sample_poisson(W, intensity, boundary, rng)
        out = deform(X, None, p, "forward")
        phi = math.exp(out.logDensity)
        phis[i] = phi
        tp = out.transformed.points
        for j, name in enumerate(names):
            lhs[i, j] = fs[name](tp) * phi
            rhs[i, j] = fs[name](X.points)
    res, ok = {}, True
    for j, name in enumerate(names):
        diff = lhs[:, j] - rhs[:, j]
        se = float(np.std(diff, ddof=1) / math.sqrt(nSamples)) if nSamples > 1 else 0.0
        d = float(diff.mean())
        passed = abs(d) <= 3 * se if se > 0 else d == 0.0
        ok = ok and passed
        res[name] = {"transformed": float(lhs[:, j].mean()), "plain": float(rhs[:, j].mean()),
                     "difference": d, "stderr": se, "pass": bool(passed)}
    phi_se = float(np.std(phis, ddof=1) / math.sqrt(nSamples)) if nSamples > 1 else 0.0
    phi_ok = abs(phis.mean() - 1) <= 3 * phi_se if phi_se > 0 else phis.mean() == 1.0
    return {"nSamples": nSamples, "meanPhi": float(phis.mean()), "meanPhiStderr": phi_se,
            "meanPhiPass": bool(phi_ok), "functionals": res, "pass": bool(ok and phi_ok)}


__all__ = ["SamplerConfig", "EventSpec", "Rect", "Estimate", "sample_poisson", "run_mcmc", "run_chain",
           "run_chains", "run_counts", "sample_bonds", "estimate_intensity", "event_prob", "mw_test", "change_of_var_test",
           "batch_means", "lattice_ring_boundary", "birth_acceptance", "death_acceptance", "IdealGas"]
