"""Taper profile q/Q/r, the translation distance tau_n, the smooth core cutoff and
the local slowdown used by the deformation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import integrate

from .geometry import CoreSet, _nb_norm, _nb_norm_d1, as_xy, c_K_of

CF_SAFETY = 1.05
CF_GRID = 2048


def _crossover(tol: float = 1e-14) -> float:
    # Newton on s log s = 1
    s = 1.75
    for _ in range(100):
        step = (s * math.log(s) - 1.0) / (math.log(s) + 1.0)
        s -= step
        if abs(step) < tol:
            break
    return s


S_STAR = _crossover()
_LOG_S_STAR = math.log(S_STAR)


# ---- scalar kernels ---------------------------------------------------------

@njit(cache=True)
def _nb_q(s):
    if s <= S_STAR:
        return 1.0
    return 1.0 / (s * math.log(s))


@njit(cache=True)
def _nb_Q(k):
    if k <= S_STAR:
        return k
    # log log s* = -log s* because s* log s* = 1
    return S_STAR + math.log(math.log(k)) + _LOG_S_STAR


@njit(cache=True)
def _nb_tau(tau, R, n, s):
    k = n - R
    u = s - R
    if u <= 0.0:
        return tau
    if u >= k:
        return 0.0
    Qk = _nb_Q(k)
    return tau * (Qk - _nb_Q(u)) / Qk


@njit(cache=True)
def _nb_tau_d(tau, R, n, s):
    if s <= R or s >= n:
        return 0.0
    return -tau * _nb_q(s - R) / _nb_Q(n - R)


@njit(cache=True)
def _nb_step(w):
    """Smooth step S(w) and its derivative."""
    if w <= 0.0:
        return 0.0, 0.0
    if w >= 1.0:
        return 1.0, 0.0
    g = 1.0 / (1.0 - w) - 1.0 / w
    if g >= 0.0:
        e = math.exp(-g)
        S = 1.0 / (1.0 + e)
        one_minus = e / (1.0 + e)
    else:
        e = math.exp(g)
        S = e / (1.0 + e)
        one_minus = 1.0 / (1.0 + e)
    prod = S * one_minus
    if prod == 0.0:
        return S, 0.0
    return S, prod * (1.0 / (w * w) + 1.0 / ((1.0 - w) * (1.0 - w)))


@njit(cache=True)
def _nb_fk(cp, v1, v2):
    """Cutoff value and first-coordinate derivative at difference vector v."""
    r = _nb_norm(cp, v1, v2)
    S, dS = _nb_step((r - cp[4]) * cp[5])
    if dS == 0.0:
        return S, 0.0
    return S, dS * cp[5] * _nb_norm_d1(cp, v1, v2)


@njit(cache=True)
def _nb_max_norm(v1, v2):
    return max(abs(v1), abs(v2))


@njit(cache=True)
def _nb_t0(tau, R, n, y1, y2):
    """Plateau field tau_n(|y|) and its derivative along e1."""
    a, b = abs(y1), abs(y2)
    s = max(a, b)
    val = _nb_tau(tau, R, n, s)
    if a > b:
        d = _nb_tau_d(tau, R, n, s)
        return val, d if y1 > 0 else -d
    return val, 0.0


@njit(cache=True)
def _nb_m(tau, R, n, cK, cF, cp, s1, s2, t, y1, y2):
    """Slowdown m_{s,t}(y); returns (value, e1-derivative), value may be inf."""
    h = abs(_nb_tau(tau, R, n, max(abs(s1), abs(s2)) - cK) - t)
    if h * cF > 0.5:
        return t, 0.0
    f, d = _nb_fk(cp, y1 - s1, y2 - s2)
    if f == 1.0:
        return math.inf, 0.0
    return t + h * f, h * d


# ---- public scalar API ------------------------------------------------------

def q(s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(s > S_STAR, 1.0 / (s * np.log(np.where(s > 1, s, 2.0))), 1.0)
    return val if val.ndim else float(val)


def Q(k):
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise ValueError("Q is defined for k >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = S_STAR + np.log(np.log(np.where(k > S_STAR, k, 2.0))) + _LOG_S_STAR
    val = np.where(k > S_STAR, tail, k)
    return val if val.ndim else float(val)


def r_frac(s, k):
    if not k > 0:
        raise ValueError("r_frac needs k > 0")
    s = np.clip(np.asarray(s, dtype=float), 0.0, k)
    Qk = Q(k)
    val = (Qk - Q(s)) / Qk
    return val if np.ndim(val) else float(val)


@dataclass(frozen=True)
class CutoffFunction:
    core: CoreSet
    cF: float
    safety: float = CF_SAFETY

    @property
    def packed(self) -> np.ndarray:
        return self.core.packed()

    def __call__(self, v) -> np.ndarray:
        return f_K(self, v)


def smooth_step(w):
    """Vectorized S(w) and S'(w), matching the compiled kernel."""
    w = np.asarray(w, dtype=float)
    inside = (w > 0) & (w < 1)
    wc = np.where(inside, w, 0.5)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        g = 1.0 / (1.0 - wc) - 1.0 / wc
        e = np.exp(-np.abs(g))
        hi, lo = 1.0 / (1.0 + e), e / (1.0 + e)
        S = np.where(g >= 0, hi, lo)
        one_minus = np.where(g >= 0, lo, hi)
        prod = S * one_minus
        dS = np.where(inside & (prod > 0), prod * (1 / wc**2 + 1 / (1 - wc) ** 2), 0.0)
    S = np.where(w >= 1, 1.0, np.where(inside, S, 0.0))
    return S, dS


def _fk_arrays(core: CoreSet, v):
    cp = core.packed()
    v = as_xy(v)
    S, dS = smooth_step((core.hcNorm(v) - core.r0) * cp[5])
    return S, dS * cp[5], v


def _norm_d1_arrays(core: CoreSet, v) -> np.ndarray:
    nd = core.hcNorm
    v1, v2 = v[..., 0], v[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        if nd.kind == "maximum":
            out = np.where(np.abs(v1) > np.abs(v2), np.sign(v1), 0.0)
        elif nd.kind == "euclidean":
            out = v1 / np.hypot(v1, v2)
        elif nd.kind == "anisotropic":
            a, b = nd.scales
            out = v1 / (a * a * np.hypot(v1 / a, v2 / b))
        else:
            out = np.sign(v1) * (np.abs(v1) / nd(v)) ** (nd.p - 1.0)
    return np.nan_to_num(out)


def f_K(cutoff, v):
    core = cutoff.core if isinstance(cutoff, CutoffFunction) else cutoff
    S, _, _ = _fk_arrays(core, v)
    return S if np.ndim(S) else float(S)


def f_K_d1(cutoff, v):
    core = cutoff.core if isinstance(cutoff, CutoffFunction) else cutoff
    _, dS, v = _fk_arrays(core, v)
    out = dS * _norm_d1_arrays(core, v)
    return out if np.ndim(out) else float(out)


@lru_cache(maxsize=64)
def _cf_estimate(core: CoreSet, grid: int) -> float:
    cK = c_K_of(core)
    axis = np.linspace(-cK, cK, grid)
    best = 0.0
    for chunk in np.array_split(axis, 16):
        a, b = np.meshgrid(chunk, axis, indexing="ij")
        v = np.stack([a, b], axis=-1)
        best = max(best, float(np.max(np.abs(f_K_d1(core, v)))))
    return best


def make_cutoff(core: CoreSet, safety: float = CF_SAFETY, grid: int = CF_GRID) -> CutoffFunction:
    if not core.epsilon > 0:
        raise ValueError("the smooth cutoff needs a positive core enlargement")
    return CutoffFunction(core, safety * _cf_estimate(core, grid), safety)


@dataclass(frozen=True)
class TaperParams:
    tau: float
    R: float
    n: float
    cK: float
    cutoff: CutoffFunction

    def __post_init__(self):
        if not 0.0 <= self.tau <= 0.5:
            raise ValueError(f"tau must lie in [0, 1/2], got {self.tau}")
        if not self.R < self.n:
            raise ValueError(f"need R < n, got R={self.R}, n={self.n}")
        if not self.R >= 0:
            raise ValueError("R must be nonnegative")
        if not self.cK >= 0:
            raise ValueError("cK must be nonnegative")
        if self.tau / Q(self.n - self.R) > 0.5:
            raise ValueError("taper Lipschitz precondition tau/Q(n-R) <= 1/2 violated; increase n")

    @classmethod
    def build(cls, core: CoreSet, tau: float, R: float, n: float, **kw) -> "TaperParams":
        return cls(float(tau), float(R), float(n), c_K_of(core), make_cutoff(core, **kw))

    @property
    def cF(self) -> float:
        return self.cutoff.cF

    @property
    def core(self) -> CoreSet:
        return self.cutoff.core

    def kernel_args(self):
        return (self.tau, self.R, self.n, self.cK, self.cF, self.cutoff.packed)


def tau_n(p: TaperParams, s):
    s = np.asarray(s, dtype=float)
    k = p.n - p.R
    val = p.tau * r_frac(s - p.R, k)
    return val if np.ndim(val) else float(val)


def tau_n_deriv(p: TaperParams, s):
    s = np.asarray(s, dtype=float)
    inside = (s > p.R) & (s < p.n)
    val = np.where(inside, -p.tau * q(np.where(inside, s - p.R, 1.0)) / Q(p.n - p.R), 0.0)
    return val if np.ndim(val) else float(val)


def m_aux(p: TaperParams, xPrime, t: float, x) -> float:
    s1, s2 = as_xy(xPrime)
    y1, y2 = as_xy(x)
    val, _ = _nb_m(p.tau, p.R, p.n, p.cK, p.cF, p.cutoff.packed, s1, s2, t, y1, y2)
    return float(val)


def _bars(p: TaperParams):
    return p.n + p.cK, p.R + p.cK


def c_of_n(p: TaperParams) -> float:
    nbar, Rbar = _bars(p)
    k = nbar - Rbar
    knee = min(Rbar + S_STAR, nbar)
    core = 4.0 * knee * knee
    tail = 0.0
    if nbar > knee:
        tail, _ = integrate.quad(lambda s: 8.0 * s * q(s - Rbar) ** 2, knee, nbar,
                                 epsabs=0.0, epsrel=1e-12, limit=200)
    return (core + tail) / Q(k) ** 2


def c_of_n_bound(p: TaperParams) -> float:
    nbar, Rbar = _bars(p)
    Qk = Q(nbar - Rbar)
    return (16.0 * Rbar**2 + 32.0 * Qk) / Qk**2
