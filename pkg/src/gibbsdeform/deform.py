"""Deformed translation along e1, its inverse, the Jacobian density and the
good-configuration statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .configuration import (BondSet, Configuration, b_plus, candidate_pairs, cluster_labels,
                            cluster_range, keps_bonds, touching_window)
from .geometry import Window
from .potentials import Decomposed, PairPotential, PureHardCore, hamiltonian
from .taper import Q, TaperParams, _nb_m, _nb_t0, _nb_tau, q

TIE = 1e-9
INV_TIE = 1e-12
FD_STEP = 1e-6
NB_MARGIN = 0.05
DIRECTIONS = {"forward": 1.0, "backward": -1.0}


class InvalidInput(ValueError):
    pass


class InternalError(RuntimeError):
    pass


# ---- compiled kernels -----------------------------------------------------------

@njit(cache=True)
def _branch_min(val, slope, amb, i, m, dm):
    v = val[i]
    if m < v - TIE:
        val[i] = m
        slope[i] = dm
        amb[i] = False
    elif m <= v + TIE:
        if abs(dm - slope[i]) > TIE:
            amb[i] = True
        if m < v:
            val[i] = m
            slope[i] = dm


@njit(cache=True)
def _field_at(y1, y2, ctr, step, pos, src_t, src_step, cap, nb_start, nb_idx,
              tau, R, n, cK, cF, cp):
    """Value and e1-slope of the field t^step at y, using sources near particle ctr."""
    val, d = _nb_t0(tau, R, n, y1, y2)
    if cap < val:
        val, d = cap, 0.0
    for a in range(nb_start[ctr], nb_start[ctr + 1]):
        j = nb_idx[a]
        if src_step[j] < 0 or src_step[j] >= step:
            continue
        m, dm = _nb_m(tau, R, n, cK, cF, cp, pos[j, 0], pos[j, 1], src_t[j], y1, y2)
        if m < val:
            val, d = m, dm
    return val, d


@njit(cache=True)
def _forward_kernel(pos, cand, c0, kept, cl_start, cl_members, cl_of, nb_start, nb_idx,
                    tau, R, n, cK, cF, cp):
    N = pos.shape[0]
    val = np.full(N, np.inf)
    slope = np.zeros(N)
    amb = np.zeros(N, dtype=np.bool_)
    remaining = np.zeros(N, dtype=np.bool_)
    src_t = np.zeros(N)
    src_step = np.full(N, -1, dtype=np.int64)
    n_rem = 0
    for i in range(N):
        if cand[i]:
            remaining[i] = True
            n_rem += 1
            v, d = _nb_t0(tau, R, n, pos[i, 0], pos[i, 1])
            val[i] = v
            slope[i] = d
            a, b = abs(pos[i, 0]), abs(pos[i, 1])
            if a == b and d != 0.0:
                amb[i] = True
        elif c0[i]:
            src_step[i] = 0
    piv = np.empty(n_rem, dtype=np.int64)
    piv_val = np.empty(n_rem)
    piv_d = np.empty(n_rem)
    piv_flag = np.zeros(n_rem, dtype=np.bool_)
    cap_hist = np.empty(n_rem + 1)
    cap = np.inf
    batch = np.empty(N, dtype=np.int64)
    nb_batch = 0
    for i in range(N):
        if c0[i] and kept[i]:
            batch[nb_batch] = i
            nb_batch += 1
    left = n_rem
    k = 0
    while True:
        # apply sources of the previous cluster at value t
        for bi in range(nb_batch):
            j = batch[bi]
            t = src_t[j]
            h = abs(_nb_tau(tau, R, n, max(abs(pos[j, 0]), abs(pos[j, 1])) - cK) - t)
            if h * cF > 0.5:
                if t <= cap:
                    cap = t
                    for i in range(N):
                        if remaining[i]:
                            _branch_min(val, slope, amb, i, t, 0.0)
            else:
                for a in range(nb_start[j], nb_start[j + 1]):
                    i = nb_idx[a]
                    if remaining[i]:
                        m, dm = _nb_m(tau, R, n, cK, cF, cp, pos[j, 0], pos[j, 1], t,
                                      pos[i, 0], pos[i, 1])
                        if m < np.inf:
                            _branch_min(val, slope, amb, i, m, dm)
        if left == 0:
            break
        best = -1
        for i in range(N):
            if not remaining[i]:
                continue
            if best < 0 or val[i] < val[best] or (val[i] == val[best] and (
                    pos[i, 0] < pos[best, 0] or (pos[i, 0] == pos[best, 0] and pos[i, 1] < pos[best, 1]))):
                best = i
        tk = val[best]
        d = slope[best]
        cap_hist[k] = cap
        if amb[best]:
            vp, _ = _field_at(pos[best, 0] + FD_STEP, pos[best, 1], best, k + 1, pos, src_t, src_step,
                              cap, nb_start, nb_idx, tau, R, n, cK, cF, cp)
            vm, _ = _field_at(pos[best, 0] - FD_STEP, pos[best, 1], best, k + 1, pos, src_t, src_step,
                              cap, nb_start, nb_idx, tau, R, n, cK, cF, cp)
            d = (vp - vm) / (2 * FD_STEP)
            piv_flag[k] = True
        piv[k] = best
        piv_val[k] = tk
        piv_d[k] = d
        c = cl_of[best]
        nb_batch = 0
        for a in range(cl_start[c], cl_start[c + 1]):
            j = cl_members[a]
            src_t[j] = tk
            src_step[j] = k + 1
            if remaining[j]:
                remaining[j] = False
                left -= 1
            if kept[j]:
                batch[nb_batch] = j
                nb_batch += 1
        k += 1
    cap_hist[k] = cap
    return src_t, src_step, piv[:k], piv_val[:k], piv_d[:k], piv_flag[:k], cap_hist[:k + 1]


@njit(cache=True)
def _preimage(i, ypos, sgn, src_x, src_t, active, cap, nb_start, nb_idx, tau, R, n, cK, cF, cp):
    """Solve y1 + sgn * t(y1, y2) = ytilde1; returns (t value, y1)."""
    yt1, y2 = ypos[i, 0], ypos[i, 1]
    if sgn > 0:
        lo, hi = yt1 - tau, yt1
    else:
        lo, hi = yt1, yt1 + tau
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= 1e-13:
            break
        v = _inv_field(mid, y2, i, src_x, src_t, active, cap, nb_start, nb_idx, tau, R, n, cK, cF, cp)
        if mid + sgn * v - yt1 > 0:
            hi = mid
        else:
            lo = mid
    y1 = 0.5 * (lo + hi)
    v = _inv_field(y1, y2, i, src_x, src_t, active, cap, nb_start, nb_idx, tau, R, n, cK, cF, cp)
    return v, y1


@njit(cache=True)
def _inv_field(y1, y2, ctr, src_x, src_t, active, cap, nb_start, nb_idx, tau, R, n, cK, cF, cp):
    val, _ = _nb_t0(tau, R, n, y1, y2)
    if cap < val:
        val = cap
    for a in range(nb_start[ctr], nb_start[ctr + 1]):
        j = nb_idx[a]
        if not active[j]:
            continue
        m, _ = _nb_m(tau, R, n, cK, cF, cp, src_x[j, 0], src_x[j, 1], src_t[j], y1, y2)
        if m < val:
            val = m
    return val


@njit(cache=True)
def _inverse_kernel(ypos, sgn, cand, c0, kept, cl_start, cl_members, cl_of, nb_start, nb_idx,
                    tau, R, n, cK, cF, cp):
    N = ypos.shape[0]
    src_x = ypos.copy()
    src_t = np.zeros(N)
    active = np.zeros(N, dtype=np.bool_)
    remaining = np.zeros(N, dtype=np.bool_)
    dirty = np.zeros(N, dtype=np.bool_)
    val = np.full(N, np.inf)
    pre1 = ypos[:, 0].copy()
    n_rem = 0
    for i in range(N):
        if cand[i]:
            remaining[i] = True
            dirty[i] = True
            n_rem += 1
    piv = np.empty(n_rem, dtype=np.int64)
    piv_val = np.empty(n_rem)
    cap = np.inf
    batch = np.empty(N, dtype=np.int64)
    nb_batch = 0
    for i in range(N):
        if c0[i] and kept[i]:
            batch[nb_batch] = i
            nb_batch += 1
    left = n_rem
    k = 0
    while True:
        for bi in range(nb_batch):
            j = batch[bi]
            t = src_t[j]
            active[j] = True
            h = abs(_nb_tau(tau, R, n, max(abs(src_x[j, 0]), abs(src_x[j, 1])) - cK) - t)
            if h * cF > 0.5:
                if t <= cap:
                    cap = t
            else:
                for a in range(nb_start[j], nb_start[j + 1]):
                    i = nb_idx[a]
                    if remaining[i]:
                        dirty[i] = True
        if left == 0:
            break
        for i in range(N):
            if not remaining[i]:
                continue
            if dirty[i]:
                v, y1 = _preimage(i, ypos, sgn, src_x, src_t, active, cap, nb_start, nb_idx,
                                  tau, R, n, cK, cF, cp)
                val[i] = v
                pre1[i] = y1
                dirty[i] = False
            if val[i] > cap:
                val[i] = cap
                pre1[i] = ypos[i, 0] - sgn * cap
        vmin = np.inf
        for i in range(N):
            if remaining[i] and val[i] < vmin:
                vmin = val[i]
        best = -1
        for i in range(N):
            if not remaining[i] or val[i] > vmin + INV_TIE:
                continue
            if best < 0 or pre1[i] < pre1[best] or (pre1[i] == pre1[best] and ypos[i, 1] < ypos[best, 1]):
                best = i
        tk = val[best]
        piv[k] = best
        piv_val[k] = tk
        c = cl_of[best]
        nb_batch = 0
        for a in range(cl_start[c], cl_start[c + 1]):
            j = cl_members[a]
            src_t[j] = tk
            src_x[j, 0] = ypos[j, 0] - sgn * tk
            if remaining[j]:
                remaining[j] = False
                left -= 1
            if kept[j]:
                batch[nb_batch] = j
                nb_batch += 1
        k += 1
    return src_x, src_t, piv[:k], piv_val[:k]


# ---- data preparation --------------------------------------------------------------

@dataclass
class _Prepared:
    pos: np.ndarray
    interior: np.ndarray
    labels: np.ndarray
    cand: np.ndarray
    c0: np.ndarray
    kept: np.ndarray
    cl_start: np.ndarray
    cl_members: np.ndarray
    cl_of: np.ndarray
    nb_start: np.ndarray
    nb_idx: np.ndarray


def _csr(n_points: int, pairs: np.ndarray):
    if len(pairs) == 0:
        return np.zeros(n_points + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    both = np.concatenate([pairs, pairs[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    start = np.zeros(n_points + 1, dtype=np.int64)
    np.add.at(start, both[:, 0] + 1, 1)
    return np.cumsum(start), both[:, 1].astype(np.int64)


def _check_bonds(X: Configuration, B: BondSet, n: float):
    if len(B) == 0:
        return
    B.validate(len(X))
    inner = Window(n).contains(X.points)
    if not np.all(inner[B.pairs[:, 0]] | inner[B.pairs[:, 1]]):
        raise InvalidInput("bond set must be contained in E_n(X): every bond needs an endpoint in Λ_n")


def _prepare(pts: np.ndarray, B: BondSet, p: TaperParams, radius: float) -> _Prepared:
    N = len(pts)
    interior = Window(p.n).contains(pts) if N else np.zeros(0, dtype=bool)
    labels = cluster_labels(N, B.pairs)
    uniq, cl_of = np.unique(labels, return_inverse=True)
    order = np.argsort(cl_of, kind="stable")
    counts = np.bincount(cl_of, minlength=len(uniq))
    cl_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    has_ext = np.zeros(len(uniq), dtype=bool)
    np.logical_or.at(has_ext, cl_of, ~interior)
    c0 = has_ext[cl_of]
    cand = interior & ~c0
    # exterior particles far from Λ_n never bind
    dist_out = np.max(np.abs(pts), axis=1) - p.n if N else np.zeros(0)
    kept = interior | (dist_out <= p.cK + p.tau + 1.0)
    idx = np.flatnonzero(kept)
    sub = candidate_pairs(pts[idx], radius)
    pairs = idx[sub] if len(sub) else np.zeros((0, 2), dtype=np.int64)
    nb_start, nb_idx = _csr(N, pairs)
    return _Prepared(pts, interior, labels, cand, c0, kept, cl_start,
                     order.astype(np.int64), cl_of.astype(np.int64), nb_start, nb_idx)


def _nb_radius(p: TaperParams) -> float:
    return p.cK + 2 * p.tau + NB_MARGIN


# ---- public API -------------------------------------------------------------------

@dataclass
class DeformOutput:
    transformed: Configuration
    tOf: np.ndarray
    pivotOrder: np.ndarray
    pivotValues: np.ndarray
    logDensity: float
    perPivotDeriv: np.ndarray
    direction: str
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    recovered: Configuration | None = None
    trace: object = None

    @property
    def nFlagged(self) -> int:
        return len(self.flagged)


@dataclass
class _Trace:
    prep: _Prepared
    src_t: np.ndarray
    src_step: np.ndarray
    cap_hist: np.ndarray
    params: TaperParams

    def field(self, y, k: int, ctr: int):
        """t^k at point y (needs |y - P_ctr| <= 2 tau)."""
        p = self.params
        return _field_at(float(y[0]), float(y[1]), ctr, k, self.prep.pos, self.src_t, self.src_step,
                         float(self.cap_hist[k - 1]), self.prep.nb_start, self.prep.nb_idx,
                         *p.kernel_args())


def _direction(direction) -> tuple[str, float]:
    if direction not in DIRECTIONS:
        raise InvalidInput(f"direction must be 'forward' or 'backward', got {direction!r}")
    return direction, DIRECTIONS[direction]


def deform(X: Configuration, B: BondSet | None, p: TaperParams, direction: str = "forward") -> DeformOutput:
    direction, sgn = _direction(direction)
    B = B if B is not None else BondSet()
    _check_bonds(X, B, p.n)
    pts = np.ascontiguousarray(X.points, dtype=np.float64)
    N = len(pts)
    if N == 0:
        empty = np.zeros(0)
        return DeformOutput(X.with_points(pts), empty, np.zeros(0, dtype=np.int64), empty, 0.0,
                            empty, direction)
    prep = _prepare(pts, B, p, _nb_radius(p))
    src_t, src_step, piv, piv_val, piv_d, piv_flag, cap_hist = _forward_kernel(
        pts, prep.cand, prep.c0, prep.kept, prep.cl_start, prep.cl_members, prep.cl_of,
        prep.nb_start, prep.nb_idx, *p.kernel_args())
    tOf = np.where(prep.interior & ~prep.c0, src_t, 0.0)
    moved = pts.copy()
    moved[:, 0] += sgn * tOf
    log_terms = np.log(np.abs(1.0 + sgn * piv_d)) if len(piv_d) else np.zeros(0)
    return DeformOutput(X.with_points(moved), tOf, piv, piv_val, float(np.sum(log_terms)), piv_d,
                        direction, np.flatnonzero(piv_flag),
                        trace=_Trace(prep, src_t, src_step, cap_hist, p))


def inverse_deform(Xt: Configuration, Bt: BondSet | None, p: TaperParams,
                   direction: str = "forward") -> DeformOutput:
    """Invert the deformation given by `direction`; `recovered` holds the original positions."""
    direction, sgn = _direction(direction)
    Bt = Bt if Bt is not None else BondSet()
    _check_bonds(Xt, Bt, p.n)
    ypos = np.ascontiguousarray(Xt.points, dtype=np.float64)
    N = len(ypos)
    if N == 0:
        empty = np.zeros(0)
        return DeformOutput(Xt, empty, np.zeros(0, dtype=np.int64), empty, 0.0, empty, direction,
                            recovered=Xt)
    prep = _prepare(ypos, Bt, p, _nb_radius(p))
    src_x, src_t, piv, piv_val = _inverse_kernel(
        ypos, sgn, prep.cand, prep.c0, prep.kept, prep.cl_start, prep.cl_members, prep.cl_of,
        prep.nb_start, prep.nb_idx, *p.kernel_args())
    moved = prep.interior & ~prep.c0
    tOf = np.where(moved, src_t, 0.0)
    if np.any(tOf < 0) or np.any(tOf > p.tau + 1e-12):
        raise InternalError("inverse translation distance outside [0, tau]")
    rec = ypos.copy()
    rec[:, 0] = np.where(moved, src_x[:, 0], ypos[:, 0])
    out_cfg = Xt.with_points(rec)
    return DeformOutput(out_cfg, tOf, piv, piv_val, float("nan"), np.zeros(0), direction,
                        recovered=out_cfg)


def log_density(out: DeformOutput) -> float:
    return out.logDensity


def round_trip_error(X: Configuration, B: BondSet | None, p: TaperParams, direction: str = "forward") -> float:
    fwd = deform(X, B, p, direction)
    back = inverse_deform(fwd.transformed, B, p, direction)
    if len(X) == 0:
        return 0.0
    return float(np.max(np.abs(back.recovered.points - X.points)))


# ---- good-configuration statistics ------------------------------------------------

@dataclass
class SigmaStats:
    sigma1: float = 0.0
    sigma2: float = 0.0
    sigma3: float = 0.0
    sigma4: float = 0.0
    sigma5: float = 0.0
    range: float = 0.0
    isGood: bool = True
    threshold: float = 1.0
    R: float = 0.0

    @property
    def total(self) -> float:
        return self.sigma1 + self.sigma2 + self.sigma3 + self.sigma4 + self.sigma5

    def as_dict(self) -> dict:
        return {"sigma1": self.sigma1, "sigma2": self.sigma2, "sigma3": self.sigma3,
                "sigma4": self.sigma4, "sigma5": self.sigma5, "range": self.range,
                "isGood": self.isGood, "threshold": self.threshold}


@njit(cache=True)
def _cluster_sums(tq_a, tq_b, norms, cl_start, cl_members, weight):
    """Per particle x: sum over x'' in the cluster of x of tau^q(x, x'') (x'' = x included)."""
    N = norms.shape[0]
    out = np.zeros(N)
    for c in range(cl_start.shape[0] - 1):
        lo, hi = cl_start[c], cl_start[c + 1]
        for a in range(lo, hi):
            x = cl_members[a]
            acc = 0.0
            for b in range(lo, hi):
                y = cl_members[b]
                if norms[x] <= norms[y]:
                    d = tq_a[x] - tq_b[y]
                    acc += d * d * weight[y]
            out[x] = acc
    return out


def _tau_q_parts(pts, p: TaperParams):
    norms = np.max(np.abs(pts), axis=1) if len(pts) else np.zeros(0)
    a = np.asarray(_tau_vec(p, norms - p.cK))
    b = np.asarray(_tau_vec(p, norms))
    return norms, a, b


def _tau_vec(p: TaperParams, s):
    s = np.asarray(s, dtype=float)
    k = p.n - p.R
    u = np.clip(s - p.R, 0.0, k)
    Qk = Q(k)
    return p.tau * (Qk - Q(u)) / Qk


def _cluster_csr(N: int, pairs: np.ndarray):
    labels = cluster_labels(N, pairs)
    _, cl_of = np.unique(labels, return_inverse=True)
    order = np.argsort(cl_of, kind="stable").astype(np.int64)
    counts = np.bincount(cl_of)
    return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64), order


def _pair_tau_q(i, j, norms, a, b):
    val = np.zeros(len(i))
    sel = norms[i] <= norms[j]
    val[sel] = (a[i[sel]] - b[j[sel]]) ** 2
    return val


def sigma_stats(X: Configuration, B: BondSet | None, p: TaperParams, variant: str = "hardcore",
                psi=None, n_prime: float = 1.0, R: float | None = None) -> SigmaStats:
    if variant not in ("hardcore", "general"):
        raise InvalidInput("variant must be 'hardcore' or 'general'")
    B = B if B is not None else BondSet()
    R = p.R if R is None else R
    threshold = 1.0 if variant == "hardcore" else 0.5
    N = len(X)
    if N == 0:
        return SigmaStats(threshold=threshold, R=R)
    core = p.core
    Xn = X if X.simWindow.r == p.n else Configuration(X.points, Window(p.n), check=False)
    bplus = b_plus(Xn, B, p.n, core)
    pts = Xn.points
    cl_start, cl_members = _cluster_csr(N, bplus.pairs)
    norms, a, b = _tau_q_parts(pts, p)
    per_x = _cluster_sums(a, b, norms, cl_start, cl_members, np.ones(N))
    cf2 = p.cF**2
    s1 = 4 * cf2 * float(per_x.sum())
    # K_eps neighbour counts over all pairs of X
    cand = candidate_pairs(pts, p.cK)
    if len(cand):
        keps = core.contains(pts[cand[:, 0]] - pts[cand[:, 1]], enlarged=True)
        cand = cand[keps]
    deg = np.bincount(cand.ravel(), minlength=N).astype(float) if len(cand) else np.zeros(N)
    triple_keps = 2 * cf2 * float(np.sum(deg * per_x))
    inner = Window(p.n).contains(pts)
    plateau = 2 * p.tau**2 * float(np.sum(q(norms[inner] - R) ** 2 if inner.any() else 0.0)) / Q(p.n - p.R) ** 2
    rng = cluster_range(Xn, bplus, Window(n_prime))
    if variant == "hardcore":
        st = SigmaStats(s1, plateau, triple_keps, 0.0, 0.0, rng, False, threshold, R)
    else:
        if psi is None:
            raise InvalidInput("general variant needs the decay function psi")
        psi_f, psi_range = (psi.psi, psi.rangeCutoff) if isinstance(psi, Decomposed) else psi
        pr = candidate_pairs(pts, psi_range)
        if len(pr):
            i, j = pr[:, 0], pr[:, 1]
            w = np.asarray(psi_f(pts[i] - pts[j]), dtype=float)
            s2 = 9 * float(np.sum(w * (_pair_tau_q(i, j, norms, a, b) + _pair_tau_q(j, i, norms, a, b))))
            big_psi = np.bincount(i, weights=w, minlength=N) + np.bincount(j, weights=w, minlength=N)
            # tau^q(x, x'') summed over connected x'' != x, minus the psi(x - x'') correction
            self_term = np.where(norms <= norms, (a - b) ** 2, 0.0)
            conn_sum = per_x - self_term
            labels = cluster_labels(N, bplus.pairs)
            same = labels[i] == labels[j]
            corr = np.zeros(N)
            if same.any():
                ii, jj, ww = i[same], j[same], w[same]
                np.add.at(corr, ii, ww * _pair_tau_q(ii, jj, norms, a, b))
                np.add.at(corr, jj, ww * _pair_tau_q(jj, ii, norms, a, b))
            s3 = 6 * float(np.sum(big_psi * conn_sum - corr))
        else:
            s2 = s3 = 0.0
        st = SigmaStats(s1, s2, max(s3, 0.0), plateau, triple_keps, rng, False, threshold, R)
    st.isGood = bool(st.range < R and st.total < threshold)
    return st


# ---- energy bound ---------------------------------------------------------------------

def taylor_gap(U: Decomposed, X: Configuration, tOf: np.ndarray, n: float) -> float:
    """H^Ubar(T̄X) + H^Ubar(TX) - 2 H^Ubar(X) over pairs of E_n(X) whose difference is off K."""
    pts = X.points
    Xn = X if X.simWindow.r == n else Configuration(pts, Window(n), check=False)
    reach = U.rangeCutoff + 1.0
    pairs = candidate_pairs(pts, reach)
    if len(pairs) == 0:
        return 0.0
    pairs = pairs[touching_window(Xn, pairs)]
    eta = pts[pairs[:, 0]] - pts[pairs[:, 1]]
    off = ~U.in_K(eta)
    eta, pairs = eta[off], pairs[off]
    shift = np.zeros_like(eta)
    shift[:, 0] = tOf[pairs[:, 0]] - tOf[pairs[:, 1]]
    return float(np.sum(U.ubar(eta + shift) + U.ubar(eta - shift) - 2 * U.ubar(eta)))


# ---- invariant suite -------------------------------------------------------------------

def _k_pairs(pts, core, radius):
    cand = candidate_pairs(pts, radius)
    if len(cand) == 0:
        return cand
    return cand[core.contains(pts[cand[:, 0]] - pts[cand[:, 1]], enlarged=False)]


def verify_deform_invariants(X: Configuration, B: BondSet | None, p: TaperParams,
                             direction: str = "forward", potential: PairPotential | None = None,
                             n_prime: float = 1.0, variant: str | None = None, s_points: int = 41,
                             lipschitz_pivots: int = 50, out: DeformOutput | None = None) -> dict:
    B = B if B is not None else BondSet()
    variant = variant or ("general" if len(B) or isinstance(potential, Decomposed) else "hardcore")
    out = out or deform(X, B, p, direction)
    sgn = DIRECTIONS[direction]
    pts = X.points
    t = out.tOf
    core = p.core
    rep = {}
    vals = np.concatenate([[0.0], out.pivotValues])
    rep["pivotMonotonicity"] = bool(np.all(np.diff(vals) >= 0))
    kp = _k_pairs(pts, core, p.cK)
    const_k = bool(np.all(t[kp[:, 0]] == t[kp[:, 1]])) if len(kp) else True
    const_b = bool(np.all(t[B.pairs[:, 0]] == t[B.pairs[:, 1]])) if len(B) else True
    rep["corePairConstancy"] = const_k
    rep["bondClusterConstancy"] = const_b
    cand = candidate_pairs(pts, p.cK + p.tau)
    sep = True
    if len(cand):
        diff = pts[cand[:, 0]] - pts[cand[:, 1]]
        nonk = ~core.contains(diff, enlarged=False)
        diff, cc = diff[nonk], cand[nonk]
        dt = t[cc[:, 0]] - t[cc[:, 1]]
        grid = np.linspace(-1.0, 1.0, s_points) if variant == "general" or s_points > 2 else np.array([-1.0, 1.0])
        for s in grid:
            shifted = diff.copy()
            shifted[:, 0] += s * dt
            if np.any(core.contains(shifted, enlarged=False)):
                sep = False
                break
    rep["separationPreserved"] = sep
    if isinstance(potential, PureHardCore) or potential is None:
        hc = potential or PureHardCore(core)
        Xn = Configuration(pts, Window(p.n), check=False)
        Tn = Configuration(out.transformed.points, Window(p.n), check=False)
        same_h = hamiltonian(hc, Xn, Window(p.n)) == hamiltonian(hc, Tn, Window(p.n))
        kp_t = _k_pairs(Tn.points, core, p.cK)
        a = kp[touching_window(Xn, kp)] if len(kp) else kp
        b = kp_t[touching_window(Tn, kp_t)] if len(kp_t) else kp_t
        rep["hamiltonianInvariance"] = bool(same_h and np.array_equal(a, b))
    interior = Window(p.n).contains(pts)
    rep["interiorStaysInside"] = bool(np.all(Window(p.n).contains(out.transformed.points[interior])))
    rep["outerUnmoved"] = bool(np.all(t[~interior] == 0))
    psi = potential if isinstance(potential, Decomposed) else None
    stats = sigma_stats(X, B, p, "general" if psi is not None else "hardcore", psi, n_prime)
    rep["isGood"] = stats.isGood
    if stats.isGood:
        inner = Window(n_prime - 1)
        back = out.transformed.points.copy()
        back[:, 0] -= sgn * p.tau
        A = np.sort(back[inner.contains(back)].view("f8,f8"), axis=0)
        Bx = np.sort(pts[inner.contains(pts)].view("f8,f8"), axis=0)
        ok = A.shape == Bx.shape and np.allclose(A.view(float), Bx.view(float), atol=1e-12, rtol=0)
        rep["innerTranslatedByTau"] = bool(ok)
    derivs = out.perPivotDeriv
    rep["derivativeBound"] = bool(np.all(np.abs(derivs) <= 0.5 + 1e-9))
    rep["lipschitz"] = _lipschitz_check(out, p, lipschitz_pivots)
    rep["passed"] = all(v for k, v in rep.items() if k != "isGood")
    rep["flaggedPivots"] = int(out.nFlagged)
    return rep


def _lipschitz_check(out: DeformOutput, p: TaperParams, max_pivots: int) -> bool:
    tr = out.trace
    if tr is None or len(out.pivotOrder) == 0 or p.tau == 0:
        return True
    ks = np.unique(np.linspace(0, len(out.pivotOrder) - 1, min(max_pivots, len(out.pivotOrder))).astype(int))
    offsets = np.linspace(-2 * p.tau, 2 * p.tau, 9)
    for k in ks:
        ctr = int(out.pivotOrder[k])
        P = tr.prep.pos[ctr]
        ys = [tr.field((P[0] + d, P[1]), k + 1, ctr)[0] for d in offsets]
        ys = np.array(ys)
        gaps = np.abs(ys[:, None] - ys[None, :])
        dist = np.abs(offsets[:, None] - offsets[None, :])
        if np.any(gaps > 0.5 * dist + 1e-12):
            return False
    return True


def density_pair(X: Configuration, B: BondSet | None, p: TaperParams):
    """(log φ̄ + log φ, forward output, backward output)."""
    fwd = deform(X, B, p, "forward")
    bwd = deform(X, B, p, "backward")
    return fwd.logDensity + bwd.logDensity, fwd, bwd


def translation_bracket(X: Configuration, B: BondSet | None, p: TaperParams, out: DeformOutput) -> bool:
    """τ_n(|far point|) <= tOf(x) <= τ_n(|x|) for interior x (meaningful on good configurations)."""
    B = B if B is not None else BondSet()
    Xn = Configuration(X.points, Window(p.n), check=False)
    bp = b_plus(Xn, B, p.n, p.core)
    labels = cluster_labels(len(X), bp.pairs)
    norms = np.max(np.abs(X.points), axis=1)
    far = np.zeros(len(X))
    np.maximum.at(far, labels, norms)
    lower = _tau_vec(p, far[labels])
    upper = _tau_vec(p, norms)
    inner = Xn.interior
    t = out.tOf
    return bool(np.all((lower[inner] <= t[inner] + 1e-12) & (t[inner] <= upper[inner] + 1e-12)))


__all__ = ["DeformOutput", "SigmaStats", "deform", "inverse_deform", "log_density", "sigma_stats",
           "verify_deform_invariants", "round_trip_error", "taylor_gap", "density_pair",
           "translation_bracket", "keps_bonds", "math"]
