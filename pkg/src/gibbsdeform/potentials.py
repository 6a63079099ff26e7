"""Pair potentials, Hamiltonians, decomposition constants and the smoothing builder."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import RectBivariateSpline
from scipy.signal import fftconvolve
from scipy.special import roots_legendre
from scipy.spatial import cKDTree

from .configuration import Configuration, candidate_pairs, touching_window
from .geometry import CoreSet, NormDescriptor, Window, as_xy, c_K_of
from .taper import make_cutoff, smooth_step

INF = math.inf


class NumericError(RuntimeError):
    pass


class DecayViolation(NumericError):
    pass


class MollificationError(NumericError):
    pass


class InvalidPotential(ValueError):
    pass


# ---- potentials -------------------------------------------------------------

class PairPotential:
    """Symmetric pair potential U(x1 - x2) with values in R ∪ {+inf}."""

    variant = "abstract"
    core: CoreSet

    def hard_core_mask(self, v) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, v) -> np.ndarray:
        raise NotImplementedError

    @property
    def interaction_range(self) -> float:
        """Max-norm radius beyond which U vanishes."""
        raise NotImplementedError

    def kernel_spec(self):
        """Parameters for the compiled sampler, or None when only callables exist."""
        return None

    def u_part(self, v) -> np.ndarray:
        return np.zeros(np.shape(as_xy(v))[:-1])

    @property
    def hard_core_area(self) -> float:
        return 0.0


class PureHardCore(PairPotential):
    variant = "hardcore"

    def __init__(self, core: CoreSet):
        self.core = core

    def hard_core_mask(self, v):
        return self.core.contains(as_xy(v), enlarged=False)

    def __call__(self, v):
        return np.where(self.hard_core_mask(v), INF, 0.0)

    @property
    def interaction_range(self) -> float:
        return c_K_of(CoreSet(self.core.hcNorm, self.core.r0, 0.0))

    @property
    def hard_core_area(self) -> float:
        return self.core.area

    def kernel_spec(self):
        return ("hardcore", np.concatenate([self.core.hcNorm.packed(), [self.core.r0, 0, 0, 0, 0]]))


    def __repr__(self):
        return f"PureHardCore({self.core.hcNorm.kind}, r0={self.core.r0}, eps={self.core.epsilon})"


class IdealGas(PairPotential):
    """U ≡ 0; the core set only serves the deformation cutoff."""

    variant = "ideal"

    def __init__(self, core: CoreSet | None = None):
        self.core = core or CoreSet(NormDescriptor("euclidean"), 1.0, 0.1)

    def hard_core_mask(self, v):
        return np.zeros(np.shape(as_xy(v))[:-1], dtype=bool)

    def __call__(self, v):
        return np.zeros(np.shape(as_xy(v))[:-1])

    @property
    def interaction_range(self) -> float:
        return 0.0

    def kernel_spec(self):
        return ("ideal", np.zeros(9))

    def __repr__(self):
        return "IdealGas()"


@dataclass
class RadialProfile:
    """Euclidean-radial description of a decomposed potential for fast quadrature."""

    ubar: object
    u: object
    psi: object
    breaks: tuple = ()
    params: np.ndarray | None = None


class Decomposed(PairPotential):
    """U = Ubar - u off the core K, U = +inf on the hard core, U = Ubar on K minus the hard core."""

    variant = "decomposed"

    def __init__(self, core: CoreSet, ubar, u, psi, rangeCutoff: float,
                 hardcore: CoreSet | None = None, radial: RadialProfile | None = None,
                 name: str = "decomposed", nonnegative: bool | None = None):
        if hardcore is not None and hardcore.hcNorm == core.hcNorm and hardcore.r0 > core.r0:
            raise InvalidPotential("hard core must lie inside the core K")
        if not rangeCutoff > 0:
            raise InvalidPotential("rangeCutoff must be positive")
        self.core = core
        self.hardcore = hardcore
        self._ubar, self._u, self._psi = ubar, u, psi
        self.rangeCutoff = float(rangeCutoff)
        self.radial = radial
        self.name = name
        self.nonnegative = nonnegative

    def hard_core_mask(self, v):
        v = as_xy(v)
        if self.hardcore is None:
            return np.zeros(v.shape[:-1], dtype=bool)
        return self.hardcore.contains(v, enlarged=False)

    def in_K(self, v):
        return self.core.contains(as_xy(v), enlarged=False)

    def ubar(self, v):
        return np.asarray(self._ubar(as_xy(v)), dtype=float)

    def u_part(self, v):
        v = as_xy(v)
        return np.where(self.in_K(v), 0.0, np.asarray(self._u(v), dtype=float))

    def psi(self, v):
        return np.asarray(self._psi(as_xy(v)), dtype=float)

    def __call__(self, v):
        v = as_xy(v)
        with np.errstate(invalid="ignore"):
            val = self.ubar(v) - self.u_part(v)
        return np.where(self.hard_core_mask(v), INF, val)

    @property
    def interaction_range(self) -> float:
        return self.rangeCutoff

    @property
    def hard_core_area(self) -> float:
        return 0.0 if self.hardcore is None else self.hardcore.area

    def kernel_spec(self):
        if self.radial is None or self.radial.params is None:
            return None
        return ("shoulder", self.radial.params)

    def __repr__(self):
        return f"Decomposed({self.name}, K radius {self.core.r0}, range {self.rangeCutoff})"


def _bump(r, rc):
    rho2 = np.clip((np.asarray(r, dtype=float) / rc) ** 2, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        val = np.exp(1.0 - 1.0 / (1.0 - rho2))
    return np.where(rho2 < 1.0, val, 0.0)


def _radial_curvature_bound(f, rmax: float, samples: int = 200001) -> float:
    """max over r of the positive parts of f'' and f'/r (bounds both axis second derivatives)."""
    r = np.linspace(1e-6, rmax, samples)
    h = r[1] - r[0]
    fr = f(r)
    d1 = np.gradient(fr, h)
    d2 = np.gradient(d1, h)
    return float(max(0.0, np.max(d2), np.max(d1 / r)))


def shoulder_potential(r0: float = 1.0, eps: float = 0.1, hardcore_radius: float | None = 1.0,
                       amplitude: float = 0.3, bump_radius: float = 2.5,
                       shoulder: float = 0.15, shoulder_outer: float = 1.3) -> Decomposed:
    """Euclidean radial potential: hard core, smooth bump Ubar, and a constant step u on an annulus."""
    if hardcore_radius is not None and hardcore_radius > r0:
        raise InvalidPotential("hardcore_radius must not exceed r0")
    if shoulder < 0:
        raise InvalidPotential("the step height must be nonnegative")
    if shoulder_outer < r0:
        raise InvalidPotential("the step must lie outside the core K")
    A, rc = float(amplitude), float(bump_radius)
    ubar_r = lambda r: A * _bump(r, rc)
    u_r = lambda r: np.where((np.asarray(r) > r0) & (np.asarray(r) < shoulder_outer), shoulder, 0.0)
    c_psi = 1.05 * _radial_curvature_bound(ubar_r, rc) if A > 0 else 0.0
    psi_r = lambda r: np.where(np.asarray(r) <= rc + 1.0, c_psi, 0.0)
    norm = lambda v: np.hypot(v[..., 0], v[..., 1])
    core = CoreSet(NormDescriptor("euclidean"), r0, eps)
    hc = CoreSet(NormDescriptor("euclidean"), hardcore_radius, 0.0) if hardcore_radius else None
    rng = max(rc + 1.0, shoulder_outer) if A > 0 else shoulder_outer
    r_grid = np.linspace(r0 + 1e-9, shoulder_outer, 2001)
    nonneg = bool(np.all(ubar_r(r_grid) - shoulder >= 0) and A >= 0)
    params = np.array([hardcore_radius or 0.0, r0, A, rc, shoulder, shoulder_outer, 0, 0, 0])
    radial = RadialProfile(ubar_r, u_r, psi_r, breaks=(r0, shoulder_outer, rc), params=params)
    return Decomposed(core, lambda v: ubar_r(norm(v)), lambda v: u_r(norm(v)),
                      lambda v: psi_r(norm(v)), rng, hardcore=hc, radial=radial,
                      name="shoulder", nonnegative=nonneg)


def hard_core(norm: str = "euclidean", r0: float = 1.0, eps: float = 0.1, p: float = 2.0,
              scales=(1.0, 1.0)) -> PureHardCore:
    return PureHardCore(CoreSet(NormDescriptor(norm, p, tuple(scales)), r0, eps))


def potential_from_spec(spec: dict) -> PairPotential:
    kind = spec.get("kind")
    if kind == "hardcore":
        return hard_core(spec.get("norm", "euclidean"), spec.get("r0", 1.0), spec.get("eps", 0.1),
                         spec.get("p", 2.0), spec.get("scales", (1.0, 1.0)))
    if kind == "shoulder":
        keys = ("r0", "eps", "hardcoreRadius", "amplitude", "bumpRadius", "shoulder", "shoulderOuter")
        args = dict(r0=1.0, eps=0.1, hardcore_radius=1.0, amplitude=0.3, bump_radius=2.5,
                    shoulder=0.15, shoulder_outer=1.3)
        names = ("r0", "eps", "hardcore_radius", "amplitude", "bump_radius", "shoulder", "shoulder_outer")
        for k, name in zip(keys, names):
            if k in spec:
                args[name] = spec[k]
        return shoulder_potential(**args)
    if kind == "ideal":
        return IdealGas(CoreSet(NormDescriptor("euclidean"), spec.get("r0", 1.0), spec.get("eps", 0.1)))
    raise InvalidPotential(f"unknown potential kind {kind!r}")


# ---- energies ---------------------------------------------------------------

def potential_eval(U: PairPotential, x) -> float:
    return float(U(as_xy(x)))


def _pair_energy(U: PairPotential, pts: np.ndarray, pairs: np.ndarray) -> float:
    if len(pairs) == 0:
        return 0.0
    vals = U(pts[pairs[:, 0]] - pts[pairs[:, 1]])
    if np.any(np.isinf(vals)):
        return INF
    return float(np.sum(vals))


def hamiltonian(U: PairPotential, X: Configuration, window: Window) -> float:
    Xw = X if X.simWindow == window else Configuration(X.points, window, check=False)
    pairs = candidate_pairs(Xw.points, U.interaction_range)
    return _pair_energy(U, Xw.points, pairs[touching_window(Xw, pairs)])


def check_no_core_overlap(U: PairPotential, X: Configuration) -> bool:
    pairs = candidate_pairs(X.points, U.interaction_range)
    if len(pairs) == 0:
        return True
    diff = X.points[pairs[:, 0]] - X.points[pairs[:, 1]]
    return not bool(np.any(U.hard_core_mask(diff)))


def interaction_W(U: PairPotential, X: Configuration, Xp: Configuration) -> float:
    a, b = X.points, Xp.points
    if len(a) == 0 or len(b) == 0:
        return 0.0
    tree = cKDTree(b)
    total = 0.0
    for i, nbrs in enumerate(tree.query_ball_point(a, U.interaction_range, p=np.inf)):
        if not nbrs:
            continue
        vals = U(a[i] - b[nbrs])
        if np.any(np.isinf(vals)):
            return INF
        total += float(np.sum(vals))
    return total


# ---- quadrature ---------------------------------------------------------------

_GL = {k: roots_legendre(k) for k in (8, 16)}


def adaptive_gl_2d(f, box, rtol: float = 1e-8, atol: float = 1e-14, max_cells: int = 400000) -> float:
    """Adaptive tensor Gauss-Legendre quadrature on dyadically refined rectangles.

    f maps an (N, 2) array to N values; box = (a, b, c, d) for [a, b] x [c, d].
    The error budget is global, so integrands with jumps along curves still converge:
    cells carrying the largest share of the estimated error are split first.
    """
    def rule(cells, k):
        x, w = _GL[k]
        a, b, c, d = cells.T
        hx, hy = (b - a) / 2, (d - c) / 2
        px = (a + b)[:, None] / 2 + hx[:, None] * x[None, :]
        py = (c + d)[:, None] / 2 + hy[:, None] * x[None, :]
        pts = np.stack(np.broadcast_arrays(px[:, :, None], py[:, None, :]), axis=-1)
        vals = np.asarray(f(pts.reshape(-1, 2)), dtype=float).reshape(len(cells), k, k)
        return np.einsum("nij,i,j->n", vals, w, w) * hx * hy

    def evaluate(cells):
        fine = rule(cells, 16)
        return fine, np.abs(fine - rule(cells, 8))

    cells = np.array([box], dtype=float)
    fine, err = evaluate(cells)
    used = 1
    while True:
        total = float(np.sum(fine))
        tol = max(rtol * abs(total), atol)
        if float(np.sum(err)) <= tol:
            return total
        order = np.argsort(err)[::-1]
        share = np.cumsum(err[order])
        # split the fewest cells that hold half of the excess error
        k = int(np.searchsorted(share, 0.5 * (share[-1] - tol) + 1e-300)) + 1
        pick = np.zeros(len(cells), dtype=bool)
        pick[order[:k]] = True
        if used + 4 * k > max_cells:
            raise NumericError("2-D quadrature did not reach the requested tolerance")
        a, b, c, d = cells[pick].T
        mx, my = (a + b) / 2, (c + d) / 2
        kids = np.concatenate([np.stack(q, axis=1) for q in
                               ((a, mx, c, my), (mx, b, c, my), (a, mx, my, d), (mx, b, my, d))])
        kf, ke = evaluate(kids)
        used += len(kids)
        cells = np.concatenate([cells[~pick], kids])
        fine = np.concatenate([fine[~pick], kf])
        err = np.concatenate([err[~pick], ke])


def integrate_plane(f, L: float, rtol: float = 1e-8, ring_breaks=(1.0,)) -> float:
    """Integral of f over the square Λ_L using maximum-norm polar coordinates.

    Each side of the unit square is integrated over (s, v) with Jacobian s, which keeps
    functions of |x| smooth across the diagonals.
    """
    sides = (lambda s, v: (s, s * v), lambda s, v: (-s, s * v),
             lambda s, v: (s * v, s), lambda s, v: (s * v, -s))
    edges = sorted({0.0, L, *[b for b in ring_breaks if 0 < b < L]})
    total = 0.0
    for side in sides:
        def g(sv, side=side):
            s, v = sv[:, 0], sv[:, 1]
            x1, x2 = side(s, v)
            return f(np.stack([x1, x2], axis=-1)) * s
        for lo, hi in zip(edges[:-1], edges[1:]):
            total += adaptive_gl_2d(g, (lo, hi, -1.0, 1.0), rtol=rtol)
    return total


def _radial_integral(fr, lo: float, hi: float, breaks=()) -> float:
    pts = [b for b in breaks if lo < b < hi]
    val, err = integrate.quad(lambda r: fr(r) * 2 * math.pi * r, lo, hi, points=pts or None,
                              epsabs=1e-13, epsrel=1e-10, limit=400)
    if not np.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
        raise NumericError("radial quadrature did not converge")
    return val


# ---- constants ------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConstants:
    z: float
    xi: float
    cK: float
    cF: float
    cXi: float
    cPsi: float
    cU: float
    epsilon: float
    cfSafety: float = 1.05

    @property
    def valid(self) -> bool:
        return self.cXi * self.z * self.xi < 1.0


def annulus_area(U: PairPotential, epsilon: float) -> float:
    core = CoreSet(U.core.hcNorm, U.core.r0, epsilon)
    return core.enlarged_area - U.hard_core_area


def _u_tilde_integral(U: PairPotential, weight: str = "one") -> float:
    if not isinstance(U, Decomposed):
        return 0.0
    if U.radial is not None and U.core.hcNorm.kind == "euclidean":
        r0 = U.core.r0
        if weight == "one":
            fr = lambda r: -np.expm1(-U.radial.u(r))
            return _radial_integral(fr, r0, U.rangeCutoff, U.radial.breaks)
        # |x|^2 in the maximum norm: average over angles of max(|cos|,|sin|)^2 is 1/2 + 1/pi
        ang = 0.5 + 1.0 / math.pi
        fr = lambda r: -np.expm1(-U.radial.u(r)) * r * r * ang
        return _radial_integral(fr, r0, U.rangeCutoff, U.radial.breaks)

    def f(v):
        base = -np.expm1(-U.u_part(v))
        if weight == "one":
            return base
        return base * np.max(np.abs(v), axis=-1) ** 2

    return integrate_plane(f, U.rangeCutoff, ring_breaks=(U.core.c_K,))


def c_xi(U: PairPotential, consts: ModelConstants):
    val = annulus_area(U, consts.epsilon) + _u_tilde_integral(U, "one")
    zxi = consts.z * consts.xi
    return val, bool(val * zxi < 1.0)


def c_u(U: PairPotential) -> float:
    return _u_tilde_integral(U, "square")


def decay_check(psi, rangeCutoff: float, samples: int = 401, rtol: float = 1e-5):
    """Return (sup ψ, c_ψ) with c_ψ = sup ψ ∨ ∫ψ(x)(|x|^2 ∨ 1)dx (maximum norm)."""
    L = float(rangeCutoff)
    axis = np.linspace(-2 * L, 2 * L, samples)
    a, b = np.meshgrid(axis, axis, indexing="ij")
    vals = np.asarray(psi(np.stack([a, b], axis=-1).reshape(-1, 2)), dtype=float)
    if np.any(vals < 0):
        raise InvalidPotential("decay function must be nonnegative")
    sup = float(np.max(vals)) if vals.size else 0.0
    if sup == 0.0:
        return 0.0, 0.0
    weighted = lambda v: np.asarray(psi(v), dtype=float) * np.maximum(np.max(np.abs(v), axis=-1) ** 2, 1.0)
    shells = [integrate_plane(weighted, L * 2**k, rtol=rtol) for k in range(3)]
    s1, s2 = shells[1] - shells[0], shells[2] - shells[1]
    total = shells[2]
    if s2 > 10 * rtol * max(total, 1.0):
        ratio = s2 / s1 if s1 > 0 else 1.0
        if ratio >= 0.95:
            raise DecayViolation("ψ(x)|x|^2 does not decay fast enough to be integrable")
        total += s2 * ratio / (1.0 - ratio)
    return sup, max(sup, total)


def model_constants(U: PairPotential, z: float, xi: float, epsilon: float | None = None) -> ModelConstants:
    eps = U.core.epsilon if epsilon is None else epsilon
    core = CoreSet(U.core.hcNorm, U.core.r0, eps)
    cK = c_K_of(core)
    cut = make_cutoff(core) if eps > 0 else None
    cF = cut.cF if cut else 0.0
    stub = ModelConstants(z, xi, cK, cF, 0.0, 0.0, 0.0, eps)
    cx, _ = c_xi(U, stub)
    if isinstance(U, Decomposed):
        if U.radial is not None:
            _, cpsi = _radial_decay(U)
        else:
            _, cpsi = decay_check(U.psi, U.rangeCutoff)
        cu = c_u(U)
    else:
        cpsi, cu = 0.0, 0.0
    return ModelConstants(z, xi, cK, cF, cx, cpsi, cu, eps)


def _angular_weight(r: float) -> float:
    """Angular mean of max(|x|^2, 1) on the Euclidean circle of radius r (|x| = maximum norm)."""
    if r <= 1.0:
        return 1.0
    th0 = min(math.acos(1.0 / r), math.pi / 4) if r < math.sqrt(2) else math.pi / 4
    part = r * r * (th0 / 2 + math.sin(2 * th0) / 4)
    return (part + (math.pi / 4 - th0)) * 4 / math.pi


def _radial_decay(U: Decomposed):
    rad = U.radial
    sup = float(np.max(rad.psi(np.linspace(0, U.rangeCutoff, 10001))))
    fr = lambda r: float(rad.psi(r)) * _angular_weight(r)
    total = _radial_integral(fr, 0.0, U.rangeCutoff + 1.0,
                             tuple(rad.breaks) + (1.0, math.sqrt(2), U.rangeCutoff))
    return sup, max(sup, total)


def range_bound_hardcore(n_prime: float, consts: ModelConstants) -> float:
    a = consts.cXi * consts.z * consts.xi
    if a >= 1:
        return INF
    return n_prime + (2 * n_prime) ** 2 * consts.z * consts.xi * consts.cK * a / (1 - a) ** 2


def range_bound_general(n_prime: float, consts: ModelConstants) -> float:
    a = consts.cXi * consts.z * consts.xi
    if a >= 1:
        return INF
    c_g = (1 + consts.cK**2) * consts.cXi + consts.cU
    return n_prime + (2 * n_prime * consts.z * consts.xi) ** 2 * c_g * (1 + a) / (1 - a) ** 3


# ---- smoothing construction -----------------------------------------------------

@dataclass
class Mollified:
    potential: Decomposed
    delta: float
    offset: float
    offsetEnlarged: bool
    maxDeviation: float
    details: dict = field(default_factory=dict)


def _switch(x, R):
    """Smooth symmetric switch: 0 on Λ_R, 1 off Λ_{R+1}."""
    s1, _ = smooth_step(np.abs(x[..., 0]) - R)
    s2, _ = smooth_step(np.abs(x[..., 1]) - R)
    return 1.0 - (1.0 - s1) * (1.0 - s2)


def mollify_build(Uraw, core: CoreSet, delta: float, R: float, z: float = 1.0, xi: float = 1.0,
                  grid_step: float | None = None, strict: bool = True, psi_outer=None,
                  max_halvings: int = 3, range_cutoff: float | None = None) -> Mollified:
    """Smooth decomposition of a potential that is continuous off the hard core `core`.

    Uraw maps (N, 2) difference vectors to values (any value on the hard core is ignored).
    K is the norm ball containing the ε-enlargement of the hard core.
    """
    eps = core.epsilon
    if not (delta > 0 and eps > 0):
        raise MollificationError("need delta > 0 and a positive core enlargement")
    grow = eps / core.hcNorm.min_on_unit_circle() if core.hcNorm.kind != "euclidean" else eps
    K = CoreSet(core.hcNorm, core.r0 + grow, eps)
    if K.c_K > R:
        raise MollificationError("the core K must lie inside Λ_R")
    c = 1.0 / (z * xi) - (K.area - core.area)
    if c <= 0:
        raise MollificationError("activity too large for the chosen enlargement")
    C_area = 4 * (R + 1) ** 2 - K.area
    c_prime = c / (4 * C_area)
    delta = min(float(delta), eps / 2)

    for _ in range(max_halvings + 1):
        h = grid_step or delta / 6
        half = R + 1 + delta + 2 * h
        axis = np.arange(-half, half + h / 2, h)
        if len(axis) > 4096:
            raise MollificationError("grid too fine; increase delta or grid_step")
        a, b = np.meshgrid(axis, axis, indexing="ij")
        pts = np.stack([a, b], axis=-1)
        raw = np.asarray(Uraw(pts.reshape(-1, 2)), dtype=float).reshape(a.shape)
        raw = np.where(core.contains(pts) | ~np.isfinite(raw), 0.0, raw)
        k = int(math.ceil(delta / h))
        ka = np.arange(-k, k + 1) * h
        ba, bb = np.meshgrid(ka, ka, indexing="ij")
        rho2 = (ba**2 + bb**2) / delta**2
        with np.errstate(divide="ignore", over="ignore"):
            kern = np.where(rho2 < 1, np.exp(-1.0 / (1.0 - np.minimum(rho2, 1 - 1e-300))), 0.0)
        kern /= kern.sum()
        smooth = fftconvolve(raw, kern, mode="same")
        in_C = (np.max(np.abs(pts), axis=-1) <= R + 1) & ~K.contains(pts)
        dev = np.abs(smooth - raw)[in_C]
        max_dev = float(dev.max()) if dev.size else 0.0
        if max_dev < c_prime:
            break
        delta /= 2
    else:
        if strict:
            raise MollificationError(f"|U2 - U| = {max_dev:.3g} not below c' = {c_prime:.3g} before delta underflow")

    spline = RectBivariateSpline(axis, axis, smooth, kx=3, ky=3)
    offset = c_prime
    deficit = float(np.max((raw - smooth)[in_C])) if in_C.any() else 0.0
    enlarged = max_dev >= c_prime
    if enlarged:
        offset = max(c_prime, deficit + c_prime)

    def U2(v):
        v = as_xy(v)
        flat = v.reshape(-1, 2)
        inside = np.max(np.abs(flat), axis=1) <= half - 2 * h
        out = np.zeros(len(flat))
        if inside.any():
            out[inside] = spline.ev(flat[inside, 0], flat[inside, 1])
        return out.reshape(v.shape[:-1])

    def raw_safe(v):
        v = as_xy(v)
        vals = np.asarray(Uraw(v.reshape(-1, 2)), dtype=float).reshape(v.shape[:-1])
        return np.where(core.contains(v), 0.0, vals)

    def ubar(v):
        v = as_xy(v)
        g = _switch(v, R)
        mixed = (1 - g) * (U2(v) + offset) + g * raw_safe(v)
        return np.where(K.contains(v), raw_safe(v), mixed)

    def u(v):
        v = as_xy(v)
        return np.where(K.contains(v), 0.0, ubar(v) - raw_safe(v))

    # curvature bound of Ubar on the smoothing region, by second differences on the grid
    sel = (np.max(np.abs(pts), axis=-1) <= R + 1.5) & ~K.contains(pts)
    ub = ubar(pts)
    d11 = (np.roll(ub, -1, 0) - 2 * ub + np.roll(ub, 1, 0)) / h**2
    d22 = (np.roll(ub, -1, 1) - 2 * ub + np.roll(ub, 1, 1)) / h**2
    ok = sel & np.roll(sel, 1, 0) & np.roll(sel, -1, 0) & np.roll(sel, 1, 1) & np.roll(sel, -1, 1)
    c_curv = 1.05 * float(max(0.0, np.max(np.where(ok, np.maximum(d11, d22), 0.0))))
    reach = R + 2.0

    def psi(v):
        v = as_xy(v)
        base = np.where(np.max(np.abs(v), axis=-1) <= reach, c_curv, 0.0)
        if psi_outer is not None:
            base = np.maximum(base, np.asarray(psi_outer(v), dtype=float))
        return base

    pot = Decomposed(K, ubar, u, psi, rangeCutoff=range_cutoff or reach, hardcore=core,
                     name="mollified")
    u_min = float(np.min(u(pts)))
    return Mollified(pot, delta, offset, enlarged, max_dev,
                     {"cPrime": c_prime, "uMinOnGrid": u_min, "gridStep": h, "curvature": c_curv})
