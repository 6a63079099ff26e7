import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import Q_ref, components_bfs, q_ref, reference_deform, tau_ref
from gibbsdeform.configuration import BondSet, Configuration, cluster_range, b_plus
from gibbsdeform.deform import (InvalidInput, deform, inverse_deform, round_trip_error, sigma_stats,
                                taylor_gap, verify_deform_invariants)
from gibbsdeform.geometry import CoreSet, NormDescriptor, Window
from gibbsdeform.potentials import shoulder_potential
from gibbsdeform.sampler import sample_bonds
from gibbsdeform.taper import TaperParams, tau_n, tau_n_deriv

CORE = CoreSet(NormDescriptor("euclidean"), 1.0, 0.1)
SMALL = TaperParams.build(CORE, 0.4, 2, 5)
P16 = TaperParams.build(CORE, 0.4, 6, 16)


def hard_core_points(rng, count, half, min_dist=1.0):
    pts = []
    for _ in range(50 * count):
        if len(pts) == count:
            break
        c = rng.uniform(-half, half, 2)
        if all(math.hypot(*(c - q)) > min_dist for q in pts):
            pts.append(c)
    return np.array(pts).reshape(-1, 2)


def random_bonds(rng, pts, n, prob=0.5, reach=2.0):
    out = []
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            touching = min(abs(pts[i]).max(), abs(pts[j]).max()) < n
            if touching and math.hypot(*(pts[i] - pts[j])) < reach and rng.random() < prob:
                out.append((i, j))
    return BondSet(np.array(out, dtype=np.int64).reshape(-1, 2))


configs = st.tuples(st.integers(0, 2**32 - 1), st.integers(0, 14), st.booleans())


@settings(max_examples=60, deadline=None)
@given(configs)
def test_matches_literal_recursion(data):
    seed, count, bonded = data
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-7, 7, (count, 2))
    X = Configuration(pts, Window(5), check=False)
    B = random_bonds(rng, pts, 5) if bonded else BondSet()
    out = deform(X, B, SMALL)
    t_ref, piv_ref, val_ref, d_ref = reference_deform(pts, B.pairs, 0.4, 2, 5, 1.0, 0.1, SMALL.cF)
    assert np.allclose(out.tOf, t_ref, atol=1e-10, rtol=0)
    assert out.pivotOrder.tolist() == piv_ref
    assert np.allclose(out.pivotValues, val_ref, atol=1e-10, rtol=0)
    smooth = np.setdiff1d(np.arange(len(piv_ref)), out.flagged)
    assert np.allclose(out.perPivotDeriv[smooth], d_ref[smooth], atol=1e-5, rtol=0)
    assert out.logDensity == pytest.approx(float(np.sum(np.log(np.abs(1 + out.perPivotDeriv)))), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(configs, st.sampled_from(["forward", "backward"]))
def test_round_trip(data, direction):
    seed, count, bonded = data
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-7, 7, (count, 2))
    X = Configuration(pts, Window(5), check=False)
    B = random_bonds(rng, pts, 5) if bonded else BondSet()
    assert round_trip_error(X, B, SMALL, direction) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(configs)
def test_invariants_on_hard_core_configurations(data):
    seed, count, bonded = data
    rng = np.random.default_rng(seed)
    pts = hard_core_points(rng, count, 7.0)
    X = Configuration(pts, Window(5))
    B = random_bonds(rng, pts, 5) if bonded else BondSet()
    rep = verify_deform_invariants(X, B, SMALL, n_prime=1.0)
    assert rep["passed"], rep


def test_empty_bond_set_is_the_hard_core_variant():
    rng = np.random.default_rng(7)
    X = Configuration(hard_core_points(rng, 40, 12.0), Window(16))
    a, b = deform(X, None, P16), deform(X, BondSet(), P16)
    assert np.array_equal(a.tOf, b.tOf) and np.array_equal(a.pivotOrder, b.pivotOrder)
    assert a.logDensity == b.logDensity


def test_empty_and_single_particle():
    E = Configuration.empty(Window(16))
    out = deform(E, None, P16)
    assert len(out.transformed) == 0 and out.logDensity == 0.0
    s = sigma_stats(E, None, P16)
    assert s.total == 0 and s.range == 0 and s.isGood
    out = deform(Configuration([[0.0, 0.0]], Window(16)), None, P16)
    assert out.tOf[0] == 0.4 and out.logDensity == 0.0
    assert out.transformed.points[0].tolist() == [0.4, 0.0]
    out = deform(Configuration([[9.3, 2.0]], Window(16)), None, P16)
    assert out.tOf[0] == pytest.approx(float(tau_n(P16, 9.3)), abs=1e-14)
    assert out.perPivotDeriv[0] == pytest.approx(float(tau_n_deriv(P16, 9.3)), abs=1e-12)
    back = deform(Configuration([[9.3, 2.0]], Window(16)), None, P16, "backward")
    assert back.logDensity == pytest.approx(math.log(1 - float(tau_n_deriv(P16, 9.3))), abs=1e-12)
    # outside the window nothing moves
    out = deform(Configuration([[20.0, 0.0]], Window(16)), None, P16)
    assert out.tOf[0] == 0.0 and len(out.pivotOrder) == 0


def test_branch_tie_is_flagged():
    # two exterior sources mirrored in x1 about the candidate: equal values, opposite slopes
    pts = [[0.0, 15.2], [0.6, 16.05], [-0.6, 16.05]]
    out = deform(Configuration(pts, Window(16)), None, P16)
    assert out.nFlagged == 1
    assert 0 < out.tOf[0] < float(tau_n(P16, 15.2))
    assert out.perPivotDeriv[0] == pytest.approx(0.0, abs=1e-6)
    # a plateau kink inside a single branch is not a tie
    assert deform(Configuration([[6.0, 0.0]], Window(16)), None, P16).nFlagged == 0


def test_invalid_inputs():
    X = Configuration([[0.0, 0.0], [30.0, 0.0], [31.0, 0.0]], Window(16))
    with pytest.raises(InvalidInput):
        deform(X, BondSet([[1, 2]]), P16)
    with pytest.raises(InvalidInput):
        deform(X, None, P16, "sideways")


def test_inverse_recovers_a_dense_configuration():
    rng = np.random.default_rng(3)
    X = Configuration(hard_core_points(rng, 60, 15.0), Window(16))
    out = deform(X, None, P16)
    back = inverse_deform(out.transformed, None, P16)
    assert np.max(np.abs(back.recovered.points - X.points)) < 1e-9
    assert np.allclose(back.tOf, out.tOf, atol=1e-9)


# ---- Σ statistics against a literal double/triple sum -----------------------------------

def sigma_oracle(pts, bonds, p, variant="hardcore", psi=None):
    N = len(pts)
    norms = np.max(np.abs(pts), axis=1)
    a = [tau_ref(p.tau, p.R, p.n, s - p.cK) for s in norms]
    b = [tau_ref(p.tau, p.R, p.n, s) for s in norms]

    def tq(i, j):
        return (a[i] - b[j]) ** 2 if norms[i] <= norms[j] else 0.0

    inside = [bool(np.all((-p.n <= x) & (x < p.n))) for x in pts]
    close = [[i != j and math.hypot(*(pts[i] - pts[j])) <= 1.1 for j in range(N)] for i in range(N)]
    plus = [tuple(e) for e in bonds] + [(i, j) for i in range(N) for j in range(i + 1, N)
                                         if close[i][j] and (inside[i] or inside[j])]
    lab = components_bfs(N, plus)
    per = [sum(tq(i, j) for j in range(N) if lab[j] == lab[i]) for i in range(N)]
    deg = [sum(close[i]) for i in range(N)]
    cf2 = p.cF**2
    s1 = 4 * cf2 * sum(per)
    trip = 2 * cf2 * sum(d * v for d, v in zip(deg, per))
    plat = 2 * p.tau**2 * sum(q_ref(norms[i] - p.R) ** 2 for i in range(N) if inside[i]) / Q_ref(p.n - p.R) ** 2
    if variant == "hardcore":
        return [s1, plat, trip, 0.0, 0.0]
    w = [[float(psi(pts[i] - pts[j])) if i != j else 0.0 for j in range(N)] for i in range(N)]
    s2 = 9 * sum(w[i][j] * tq(i, j) for i in range(N) for j in range(N) if i != j)
    big = [sum(row) for row in w]
    s3 = 6 * sum(tq(i, j) * (big[i] - w[i][j]) for i in range(N) for j in range(N)
                 if i != j and lab[i] == lab[j])
    return [s1, s2, s3, plat, trip]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 16), st.booleans())
def test_sigma_hard_core_brute_force(seed, count, bonded):
    rng = np.random.default_rng(seed)
    pts = hard_core_points(rng, count, 7.0)
    X = Configuration(pts, Window(5))
    B = random_bonds(rng, pts, 5) if bonded else BondSet()
    got = sigma_stats(X, B, SMALL, "hardcore", n_prime=1.0)
    want = sigma_oracle(pts, B.pairs, SMALL)
    assert np.allclose([got.sigma1, got.sigma2, got.sigma3, got.sigma4, got.sigma5], want, rtol=1e-10, atol=1e-14)
    assert got.range == cluster_range(X, b_plus(X, B, 5, CORE), Window(1.0))
    assert got.isGood == (got.range < SMALL.R and got.total < 1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 14))
def test_sigma_general_brute_force(seed, count):
    SH = shoulder_potential()
    rng = np.random.default_rng(seed)
    pts = hard_core_points(rng, count, 7.0)
    X = Configuration(pts, Window(5))
    B = sample_bonds(X, SH, 5, seed=seed)
    got = sigma_stats(X, B, SMALL, "general", SH, n_prime=1.0)
    want = sigma_oracle(pts, B.pairs, SMALL, "general", SH.psi)
    assert np.allclose([got.sigma1, got.sigma2, got.sigma3, got.sigma4, got.sigma5], want, rtol=1e-10, atol=1e-14)
    assert got.threshold == 0.5


def test_sigma_plateau_example():
    pts = np.array([[0.0, 0.0], [1.5, 0.0], [-1.0, 1.2]])
    s = sigma_stats(Configuration(pts, Window(16)), None, P16)
    assert s.sigma1 == 0.0 and s.sigma3 == 0.0
    assert s.sigma2 == pytest.approx(2 * 0.16 * 3 / Q_ref(10.0) ** 2, rel=1e-12)


def test_sigma_two_bonded_particles_on_the_taper():
    # x at |x| = 9 and x' at |x'| = 10.05, K_eps-close; the sum runs over ordered pairs with
    # |x| <= |x''| and includes x'' = x
    pts = np.array([[9.0, 0.0], [10.05, 0.0]])
    s = sigma_stats(Configuration(pts, Window(16)), None, P16)
    a = [tau_ref(0.4, 6, 16, v - 1.1) for v in (9.0, 10.05)]
    b = [tau_ref(0.4, 6, 16, v) for v in (9.0, 10.05)]
    cross = (a[0] - b[1]) ** 2
    diag = (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2
    assert s.sigma1 == pytest.approx(4 * P16.cF**2 * (cross + diag), rel=1e-12)
    assert s.sigma3 == pytest.approx(2 * P16.cF**2 * (cross + diag), rel=1e-12)


def test_taylor_gap_literal():
    SH = shoulder_potential()
    pts = np.array([[9.0, 0.0], [10.6, 0.3], [30.0, 0.0]])
    X = Configuration(pts, Window(16))
    t = np.array([0.2, 0.15, 0.0])
    eta = pts[0] - pts[1]
    th = np.array([t[0] - t[1], 0.0])
    want = float(SH.ubar(eta + th) + SH.ubar(eta - th) - 2 * SH.ubar(eta))
    assert taylor_gap(SH, X, t, 16) == pytest.approx(want, rel=1e-12)
    assert taylor_gap(SH, Configuration(pts[:1], Window(16)), t[:1], 16) == 0.0


def test_good_configuration_translates_the_center_rigidly():
    p = TaperParams.build(CORE, 0.005, 6, 64)
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.3, 2.5]])
    X = Configuration(pts, Window(64))
    s = sigma_stats(X, None, p, n_prime=2.0)
    assert s.isGood
    out = deform(X, None, p)
    assert np.allclose(out.tOf, 0.005, atol=0)
    rep = verify_deform_invariants(X, None, p, n_prime=2.0)
    assert rep["passed"] and rep["innerTranslatedByTau"]
