import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbsdeform.configuration import Configuration, temperedness
from gibbsdeform.geometry import CoreSet, NormDescriptor, Window
from gibbsdeform.potentials import Decomposed, IdealGas, InvalidPotential, check_no_core_overlap, hard_core, \
    shoulder_potential
from gibbsdeform.sampler import (EventSpec, InsufficientData, InvalidSamplerConfig, Rect, SamplerConfig,
                                 batch_means, birth_acceptance, change_of_var_test, death_acceptance,
                                 estimate_intensity, event_prob, lattice_ring_boundary, mw_test, run_chain,
                                 run_chains, run_counts, sample_bonds, sample_poisson)
from gibbsdeform.taper import TaperParams

HC = hard_core()
SH = shoulder_potential()


def frames_equal(a, b):
    return len(a) == len(b) and all(np.array_equal(x.points, y.points) for x, y in zip(a, b))


def test_reproducible_and_seed_sensitive():
    cfg = SamplerConfig(HC, 0.5, 4.0, sweeps=30, burnIn=5, seed=11)
    a, b = run_chain(cfg), run_chain(cfg)
    assert frames_equal(a, b)
    c = run_chain(SamplerConfig(HC, 0.5, 4.0, sweeps=30, burnIn=5, seed=12))
    assert not frames_equal(a, c)
    counts = run_counts(cfg)
    assert counts.tolist() == [len(f) for f in a]


def test_independent_chains_differ():
    cfg = SamplerConfig(HC, 0.5, 3.0, sweeps=10, burnIn=2, seed=5)
    chains = run_chains(cfg, 3)
    assert len(chains) == 3
    assert not frames_equal(chains[0], chains[1])
    assert all(frames_equal(x, y) for x, y in zip(chains, run_chains(cfg, 3)))


def test_zero_sweeps_emit_nothing():
    assert run_chain(SamplerConfig(HC, 0.5, 3.0, sweeps=0)) == []


def test_config_validation():
    with pytest.raises(InvalidSamplerConfig):
        SamplerConfig(HC, 0.0, 3.0)
    with pytest.raises(InvalidSamplerConfig):
        SamplerConfig(HC, 0.5, 3.0, proposalMix=(0.5, 0.5, 0.5))
    with pytest.raises(InvalidSamplerConfig):
        SamplerConfig(HC, 0.5, 3.0, thinning=0)
    with pytest.raises(InvalidSamplerConfig):
        SamplerConfig(HC, 0.5, 3.0, boundary=Configuration([[0.0, 0.0]], Window(3)))
    assert SamplerConfig(HC, 0.5, 3.0).moveScale == 1.0
    assert SamplerConfig(hard_core(r0=0.4), 0.5, 3.0).moveScale == 0.4
    assert SamplerConfig(SH, 0.5, 3.0).sweepLength == 18


@pytest.mark.parametrize("z", [0.05, 0.5, 3.0])
def test_birth_death_ratio_is_exact(z):
    cfg = SamplerConfig(SH, z, 3.0)
    X = np.array([[0.0, 0.0]])
    x = np.array([1.2, 0.1])
    dH = float(SH(x - X[0]))
    ratio = birth_acceptance(cfg, X, x) / death_acceptance(cfg, np.vstack([X, x]), 1)
    assert ratio == pytest.approx(z * 36.0 / 2 * math.exp(-dH), rel=1e-12)
    assert birth_acceptance(cfg, X, [0.5, 0.0]) == 0.0


def test_birth_ratio_sees_the_boundary():
    ring = lattice_ring_boundary(3.0, HC.core)
    cfg = SamplerConfig(SH, 0.5, 3.0, boundary=ring)
    x = np.array([2.95, 0.0])
    nearest = ring.points[np.argmin(np.hypot(*(ring.points - x).T))]
    dH = float(np.sum(SH(x - ring.points)))
    assert dH != 0.0 and np.isfinite(dH)
    assert birth_acceptance(cfg, np.zeros((0, 2)), x) == pytest.approx(min(1.0, 0.5 * 36 * math.exp(-dH)), rel=1e-12)
    assert nearest[0] >= 3.0


def test_lattice_ring():
    ring = lattice_ring_boundary(4.0, HC.core)
    assert not np.any(Window(4.0).contains(ring.points))
    assert np.all(np.max(np.abs(ring.points), axis=1) < 4.0 + 1.1 + 2.0)
    assert check_no_core_overlap(HC, ring)
    assert math.isfinite(temperedness(ring, 10))


def test_hard_core_frames_never_overlap():
    ring = lattice_ring_boundary(4.0, HC.core)
    for f in run_chain(SamplerConfig(HC, 1.5, 4.0, sweeps=200, burnIn=20, seed=3, boundary=ring)):
        assert check_no_core_overlap(HC, f)


def test_shoulder_chain_respects_the_hard_core():
    for f in run_chain(SamplerConfig(SH, 1.0, 3.0, sweeps=100, burnIn=10, seed=4)):
        assert check_no_core_overlap(SH, f)


def test_ideal_gas_counts_and_voids():
    cfg = SamplerConfig(IdealGas(), 0.5, 2.0, sweeps=40000, burnIn=50, seed=8)
    frames = run_chain(cfg, interior_only=True)
    est = estimate_intensity(frames, Window(2.0))
    assert abs(est.estimate - 0.5) <= 3 * est.stderr
    void = event_prob(frames, EventSpec("emptyRegion", Rect(0, 1, 0, 1)))
    assert abs(void.estimate - math.exp(-0.5)) <= 3 * void.stderr


class _UncompiledIdeal(IdealGas):
    def kernel_spec(self):
        return None


def test_python_fallback_chain():
    cfg = SamplerConfig(_UncompiledIdeal(), 0.5, 1.0, sweeps=8000, burnIn=20, seed=9)
    est = estimate_intensity(run_chain(cfg, interior_only=True), Window(1.0))
    assert abs(est.estimate - 0.5) <= 3 * est.stderr


def test_max_count_cap():
    counts = run_counts(SamplerConfig(IdealGas(), 2.0, 2.0, sweeps=500, burnIn=5, seed=1, maxCount=3))
    assert counts.max() <= 3


def test_poisson_sampler():
    counts = np.array([len(sample_poisson(Window(2.0), 0.5, seed=s)) for s in range(3000)])
    assert abs(counts.mean() - 8.0) <= 3 * math.sqrt(8.0 / len(counts))
    pts = np.vstack([sample_poisson(Window(2.0), 0.5, seed=s).points for s in range(200)])
    assert np.all(Window(2.0).contains(pts))
    assert len(sample_poisson(Window(2.0), 0.0, seed=0)) == 0
    ring = lattice_ring_boundary(2.0, HC.core)
    assert len(sample_poisson(Window(2.0), 0.0, ring, seed=0)) == len(ring)


def test_bond_marginals_and_independence():
    U = shoulder_potential(shoulder=math.log(2.0), amplitude=1.0)
    # 30 far-apart pairs at distance 1.2, each carrying u = log 2
    centers = np.array([[8.0 * i - 20.0, 8.0 * j - 20.0] for i in range(6) for j in range(5)])
    pts = np.vstack([centers, centers + [1.2, 0.0]])
    X = Configuration(pts, Window(30))
    draws = np.zeros((4000, 30))
    for s in range(len(draws)):
        B = sample_bonds(X, U, 30, seed=s)
        for i, j in B.pairs:
            draws[s, i] = 1.0
    assert len(sample_bonds(X, U, 30, seed=0).pairs) <= 30
    freq = draws.mean(axis=0)
    se = math.sqrt(0.25 / len(draws))
    for b in range(3):
        assert abs(freq[b] - 0.5) <= 3 * se
    assert abs(freq.mean() - 0.5) <= 3 * se / math.sqrt(30)
    cov = np.mean(draws[:, 0] * draws[:, 1]) - freq[0] * freq[1]
    cov_se = np.std((draws[:, 0] - freq[0]) * (draws[:, 1] - freq[1]), ddof=1) / math.sqrt(len(draws))
    assert abs(cov) <= 3 * cov_se


def test_bonds_need_nonnegative_u():
    core = CoreSet(NormDescriptor("euclidean"), 1.0, 0.1)
    bad = Decomposed(core, lambda v: np.zeros(v.shape[:-1]), lambda v: -np.ones(v.shape[:-1]),
                     lambda v: np.zeros(v.shape[:-1]), 2.0)
    with pytest.raises(InvalidPotential):
        sample_bonds(Configuration([[0, 0], [1.5, 0]], Window(5)), bad, 5, seed=0)
    assert len(sample_bonds(Configuration([[0, 0], [1.5, 0]], Window(5)), HC, 5, seed=0)) == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), max_size=12), st.integers(0, 3),
       st.floats(-0.5, 0.5), st.sampled_from(["countAtLeast", "countEquals", "emptyRegion"]))
def test_event_complement_and_shift(pts, k, shift, kind):
    ev = EventSpec(kind, Rect(-1, 1, -0.5, 1.5), k)
    P = np.array(pts, dtype=float).reshape(-1, 2)
    assert ev.complement_holds(P) != ev.holds(P)
    moved = P + np.array([shift, 0.0])
    assert ev.shifted(shift).holds(moved) == ev.holds(P)


def test_event_cylinder_check():
    ev = EventSpec("countAtLeast", Rect(-3, 3, -3, 3), 1)
    ev.check_cylinder(4.0)
    with pytest.raises(ValueError):
        ev.check_cylinder(3.5)
    with pytest.raises(ValueError):
        EventSpec("countMost", Rect(0, 1, 0, 1))


def test_batch_means():
    with pytest.raises(InsufficientData):
        batch_means(np.ones(5))
    e = batch_means(np.ones(500))
    assert e.estimate == 1.0 and e.stderr == 0.0 and e.batches == 50
    rng = np.random.default_rng(0)
    v = rng.normal(size=100000)
    e = batch_means(v)
    assert abs(e.estimate) <= 3 * e.stderr
    assert e.stderr == pytest.approx(1 / math.sqrt(100000), rel=0.3)
    est, se = e
    assert est == e.estimate and se == e.stderr


def test_translation_test_on_the_ideal_gas():
    cfg = SamplerConfig(IdealGas(), 0.5, 4.0, sweeps=3000, burnIn=20, seed=2)
    events = [EventSpec("countAtLeast", Rect(-1, 1, -1, 1), 1), EventSpec("emptyRegion", Rect(0, 1, 0, 1))]
    rep = mw_test(cfg, events, 0.25, n_prime=3.0)
    assert rep["pass"] and rep["frames"] == 3000
    for row in rep["events"]:
        assert abs(row["margin"]["estimate"] - row["p"]["estimate"]) <= 3 * max(row["gap"]["stderr"], 1e-12) + 1e-12
        assert row["gapWithin3se"]
    with pytest.raises(ValueError):
        mw_test(cfg, events, 0.75)


def test_change_of_variables_trivial_cases():
    core = CoreSet(NormDescriptor("euclidean"), 1.0, 0.1)
    p0 = TaperParams.build(core, 0.0, 4, 8)
    rep = change_of_var_test(p0, HC, None, 50, seed=1, intensity=0.3)
    assert rep["meanPhi"] == 1.0 and rep["pass"]
    assert all(r["difference"] == 0.0 for r in rep["functionals"].values())
    p = TaperParams.build(core, 0.4, 4, 8)
    rep = change_of_var_test(p, HC, None, 400, seed=2, intensity=0.1)
    assert rep["functionals"]["one"]["plain"] == 1.0
    assert abs(rep["meanPhi"] - 1.0) <= 3 * rep["meanPhiStderr"] + 1e-12
