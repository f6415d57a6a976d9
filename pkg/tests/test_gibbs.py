import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp

from igff.analytics import FieldParams, ParamError, build_speed_profile
from igff.field import EmptyRestriction
from igff.gibbs import (
    MCEstimate,
    ModelCache,
    OverlapFunction,
    PairIndicator,
    bovier_kurkova_check,
    boundary_mass,
    brute_force_gg_terms,
    build_ensemble,
    check_window,
    direct_differentiation_check,
    empirical_two_overlap_cdf,
    free_energy_convergence_study,
    gg_residual,
    gg_terms,
    gibbs_weights,
    high_point_counts,
    inner_overlap_cdf,
    replica_moment,
    sample_replicas,
    ultrametricity_statistic,
    window_function,
)


@pytest.fixture(scope="module")
def cache():
    return ModelCache()


# ---------------------------------------------------------------- MCEstimate

def test_mc_estimate_from_values():
    e = MCEstimate.from_values([1.0, 2.0, 3.0, 4.0], seed=3)
    assert e.mean == 2.5 and e.n == 4
    assert e.se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert e.within(2.5 + 2 * e.se) and not e.within(2.5 + 4 * e.se)


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=30), st.lists(st.floats(-10, 10), min_size=2, max_size=30))
def test_merge_equals_pooled(a, b):
    m = MCEstimate.from_values(a).merge(MCEstimate.from_values(b))
    p = MCEstimate.from_values(a + b)
    assert m.n == p.n
    assert m.mean == pytest.approx(p.mean, abs=1e-9)
    assert m.se == pytest.approx(p.se, abs=1e-7)


# ---------------------------------------------------------------- Gibbs weights

@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.floats(0.01, 5.0))
def test_gibbs_weights_normalized(psi, beta):
    psi = np.asarray(psi)
    w, logZ = gibbs_weights(psi, beta)
    assert w.sum() == pytest.approx(1.0)
    assert logZ == pytest.approx(logsumexp(beta * psi))


def test_restricted_weights_and_boundary_mass():
    psi = np.random.default_rng(0).standard_normal(33 * 33)
    ens = build_ensemble(psi, 32, 1.0, 0.2)
    mask_w = ens.weights_rho
    assert mask_w.sum() == pytest.approx(1.0)
    assert np.count_nonzero(mask_w) == 9
    assert 0 < ens.boundary_mass < 1
    assert math.exp(ens.logZ_rho - ens.logZ) + ens.boundary_mass == pytest.approx(1.0)


def test_empty_restriction():
    psi = np.zeros(17 * 17)
    with pytest.raises(EmptyRestriction):
        build_ensemble(psi, 16, 1.0, 0.2)
    assert boundary_mass(psi, 16, 1.0, 0.2) == 1.0
    with pytest.raises(ParamError):
        build_ensemble(psi, 16, -1.0)


def test_high_point_counts():
    psi = np.array([0.0, 1.0, 2.0, 3.0])
    ln = math.log(4)
    assert high_point_counts(psi, 2, [0.0, 1.0 / ln, 2.5 / ln, 10.0]).tolist() == [4, 3, 1, 0]


def test_sample_replicas_frequencies():
    w = np.array([0.1, 0.6, 0.3])
    d = sample_replicas(w, 200_000, 1)
    f = np.bincount(d, minlength=3) / len(d)
    assert np.abs(f - w).max() < 0.005


# ---------------------------------------------------------------- exact replica moments

def _brute(w, n, node, edges):
    tot = 0.0
    for tup in itertools.product(range(len(w)), repeat=n):
        v = np.prod(w[list(tup)])
        for i, vec in node.items():
            v *= vec[tup[i]]
        for a, b, M in edges:
            v *= M[tup[a], tup[b]]
        tot += v
    return tot


@given(st.integers(0, 10_000))
def test_replica_moment_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    k = 5
    w = rng.dirichlet(np.ones(k))
    M1, M2, M3 = (rng.random((k, k)) for _ in range(3))
    node = {1: rng.random(k)}
    # tree 0-1, 2-1 (reversed orientation), parallel edge 0-1, isolated replica 3
    edges = [(0, 1, M1), (2, 1, M2), (0, 1, M3)]
    assert replica_moment(w, 4, node, edges) == pytest.approx(_brute(w, 4, node, edges), rel=1e-12)


def test_replica_moment_rejects_cycles():
    w = np.ones(3) / 3
    M = np.ones((3, 3))
    with pytest.raises(ValueError, match="cycle"):
        replica_moment(w, 3, edges=[(0, 1, M), (1, 2, M), (2, 0, M)])
    with pytest.raises(ValueError):
        replica_moment(w, 2, edges=[(0, 0, M)])


def test_gg_terms_match_enumeration(model4, worked):
    prof = build_speed_profile(worked)
    Q = model4.q
    Phi = window_function(prof, 0.1, 0.4)(Q)
    psi = model4.sampler().psi(range(2))
    h = OverlapFunction(2, (PairIndicator(0, 1, 0.4, np.inf),))
    for i in range(2):
        w = gibbs_weights(psi[:, i], 0.7)[0]
        a, b = gg_terms(w, Q, Phi, h, 0), brute_force_gg_terms(w, Q, Phi, h, 0)
        for f in ("t_extra", "t_pair", "t_h", "t_within"):
            assert getattr(a, f) == pytest.approx(getattr(b, f), abs=1e-12)


def test_window_function(worked):
    prof = build_speed_profile(worked)
    phi = window_function(prof, 0.1, 0.4)
    a, b = prof.Jbar(0.1), prof.Jbar(0.4)
    q = np.array([-1.0, a, 0.5 * (a + b), b, 2.0])
    assert phi(q).tolist() == pytest.approx([0.0, 0.0, 0.5 * (b - a), b - a, b - a])


def test_check_window(worked):
    prof = build_speed_profile(worked)
    check_window(prof, 1.5, 0.1, 0.4)
    check_window(prof, 1.5, 0.6, 0.9)
    with pytest.raises(ParamError):
        check_window(prof, 1.5, 0.4, 0.6)   # straddles an effective scale
    check_window(prof, 0.5, 0.4, 0.6)       # at high temperature the window may cover all scales
    with pytest.raises(ParamError):
        check_window(prof, 1.5, 0.3, 0.2)


def test_inner_overlap_cdf():
    w = np.array([0.5, 0.5])
    Q = np.array([[1.0, 0.2], [0.2, 1.0]])
    assert inner_overlap_cdf(w, Q, np.array([0.0, 0.2, 0.99, 1.0])).tolist() == pytest.approx([0, 0.5, 0.5, 1])


# ---------------------------------------------------------------- studies (small sizes)

def test_bovier_kurkova_identity_small(worked, cache):
    r = bovier_kurkova_check(worked, 1.5, 8, 1.0, 0.1, 0.3, 1, 0, None, 2000, 5, contexts=cache)
    assert abs(r.diff.mean) <= 3 * r.diff.se


def test_bovier_kurkova_two_replicas(worked, cache):
    h = OverlapFunction(2, (PairIndicator(0, 1, 0.4, 2.0),))
    r = bovier_kurkova_check(worked, 1.5, 8, 1.0, 0.1, 0.3, 2, 0, h, 2000, 6, contexts=cache)
    assert abs(r.diff.mean) <= 3 * r.diff.se


def test_direct_differentiation(worked, cache):
    fd, der = direct_differentiation_check(worked, 1.0, 8, 1.0, 0.1, 0.4, 50, 2, contexts=cache)
    assert fd.mean == pytest.approx(der.mean, abs=1e-6)


def test_gg_residual_s1_is_zero(worked, cache):
    r = gg_residual(worked, 1.5, 8, 1.0, OverlapFunction(1), 0, 0.1, 0.4, 20, 1, contexts=cache)
    assert abs(r.mean) < 1e-12


def test_two_overlap_cdf_shape(worked, cache):
    est = empirical_two_overlap_cdf(worked, 1.5, 8, 0.5, 30, 3, contexts=cache)
    assert np.all(np.diff(est.cdf) >= -1e-12)
    assert est.cdf[-1] == pytest.approx(1.0)
    assert est.cdf_rho is not None and np.all((est.cdf_rho >= 0) & (est.cdf_rho <= 1 + 1e-12))
    sampled = empirical_two_overlap_cdf(worked, 1.5, 8, 0.5, 30, 3, replica_pairs=2000, contexts=cache)
    assert np.abs(sampled.cdf - est.cdf).max() < 0.05


def test_convergence_study_deterministic(worked, cache):
    a = free_energy_convergence_study(worked, 0.5, (4, 8), 10, [1, 2], contexts=cache)
    b = free_energy_convergence_study(worked, 0.5, (4, 8), 10, [1, 2], contexts=cache)
    assert np.array_equal(a.median_dev, b.median_dev)
    assert a.median_dev.shape == (2, 2)
    assert 0.0 <= a.decreasing_fraction <= 1.0


def test_ultrametricity_statistic_range(worked, cache):
    e = ultrametricity_statistic(worked, 1.5, 8, 1.0, 0.0, 5, 200, 1, contexts=cache)
    assert 0 <= e.mean <= 1
    assert ultrametricity_statistic(worked, 1.5, 8, 1.0, 2.0, 5, 10, 1).mean == 0.0
