import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from igff.acceptance import brute_hull
from igff.analytics import (
    CriticalBeta,
    FieldParams,
    ParamError,
    PerturbedProfile,
    build_speed_profile,
    check_noncritical,
    critical_levels,
    entropy,
    entropy_derivative,
    free_energy,
    free_energy_by_maximization,
    free_energy_split,
    gamma_star,
    l_beta,
    limiting_two_overlap,
    perturbed_free_energy,
    perturbed_free_energy_derivative,
    rem_free_energy,
    upper_hull,
    validate_params,
)
from strategies import field_params


# ---------------------------------------------------------------- worked example, hand computed

def test_worked_profile(worked):
    prof = build_speed_profile(worked)
    assert np.allclose(prof.sigma_bar, [2.0, 1.0])
    assert np.allclose(prof.eff_scales, [0.0, 0.5, 1.0])
    assert prof.J1 == pytest.approx(2.5)
    assert np.allclose(prof.atoms, [0.0, 0.8, 1.0], atol=1e-15)
    assert gamma_star(prof) == pytest.approx(1.5, abs=1e-14)
    assert np.allclose(critical_levels(prof), [0.0, 1.25, 1.5], atol=1e-14)


def test_worked_entropy(worked):
    prof = build_speed_profile(worked)
    assert entropy(prof, 0.0) == 1.0
    assert entropy(prof, 1.25) == pytest.approx(0.375, abs=1e-14)
    assert entropy(prof, 1.5) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        entropy(prof, 1.6)


def test_worked_free_energy(worked):
    prof = build_speed_profile(worked)
    assert free_energy(prof, 1.5) == pytest.approx(2.28125, abs=1e-14)
    assert free_energy_split(prof, 1.5) == pytest.approx(2.28125, abs=1e-14)
    arg, val = free_energy_by_maximization(prof, 1.5)
    assert arg == pytest.approx(1.375, abs=1e-14)
    assert val == pytest.approx(2.28125, abs=1e-14)
    assert l_beta(prof, 1.5) == 2


def test_worked_limit_law(worked):
    law = limiting_two_overlap(build_speed_profile(worked), 1.5)
    assert np.allclose(law.atoms, [0.0, 0.8], atol=1e-15)
    assert np.allclose(law.masses, [2 / 3, 1 / 3], atol=1e-15)
    assert law.rpc.r == 1
    assert law.rpc.zetas[0] == pytest.approx(2 / 3, abs=1e-15)
    assert law.rpc.qs[1] == pytest.approx(0.8, abs=1e-15)
    assert law.cdf(-0.1) == 0.0 and law.cdf(0.5) == pytest.approx(2 / 3) and law.cdf(0.8) == pytest.approx(1.0)


def test_high_temperature_single_atom(worked):
    law = limiting_two_overlap(build_speed_profile(worked), 0.5)
    assert np.allclose(law.atoms, [0.0]) and np.allclose(law.masses, [1.0])
    assert law.rpc.r == 0


def test_increasing_sigma_is_concavified():
    prof = build_speed_profile(FieldParams((1.0, 2.0), (0.5, 1.0)))
    assert prof.m == 1
    assert prof.sigma_bar[0] ** 2 == pytest.approx(2.5)
    assert gamma_star(prof) == pytest.approx(math.sqrt(2.5))
    assert prof.Jhat(0.5) == pytest.approx(1.25)
    assert prof.J(0.5) == pytest.approx(0.5)


def test_rem_free_energy_branches():
    assert rem_free_energy(1.0, 1.0) == pytest.approx(1.25)
    assert rem_free_energy(1.0, 2.0) == pytest.approx(2.0)
    assert rem_free_energy(1.0, 3.0) == pytest.approx(3.0)


# ---------------------------------------------------------------- validation

def test_validate_lists_every_problem():
    probs = validate_params([1.0, -1.0, 1.0], [0.5, 0.4, 0.9])
    assert "lambda not strictly increasing" in probs
    assert "sigma entries must be positive" in probs
    assert "last lambda must equal 1" in probs


def test_field_params_rejects():
    with pytest.raises(ParamError, match="lambda not strictly increasing"):
        FieldParams((1.0, 1.0, 1.0), (0.5, 0.4, 1.0))
    with pytest.raises(ParamError):
        FieldParams((1.0,), (0.5, 1.0))


def test_critical_beta_detected(worked):
    prof = build_speed_profile(worked)
    with pytest.raises(CriticalBeta):
        check_noncritical(prof, 1.0)
    with pytest.raises(CriticalBeta):
        limiting_two_overlap(prof, 2.0)
    check_noncritical(prof, 1.5)


# ---------------------------------------------------------------- properties

@given(field_params())
def test_hull_matches_brute_force(p):
    prof = build_speed_profile(p)
    t = np.linspace(0, 1, 41)
    assert np.abs(prof.Jhat(t) - brute_hull(p.grid, prof.J(p.grid), t)).max() <= 1e-12


@given(field_params())
def test_hull_dominates_and_is_concave(p):
    prof = build_speed_profile(p)
    t = np.linspace(0, 1, 101)
    assert np.all(prof.Jhat(t) >= prof.J(t) - 1e-12)
    assert np.all(np.diff(prof.sigma_bar) < 0)
    assert prof.Jhat(1.0) == pytest.approx(prof.J1)
    assert prof.eff_scales[0] == 0.0 and prof.eff_scales[-1] == 1.0


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=12))
def test_upper_hull_endpoints_and_concavity(ys):
    x = np.linspace(0, 1, len(ys))
    y = np.asarray(ys)
    h = upper_hull(x, y)
    assert h[0] == 0 and h[-1] == len(x) - 1
    s = np.diff(y[h]) / np.diff(x[h])
    assert np.all(np.diff(s) < 1e-12)


@given(field_params(), st.floats(0.05, 5.0))
def test_free_energy_forms_agree(p, beta):
    prof = build_speed_profile(p)
    a = free_energy(prof, beta)
    assert free_energy_split(prof, beta) == pytest.approx(a, abs=1e-10)
    assert free_energy_by_maximization(prof, beta)[1] == pytest.approx(a, abs=1e-10)


@given(field_params())
def test_entropy_shape(p):
    prof = build_speed_profile(p)
    levels = critical_levels(prof)
    assert np.all(np.diff(levels) > 0)
    g = np.linspace(0, levels[-1], 50)
    e = np.array([entropy(prof, x) for x in g])
    assert e[0] == 1.0 and abs(e[-1]) < 1e-12
    assert np.all(np.diff(e) <= 1e-12)
    assert np.all(e >= -1e-12)


@given(field_params())
def test_entropy_derivative_matches_difference(p):
    prof = build_speed_profile(p)
    gs = critical_levels(prof)[-1]
    for x in np.linspace(0.05, 0.95, 5) * gs:
        h = 1e-7
        fd = (entropy(prof, x + h) - entropy(prof, x - h)) / (2 * h)
        assert entropy_derivative(prof, x) == pytest.approx(fd, abs=1e-5)


@given(field_params(), st.floats(0.05, 6.0))
def test_limit_law_is_a_distribution(p, beta):
    prof = build_speed_profile(p)
    try:
        law = limiting_two_overlap(prof, beta)
    except CriticalBeta:
        return
    assert law.masses.sum() == pytest.approx(1.0)
    assert np.all(law.masses > 0)
    assert np.all(np.diff(law.atoms) > 0)
    assert law.rpc.r == len(law.atoms) - 1
    assert np.all(np.diff(law.rpc.zetas) > 0)


@given(field_params(), st.floats(0.05, 4.0), st.floats(0.05, 4.0))
def test_free_energy_convex_increasing(p, b1, b2):
    prof = build_speed_profile(p)
    lo, hi = sorted((b1, b2))
    assert free_energy(prof, hi) >= free_energy(prof, lo) - 1e-12
    mid = 0.5 * (lo + hi)
    assert free_energy(prof, mid) <= 0.5 * (free_energy(prof, lo) + free_energy(prof, hi)) + 1e-12


# ---------------------------------------------------------------- perturbation

def test_perturbed_params_splice(worked):
    pp = PerturbedProfile(worked, 0.1, 0.4)
    p = pp.params(0.5)
    assert p.lam == (0.1, 0.4, 0.5, 1.0)
    assert p.sigma == (2.0, 2.5, 2.0, 1.0)
    assert pp.i_star == 1 and pp.j_star == 1 and pp.sigma_star == 2.0
    with pytest.raises(ParamError):
        PerturbedProfile(worked, 0.4, 0.6)


@pytest.mark.parametrize("beta,expected", [(0.5, 0.5**2 * 2.0 * 0.3 / 2), (1.5, 1.5 * 2.0 * 0.3 / 2.0)])
def test_perturbed_derivative_closed_form(worked, beta, expected):
    pp = PerturbedProfile(worked, 0.1, 0.4)
    d = perturbed_free_energy_derivative(pp, beta)
    assert d == pytest.approx(expected, abs=1e-14)
    h = 1e-5
    fd = (perturbed_free_energy(pp, beta, h) - perturbed_free_energy(pp, beta, -h)) / (2 * h)
    assert fd == pytest.approx(d, abs=1e-6)


def test_perturbed_derivative_raises_at_critical(worked):
    with pytest.raises(CriticalBeta):
        perturbed_free_energy_derivative(PerturbedProfile(worked, 0.1, 0.4), 1.0)


@given(field_params(), st.floats(0.1, 4.0), st.data())
def test_perturbed_derivative_matches_fd(p, beta, data):
    i = data.draw(st.integers(1, p.M))
    lo, hi = p.grid[i - 1], p.grid[i]
    a, b = sorted(data.draw(st.lists(st.floats(lo, hi), min_size=2, max_size=2)))
    assume(b - a > 1e-3)
    pp = PerturbedProfile(p, a, b)
    prof = build_speed_profile(p)
    assume(np.min(np.abs(beta - 2 / prof.sigma_bar)) > 1e-2)
    d = perturbed_free_energy_derivative(pp, beta)
    h = 1e-6
    fd = (perturbed_free_energy(pp, beta, h) - perturbed_free_energy(pp, beta, -h)) / (2 * h)
    assert fd == pytest.approx(d, abs=1e-6)
