import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from igff.lattice import (
    GREEN_SCALE,
    GreenOperator,
    HarmonicCache,
    LatticeBox,
    green_matrix,
    green_monte_carlo,
    half_width,
    harmonic_measure,
    harmonic_operator,
    neighbourhood,
    potential_kernel_check,
    walk_generator,
)


@pytest.fixture(scope="module")
def g8():
    return green_matrix(LatticeBox.square(8))


def test_single_interior_vertex():
    g = green_matrix(LatticeBox.square(2))
    assert g.n_interior == 1
    assert abs(g.G[0, 0] - math.pi / 2) <= 1e-12


def test_symmetric_and_generator_identity(g8):
    assert np.abs(g8.G - g8.G.T).max() <= 1e-10
    A = walk_generator(g8.box)
    assert np.abs(A @ g8.G - GREEN_SCALE * np.eye(g8.n_interior)).max() <= 1e-9


def test_cg_matches_dense(g8):
    cg = green_matrix(LatticeBox.square(8), method="cg", tol=1e-12)
    assert np.abs(cg.G - g8.G).max() <= 1e-8


def test_green_positive_and_diagonal_dominant(g8):
    assert np.all(g8.G > 0)
    assert np.all(np.diag(g8.G)[:, None] >= g8.G - 1e-12)


def test_diagonal_grows_like_log():
    # centre diagonal gains about log 2 per doubling of N
    d = [green_matrix(LatticeBox.square(N)).value((N // 2, N // 2), (N // 2, N // 2)) for N in (8, 16, 32)]
    assert d[1] - d[0] == pytest.approx(math.log(2), abs=0.02)
    assert d[2] - d[1] == pytest.approx(math.log(2), abs=0.01)


def test_value_off_interior_is_zero(g8):
    assert g8.value((0, 3), (4, 4)) == 0.0


def test_save_load_roundtrip(g8, tmp_path):
    p = tmp_path / "g.bin"
    g8.save(p)
    raw = p.read_bytes()
    assert raw[:4] == b"GRN1"
    back = GreenOperator.load(p)
    assert back.box == g8.box
    assert np.array_equal(back.G, g8.G)


def test_full_zero_extension(g8):
    F = g8.full()
    assert F.shape == (81, 81)
    b = g8.box
    v = b.local_index(4, 4)
    assert F[v, v] == g8.value((4, 4), (4, 4))
    assert np.all(F[b.local_index(0, 0)] == 0)


def test_monte_carlo_agrees(g8):
    est, se = green_monte_carlo(g8.box, (4, 4), (3, 5), 20000, 11)
    assert abs(est - g8.value((4, 4), (3, 5))) <= 4 * se


def test_monte_carlo_rejects_boundary_start(g8):
    with pytest.raises(ValueError):
        green_monte_carlo(g8.box, (0, 4), (3, 5), 10, 1)


def test_potential_kernel_representation():
    g = green_matrix(LatticeBox.square(32))
    # the asymptotic kernel is accurate away from the source; discrepancy is small, not zero
    assert abs(potential_kernel_check(g, (16, 16), (20, 18))) < 5e-3


# ---------------------------------------------------------------- neighbourhoods and harmonic measure

def test_half_width_rounding():
    assert half_width(16, 0.5) == 2
    assert half_width(32, 0.5) == 2
    assert half_width(32, 0.5, "round") == 3
    assert half_width(64, 0.5) == 4
    assert half_width(16, 0.0) == 8


def test_neighbourhood_extremes():
    assert neighbourhood(8, (3, 3), 0.0) == LatticeBox.square(8)
    assert neighbourhood(8, (3, 3), 1.0) == LatticeBox(3, 3, 3, 3)
    assert neighbourhood(16, (1, 15), 0.5) == LatticeBox(0, 13, 3, 16)


def test_three_by_three_center():
    # 3x3 box around the centre: one step reaches the four edge midpoints
    hm = harmonic_measure(2, (1, 1), 0.0)
    got = {tuple(p): w for p, w in zip(hm.support, hm.weights)}
    assert got == pytest.approx({(0, 1): 0.25, (2, 1): 0.25, (1, 0): 0.25, (1, 2): 0.25})


def test_point_mass_cases():
    hm = harmonic_measure(8, (4, 4), 1.0)
    assert hm.support.tolist() == [[4, 4]] and hm.weights.tolist() == [1.0]
    hm = harmonic_measure(8, (0, 4), 0.3)
    assert hm.support.tolist() == [[0, 4]]


@given(st.integers(0, 16), st.integers(0, 16), st.floats(0.0, 1.0))
def test_harmonic_measure_is_boundary_distribution(x, y, lam):
    hm = harmonic_measure(16, (x, y), lam)
    assert hm.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(hm.weights > 0)
    box = neighbourhood(16, (x, y), lam)
    if box.is_interior(x, y):
        assert np.all(box.on_boundary(hm.support[:, 0], hm.support[:, 1]))


@pytest.mark.parametrize("lam", [0.0, 0.3, 0.5, 0.75, 1.0])
def test_operator_matches_per_vertex(lam):
    N = 12
    cache = HarmonicCache()
    H = harmonic_operator(N, lam, cache).toarray()
    assert np.allclose(H.sum(axis=1), 1.0, atol=1e-12)
    for v in [(0, 0), (3, 7), (6, 6), (11, 1)]:
        hm = harmonic_measure(N, v, lam, cache)
        row = np.zeros((N + 1) ** 2)
        row[hm.support[:, 0] * (N + 1) + hm.support[:, 1]] = hm.weights
        assert np.abs(H[v[0] * (N + 1) + v[1]] - row).max() <= 1e-12


def test_harmonic_extension_reproduces_harmonic_functions():
    # a linear function is harmonic for SRW, so the exit expectation returns it
    N = 16
    H = harmonic_operator(N, 0.5)
    xs, ys = np.divmod(np.arange((N + 1) ** 2), N + 1)
    f = 2.0 * xs - 3.0 * ys + 1.0
    assert np.abs(H @ f - f).max() <= 1e-10
