import numpy as np
import pytest

from bsei.gamma import (
    FiniteRankOperator,
    bounded_operator_pushthrough,
    gamma_norm,
    ito_isomorphism_report,
    kw_integral,
)
from bsei.paths import ProcessEnsemble, TimeGrid, from_function, simulate_brownian


# --------------------------------------------------------------- gamma norm

def test_indicator_identity_against_direct_oracle():
    # brute-force oracle: E ||gamma 1_A (x) e|| reduces to sqrt(measure) |e|
    # via the one-term expansion; replicate with an explicit Gaussian average
    rng = np.random.default_rng(0)
    mask = rng.random(40) < 0.5
    e = np.array([1.0, -2.0, 2.0])
    window = (0.5, 2.5)
    op = FiniteRankOperator.indicator(window, mask, e)
    measure = mask.mean() * (window[1] - window[0])
    expect = np.sqrt(measure) * np.linalg.norm(e)
    est = gamma_norm(op, n_gauss=200_000, seed=1)
    assert est.exact == pytest.approx(expect, abs=1e-12)
    assert est.monte_carlo == pytest.approx(expect, rel=0.02)
    draws = np.random.default_rng(2).standard_normal(100_000)
    oracle = np.sqrt(np.mean(draws**2 * measure * (e @ e)))
    assert est.monte_carlo == pytest.approx(oracle, rel=0.02)


def test_zero_operator():
    op = FiniteRankOperator((0.0, 1.0), np.zeros((1, 8)), np.ones((1, 2)))
    est = gamma_norm(op, 100, seed=0)
    assert est.monte_carlo == 0.0 and est.exact == 0.0
    assert est.dropped_terms == 1


def test_two_orthonormal_terms():
    h = np.zeros((2, 8))
    h[0, :4] = np.sqrt(2.0)   # L2(0,1) norm one on cells of width 1/8
    h[1, 4:] = np.sqrt(2.0)
    e = np.array([[3.0, 0.0], [0.0, 4.0]])
    est = gamma_norm(FiniteRankOperator((0.0, 1.0), h, e), 50_000, seed=3)
    # E gamma_i gamma_j = delta_ij expands the square to |e1|^2 + |e2|^2
    assert est.exact == pytest.approx(5.0, abs=1e-12)
    assert est.monte_carlo == pytest.approx(5.0, rel=0.03)


def test_mc_converges_to_closed_form():
    rng = np.random.default_rng(4)
    op = FiniteRankOperator((0.0, 1.0), rng.normal(size=(3, 16)),
                            rng.normal(size=(3, 2)))
    est = gamma_norm(op, 400_000, seed=5)
    assert abs(est.monte_carlo - est.exact) <= 3.0 * est.standard_error


def test_dependent_terms_dropped():
    h = np.ones((2, 8))
    h[1] *= -3.0  # colinear with the first
    est = gamma_norm(FiniteRankOperator((0.0, 1.0), h, np.eye(2)), 100, seed=6)
    assert est.dropped_terms == 1
    # operator equals 1 (x) (e1 - 3 e2): norm sqrt(1 + 9)
    assert est.exact == pytest.approx(np.sqrt(10.0), abs=1e-12)


def test_norm_invariant_under_orthogonal_remix():
    rng = np.random.default_rng(7)
    h = np.linalg.qr(rng.normal(size=(16, 3)))[0].T * np.sqrt(16.0)  # orthonormal rows
    e = rng.normal(size=(3, 4))
    base = gamma_norm(FiniteRankOperator((0.0, 1.0), h, e), 10, seed=0).exact
    q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    remixed = gamma_norm(FiniteRankOperator((0.0, 1.0), q @ h, q @ e), 10, seed=0).exact
    assert remixed == pytest.approx(base, abs=1e-10)


# ------------------------------------------------------------ window integral

def test_kw_integral_constant_and_ramp():
    grid = TimeGrid(1.0, 200)
    e = np.array([1.0, 2.0])
    const = np.tile(e, (201, 1))
    assert np.allclose(kw_integral(const, grid, 0.0, 1.0), e, atol=1e-12)
    ramp = grid.nodes[:, None] * e
    got = kw_integral(ramp, grid, 0.0, 1.0)
    # left-Riemann oracle of int u du: dt^2 * sum_{k<N} k
    oracle = grid.dt**2 * sum(range(200)) * e
    assert np.allclose(got, oracle, atol=1e-12)
    assert np.allclose(got, 0.5 * e, atol=0.01)


def test_kw_integral_chasles():
    grid = TimeGrid(1.0, 64)
    rng = np.random.default_rng(8)
    f = rng.normal(size=(65, 3))
    whole = kw_integral(f, grid, 0.0, 1.0)
    split = kw_integral(f, grid, 0.0, 0.375) + kw_integral(f, grid, 0.375, 1.0)
    assert np.allclose(whole, split, atol=1e-12)


def test_kw_integral_norm_bound():
    grid = TimeGrid(2.0, 128)
    rng = np.random.default_rng(9)
    f = rng.normal(size=(129, 2))
    l2 = np.sqrt(grid.dt * np.sum(f[:-1] ** 2))
    for (s, t) in [(0.0, 2.0), (0.5, 1.0), (0.0, 0.03125)]:
        val = np.linalg.norm(kw_integral(f, grid, s, t))
        assert val <= np.sqrt(t - s) * l2 * (1.0 + 1e-12)


def test_kw_integral_rejects_reversed_window():
    grid = TimeGrid(1.0, 8)
    f = np.ones((9, 1))
    with pytest.raises(ValueError):
        kw_integral(f, grid, 0.5, 0.25)


def test_pushthrough_identity():
    grid = TimeGrid(1.0, 32)
    rng = np.random.default_rng(10)
    f = grid.nodes[:, None] * np.array([1.0, -1.0])
    for b in (np.eye(2), np.zeros((2, 2)), rng.normal(size=(2, 2))):
        lhs, rhs = bounded_operator_pushthrough(b, f, grid, 0.0, 1.0)
        assert np.abs(lhs - rhs).max() <= 1e-12
    b = rng.normal(size=(2, 2))
    lhs, _ = bounded_operator_pushthrough(b, f, grid, 0.0, 1.0)
    left_riemann_half = grid.dt**2 * sum(range(32))
    assert np.allclose(lhs, b @ np.array([1.0, -1.0]) * left_riemann_half)


# ------------------------------------------------------------- isomorphism

def test_isometry_constant_integrand():
    grid = TimeGrid(1.0, 16)
    m = 100_000
    bm = simulate_brownian(grid, m, seed=11)
    phi = from_function(grid, bm, lambda k, w: np.tile([1.0], (m, 1)), 1)
    rep = ito_isomorphism_report(phi, bm, 2.0)
    assert abs(rep.ratio - 1.0) <= 3.0 * rep.standard_error
    assert rep.denominator == pytest.approx(1.0)


def test_isometry_adapted_brownian_integrand():
    grid = TimeGrid(1.0, 32)
    bm = simulate_brownian(grid, 100_000, seed=12)
    phi = from_function(grid, bm, lambda k, w: w[:, None], 1)
    rep = ito_isomorphism_report(phi, bm, 2.0)
    assert abs(rep.ratio - 1.0) <= 3.0 * rep.standard_error


def test_isomorphism_degenerate_integrand_flagged():
    grid = TimeGrid(1.0, 8)
    bm = simulate_brownian(grid, 100, seed=13)
    phi = ProcessEnsemble(grid, np.zeros((9, 100, 2)))
    rep = ito_isomorphism_report(phi, bm, 2.0)
    assert rep.degenerate and rep.ratio == 1.0


def test_isomorphism_other_exponents_stable_across_seeds():
    grid = TimeGrid(1.0, 16)
    for p in (1.5, 3.0):
        ratios = []
        for seed in (1, 2):
            bm = simulate_brownian(grid, 50_000, seed=seed)
            phi = from_function(grid, bm, lambda k, w: w[:, None], 1)
            ratios.append(ito_isomorphism_report(phi, bm, p).ratio)
        assert np.isfinite(ratios).all()
        assert abs(ratios[0] - ratios[1]) <= 0.05 * ratios[0]
