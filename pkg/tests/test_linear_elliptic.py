import numpy as np
import pytest
import sympy as sp

from conegeo import Field, GeometryDescriptor, make_grid
from conegeo.errors import NonEllipticNode
from conegeo.grid import background_metric
from conegeo.linear_elliptic import (
    assemble,
    harnack_ratio,
    max_principle_check,
    omega_operator,
    solve_dirichlet,
    upper_barrier,
)

R, T = sp.symbols("r t", real=True)


def _manufactured(kind):
    """Metric entries, exact solution and L v* built symbolically."""
    if kind == "torus":
        s = R
        v = sp.sin(sp.pi * T) * (1 + 0.3 * sp.cos(2 * sp.pi * s)) + T
        g11 = 1 + 0.2 * sp.sin(2 * sp.pi * s) ** 2 + 0.1 * T
        g12 = 0.1 * sp.cos(2 * sp.pi * s) * T
        g22 = 1 + 0.1 * sp.cos(2 * sp.pi * s) ** 2
        h11 = sp.Rational(1, 4) * sp.diff(v, s, 2)
    else:
        b = 4 * R**2 / (1 + R**2) ** 2
        v = sp.sin(sp.pi * T) * (1 + b) + T * b
        g11 = 1 + 0.2 * b + 0.1 * T
        g12 = 0.05 * b * T
        g22 = 1 + 0.1 * b
        h11 = sp.Rational(1, 4) * (sp.diff(v, R, 2) + sp.diff(v, R) / R)
    h22 = sp.Rational(1, 4) * sp.diff(v, T, 2)
    h12 = sp.Rational(1, 4) * sp.diff(v, R, T)
    det = g11 * g22 - g12**2
    c = -1 - 0.5 * T
    Lv = (g22 * h11 - 2 * g12 * h12 + g11 * h22) / det + c * v
    f = lambda e: sp.lambdify((R, T), e, "numpy")
    return f(g11), f(g12), f(g22), f(c), f(v), f(sp.simplify(Lv))


def _mms_error(kind, n):
    g11, g12, g22, c, v, Lv = _manufactured(kind)
    geom = GeometryDescriptor.torus() if kind == "torus" else GeometryDescriptor.football(0.5)
    grid = make_grid(geom, n if kind == "torus" else n + 1, n // 2 + 1)
    S, Tt = np.meshgrid(grid.sigma, grid.t, indexing="ij")
    Sr = np.where(S == 0, 1e-30, S) if kind != "torus" else S
    M = np.zeros(grid.shape + (2, 2))
    M[..., 0, 0] = g11(S, Tt)
    M[..., 0, 1] = M[..., 1, 0] = g12(S, Tt)
    M[..., 1, 1] = g22(S, Tt)
    op = assemble(M, np.broadcast_to(c(S, Tt), grid.shape), grid)
    exact = v(S, Tt) * np.ones(grid.shape)
    rhs = Lv(Sr, Tt) * np.ones(grid.shape)
    sol = solve_dirichlet(op, rhs, exact)
    return np.abs(sol.values - exact).max(), grid


@pytest.mark.parametrize("kind", ["torus", "football"])
def test_manufactured_solution_order_two(kind):
    errs = [_mms_error(kind, n)[0] for n in (16, 32, 64)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders >= 1.8) & (orders <= 2.2)), orders


def test_flat_rows_are_standard_stencil():
    g = make_grid(GeometryDescriptor.torus(), 16, 9)
    op = omega_operator(g)
    row = op.matrix[5 * 9 + 4].toarray().ravel()
    hs, ht = g.h_sigma, g.h_t
    assert row[5 * 9 + 4] == pytest.approx(-0.25 * (2 / hs**2 + 2 / ht**2))
    assert row[6 * 9 + 4] == pytest.approx(0.25 / hs**2)
    assert row[5 * 9 + 5] == pytest.approx(0.25 / ht**2)
    assert np.count_nonzero(row) == 5
    assert op.m_matrix_defect() == 0.0


def test_zeroth_order_shifts_diagonal():
    g = make_grid(GeometryDescriptor.torus(), 16, 9)
    a = omega_operator(g).matrix.diagonal().reshape(g.shape)
    b = omega_operator(g, -1.0).matrix.diagonal().reshape(g.shape)
    assert np.allclose((b - a)[:, 1:-1], -1.0)
    assert np.allclose((b - a)[:, [0, -1]], 0.0)


def test_affine_in_t_is_harmonic(football_grid):
    op = omega_operator(football_grid)
    v = 3.0 - 2.0 * np.broadcast_to(football_grid.t, football_grid.shape)
    assert np.abs(op.apply(v)[:, 1:-1]).max() < 1e-9


def test_rejects_bad_metric_and_positive_c(torus_grid):
    M = background_metric(torus_grid)
    M[3, 4, 0, 0] = -1.0
    with pytest.raises(NonEllipticNode) as exc:
        assemble(M, 0.0, torus_grid)
    assert exc.value.node == (3, 4)
    with pytest.raises(ValueError):
        assemble(background_metric(torus_grid), 0.5, torus_grid)


def test_zero_problem_zero_solution(football_grid):
    sol = solve_dirichlet(omega_operator(football_grid, -1.0), 0.0, 0.0)
    assert np.all(sol.values == 0.0)


def test_barrier_closed_form_flat_torus(torus_grid):
    h = upper_barrier(np.zeros(torus_grid.shape), torus_grid)
    t = torus_grid.t
    # 1/4 h_tt = -2 with zero data
    assert np.abs(h.values - 4 * t * (1 - t)).max() < 1e-12
    assert np.all(h.values[:, 1:-1] > 0)
    j = int(np.argmax(h.values[0]))
    assert t[j] == pytest.approx(0.5)


def test_barrier_nonnegative_football(football_grid):
    h = upper_barrier(np.zeros(football_grid.shape), football_grid)
    assert h.values.min() >= -1e-12


def test_max_principle_harmonic(football_grid):
    op = omega_operator(football_grid)
    rng = np.random.default_rng(0)
    bnd = rng.uniform(0, 1, football_grid.shape)
    bnd[:, [0, -1]] /= bnd[:, [0, -1]].max()
    v = solve_dirichlet(op, 0.0, bnd)
    assert v.values[:, 1:-1].max() <= 1 + 1e-12
    assert max_principle_check(op, v).passed


def test_max_principle_parabola(torus_grid):
    op = omega_operator(torus_grid)
    t = torus_grid.t
    v = -np.broadcast_to(t * (1 - t), torus_grid.shape)
    verdict = max_principle_check(op, v)
    assert verdict.applicable and verdict.passed and verdict.margin >= 0


def test_max_principle_random_subsolutions():
    g = make_grid(GeometryDescriptor.football(0.45), 33, 17)
    S, Tt = np.meshgrid(g.sigma, g.t, indexing="ij")
    M = background_metric(g)
    M[..., 0, 0] *= 1 + 0.3 * np.sin(np.pi * Tt)
    op = assemble(M, -0.5, g)
    violations = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        rhs = rng.uniform(0, 5, g.shape)
        bnd = rng.normal(0, 1, g.shape)
        v = solve_dirichlet(op, rhs, bnd)
        verdict = max_principle_check(op, v)
        violations += (not verdict.applicable) or (not verdict.passed)
    assert violations == 0


def test_discrete_comparison_random_pairs(torus_grid):
    op = omega_operator(torus_grid, -1.0)
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        fu = rng.uniform(-1, 1, torus_grid.shape)
        fv = fu - rng.uniform(0, 1, torus_grid.shape)  # L u >= L v
        bv = rng.normal(size=torus_grid.shape)
        bu = bv - rng.uniform(0, 1, torus_grid.shape)
        u = solve_dirichlet(op, fu, bu).values
        v = solve_dirichlet(op, fv, bv).values
        assert np.all(u <= v + 1e-12)


def test_solve_bitwise_deterministic(football_grid):
    op = omega_operator(football_grid, -1.0)
    rhs = np.random.default_rng(5).normal(size=football_grid.shape)
    a = solve_dirichlet(op, rhs, 0.0).values
    b = solve_dirichlet(op, rhs.copy(), 0.0).values
    assert a.tobytes() == b.tobytes()


def test_m_matrix_defect_reports_mixed_terms(torus_grid):
    M = background_metric(torus_grid)
    M[..., 0, 1] = M[..., 1, 0] = 0.5
    assert assemble(M, 0.0, torus_grid).m_matrix_defect() > 0


def test_drift_term_manufactured(torus_grid):
    g = torus_grid
    S, Tt = np.meshgrid(g.sigma, g.t, indexing="ij")
    v = np.sin(np.pi * Tt) + 0.1 * np.cos(2 * np.pi * S)
    drift = np.zeros(g.shape + (2,))
    drift[..., 1] = 1.0
    op = assemble(background_metric(g), 0.0, g, drift=drift)
    # L v = v_xx/4 + v_tt/4 + v_t
    Lv = -0.1 * np.pi**2 * np.cos(2 * np.pi * S) - 0.25 * np.pi**2 * np.sin(np.pi * Tt) + np.pi * np.cos(np.pi * Tt)
    sol = solve_dirichlet(op, Lv, v)
    assert np.abs(sol.values - v).max() < 5e-3


def test_harnack_ratio_spot_check():
    ratios = {}
    for n in (33, 65):
        g = make_grid(GeometryDescriptor.football(0.5), n, n // 2 + 1)
        op = omega_operator(g)
        vals = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            bnd = np.zeros(g.shape)
            bnd[:, 0] = 1 + rng.uniform(0, 1) * np.cos(np.pi * g.sigma) ** 2
            bnd[:, -1] = 1 + rng.uniform(0, 1) * g.sigma**2
            v = solve_dirichlet(op, 0.0, bnd)
            assert v.values.min() >= 0
            vals.append(harnack_ratio(v, g, (0.5, 0.5), 0.25))
        ratios[n] = np.array(vals)
    assert np.all(np.isfinite(ratios[33])) and np.all(np.isfinite(ratios[65]))
    assert np.allclose(ratios[33], ratios[65], rtol=0.05)
