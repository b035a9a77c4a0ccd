import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conegeo import Field, GeometryDescriptor, make_grid
from conegeo.errors import BadResolution
from conegeo.grid import (
    AXIS,
    EQUATOR,
    FACE_T0,
    FACE_T1,
    complex_hessian,
    d_sigma,
    gradient_pairing,
    holder_norm_estimate,
    integrate,
    lap_sigma,
    laplacian,
)


def test_torus_grid_shape():
    g = make_grid(GeometryDescriptor.torus(), 32, 16)
    assert g.shape == (32, 16) and g.n_sigma * g.n_t == 512
    assert g.sigma[-1] + g.h_sigma == pytest.approx(1.0)  # periodic, no duplicate node


def test_football_tags():
    g = make_grid(GeometryDescriptor.football(0.5), 64, 32)
    assert g.sigma[0] == 0.0 and g.sigma[-1] == 1.0
    assert np.all(g.boundary_mask[0, 1:-1] == AXIS)
    assert np.all(g.boundary_mask[-1, 1:-1] == EQUATOR)
    assert np.all(g.boundary_mask[:, 0] == FACE_T0) and np.all(g.boundary_mask[:, -1] == FACE_T1)
    assert np.all(g.quad_weights[1:] > 0)


def test_bad_resolution():
    with pytest.raises(BadResolution):
        make_grid(GeometryDescriptor.torus(), 8, 16)
    with pytest.raises(BadResolution):
        make_grid(GeometryDescriptor.torus(), 32, 4)


def test_round_area_delta_zero():
    g = make_grid(GeometryDescriptor.football(0.5, 0.0), 257, 8)
    assert integrate(np.ones(g.n_sigma), None, g) == pytest.approx(2 * np.pi, rel=1e-3)


def test_torus_area_exact():
    g = make_grid(GeometryDescriptor.torus(2.0), 32, 8)
    assert abs(integrate(np.ones(32), None, g) - 4.0) < 1e-12


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.8])
def test_volume_quadrature_order(beta):
    errs = []
    for n in (33, 65, 129):
        g = make_grid(GeometryDescriptor.football(beta), n, 8)
        errs.append(abs(integrate(np.ones(n), None, g) - 2 * np.pi))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


def test_hessian_constant_zero(torus_grid, football_grid):
    for g in (torus_grid, football_grid):
        H = complex_hessian(Field(g, np.full(g.shape, 3.7)))
        assert np.abs(H).max() < 1e-9


def test_hessian_r_squared():
    g = make_grid(GeometryDescriptor.football(0.5), 33, 9)
    r2 = np.broadcast_to((g.sigma**2)[:, None], g.shape).copy()
    H = complex_hessian(Field(g, r2))
    # equator reflection is only valid for inversion-symmetric fields
    assert np.allclose(H[:-1, :, 0, 0], 1.0, atol=1e-11)
    assert H[0, 3, 0, 0] == pytest.approx(1.0)


def test_hessian_exact_on_quadratics():
    g = make_grid(GeometryDescriptor.football(0.6), 33, 9)
    r2 = (g.sigma**2)[:, None]
    t = g.t[None, :]
    psi = 1.5 + 0.3 * t - 2.0 * t**2 + 0.7 * r2 + 1.1 * r2 * t
    H = complex_hessian(Field(g, psi + 0 * r2))
    sl = slice(0, -1)
    assert np.allclose(H[sl, :, 0, 0], 0.25 * (4 * 0.7 + 4 * 1.1 * t) + 0 * r2[sl], atol=1e-10)
    assert np.allclose(H[sl, :, 1, 1], 0.25 * (-4.0), atol=1e-9)
    assert np.allclose(H[1:-1, :, 0, 1], 0.25 * 1.1 * 2 * g.sigma[1:-1, None], atol=1e-10)


def _psi_exact(r, t):
    return (1 + r**2) ** 2 * np.cos(t) + r**2 * t**2


def _brute_force_entries(rv, tv, h):
    """Cartesian differences of the unreduced potential at (xi, eta, t) = (r, 0, t)."""
    f = lambda xi, eta, tt: _psi_exact(np.hypot(xi, eta), tt)
    x, e, s = rv, 0.0, tv
    lap = (f(x + h, e, s) + f(x - h, e, s) + f(x, e + h, s) + f(x, e - h, s) - 4 * f(x, e, s)) / h**2
    tt = (f(x, e, s + h) - 2 * f(x, e, s) + f(x, e, s - h)) / h**2
    xt = (f(x + h, e, s + h) - f(x + h, e, s - h) - f(x - h, e, s + h) + f(x - h, e, s - h)) / (4 * h * h)
    return 0.25 * lap, 0.25 * tt, 0.25 * xt


def test_hessian_matches_unreduced_chart():
    rng = np.random.default_rng(3)
    worst = []
    for n in (33, 65):
        g = make_grid(GeometryDescriptor.football(0.5), n, n)
        R, T = np.meshgrid(g.sigma, g.t, indexing="ij")
        H = complex_hessian(Field(g, _psi_exact(R, T)))
        errs = []
        for i, j in zip(rng.integers(0, n - 1, 20), rng.integers(1, n - 1, 20)):
            bf = _brute_force_entries(g.sigma[i], g.t[j], g.h_sigma)
            errs.append(max(abs(H[i, j, 0, 0] - bf[0]), abs(H[i, j, 1, 1] - bf[1]), abs(H[i, j, 0, 1] - bf[2])))
        worst.append(max(errs))
        assert max(errs) < 20 * g.h_sigma**2
    assert worst[1] < worst[0]


def test_axis_derivative_zero(football_grid):
    f = np.cos(football_grid.sigma) + 0.1
    assert d_sigma(football_grid, f)[0] == 0.0


def _ibp_residual(n):
    g = make_grid(GeometryDescriptor.football(0.5), n, 8)
    q = g.sigma**2
    b = 4 * q / (1 + q) ** 2
    f1, f2 = np.cos(b), b**2 - 0.3 * b
    lhs = integrate(f1 * laplacian(g, f2), None, g)
    rhs = -integrate(gradient_pairing(g, f1, f2), None, g)
    return abs(lhs - rhs)


def test_integration_by_parts_order():
    r1, r2, r3 = (_ibp_residual(n) for n in (33, 65, 129))
    assert r3 < r2 < r1
    assert np.log2(r2 / r3) >= 1.8


def test_integration_by_parts_torus_order():
    res = []
    for n in (32, 64):
        g = make_grid(GeometryDescriptor.torus(), n, 8)
        x = g.sigma
        f1, f2 = np.sin(2 * np.pi * x), np.cos(4 * np.pi * x) + np.sin(2 * np.pi * x)
        lhs = integrate(f1 * laplacian(g, f2), None, g)
        rhs = -integrate(gradient_pairing(g, f1, f2), None, g)
        res.append(abs(lhs - rhs))
    assert np.log2(res[0] / res[1]) >= 1.8


# --- Field ---------------------------------------------------------------------------

def test_field_rejects_nonfinite(torus_grid):
    v = np.zeros(torus_grid.shape)
    v[2, 3] = np.nan
    with pytest.raises(ValueError):
        Field(torus_grid, v)
    with pytest.raises(ValueError):
        Field(torus_grid, np.zeros((5, 5)))


@given(arrays(np.float64, (16, 8), elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_field_csv_round_trip(vals):
    g = make_grid(GeometryDescriptor.torus(), 16, 8)
    f = Field(g, vals)
    back = Field.from_csv(g, f.to_csv())
    assert np.array_equal(back.values, vals)


def test_slice_csv_round_trip(football_grid):
    f = Field(football_grid, np.linspace(0, 1, football_grid.n_sigma))
    assert np.array_equal(Field.from_csv(football_grid, f.to_csv()).values, f.values)


def test_geometry_hash_stable():
    a = make_grid(GeometryDescriptor.football(0.5), 33, 9)
    b = make_grid(GeometryDescriptor.football(0.5), 33, 9)
    c = make_grid(GeometryDescriptor.football(0.51), 33, 9)
    assert a.geometry_hash() == b.geometry_hash() != c.geometry_hash()


# --- Hölder estimate ------------------------------------------------------------------------

def test_holder_constant_zero(football_grid):
    assert holder_norm_estimate(Field(football_grid, np.full(football_grid.n_sigma, 2.0)), 0.5) == 0.0


def test_holder_of_r_stable_across_seeds():
    g = make_grid(GeometryDescriptor.football(0.5), 65, 8)
    f = Field(g, g.sigma.copy())
    vals = [holder_norm_estimate(f, 0.4, 2000, seed) for seed in range(5)]
    assert min(vals) > 0
    assert max(vals) / min(vals) < 1.1
    assert max(vals) <= 1.0 + 1e-12  # d^(1 - alpha) <= diam^(1 - alpha)


def test_holder_monotone_in_pairs(torus_grid):
    x = torus_grid.sigma
    f = Field(torus_grid, np.sin(2 * np.pi * x)[:, None] * torus_grid.t[None, :])
    vals = [holder_norm_estimate(f, 0.5, n, 1) for n in (10, 100, 1000)]
    assert vals[0] <= vals[1] <= vals[2]


@given(st.floats(-5, 5), st.floats(0.1, 10))
def test_holder_shift_and_scale(c, k):
    g = make_grid(GeometryDescriptor.torus(), 16, 8)
    base = np.sin(2 * np.pi * g.sigma)[:, None] * g.t[None, :] ** 2
    h0 = holder_norm_estimate(Field(g, base), 0.5, 200, 4)
    assert holder_norm_estimate(Field(g, base + c), 0.5, 200, 4) == pytest.approx(h0, rel=1e-9, abs=1e-12)
    assert holder_norm_estimate(Field(g, k * base), 0.5, 200, 4) == pytest.approx(k * h0, rel=1e-9)


def test_lap_sigma_torus_second_order():
    errs = []
    for n in (32, 64):
        g = make_grid(GeometryDescriptor.torus(), n, 8)
        errs.append(np.abs(lap_sigma(g, np.sin(2 * np.pi * g.sigma)) + 4 * np.pi**2 * np.sin(2 * np.pi * g.sigma)).max())
    assert np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.1)
