"""Kähler-Einstein cone metrics on the football slice.

One complex dimension, rotationally symmetric potentials on the lifted
radius ``r`` in ``[0, 1]`` (the other hemisphere by inversion symmetry).
With ``a_phi = A + L phi / 4`` the lifted density of ``omega_phi`` the
equation reads ``log a_phi - log A + lambda phi - f = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from conegeo.cone_geometry import FOOTBALL, GeometryDescriptor, model_potential
from conegeo.errors import ContinuationAbort, LineSearchFail, NonPositiveDeterminant
from conegeo.grid import Field, ReducedGrid, lap_sigma, make_grid


def default_lambda(beta: float, volume: float = 2.0 * math.pi) -> float:
    """Einstein constant of the constant-curvature football with two cone angles ``2 pi beta``."""
    euler = 2.0 - 2.0 * (1.0 - beta)
    return math.pi * euler / volume


def football_density(r, beta: float):
    """Lifted density of the constant-curvature football of area ``2 pi``."""
    r = np.asarray(r, dtype=float)
    return (2.0 / beta) / (1.0 + r * r) ** 2


def football_potential(r, cone) -> np.ndarray:
    """``phi`` with ``omega + ddbar phi`` equal to the football metric."""
    beta = cone.beta
    r = np.asarray(r, dtype=float)
    return (2.0 / beta) * np.log1p(r * r) - model_potential(r, cone)


@dataclass(eq=False)
class KEProblem:
    grid: ReducedGrid
    lam: float
    f_field: np.ndarray
    t_path: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])

    def __post_init__(self):
        if self.grid.kind != FOOTBALL:
            raise ValueError("KEProblem lives on the football slice")
        self.f_field = np.asarray(self.f_field, dtype=float)
        if self.f_field.shape != (self.grid.n_sigma,):
            raise ValueError(f"f_field must have shape ({self.grid.n_sigma},)")
        if not np.all(np.isfinite(self.f_field)):
            raise ValueError("f_field must be finite on the grid")

    @property
    def r(self) -> np.ndarray:
        return self.grid.sigma

    @property
    def density(self) -> np.ndarray:
        return self.grid.density

    @property
    def weights(self) -> np.ndarray:
        return self.grid.sigma_weights

    @property
    def volume(self) -> float:
        return float(np.sum(self.weights * self.density))


def football_problem(beta: float, n_r: int = 128, delta: float = 0.1, lam: float | None = None,
                     assembly: str = "continuum") -> KEProblem:
    """``f`` assembled so that the closed-form football solves the equation.

    ``assembly="continuum"`` uses the exact football density, so the
    discrete solution carries the O(h^2) truncation error and can be
    compared with the oracle.  ``"discrete"`` uses the discrete density of
    the closed-form potential, which then solves the discrete equation.
    """
    geom = GeometryDescriptor.football(beta, delta)
    grid = make_grid(geom, n_r, 8)
    lam = default_lambda(beta, geom.volume) if lam is None else float(lam)
    r = grid.sigma
    phi = football_potential(r, geom.cone)
    if assembly == "continuum":
        target = football_density(r, beta)
    elif assembly == "discrete":
        target = grid.density + 0.25 * lap_sigma(grid, phi)
    else:
        raise ValueError("assembly must be 'continuum' or 'discrete'")
    return KEProblem(grid, lam, np.log(target / grid.density) + lam * phi)


def _quarter_laplacian(grid: ReducedGrid) -> sp.csr_matrix:
    """Sparse ``L / 4`` matching :func:`conegeo.grid.lap_sigma` on one slice."""
    n = grid.n_sigma
    h = grid.h_sigma
    r = grid.sigma
    rows, cols, vals = [], [], []
    for i in range(n):
        if i == 0:
            rows += [0, 0]
            cols += [0, 1]
            vals += [-4.0 / h**2, 4.0 / h**2]
            continue
        ip = i + 1 if i + 1 < n else n - 2
        cp = 1.0 / h**2 + 1.0 / (2 * h * r[i])
        cm = 1.0 / h**2 - 1.0 / (2 * h * r[i])
        rows += [i, i, i]
        cols += [ip, i - 1, i]
        vals += [cp, cm, -2.0 / h**2]
    L = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    L.sum_duplicates()
    return 0.25 * L


def slice_density_1d(prob: KEProblem, phi) -> np.ndarray:
    phi = phi.values if isinstance(phi, Field) else np.asarray(phi, dtype=float)
    return prob.density + 0.25 * lap_sigma(prob.grid, phi)


def _log_ratio(prob: KEProblem, phi) -> np.ndarray:
    a = slice_density_1d(prob, phi)
    if np.any(~(a > 0)):
        raise NonPositiveDeterminant((int(np.argmin(a)),))
    return np.log(a) - np.log(prob.density)


def ke_residual(phi, prob: KEProblem) -> Field:
    """``log omega_phi - log omega + lambda phi - f`` per node."""
    phi = phi.values if isinstance(phi, Field) else np.asarray(phi, dtype=float)
    return Field(prob.grid, _log_ratio(prob, phi) + prob.lam * phi - prob.f_field)


def einstein_identity_residual(phi, prob: KEProblem) -> np.ndarray:
    """``Ric(omega_phi) - lambda omega_phi`` as a lifted density.

    On the outer half the Laplacian acts on ``log a + 2 log r``, which is
    even about the equator (inversion carries the Jacobian ``r^-4``) and has
    the same Laplacian as ``log a``; ``log a`` itself is even about the axis.
    """
    a = slice_density_1d(prob, phi)
    r = prob.r
    outer = r > 0.5
    sym = np.log(a) + 2.0 * np.log(np.where(r > 0, r, 1.0))
    ric = np.where(outer, -0.25 * lap_sigma(prob.grid, sym), -0.25 * lap_sigma(prob.grid, np.log(a)))
    return ric - prob.lam * a


def _normalised_f(prob: KEProblem):
    """``f - c_f`` with ``int e^{f - c_f} omega = Vol`` so the path starts solvable."""
    c = math.log(float(np.sum(prob.weights * prob.density * np.exp(prob.f_field))) / prob.volume)
    return prob.f_field - c, c


def _equation(prob: KEProblem, t: float):
    """Return ``(coef, rhs)`` of ``log(a/A) + coef * phi = rhs`` at path parameter ``t``."""
    if prob.lam > 0:
        fn, _ = _normalised_f(prob)
        return t * prob.lam, fn
    if prob.lam < 0:
        return prob.lam, t * prob.f_field
    fn, _ = _normalised_f(prob)
    return 0.0, t * fn


def ke_newton(prob: KEProblem, phi0, t: float = 1.0, tol: float = 1e-11, max_iter: int = 50):
    """Damped Newton at fixed path parameter.

    A bordered system (gauge ``int phi omega = 0`` plus a free constant) is
    used whenever the zeroth-order coefficient vanishes.
    """
    L4 = _quarter_laplacian(prob.grid)
    coef, rhs = _equation(prob, t)
    bordered = coef == 0.0
    wA = prob.weights * prob.density
    n = prob.grid.n_sigma
    phi = np.asarray(phi0, dtype=float).copy()
    const = 0.0

    def resid(p, c):
        return _log_ratio(prob, p) + coef * p - rhs - c

    def norm(p, c):
        R = resid(p, c)
        if bordered:
            return max(float(np.abs(R).max()), abs(float(wA @ p)) / prob.volume)
        return float(np.abs(R).max())

    if bordered:
        phi -= (wA @ phi) / prob.volume
    cur = norm(phi, const)
    for _ in range(max_iter):
        if cur <= tol:
            break
        a = slice_density_1d(prob, phi)
        J = sp.diags(1.0 / a) @ L4 + coef * sp.identity(n)
        R = resid(phi, const)
        if bordered:
            K = sp.bmat([[J, -np.ones((n, 1))], [wA[None, :], None]], format="csc")
            sol = spla.spsolve(K, -np.concatenate([R, [wA @ phi]]))
            dphi, dc = sol[:n], sol[n]
        else:
            dphi, dc = spla.spsolve(J.tocsc(), -R), 0.0
        lam_ = 1.0
        for _ in range(31):
            trial, tc = phi + lam_ * dphi, const + lam_ * dc
            try:
                new = norm(trial, tc)
            except NonPositiveDeterminant:
                new = math.inf
            if new < cur:
                break
            lam_ *= 0.5
        else:
            if cur <= 1e-9:
                break
            raise LineSearchFail(f"KE Newton stalled at t={t:g} (residual {cur:.3e})")
        phi, const, cur = trial, tc, new
    if cur > tol and cur > 1e-9:
        raise LineSearchFail(f"KE Newton did not converge at t={t:g} (residual {cur:.3e})")
    return phi, cur


@dataclass
class KESolution:
    phi: Field
    residual: float
    t_reached: float
    ts: list
    residuals: list
    shift: float

    def summary(self) -> dict:
        return {"t_schedule": self.ts, "residuals": self.residuals, "t_reached": self.t_reached,
                "final_residual": self.residual, "constant_shift": self.shift}


def ke_continuity_solve(prob: KEProblem, schedule=None, initial=None, max_refine: int = 6) -> KESolution:
    """Follow the continuity path from ``t = 0`` to ``t = 1``.

    ``lambda > 0`` uses the Aubin path (``t`` multiplies ``lambda phi``),
    otherwise ``t`` multiplies ``f``.  For ``lambda > 0`` the source is
    shifted by a constant so that ``t = 0`` is solvable; the returned
    potential is shifted back and solves the problem as posed.
    """
    ts = list(prob.t_path if schedule is None else schedule)
    if not ts or ts[0] != 0.0 or ts[-1] != 1.0 or any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("schedule must increase strictly from 0 to 1")
    phi = np.zeros(prob.grid.n_sigma) if initial is None else np.asarray(initial, dtype=float)
    done, res_trace = [], []
    pending = list(ts)
    requested = set(ts)
    refinements = 0
    while pending:
        t = pending[0]
        try:
            new, res = ke_newton(prob, phi, t)
        except (LineSearchFail, NonPositiveDeterminant, np.linalg.LinAlgError) as exc:
            if refinements >= max_refine or not done:
                raise ContinuationAbort(done[-1] if done else 0.0, str(exc)) from exc
            pending.insert(0, 0.5 * (done[-1] + t))
            refinements += 1
            continue
        if t in requested:
            refinements = 0
        pending.pop(0)
        phi = new
        done.append(t)
        res_trace.append(res)
    shift = 0.0
    if prob.lam > 0:
        shift = _normalised_f(prob)[1] / prob.lam
        phi = phi + shift
    final = float(np.abs(ke_residual(phi, prob).values).max()) if prob.lam != 0 else res_trace[-1]
    return KESolution(Field(prob.grid, phi), final, done[-1], done, res_trace, shift)


def oracle_error(sol: KESolution, prob: KEProblem) -> float:
    """Relative sup error of ``omega_phi`` against the constant-curvature football."""
    beta = prob.grid.geom.beta
    exact = football_density(prob.r, beta)
    return float(np.max(np.abs(slice_density_1d(prob, sol.phi) - exact) / exact))


def convergence_study(beta: float = 0.5, sizes=(32, 64, 128), delta: float = 0.1,
                      lam: float | None = None) -> dict:
    errors, hs = [], []
    for n in sizes:
        prob = football_problem(beta, n, delta, lam)
        sol = ke_continuity_solve(prob)
        errors.append(oracle_error(sol, prob))
        hs.append(prob.grid.h_sigma)
    orders = [math.log(errors[k] / errors[k + 1]) / math.log(hs[k] / hs[k + 1]) for k in range(len(sizes) - 1)]
    return {"beta": beta, "sizes": list(sizes), "h": hs, "errors": errors, "orders": orders}
