"""Continuity-method solver for the geodesic Monge-Ampère problem.

Variables.  The geodesic ``phi(x, t)`` is carried as the strip potential
``Psi = phi - 2 t**2``.  This differs from ``phi - |z|**2`` by the
pluriharmonic ``y**2 - t**2``, so it has the same complex Hessian while
being independent of ``y``; faces carry ``Psi(., 0) = phi0`` and
``Psi(., 1) = phi1 - 2``.

For ``0 < tau <= 1`` we solve (log form, background ``Omega_1``)::

    log det(Omega + ddbar Psi) - log det(Omega_1) = log(tau) + a (Psi - Psi_1)

with ``Psi = Psi_1`` on the faces, by damped Newton warm-started along a
decreasing tau schedule.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from conegeo.errors import (
    ContinuationAbort,
    LineSearchFail,
    NoAdmissibleM,
    NonPositiveDeterminant,
    NonPositiveMetric,
    SolverStall,
    NonEllipticNode,
)
from conegeo.grid import (
    Field,
    ReducedGrid,
    background_metric,
    complex_hessian,
    d_sigma,
    d_sigma_t,
    d_tt,
    lap_sigma,
    d_t,
    slice_density,
    third_derivative_sup,
)
from conegeo.linear_elliptic import assemble, solve_dirichlet, upper_barrier
from conegeo.mabuchi import GeodesicPath

M_CAP = 2.0**20


def convex_profile(t):
    """``Phi(t) = 2 (t^2 - t)``: zero on both faces, ``Phi_{z zbar} = 1``."""
    return 2.0 * (t * t - t)


def psi_from_phi(grid: ReducedGrid, phi) -> np.ndarray:
    return np.asarray(phi, dtype=float) - 2.0 * grid.t[None, :] ** 2


def phi_from_psi(grid: ReducedGrid, psi) -> np.ndarray:
    return np.asarray(psi, dtype=float) + 2.0 * grid.t[None, :] ** 2


@dataclass
class BoundaryData:
    phi0: np.ndarray
    phi1: np.ndarray
    m_phi: float = 1.0

    def __post_init__(self):
        self.phi0 = np.asarray(self.phi0, dtype=float)
        self.phi1 = np.asarray(self.phi1, dtype=float)

    def validate(self, grid: ReducedGrid):
        for name, phi in (("phi0", self.phi0), ("phi1", self.phi1)):
            if phi.shape != (grid.n_sigma,):
                raise ValueError(f"{name} must have shape ({grid.n_sigma},)")
            dens = slice_density(grid, phi)
            if np.any(dens <= 0):
                i = int(np.argmin(dens))
                raise NonPositiveMetric(f"{name} is not a Kähler cone potential: omega_phi <= 0 at sigma node {i}")

    def psi0(self, grid: ReducedGrid) -> np.ndarray:
        """Face values of ``Psi`` (interior filled with the straight interpolation)."""
        t = grid.t[None, :]
        return (1 - t) * self.phi0[:, None] + t * self.phi1[:, None] - 2.0 * t


@dataclass
class MonitorReport:
    tau: float
    lower_margin: float
    upper_margin: float
    bdry_grad: float
    bdry_grad_bound: float
    lap_ratio: float
    grad_sup: float
    c11_proxy: float
    third_sup: float
    slice_min: float
    det_min: float
    cauchy_c1: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class InitialPath:
    """``Psi_1`` together with the pieces the solver keeps exact.

    The Newton unknown is ``w = Psi - (line - 2 t^2)``, the deviation of
    ``phi`` from the straight segment.  In terms of ``w`` the strip entry of
    ``Omega + ddbar Psi`` is just ``w_tt / 4`` (the ``1`` of ``Omega`` and
    the ``-2 t^2`` cancel analytically), which keeps the nearly degenerate
    direction free of O(1) cancellation as tau -> 0.
    """

    grid: ReducedGrid
    bd: BoundaryData
    m: float
    line: np.ndarray
    w1: np.ndarray  # m * Phi(t)
    slice_line: np.ndarray  # omega + ddbar(line) lifted density
    mixed_line: np.ndarray  # d_sigma(phi1 - phi0) / 4

    def __iter__(self):
        yield self.psi
        yield self.m

    @property
    def base(self) -> np.ndarray:
        return self.line - 2.0 * self.grid.t[None, :] ** 2

    @property
    def psi(self) -> Field:
        return Field(self.grid, self.base + self.w1)

    def metric_w(self, w) -> np.ndarray:
        grid = self.grid
        w = np.asarray(w, dtype=float)
        G = np.empty(grid.shape + (2, 2))
        G[..., 0, 0] = self.slice_line + 0.25 * lap_sigma(grid, w)
        G[..., 0, 1] = G[..., 1, 0] = self.mixed_line[:, None] + 0.25 * d_sigma_t(grid, w)
        G[..., 1, 1] = 0.25 * d_tt(grid, w)
        return G

    def omega1(self) -> np.ndarray:
        G = np.empty(self.grid.shape + (2, 2))
        G[..., 0, 0] = self.slice_line
        G[..., 0, 1] = G[..., 1, 0] = self.mixed_line[:, None]
        G[..., 1, 1] = self.m
        return G

    def w_of(self, psi) -> np.ndarray:
        psi = psi.values if isinstance(psi, Field) else np.asarray(psi, dtype=float)
        return psi - self.base


@dataclass
class SolverState:
    tau: float
    a_param: int
    w: Field  # deviation from the straight segment
    base: np.ndarray
    newton_residual: float = float("inf")
    monitors: MonitorReport | None = None
    iterations: int = 0

    @property
    def psi(self) -> Field:
        return Field(self.w.grid, self.base + self.w.values)

    def with_w(self, w, **kw) -> "SolverState":
        return SolverState(self.tau, self.a_param, Field(self.w.grid, w), self.base, **kw)


def initial_state(init: InitialPath, tau: float = 1.0, a_param: int = 1) -> SolverState:
    return SolverState(tau, a_param, Field(init.grid, init.w1.copy()), init.base)


def total_metric(grid: ReducedGrid, psi) -> np.ndarray:
    """``Omega + ddbar Psi`` in the lifted frame, shape ``(n_sigma, n_t, 2, 2)``."""
    psi = psi if isinstance(psi, Field) else Field(grid, np.asarray(psi, dtype=float))
    return background_metric(grid) + complex_hessian(psi)


def _det(G):
    return G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] ** 2


def build_initial_path(bd: BoundaryData, grid: ReducedGrid, m_start: float | None = None) -> InitialPath:
    """``Psi_1 = line segment - 2 t^2 + m Phi`` with ``m`` doubled until admissible.

    Admissible means ``Omega + ddbar Psi_1 > 0`` at every node, i.e.
    ``omega_t > 0`` and ``det = omega_t m - |d psi|^2 / 16 > 0``.  Unpacks
    as ``(psi1, m)``.
    """
    bd.validate(grid)
    t = grid.t[None, :]
    line = (1 - t) * bd.phi0[:, None] + t * bd.phi1[:, None]
    slice_line = grid.density[:, None] + 0.25 * lap_sigma(grid, line)
    mixed = 0.25 * d_sigma(grid, bd.phi1 - bd.phi0)
    m = float(bd.m_phi if m_start is None else m_start)
    while m <= M_CAP:
        init = InitialPath(grid, bd, m, line, m * convex_profile(t) * np.ones((grid.n_sigma, 1)),
                           slice_line, mixed)
        G = init.omega1()
        if np.all(G[..., 0, 0] > 0) and np.all(_det(G) > 0):
            return init
        m *= 2.0
    raise NoAdmissibleM(f"no admissible convexification amplitude up to m = {M_CAP:g}")


def _interior(grid):
    mask = np.zeros(grid.shape, dtype=bool)
    mask[:, 1:-1] = True
    return mask


def _residual_w(init: InitialPath, w, tau: float, a_param: int) -> np.ndarray:
    grid = init.grid
    det = _det(init.metric_w(w))
    interior = _interior(grid)
    bad = interior & ~(det > 0)
    if np.any(bad):
        raise NonPositiveDeterminant(tuple(int(x) for x in np.argwhere(bad)[0]))
    det1 = _det(init.omega1())
    res = np.zeros(grid.shape)
    tilde = np.asarray(w) - init.w1
    res[interior] = (np.log(det[interior]) - np.log(det1[interior]) - math.log(tau)
                     - a_param * tilde[interior])
    return res


def ma_residual(state: SolverState, init: InitialPath) -> Field:
    """Log-form defect; zero on the faces and wherever the equation holds."""
    return Field(init.grid, _residual_w(init, state.w.values, state.tau, state.a_param))


def ma_residual_direct(state: SolverState, init: InitialPath) -> Field:
    """Cross-check in the ``Omega`` background: ``det - tau e^{a(Psi-Psi_1)} det Omega_1``."""
    grid = init.grid
    det = _det(total_metric(grid, state.psi))
    det1 = _det(total_metric(grid, init.psi))
    res = det - state.tau * np.exp(state.a_param * (state.w.values - init.w1)) * det1
    res[~_interior(grid)] = 0.0
    return Field(grid, res)


def _admissible(init: InitialPath, w) -> bool:
    G = init.metric_w(w)
    return bool(np.all(G[..., 0, 0] > 0) and np.all(_det(G)[_interior(init.grid)] > 0))


def newton_step(state: SolverState, init: InitialPath, max_halvings: int = 30) -> SolverState:
    """One damped Newton step: ``(Delta'_Psi - a) v = -residual``, ``v = 0`` on the faces."""
    grid = init.grid
    res = _residual_w(init, state.w.values, state.tau, state.a_param)
    norm = float(np.abs(res).max())
    if norm == 0.0:
        return state.with_w(state.w.values, newton_residual=0.0, monitors=state.monitors,
                            iterations=state.iterations)
    op = assemble(init.metric_w(state.w.values), -float(state.a_param), grid)
    v = solve_dirichlet(op, -res, None, rtol=1e-9, atol=1e-15).values
    lam = 1.0
    for _ in range(max_halvings + 1):
        trial = state.w.values + lam * v
        if _admissible(init, trial):
            new = float(np.abs(_residual_w(init, trial, state.tau, state.a_param)).max())
            if new < norm:
                return state.with_w(trial, newton_residual=new, iterations=state.iterations + 1)
        lam *= 0.5
    raise LineSearchFail(f"no residual decrease after {max_halvings} halvings (tau={state.tau:g})")


def newton_solve(state: SolverState, init: InitialPath, tol: float = 1e-10, max_iter: int = 40,
                 accept: float = 1e-8) -> SolverState:
    """Newton to ``tol``; stops early at round-off stagnation if already below ``accept``."""
    res = float(np.abs(ma_residual(state, init).values).max())
    state = state.with_w(state.w.values, newton_residual=res, monitors=state.monitors)
    it = 0
    while state.newton_residual > tol:
        if it >= max_iter:
            if state.newton_residual <= accept:
                break
            raise LineSearchFail(f"Newton did not reach {tol:g} in {max_iter} steps (tau={state.tau:g})")
        prev = state.newton_residual
        try:
            state = newton_step(state, init)
        except LineSearchFail:
            if state.newton_residual <= accept:
                break
            raise
        it += 1
        if state.newton_residual <= accept and state.newton_residual > 0.5 * prev:
            break
    return state


def default_schedule(tau_min: float = 1e-5, ratio: float = 0.5) -> list[float]:
    taus = [1.0]
    while taus[-1] * ratio > tau_min:
        taus.append(taus[-1] * ratio)
    if taus[-1] > tau_min:
        taus.append(tau_min)
    return taus


def gradient_norm(grid: ReducedGrid, psi) -> np.ndarray:
    """Real ``|grad Psi|_Omega`` in the lifted frame."""
    psi = np.asarray(psi, dtype=float)
    return np.sqrt(d_sigma(grid, psi) ** 2 / grid.density[:, None] + d_t(grid, psi) ** 2)


def monitors(init: InitialPath, state: SolverState, h: Field, grad1_sup: float, gradh_sup: float) -> MonitorReport:
    grid = init.grid
    w = state.w.values
    psi = state.psi.values
    G = init.metric_w(w)
    H = G - background_metric(grid)
    A = grid.density[:, None]
    trace = G[..., 0, 0] / A + G[..., 1, 1]  # n + 1 + Delta Psi
    gn = gradient_norm(grid, psi)
    faces = np.zeros(grid.shape, dtype=bool)
    faces[:, [0, -1]] = True
    sup_b = float(trace[faces].max())
    return MonitorReport(
        tau=float(state.tau),
        lower_margin=float((w - init.w1).min()),
        upper_margin=float((psi - h.values).max()),
        bdry_grad=float(gn[faces].max()),
        bdry_grad_bound=grad1_sup + gradh_sup,
        lap_ratio=float(trace.max() / sup_b) if sup_b > 0 else float("inf"),
        grad_sup=float((0.25 * gn**2).max()),
        c11_proxy=float(np.abs(H).max()),
        third_sup=third_derivative_sup(grid, psi),
        slice_min=float(G[..., 0, 0].min()),
        det_min=float(_det(G)[_interior(grid)].min()),
    )


def c1_norm(grid: ReducedGrid, v) -> float:
    v = np.asarray(v, dtype=float)
    return float(max(np.abs(v).max(), np.abs(d_sigma(grid, v)).max(), np.abs(d_t(grid, v)).max()))


def rhs_factor(init: InitialPath, w, a_param: int) -> np.ndarray:
    """``f`` such that the slices solve the epsilon-approximate geodesic equation with ``epsilon = tau``.

    ``(phi'' - |d phi'|^2) det g_phi = 4 det(Omega + ddbar Psi)`` in these
    variables, hence ``f = 4 e^{a (Psi - Psi_1)} det(Omega_1) / det(Omega)``.
    """
    det1 = _det(init.omega1())
    det0 = init.grid.density[:, None]
    return 4.0 * np.exp(a_param * (np.asarray(w) - init.w1)) * det1 / det0


@dataclass
class ContinuationResult:
    grid: ReducedGrid
    bd: BoundaryData
    a_param: int
    init: InitialPath
    barrier: Field
    taus: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    states: list = field(default_factory=list)
    aborted: bool = False
    abort_message: str = ""

    @property
    def m(self) -> float:
        return self.init.m

    @property
    def psi1(self) -> Field:
        return self.init.psi

    @property
    def solutions(self) -> list:
        return [s.psi for s in self.states]

    @property
    def psi(self) -> Field:
        return self.states[-1].psi

    @property
    def tau_min(self) -> float:
        return self.taus[-1]

    def path(self, k: int = -1) -> GeodesicPath:
        grid = self.grid
        st = self.states[k]
        phi = self.init.line + st.w.values
        return GeodesicPath(grid, phi, epsilon=self.taus[k], f=rhs_factor(self.init, st.w.values, self.a_param))

    def summary(self) -> dict:
        return {
            "grid": self.grid.descriptor(),
            "a_param": self.a_param,
            "m": self.m,
            "schedule": self.taus,
            "residuals": self.residuals,
            "newton_iterations": self.iterations,
            "monitors": [r.as_dict() for r in self.reports],
            "aborted": self.aborted,
            "last_good_tau": self.taus[-1] if self.taus else None,
            "abort_message": self.abort_message,
            "epsilon": {"value": self.taus[-1] if self.taus else None,
                        "definition": "epsilon = tau; f = 4 exp(a (Psi - Psi_1)) det(Omega_1)/det(Omega)"},
        }


def continuation(bd: BoundaryData, grid: ReducedGrid, schedule=None, a_param: int = 1,
                 tol: float = 1e-10, max_refine: int = 6, raise_on_abort: bool = True) -> ContinuationResult:
    """Run the tau-family from 1 down to ``schedule[-1]`` with warm starts.

    A failed Newton solve is retried at the geometric mean of the last good
    and the requested tau; at most ``max_refine`` insertions are spent on
    reaching any one scheduled tau.
    """
    schedule = default_schedule() if schedule is None else [float(x) for x in schedule]
    if schedule[0] != 1.0 or any(b >= a for a, b in zip(schedule, schedule[1:])) or schedule[-1] <= 0:
        raise ValueError("schedule must start at 1 and decrease strictly to a positive floor")
    init = build_initial_path(bd, grid)
    psi1 = init.psi.values
    h = upper_barrier(psi1, grid)
    grad1 = float(gradient_norm(grid, psi1).max())
    gradh = float(gradient_norm(grid, h.values).max())
    out = ContinuationResult(grid, bd, a_param, init, h)

    state = initial_state(init, 1.0, a_param)
    pending = list(schedule)
    requested = set(pending)
    refinements = 0
    while pending:
        tau = pending[0]
        trial = SolverState(tau, a_param, state.w, init.base)
        try:
            trial = newton_solve(trial, init, tol=tol)
        except (LineSearchFail, NonPositiveDeterminant, SolverStall, NonEllipticNode) as exc:
            if refinements >= max_refine or not out.taus:
                out.aborted = True
                out.abort_message = str(exc)
                if raise_on_abort:
                    raise ContinuationAbort(out.taus[-1] if out.taus else 1.0, str(exc), partial=out) from exc
                return out
            pending.insert(0, math.sqrt(out.taus[-1] * tau))
            refinements += 1
            continue
        if tau in requested:
            refinements = 0
        pending.pop(0)
        rep = monitors(init, trial, h, grad1, gradh)
        if out.states:
            rep.cauchy_c1 = c1_norm(grid, trial.w.values - out.states[-1].w.values)
        trial.monitors = rep
        out.taus.append(tau)
        out.residuals.append(trial.newton_residual)
        out.iterations.append(trial.iterations)
        out.reports.append(rep)
        out.states.append(trial)
        state = trial
    return out


def comparison_uniqueness(bd_a: BoundaryData, bd_b: BoundaryData, grid: ReducedGrid,
                          tau_min: float = 1e-5, a_param: int = 1) -> dict:
    """``sup_X |Psi_a - Psi_b| - sup_faces |Psi0_a - Psi0_b|`` at ``tau_min``."""
    sched = default_schedule(tau_min)
    ra = continuation(bd_a, grid, sched, a_param)
    rb = continuation(bd_b, grid, sched, a_param)
    diff = np.abs(ra.psi.values - rb.psi.values)
    bdiff = max(np.abs(bd_a.phi0 - bd_b.phi0).max(), np.abs(bd_a.phi1 - bd_b.phi1).max())
    return {"interior_sup": float(diff.max()), "boundary_sup": float(bdiff),
            "margin": float(diff.max() - bdiff), "tau_min": tau_min}
