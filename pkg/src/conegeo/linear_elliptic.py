"""Linear elliptic Dirichlet problems on the reduced strip.

The operator is ``L v = tr(g^{-1} ddbar v) + b . grad v + c v`` with the
reduced complex Hessian of :func:`conegeo.grid.complex_hessian`; Dirichlet
data are imposed on the two t-faces by row replacement, and the axis /
equator / periodic directions are handled by the same index reflection the
grid stencils use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from conegeo.cone_geometry import FOOTBALL, TORUS
from conegeo.errors import NonEllipticNode, SolverStall
from conegeo.grid import Field, ReducedGrid, background_metric

DIRECT_LIMIT = 256 * 128


@dataclass(frozen=True, eq=False)
class LinearOperator:
    grid: ReducedGrid
    metric_inverse: np.ndarray  # (n_sigma, n_t, 2, 2)
    zeroth_order: np.ndarray  # (n_sigma, n_t)
    matrix: sp.csr_matrix
    drift: np.ndarray | None = None

    def apply(self, v) -> np.ndarray:
        """``L v`` on interior nodes, ``v`` itself on the Dirichlet faces."""
        v = v.values if isinstance(v, Field) else np.asarray(v, dtype=float)
        return (self.matrix @ v.reshape(-1)).reshape(self.grid.shape)

    def interior(self) -> np.ndarray:
        mask = np.ones(self.grid.shape, dtype=bool)
        mask[:, [0, -1]] = False
        return mask

    def m_matrix_defect(self) -> float:
        """Largest negative off-diagonal entry (in magnitude) over interior rows.

        Zero means ``-L`` has the M-matrix sign pattern, which is what the
        discrete maximum principle needs.
        """
        A = self.matrix.tocoo()
        interior = self.interior().reshape(-1)
        off = (A.row != A.col) & interior[A.row]
        if not np.any(off):
            return 0.0
        return float(max(0.0, -A.data[off].min()))


def _sigma_index(grid: ReducedGrid, i, step):
    n = grid.n_sigma
    j = i + step
    if grid.kind == TORUS:
        return j % n
    j = np.where(j < 0, -j, j)
    return np.where(j > n - 1, 2 * (n - 1) - j, j)


def assemble(metric, c, grid: ReducedGrid, drift=None) -> LinearOperator:
    """Assemble ``L`` from a positive metric field ``(n_sigma, n_t, 2, 2)``.

    ``c`` is a scalar or per-node array (must be ``<= 0``); ``drift`` is an
    optional ``(n_sigma, n_t, 2)`` first-order coefficient in (sigma, t).
    """
    metric = np.asarray(metric, dtype=float)
    if metric.shape != grid.shape + (2, 2):
        raise ValueError(f"metric must have shape {grid.shape + (2, 2)}")
    g11, g12, g22 = metric[..., 0, 0], metric[..., 0, 1], metric[..., 1, 1]
    det = g11 * g22 - g12**2
    interior = np.zeros(grid.shape, dtype=bool)
    interior[:, 1:-1] = True
    bad = interior & ((g11 <= 0) | (det <= 0) | ~np.isfinite(det))
    if np.any(bad):
        node = tuple(int(x) for x in np.argwhere(bad)[0])
        raise NonEllipticNode(node)
    inv = np.empty_like(metric)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv[..., 0, 0] = g22 / det
        inv[..., 1, 1] = g11 / det
        inv[..., 0, 1] = inv[..., 1, 0] = -g12 / det
    c = np.broadcast_to(np.asarray(c, dtype=float), grid.shape).copy()
    if np.any(c > 0):
        raise ValueError("zeroth-order coefficient must be <= 0")

    ns, nt = grid.shape
    hs, ht = grid.h_sigma, grid.h_t
    I, J = np.meshgrid(np.arange(ns), np.arange(1, nt - 1), indexing="ij")
    I, J = I.ravel(), J.ravel()
    a11 = inv[I, J, 0, 0]
    a12 = inv[I, J, 0, 1]
    a22 = inv[I, J, 1, 1]
    row = I * nt + J

    rows, cols, vals = [], [], []

    def add(ii, jj, v):
        rows.append(row)
        cols.append(ii * nt + jj)
        vals.append(v)

    ip = _sigma_index(grid, I, 1)
    im = _sigma_index(grid, I, -1)
    q = 0.25 * a11
    if grid.kind == FOOTBALL:
        r = grid.sigma[I]
        axis = I == 0
        safe_r = np.where(axis, 1.0, r)
        cp = np.where(axis, 2.0 / hs**2, 1.0 / hs**2 + 1.0 / (2 * hs * safe_r))
        cm = np.where(axis, 2.0 / hs**2, 1.0 / hs**2 - 1.0 / (2 * hs * safe_r))
        c0 = np.where(axis, -4.0 / hs**2, -2.0 / hs**2)
    else:
        cp = cm = np.full(I.shape, 1.0 / hs**2)
        c0 = np.full(I.shape, -2.0 / hs**2)
    add(ip, J, q * cp)
    add(im, J, q * cm)
    add(I, J, q * c0)
    # mixed term 2 * a12 * (v_st / 4)
    qm = 0.5 * a12 / (4 * hs * ht)
    add(ip, J + 1, qm)
    add(ip, J - 1, -qm)
    add(im, J + 1, -qm)
    add(im, J - 1, qm)
    qt = 0.25 * a22 / ht**2
    add(I, J + 1, qt)
    add(I, J - 1, qt)
    add(I, J, -2 * qt)
    if drift is not None:
        drift = np.asarray(drift, dtype=float)
        b1, b2 = drift[I, J, 0], drift[I, J, 1]
        add(ip, J, b1 / (2 * hs))
        add(im, J, -b1 / (2 * hs))
        add(I, J + 1, b2 / (2 * ht))
        add(I, J - 1, -b2 / (2 * ht))
    add(I, J, c[I, J])
    # Dirichlet rows
    bi = np.concatenate([np.arange(ns), np.arange(ns)])
    bj = np.concatenate([np.zeros(ns, dtype=int), np.full(ns, nt - 1)])
    rows.append(bi * nt + bj)
    cols.append(bi * nt + bj)
    vals.append(np.ones(2 * ns))

    n = ns * nt
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    A.sum_duplicates()
    return LinearOperator(grid, inv, c, A, drift)


def _as_array(grid, f):
    if f is None:
        return np.zeros(grid.shape)
    if isinstance(f, Field):
        f = f.values
    return np.broadcast_to(np.asarray(f, dtype=float), grid.shape)


def solve_dirichlet(op: LinearOperator, rhs, boundary=None, rtol: float = 1e-10,
                    atol: float = 1e-12, maxiter: int = 500) -> Field:
    """Solve ``L v = rhs`` inside, ``v = boundary`` on the t-faces."""
    grid = op.grid
    rhs = _as_array(grid, rhs)
    bnd = _as_array(grid, boundary)
    b = rhs.copy()
    b[:, 0] = bnd[:, 0]
    b[:, -1] = bnd[:, -1]
    b = b.reshape(-1)
    A = op.matrix
    target = rtol * np.abs(b).max() + atol
    if A.shape[0] <= DIRECT_LIMIT:
        lu = spla.splu(A.tocsc())
        x = lu.solve(b)
        res = b - A @ x
        for _ in range(3):
            if np.abs(res).max() <= target:
                break
            x = x + lu.solve(res)
            res = b - A @ x
    else:
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-6, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)
        x, _ = spla.gmres(A, b, M=M, rtol=0.0, atol=target, restart=100, maxiter=maxiter)
        res = b - A @ x
    err = np.abs(res).max()
    if not np.isfinite(err) or err > target:
        raise SolverStall(f"linear residual {err:.3e} above target {target:.3e}")
    return Field(grid, x.reshape(grid.shape))


@dataclass
class MaxPrincipleVerdict:
    applicable: bool  # L v >= 0 in the interior
    margin: float  # sup_boundary v+ - sup_interior v
    passed: bool


def max_principle_check(op: LinearOperator, v, tol: float = 1e-12) -> MaxPrincipleVerdict:
    """Weak maximum principle: ``L v >= 0``, ``c <= 0`` gives ``sup v <= sup_bdry v+``."""
    vals = v.values if isinstance(v, Field) else np.asarray(v, dtype=float)
    Lv = op.apply(vals)
    interior = op.interior()
    scale = max(1.0, np.abs(vals).max())
    applicable = bool(np.all(Lv[interior] >= -tol * scale / op.grid.h**2))
    sup_b = max(0.0, float(vals[:, [0, -1]].max()))
    margin = sup_b - float(vals[interior].max())
    return MaxPrincipleVerdict(applicable, margin, (not applicable) or margin >= -tol * scale)


def omega_operator(grid: ReducedGrid, c=0.0) -> LinearOperator:
    """``Delta_Omega + c`` for the background product metric."""
    return assemble(background_metric(grid), c, grid)


def upper_barrier(boundary, grid: ReducedGrid, metric=None, n: int = 1) -> Field:
    """``h`` with ``Delta h = -(n + 1)`` inside and ``h = boundary`` on the faces."""
    op = omega_operator(grid) if metric is None else assemble(metric, 0.0, grid)
    return solve_dirichlet(op, np.full(grid.shape, -(n + 1.0)), boundary)


def harnack_ratio(v, grid: ReducedGrid, center, radius: float) -> float:
    """``sup / inf`` of a nonnegative field over a lifted-coordinate ball (interior nodes only)."""
    vals = v.values if isinstance(v, Field) else np.asarray(v, dtype=float)
    s0, t0 = center
    ds = grid.sigma[:, None] - s0
    if grid.kind == TORUS:
        P = grid.geom.period
        ds = (ds + 0.5 * P) % P - 0.5 * P
    dist = np.hypot(ds, grid.t[None, :] - t0)
    mask = dist <= radius
    mask[:, [0, -1]] = False
    if not np.any(mask):
        raise ValueError("ball contains no interior node")
    sel = vals[mask]
    if sel.min() <= 0:
        return float("inf")
    return float(sel.max() / sel.min())
