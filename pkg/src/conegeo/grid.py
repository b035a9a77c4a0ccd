"""Reduced (sigma, t) grids, cone-aware stencils and quadrature.

Potentials are rotation invariant on ``X`` and independent of the imaginary
strip coordinate, so every field lives on a 2D lattice: ``sigma`` is the
lifted radius ``r`` in ``[0, 1]`` (football) or the periodic coordinate
``x`` in ``[0, P)`` (torus), and ``t`` runs over ``[0, 1]``.

Football ends use even reflection: ``f(-h) = f(h)`` at the axis and
``f(1 + h) = f(1 - h)`` at the equator, so first sigma-derivatives vanish
there.  All stencils are centred and second order; t-derivatives on the two
faces fall back to second-order one-sided formulas.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass

import numpy as np

from conegeo.cone_geometry import FOOTBALL, TORUS, GeometryDescriptor, model_metric, round_density
from conegeo.errors import BadResolution

INTERIOR, FACE_T0, FACE_T1, AXIS, EQUATOR = 0, 1, 2, 3, 4
TAG_NAMES = {INTERIOR: "interior", FACE_T0: "t=0 face", FACE_T1: "t=1 face", AXIS: "axis", EQUATOR: "equator"}


@dataclass(frozen=True, eq=False)
class ReducedGrid:
    geom: GeometryDescriptor
    n_sigma: int
    n_t: int
    sigma: np.ndarray
    t: np.ndarray
    density: np.ndarray  # lifted density of omega at sigma nodes
    density0: np.ndarray  # lifted density of the smooth background omega_0
    sigma_weights: np.ndarray  # integral over X of f * (lifted density) = sum f * w
    t_weights: np.ndarray
    boundary_mask: np.ndarray

    @property
    def kind(self) -> str:
        return self.geom.kind

    @property
    def h_sigma(self) -> float:
        return float(self.sigma[1] - self.sigma[0])

    @property
    def h_t(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def h(self) -> float:
        return max(self.h_sigma, self.h_t)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_sigma, self.n_t)

    @property
    def quad_weights(self) -> np.ndarray:
        """Weights for ``int f omega dt`` over ``X x [0, 1]``."""
        return np.outer(self.sigma_weights * self.density, self.t_weights)

    def descriptor(self) -> dict:
        return {"geometry": self.geom.to_dict(), "n_sigma": self.n_sigma, "n_t": self.n_t}

    def geometry_hash(self) -> str:
        blob = json.dumps(self.descriptor(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def field(self, values) -> "Field":
        return Field(self, np.asarray(values, dtype=float))


@dataclass(frozen=True, eq=False)
class Field:
    """Scalar grid function; values have shape ``(n_sigma,)`` or ``(n_sigma, n_t)``."""

    grid: ReducedGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape not in {(self.grid.n_sigma,), self.grid.shape}:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def __add__(self, other):
        other = other.values if isinstance(other, Field) else other
        return Field(self.grid, self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, Field) else other
        return Field(self.grid, self.values - other)

    def __mul__(self, c):
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__

    def slice(self, j: int) -> np.ndarray:
        return self.values[:, j]

    # serialisation -----------------------------------------------------
    def header(self, name: str = "field") -> dict:
        return {"name": name, **self.grid.descriptor(), "geometry_hash": self.grid.geometry_hash(),
                "shape": list(self.values.shape)}

    def to_csv(self) -> str:
        g = self.grid
        buf = io.StringIO()
        buf.write("node,sigma,t,value\n")
        if self.values.ndim == 1:
            for i, (s, v) in enumerate(zip(g.sigma, self.values)):
                buf.write(f"{i},{float(s)!r},,{float(v)!r}\n")
        else:
            k = 0
            for i in range(g.n_sigma):
                for j in range(g.n_t):
                    buf.write(f"{k},{float(g.sigma[i])!r},{float(g.t[j])!r},{float(self.values[i, j])!r}\n")
                    k += 1
        return buf.getvalue()

    @classmethod
    def from_csv(cls, grid: ReducedGrid, text: str) -> "Field":
        rows = [line.split(",") for line in text.strip().splitlines()[1:]]
        vals = np.array([float(r[3]) for r in rows])
        shape = (grid.n_sigma,) if rows and rows[0][2] == "" else grid.shape
        return cls(grid, vals.reshape(shape))


def make_grid(geom: GeometryDescriptor, n_sigma: int, n_t: int) -> ReducedGrid:
    if n_sigma < 16 or n_t < 8:
        raise BadResolution(f"need n_sigma >= 16 and n_t >= 8, got {n_sigma} x {n_t}")
    t = np.linspace(0.0, 1.0, n_t)
    tw = np.full(n_t, t[1] - t[0])
    tw[[0, -1]] *= 0.5
    mask = np.full((n_sigma, n_t), INTERIOR, dtype=np.int8)
    if geom.kind == TORUS:
        P = geom.period
        sigma = np.arange(n_sigma) * (P / n_sigma)
        dens = np.ones(n_sigma)
        dens0 = np.ones(n_sigma)
        # y-direction has length P as well
        sw = np.full(n_sigma, P * P / n_sigma)
    else:
        sigma = np.linspace(0.0, 1.0, n_sigma)
        dens = model_metric(sigma, geom).g_ww
        dens0 = round_density(sigma, geom.beta)
        h = sigma[1] - sigma[0]
        # area element beta r dr dtheta, both hemispheres, trapezoid in r
        sw = 2.0 * 2.0 * np.pi * geom.beta * sigma * h
        sw[-1] *= 0.5
        mask[0, :] = AXIS
        mask[-1, :] = EQUATOR
    mask[:, 0] = FACE_T0
    mask[:, -1] = FACE_T1
    return ReducedGrid(geom, n_sigma, n_t, sigma, t, dens, dens0, sw, tw, mask)


# --- stencils (sigma is axis 0, t is axis 1) --------------------------------

def _neighbours(grid: ReducedGrid, f):
    """Values at sigma +- h with periodic wrap or even reflection."""
    if grid.kind == TORUS:
        return np.roll(f, -1, axis=0), np.roll(f, 1, axis=0)
    ext_p = np.concatenate([f[1:], f[-2:-1]], axis=0)
    ext_m = np.concatenate([f[1:2], f[:-1]], axis=0)
    return ext_p, ext_m


def d_sigma(grid: ReducedGrid, f):
    f = np.asarray(f, dtype=float)
    fp, fm = _neighbours(grid, f)
    return (fp - fm) / (2.0 * grid.h_sigma)


def d_sigma_sigma(grid: ReducedGrid, f):
    f = np.asarray(f, dtype=float)
    fp, fm = _neighbours(grid, f)
    return (fp - 2.0 * f + fm) / grid.h_sigma**2


def lap_sigma(grid: ReducedGrid, f):
    """Flat lifted Laplacian in sigma: ``f_xx`` or ``f_rr + f_r / r`` (``2 f_rr`` on the axis)."""
    f = np.asarray(f, dtype=float)
    frr = d_sigma_sigma(grid, f)
    if grid.kind == TORUS:
        return frr
    fr = d_sigma(grid, f)
    out = frr.copy()
    r = grid.sigma.reshape((-1,) + (1,) * (f.ndim - 1))
    out[1:] = frr[1:] + fr[1:] / r[1:]
    out[0] = 2.0 * frr[0]
    return out


def d_t(grid: ReducedGrid, f):
    f = np.asarray(f, dtype=float)
    return np.gradient(f, grid.h_t, axis=1, edge_order=2)


def d_tt(grid: ReducedGrid, f):
    f = np.asarray(f, dtype=float)
    h = grid.h_t
    out = np.empty_like(f)
    out[:, 1:-1] = (f[:, 2:] - 2.0 * f[:, 1:-1] + f[:, :-2]) / h**2
    out[:, 0] = (2 * f[:, 0] - 5 * f[:, 1] + 4 * f[:, 2] - f[:, 3]) / h**2
    out[:, -1] = (2 * f[:, -1] - 5 * f[:, -2] + 4 * f[:, -3] - f[:, -4]) / h**2
    return out


def d_sigma_t(grid: ReducedGrid, f):
    return d_t(grid, d_sigma(grid, f))


def complex_hessian(psi) -> np.ndarray:
    """Reduced complex Hessian ``Psi_{i jbar}`` in the lifted frame.

    Returns shape ``(n_sigma, n_t, 2, 2)``; index 0 is the X direction and 1
    the strip direction.  The off-diagonal entry is stored as the real
    number ``Psi_{sigma t} / 4`` whose square is ``|Psi_{1 2bar}|**2``.
    """
    grid, v = psi.grid, psi.values
    H = np.empty(v.shape + (2, 2))
    H[..., 0, 0] = 0.25 * lap_sigma(grid, v)
    H[..., 1, 1] = 0.25 * d_tt(grid, v)
    H[..., 0, 1] = H[..., 1, 0] = 0.25 * d_sigma_t(grid, v)
    return H


def background_metric(grid: ReducedGrid) -> np.ndarray:
    """``Omega = omega + dz dzbar`` in the lifted frame, shape ``(n_sigma, n_t, 2, 2)``."""
    M = np.zeros(grid.shape + (2, 2))
    M[..., 0, 0] = grid.density[:, None]
    M[..., 1, 1] = 1.0
    return M


def slice_density(grid: ReducedGrid, phi) -> np.ndarray:
    """Lifted density of ``omega_phi = omega + ddbar phi`` for slice or stacked fields."""
    phi = np.asarray(phi, dtype=float)
    dens = grid.density.reshape((-1,) + (1,) * (phi.ndim - 1))
    return dens + 0.25 * lap_sigma(grid, phi)


# --- quadrature ----------------------------------------------------------------

def integrate(f, density=None, grid: ReducedGrid | None = None) -> float:
    """Quadrature of ``f`` against a slice volume form.

    ``density`` is the lifted density of the slice metric (default: the
    background ``omega``); for 2D fields it may vary with t and the result
    also integrates over ``t in [0, 1]``.
    """
    if isinstance(f, Field):
        grid, f = f.grid, f.values
    if grid is None:
        raise ValueError("integrate needs a Field or an explicit grid")
    f = np.asarray(f, dtype=float)
    if density is None:
        density = grid.density
    density = np.asarray(density, dtype=float)
    if density.ndim < f.ndim:
        density = density.reshape(density.shape + (1,) * (f.ndim - density.ndim))
    w = grid.sigma_weights.reshape((-1,) + (1,) * (f.ndim - 1))
    vals = f * density * w
    if f.ndim == 2:
        return float(np.sum(vals.sum(axis=0) * grid.t_weights))
    return float(vals.sum())


def gradient_pairing(grid: ReducedGrid, f1, f2, density=None):
    """Pointwise ``(df1, df2)`` for the complex gradient: ``f1_s f2_s / (4 A)``."""
    if density is None:
        density = grid.density
    density = np.asarray(density, dtype=float)
    f1 = np.asarray(f1, dtype=float)
    if density.ndim < f1.ndim:
        density = density.reshape(density.shape + (1,) * (f1.ndim - density.ndim))
    return 0.25 * d_sigma(grid, f1) * d_sigma(grid, f2) / density


def laplacian(grid: ReducedGrid, f, density=None):
    """Slice Laplacian ``tr_omega ddbar f`` in the lifted frame."""
    if density is None:
        density = grid.density
    density = np.asarray(density, dtype=float)
    f = np.asarray(f, dtype=float)
    if density.ndim < f.ndim:
        density = density.reshape(density.shape + (1,) * (f.ndim - density.ndim))
    return 0.25 * lap_sigma(grid, f) / density


def holder_norm_estimate(f: Field, alpha: float, n_pairs: int = 1000, seed: int = 0) -> float:
    """Sampled Hölder quotient ``max |f(p) - f(q)| / d(p, q)**alpha``.

    ``d`` is the Euclidean distance in lifted coordinates (periodic in x on
    the torus; on the football both points sit on the same ray).  Pairs are
    drawn from one seeded stream, so larger samples extend smaller ones.
    """
    grid, v = f.grid, f.values
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, v.size, size=(n_pairs, 2))
    if v.ndim == 1:
        i, j = idx[:, 0], idx[:, 1]
        sp, sq = grid.sigma[i], grid.sigma[j]
        tp = tq = np.zeros(n_pairs)
    else:
        i, j = np.unravel_index(idx[:, 0], v.shape), np.unravel_index(idx[:, 1], v.shape)
        sp, sq = grid.sigma[i[0]], grid.sigma[j[0]]
        tp, tq = grid.t[i[1]], grid.t[j[1]]
    ds = np.abs(sp - sq)
    if grid.kind == TORUS:
        ds = np.minimum(ds, grid.geom.period - ds)
    d = np.hypot(ds, tp - tq)
    flat = v.reshape(-1)
    num = np.abs(flat[idx[:, 0]] - flat[idx[:, 1]])
    ok = d > 0
    if not np.any(ok):
        return 0.0
    return float(np.max(num[ok] / d[ok] ** alpha))


def third_derivative_sup(grid: ReducedGrid, psi) -> float:
    """Discrete sup of first differences of the complex Hessian entries."""
    H = complex_hessian(Field(grid, np.asarray(psi)))
    out = 0.0
    for a, b in ((0, 0), (0, 1), (1, 1)):
        e = H[..., a, b]
        out = max(out, float(np.abs(d_sigma(grid, e)).max()), float(np.abs(d_t(grid, e)).max()))
    return out
