"""L2 (Mabuchi) geometry on the space of potentials and metric-space checks."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from conegeo.grid import ReducedGrid, d_t, gradient_pairing, integrate, slice_density


@dataclass(eq=False)
class GeodesicPath:
    """Time-sliced potentials ``phi[:, j] = phi(t_j)``.

    ``epsilon`` and ``f`` record the approximate-geodesic equation the path
    solves: ``(phi'' - |d phi'|^2) det g_phi = epsilon f det g``.
    """

    grid: ReducedGrid
    phi: np.ndarray
    epsilon: float = 0.0
    f: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def slices(self) -> list[np.ndarray]:
        return [self.phi[:, j] for j in range(self.grid.n_t)]

    @property
    def slice_metrics(self) -> np.ndarray:
        if "dens" not in self._cache:
            self._cache["dens"] = slice_density(self.grid, self.phi)
        return self._cache["dens"]

    @property
    def velocity(self) -> np.ndarray:
        return d_t(self.grid, self.phi)

    @property
    def energies(self) -> np.ndarray:
        return energy_and_length(self)[0]


@dataclass
class DistanceRecord:
    phi0: np.ndarray
    phi1: np.ndarray
    length: float
    energies: np.ndarray
    epsilon: float
    h: float
    tags: dict = field(default_factory=dict)


@dataclass
class SolverConfig:
    tau_min: float = 1e-5
    a_param: int = 1
    tol: float = 1e-10


def mabuchi_inner(psi1, psi2, phi, grid: ReducedGrid) -> float:
    """``int psi1 psi2 omega_phi``."""
    dens = slice_density(grid, phi)
    return integrate(np.asarray(psi1) * np.asarray(psi2), dens, grid)


def covariant_Dt(path: GeodesicPath, vf) -> np.ndarray:
    """``D_t psi = psi_t - (d psi, d phi')_{g_phi}`` on every slice."""
    vf = np.asarray(vf, dtype=float)
    return d_t(path.grid, vf) - gradient_pairing(path.grid, vf, path.velocity, path.slice_metrics)


def energy_and_length(path: GeodesicPath):
    grid = path.grid
    v = path.velocity
    dens = path.slice_metrics
    E = np.array([integrate(v[:, j] ** 2, dens[:, j], grid) for j in range(grid.n_t)])
    length = float(np.sum(np.sqrt(np.maximum(E, 0.0)) * grid.t_weights))
    return E, length


def energy_derivative(path: GeodesicPath) -> dict:
    """Energy drift along the path versus its epsilon bound.

    ``fd`` differentiates the energy trace; ``identity`` evaluates
    ``2 int phi' (phi'' - |d phi'|^2) omega_phi`` slice by slice.
    """
    grid = path.grid
    E, _ = energy_and_length(path)
    v = path.velocity
    dens = path.slice_metrics
    acc = d_t(grid, v) - gradient_pairing(grid, v, v, dens)
    ident = np.array([2.0 * integrate(v[:, j] * acc[:, j], dens[:, j], grid) for j in range(grid.n_t)])
    fd = np.gradient(E, grid.h_t, edge_order=2)
    f_sup = float(np.abs(path.f).max()) if path.f is not None else 0.0
    bound = 2.0 * path.epsilon * float(np.abs(v).max()) * f_sup * grid.geom.volume
    return {"fd": fd, "identity": ident, "bound": bound}


def I_functional(phi, grid: ReducedGrid) -> float:
    """``(1/V) [int phi omega - 1/2 int |d phi|^2_omega omega]`` (one complex dimension).

    ``V`` is the quadrature volume, so that ``I(phi + c) = I(phi) + c`` exactly.
    """
    phi = np.asarray(phi, dtype=float)
    V = integrate(np.ones_like(phi), None, grid)
    return (integrate(phi, None, grid) - 0.5 * integrate(gradient_pairing(grid, phi, phi), None, grid)) / V


def normalize_I(phi, grid: ReducedGrid) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    return phi - I_functional(phi, grid)


def distance(phi0, phi1, grid: ReducedGrid, config: SolverConfig | None = None,
             normalize: bool = False) -> DistanceRecord:
    """Length of the numerical geodesic between two potentials.

    Endpoints are used as given; ``normalize=True`` first moves both onto
    ``I = 0`` (which identifies potentials differing by a constant).
    """
    from conegeo.hcma import BoundaryData, continuation, default_schedule

    config = config or SolverConfig()
    a = normalize_I(phi0, grid) if normalize else np.asarray(phi0, dtype=float)
    b = normalize_I(phi1, grid) if normalize else np.asarray(phi1, dtype=float)
    run = continuation(BoundaryData(a, b), grid, default_schedule(config.tau_min), config.a_param, config.tol)
    E, L = energy_and_length(run.path())
    return DistanceRecord(a, b, L, E, run.tau_min, grid.h, {"m": run.m, "n_tau": len(run.taus)})


def length_lower_bound(phi, grid: ReducedGrid) -> dict:
    """Lower bound for the length of the geodesic from 0 to ``phi``.

    Returns the expression with the negative-part integral taken literally
    and with its absolute value.
    """
    phi = np.asarray(phi, dtype=float)
    V = grid.geom.volume
    pos = integrate(np.where(phi > 0, phi, 0.0), slice_density(grid, phi), grid)
    neg = integrate(np.where(phi < 0, phi, 0.0), grid.density0, grid)
    return {"literal": max(pos, neg) / np.sqrt(V), "absolute": max(pos, abs(neg)) / np.sqrt(V)}


def metric_space_suite(samples, grid: ReducedGrid, config: SolverConfig | None = None,
                       tol: float | None = None, normalize: bool = False) -> dict:
    """Pairwise distances, symmetry, triangle and positivity checks."""
    config = config or SolverConfig()
    if len(samples) < 3:
        raise ValueError("metric_space_suite needs at least three samples")
    if tol is None:
        tol = 10.0 * (grid.h**2 + config.tau_min)
    samples = [normalize_I(s, grid) if normalize else np.asarray(s, dtype=float) for s in samples]
    n = len(samples)
    D = np.zeros((n, n))
    for i, j in itertools.permutations(range(n), 2):
        D[i, j] = distance(samples[i], samples[j], grid, config).length
    sym_err = float(np.abs(D - D.T).max())
    Ds = 0.5 * (D + D.T)
    triangles = []
    for i, j, k in itertools.permutations(range(n), 3):
        if i < k:
            triangles.append({"triple": [i, j, k], "margin": float(Ds[i, j] + Ds[j, k] - Ds[i, k])})
    tri_viol = [t for t in triangles if t["margin"] < -tol]
    pos_viol = []
    for i, j in itertools.combinations(range(n), 2):
        if np.abs(samples[i] - samples[j]).max() > 10 * tol and Ds[i, j] <= 0:
            pos_viol.append([i, j])
    bounds = []
    for i, j in itertools.permutations(range(n), 2):
        diff = normalize_I(samples[j] - samples[i], grid)
        lb = length_lower_bound(diff, grid)
        bounds.append({"pair": [i, j], **lb})
    return {
        "distances": D.tolist(),
        "symmetry_error": sym_err,
        "tol": tol,
        "triangles": triangles,
        "triangle_violations": tri_viol,
        "positivity_violations": pos_viol,
        "length_lower_bounds": bounds,
    }
