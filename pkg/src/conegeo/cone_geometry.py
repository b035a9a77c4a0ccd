"""Background cone geometry in lifted coordinates.

All metric data is expressed in the lifted chart ``w = |z|**(beta - 1) * z``
where the flat cone metric reads ``dr**2 + beta**2 r**2 dtheta**2``.  For a
rotation-invariant Kähler metric ``g(|z|) |dz|**2`` the lifted form is
``A(r) * (dr**2 + beta**2 r**2 dtheta**2)``; the scalar ``A`` (the *lifted
density*) stays bounded and positive at the divisor, which is what makes the
reduced discretisation regular there.

On the football the divisor is ``{0} + {inf}``; the model metric is built from
both components so that it is invariant under ``z -> 1/conj(z)``.  Only the
hemisphere ``|z| <= 1`` (``r <= 1``) is ever sampled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from conegeo.errors import ConfigError, DegenerateFit, NonPositive, NonPositiveMetric

TORUS = "TorusSmooth"
FOOTBALL = "FootballCone"
KINDS = (TORUS, FOOTBALL)


@dataclass(frozen=True)
class ConeStructure:
    """Cone angle ``2 pi beta`` plus the numerical parameters tied to it.

    ``kappa`` is the exponent of the barrier ``S = |s|**(2 kappa)`` and
    ``alpha`` the Hölder exponent; both get admissible defaults when omitted.
    ``beta = 1`` is accepted as the smooth baseline.
    """

    beta: float
    delta: float = 0.1
    kappa: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        beta = float(self.beta)
        if not 0.0 < beta <= 1.0:
            raise ConfigError(f"cone angle invariant 0 < beta < 1 violated: beta={beta}")
        if self.delta < 0:
            raise ConfigError(f"model metric coefficient delta must be >= 0, got {self.delta}")
        alpha_max = 1.0 if beta == 1.0 else min(1.0, 1.0 / beta - 1.0)
        alpha = 0.5 * alpha_max if self.alpha is None else float(self.alpha)
        if not 0.0 < alpha < alpha_max:
            raise ConfigError(
                f"Hölder exponent must satisfy 0 < alpha < min(1, 1/beta - 1) = {alpha_max:g}, got {alpha}"
            )
        kappa = 0.5 * beta * (1.0 + 0.5 * alpha) if self.kappa is None else float(self.kappa)
        if not beta <= 2.0 * kappa < (1.0 + alpha) * beta:
            raise ConfigError(
                f"barrier exponent must satisfy beta <= 2 kappa < (1 + alpha) beta, got kappa={kappa}"
            )
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "kappa", kappa)

    @property
    def mu(self) -> float:
        return 1.0 / self.beta - 1.0


@dataclass(frozen=True)
class GeometryDescriptor:
    """Which manifold ``X`` we work on.

    ``TorusSmooth`` is the square torus of side ``period`` with its flat
    metric (no divisor).  ``FootballCone`` is the sphere with cone points of
    equal angle at ``z = 0`` and ``z = inf``; its lifted chart has radius 1.
    """

    kind: str
    period: float = 1.0
    cone: ConeStructure | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown geometry kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == TORUS:
            if self.cone is not None and self.cone.beta != 1.0:
                raise ConfigError("TorusSmooth forces beta = 1")
            if self.period <= 0:
                raise ConfigError("torus period must be positive")
        elif self.cone is None:
            raise ConfigError("FootballCone needs a ConeStructure")

    @classmethod
    def torus(cls, period: float = 1.0) -> "GeometryDescriptor":
        return cls(TORUS, period=period)

    @classmethod
    def football(cls, beta: float, delta: float = 0.1, **kw) -> "GeometryDescriptor":
        return cls(FOOTBALL, cone=ConeStructure(beta, delta, **kw))

    @property
    def beta(self) -> float:
        return 1.0 if self.cone is None else self.cone.beta

    @property
    def volume(self) -> float:
        """Exact volume of ``(X, omega)``."""
        if self.kind == TORUS:
            return self.period**2
        return 2.0 * np.pi

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == TORUS:
            out["period"] = self.period
        else:
            c = self.cone
            out.update(beta=c.beta, delta=c.delta, kappa=c.kappa, alpha=c.alpha)
        return out


@dataclass
class MetricSample:
    """Rotation-invariant metric sampled at lifted radii.

    ``g_ww`` is the lifted density ``A(r)``: the metric equals
    ``g_ww * (dr**2 + beta**2 r**2 dtheta**2) + dt**2``.  ``christoffel``
    holds ``dA/dr``, the only first derivative that survives the symmetry.
    """

    r: np.ndarray
    beta: float
    g_ww: np.ndarray
    g_tt: np.ndarray
    christoffel: np.ndarray
    extra: dict = field(default_factory=dict)

    def frame_matrix(self) -> np.ndarray:
        """Coefficients in the (dr, r dtheta) coframe, shape ``(len(r), 2, 2)``."""
        m = np.zeros(self.g_ww.shape + (2, 2))
        m[..., 0, 0] = self.g_ww
        m[..., 1, 1] = self.g_ww * self.beta**2
        return m


def _beta(cone) -> float:
    return float(cone.beta if hasattr(cone, "beta") else cone)


def w_map(z, cone):
    """Lift ``z -> |z|**(beta-1) z``; ``0`` maps to ``0``."""
    beta = _beta(cone)
    z = np.asarray(z, dtype=complex)
    mod = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(mod > 0, mod ** (beta - 1.0) * z, 0.0)
    return out[()] if out.ndim == 0 else out


def w_map_inverse(w, cone):
    beta = _beta(cone)
    w = np.asarray(w, dtype=complex)
    mod = np.abs(w)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(mod > 0, mod ** (1.0 / beta - 1.0) * w, 0.0)
    return out[()] if out.ndim == 0 else out


def flat_cone_metric(r, cone) -> MetricSample:
    beta = _beta(cone)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r < 0):
        raise ValueError("lifted radius must be nonnegative")
    one = np.ones_like(r)
    return MetricSample(r, beta, one, one.copy(), np.zeros_like(r),
                        extra={"g_rr": one.copy(), "g_thth": beta**2 * r**2})


# --- football densities -------------------------------------------------

def _u(r, beta):
    return r ** (2.0 / beta)


def round_density(r, beta):
    """Round metric of area 2 pi, ``2/(1+|z|^2)^2``, in lifted form."""
    u = _u(r, beta)
    return 2.0 / (1.0 + u) ** 2 * u ** (1.0 - beta) / beta**2


def model_density(r, cone):
    """Lifted density of ``omega0 + delta ddbar(|s_0|^(2b) + |s_inf|^(2b))``.

    ``|s_0|^2 = |z|^2/(1+|z|^2)`` and ``|s_inf|^2 = 1/(1+|z|^2)``.  Accepts
    complex ``r`` so derivatives can be taken by complex step.
    """
    beta, delta = cone.beta, cone.delta
    u = _u(r, beta)
    base = 2.0 / (1.0 + u) ** 2 * u ** (1.0 - beta) / beta**2
    if delta == 0.0:
        return base
    w = (1.0 + u) ** (-beta - 2.0)
    zero_part = delta * w * (beta - u) / beta
    inf_part = -delta * w * (1.0 - beta * u) * u ** (1.0 - beta) / beta
    return base + zero_part + inf_part


def model_potential(r, cone):
    """Kähler potential of the model metric: ``ddbar`` of it is ``g(z)``."""
    beta, delta = cone.beta, cone.delta
    u = _u(r, beta)
    return 2.0 * np.log1p(u) + delta * ((u / (1.0 + u)) ** beta + (1.0 + u) ** (-beta))


def _complex_step(fun, r, step=1e-30):
    r = np.asarray(r, dtype=float)
    return np.imag(fun(r + 1j * step * np.maximum(r, 1e-300))) / (step * np.maximum(r, 1e-300))


def model_metric(r, geom: GeometryDescriptor) -> MetricSample:
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if geom.kind == TORUS:
        one = np.ones_like(r)
        return MetricSample(r, 1.0, one, one.copy(), np.zeros_like(r))
    cone = geom.cone
    if np.any((r < 0) | (r > 1 + 1e-12)):
        raise ValueError("football chart radius must lie in [0, 1]")
    dens = model_density(r, cone)
    # the smooth background (delta = 0) degenerates on the divisor itself
    bad_mask = ~np.isfinite(dens) | (dens < 0) | ((dens == 0) & (r > 0))
    if cone.delta > 0:
        bad_mask |= dens <= 0
    if np.any(bad_mask):
        bad = int(np.argmax(bad_mask))
        raise NonPositive(
            f"model metric not positive at r={r[bad]:.4g} (beta={cone.beta}, delta={cone.delta}); "
            "choose a smaller delta"
        )
    pos = r > 0
    dA = np.zeros_like(r)
    dA[pos] = _complex_step(lambda x: model_density(x, cone), r[pos])
    return MetricSample(r, cone.beta, dens, np.ones_like(r), dA)


def quasi_isometry_constant(geom: GeometryDescriptor, n: int = 257) -> float:
    """Smallest ``Q`` with ``1/Q <= A(r) <= Q`` on a uniform sample of [0, 1]."""
    r = np.linspace(0.0, 1.0, n)
    a = model_metric(r, geom).g_ww
    return float(max(a.max(), 1.0 / a.min()))


# --- barrier ----------------------------------------------------------------

def barrier_S(r, cone):
    """``S = (rho^2/(1+rho^2))**kappa`` with ``rho = r**(1/beta)``; zero on the divisor."""
    r = np.asarray(r, dtype=float)
    u = _u(r, cone.beta)
    return (u / (1.0 + u)) ** cone.kappa


@dataclass
class BarrierBounds:
    hessian_lower: float  # C with ddbar S >= -C Omega on the sample
    grad_sup: float  # sup |dS|_Omega (real gradient)
    n: int


def barrier_bounds(geom: GeometryDescriptor, n: int = 129) -> BarrierBounds:
    """Discrete check of the two barrier properties on ``n`` radial nodes.

    ``ddbar S`` is taken with the same centred radial stencil the solver uses
    (axis and equator excluded, where the barrier is not used).
    """
    cone = geom.cone
    r = np.linspace(0.0, 1.0, n)
    h = r[1] - r[0]
    s = barrier_S(r, cone)
    a = model_density(r, cone)
    ri = r[1:-1]
    srr = (s[2:] - 2 * s[1:-1] + s[:-2]) / h**2
    sr = (s[2:] - s[:-2]) / (2 * h)
    ddbar = 0.25 * (srr + sr / ri) / a[1:-1]
    grad = np.abs(sr) / np.sqrt(a[1:-1])
    return BarrierBounds(float(max(0.0, -ddbar.min())), float(grad.max()), n)


# --- diagnostics --------------------------------------------------------------

@dataclass
class ConnectionReport:
    beta: float
    radii: np.ndarray
    derivative: np.ndarray
    slope: float
    predicted: float
    bounded: bool


def connection_probe(geom: GeometryDescriptor, radii: Sequence[float]) -> ConnectionReport:
    """Log-log growth rate of ``|dA/dr|`` as ``r -> 0``.

    The derivative of the lifted density behaves like
    ``r**(2/beta - 3) + r**(2/beta - 1)``, so it stays bounded exactly when
    ``beta <= 2/3``.
    """
    if geom.kind != FOOTBALL:
        raise ConfigError("connection_probe needs the FootballCone geometry")
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise DegenerateFit("radii must be positive")
    if np.log10(radii.max() / radii.min()) < 2.0:
        raise DegenerateFit("radii must span at least two decades")
    dA = np.abs(model_metric(radii, geom).christoffel)
    if np.any(dA == 0):
        raise DegenerateFit("metric derivative vanishes on the sample")
    slope = float(np.polyfit(np.log(radii), np.log(dA), 1)[0])
    beta = geom.beta
    predicted = min(2.0 / beta - 3.0, 2.0 / beta - 1.0) if beta < 1 else 1.0
    return ConnectionReport(beta, radii, dA, slope, predicted, slope >= -0.05)


@dataclass
class CurvatureReport:
    ricci_min: float
    ricci_max: float
    components: dict  # name -> (inf, sup)
    nodes: int


def curvature_probe(phi0, phi1, grid, m: float = 1.0, exclude_axis: int = 2) -> CurvatureReport:
    """Curvature of the initial-path metric ``Omega_1`` built from two slices.

    Ricci is reported as the eigenvalues of ``Omega_1^{-1} Ric``; on the
    torus the full set of independent bisectional components is evaluated,
    on the football only those differentiated along the strip direction
    (the rest are not frame-invariant in the lifted chart).  Nodes within
    ``exclude_axis`` of the divisor image are skipped.
    """
    from conegeo import grid as G

    phi0 = np.asarray(phi0, dtype=float)
    phi1 = np.asarray(phi1, dtype=float)
    t = grid.t
    A = grid.density[:, None]
    psi = phi1 - phi0
    line = (1 - t)[None, :] * phi0[:, None] + t[None, :] * phi1[:, None]
    g11 = A + 0.25 * G.lap_sigma(grid, line)
    g12 = np.broadcast_to(0.25 * G.d_sigma(grid, psi)[:, None], g11.shape).copy()
    g22 = np.full_like(g11, float(m))
    det = g11 * g22 - g12**2
    if np.any(g11 <= 0) or np.any(det <= 0):
        raise NonPositiveMetric("Omega_1 is not positive on the grid; raise m or check potentials")

    logdet = np.log(det)
    ric11 = -0.25 * G.lap_sigma(grid, logdet)
    ric12 = -0.25 * G.d_sigma_t(grid, logdet)
    ric22 = -0.25 * G.d_tt(grid, logdet)
    ev = _generalised_eigs(ric11, ric12, ric22, g11, g12, g22)

    # derivatives along sigma / t of the metric entries; d_k = 1/2 d_{a_k}
    ent = {"11": g11, "12": g12, "22": g22}
    dt = {k: 0.5 * G.d_t(grid, v) for k, v in ent.items()}
    dtt = {k: 0.25 * G.d_tt(grid, v) for k, v in ent.items()}
    inv11, inv12, inv22 = g22 / det, -g12 / det, g11 / det
    inv = {"11": inv11, "12": inv12, "21": inv12, "22": inv22}

    def key(a, b):
        return "".join(sorted(a + b))

    def R_tt(i, j):
        # R_{i jbar 2 2bar}: both differentiations along the strip direction
        val = -dtt[key(i, j)]
        for p in "12":
            for q in "12":
                val = val + inv[p + q] * dt[key(p, j)] * dt[key(i, q)]
        return val

    comps = {"R_11bar22bar": R_tt("1", "1"), "R_12bar22bar": R_tt("1", "2"), "R_22bar22bar": R_tt("2", "2")}
    if grid.kind == TORUS:
        ds = {k: 0.5 * G.d_sigma(grid, v) for k, v in ent.items()}
        dss = {k: 0.25 * G.lap_sigma(grid, v) for k, v in ent.items()}
        dst = {k: 0.25 * G.d_sigma_t(grid, v) for k, v in ent.items()}

        def R(i, j, k, l):
            d = {"1": ds, "2": dt}
            second = {("1", "1"): dss, ("2", "2"): dtt, ("1", "2"): dst, ("2", "1"): dst}
            val = -second[(k, l)][key(i, j)]
            for p in "12":
                for q in "12":
                    val = val + inv[p + q] * d[l][key(p, j)] * d[k][key(i, q)]
            return val

        comps.update({"R_11bar11bar": R("1", "1", "1", "1"), "R_11bar12bar": R("1", "1", "1", "2")})

    sl = slice(exclude_axis, grid.n_sigma - 1) if grid.kind == FOOTBALL else slice(None)
    out = {name: (float(v[sl].min()), float(v[sl].max())) for name, v in comps.items()}
    evs = ev[sl]
    return CurvatureReport(float(evs.min()), float(evs.max()), out, int(evs[..., 0].size))


def _generalised_eigs(r11, r12, r22, g11, g12, g22):
    """Eigenvalues of ``g^{-1} R`` for 2x2 symmetric fields (ascending)."""
    det = g11 * g22 - g12**2
    a11 = (g22 * r11 - g12 * r12) / det
    a12 = (g22 * r12 - g12 * r22) / det
    a21 = (g11 * r12 - g12 * r11) / det
    a22 = (g11 * r22 - g12 * r12) / det
    tr = a11 + a22
    disc = np.sqrt(np.maximum((a11 - a22) ** 2 + 4 * a12 * a21, 0.0))
    return np.stack([(tr - disc) / 2, (tr + disc) / 2], axis=-1)
