"""Command-line runner.

``conegeo run <config.json>`` executes one task and writes a run directory
(config echo, ``summary.json``, CSV monitor logs, field dumps).
``conegeo report <run_dir>`` turns a run directory into a pass/fail table,
a plot-ready ``tau_trace.csv`` and PNG figures.

Exit codes: 0 all enabled assertions pass, 1 an assertion failed or the run
aborted, 2 the configuration is invalid.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from conegeo.cone_geometry import (
    FOOTBALL,
    TORUS,
    GeometryDescriptor,
    barrier_bounds,
    connection_probe,
    curvature_probe,
    quasi_isometry_constant,
)
from conegeo.errors import (
    ConeGeoError,
    ConfigError,
    ContinuationAbort,
    MissingArtifacts,
    NonPositiveMetric,
)
from conegeo.grid import Field, ReducedGrid, make_grid

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG = 0, 1, 2
OUTPUT_ENV = "CONEGEO_OUTPUT"
DEFAULT_OUTPUT = "conegeo-runs"

MONITOR_COLUMNS = [
    "tau", "newton_residual", "newton_iterations", "lower_margin", "upper_margin", "bdry_grad",
    "bdry_grad_bound", "lap_ratio", "grad_sup", "c11_proxy", "third_sup", "slice_min", "det_min",
    "cauchy_c1", "energy_drift", "energy_bound",
]

# descriptive anchors for the checked inequalities
ANCHORS = {
    "lower_barrier": "lower barrier: Psi >= Psi_1 (initial path is a subsolution)",
    "upper_barrier": "upper barrier: Psi <= h with Delta_Omega h = -(n+1)",
    "boundary_gradient": "boundary gradient bound: |grad Psi| <= sup|grad Psi_1| + sup|grad h| on the faces",
    "newton": "tau-equation solved: log-form residual <= 1e-8",
    "energy": "energy estimate: |dE/dt| <= 2 eps sup|phi'| sup|f| Vol (x1.1)",
    "c11": "C^{1,1} proxy: complex Hessian within 2x of its tau=0.1 value",
    "continuation": "continuation reached tau_min",
    "triangle": "triangle inequality for the geodesic distance",
    "positivity": "geodesic length is positive for distinct potentials",
    "symmetry": "d(a, b) = d(b, a)",
    "area": "model metric area equals the cohomological volume",
    "connection": "connection growth near the divisor: |dA/dr| ~ r^(2/beta-3)",
    "quasi_isometry": "model metric quasi-isometric to the flat cone",
    "ke_residual": "Kahler-Einstein equation residual < 1e-9",
    "ke_oracle": "KE metric matches the constant-curvature football (rel. sup <= 1e-3)",
    "ke_order": "KE error converges at order 2 (in [1.8, 2.2])",
    "curvature_finite": "curvature of Omega_1 finite away from the divisor",
}


# --- configuration ------------------------------------------------------------

def _data_text(name: str) -> str:
    return resources.files("conegeo").joinpath("data", name).read_text()


def load_schema() -> dict:
    return json.loads(_data_text("config.schema.json"))


def load_samples() -> dict:
    return json.loads(_data_text("samples.json"))


def bundled_config(name: str) -> dict:
    return json.loads(_data_text(f"configs/{name}.json"))


@dataclass
class SolverSettings:
    a_param: int = 1
    tau_min: float = 1e-5
    tau_ratio: float = 0.5
    schedule: list | None = None
    tol: float = 1e-10
    seed: int = 0
    m: float = 1.0


@dataclass
class RunConfig:
    raw: dict
    task: str
    name: str
    geom: GeometryDescriptor
    grid: ReducedGrid
    refinements: int
    solver: SolverSettings
    data: dict
    ke: dict
    assertions: dict

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()[:12]

    def enabled(self, key: str) -> bool:
        return bool(self.assertions.get(key, True))


def canonical_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def parse_config(raw: dict) -> RunConfig:
    """Validate against the bundled schema and the module invariants."""
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    g = raw["geometry"]
    if g["kind"] == TORUS:
        extra = set(g) - {"kind", "period"}
        if extra:
            raise ConfigError(f"keys {sorted(extra)} do not apply to TorusSmooth")
        geom = GeometryDescriptor.torus(g.get("period", 1.0))
    else:
        if "beta" not in g:
            raise ConfigError("FootballCone needs beta")
        if "period" in g:
            raise ConfigError("period does not apply to FootballCone")
        geom = GeometryDescriptor.football(g["beta"], g.get("delta", 0.1), kappa=g.get("kappa"),
                                           alpha=g.get("alpha"))
    grid = make_grid(geom, raw["grid"]["n_sigma"], raw["grid"]["n_t"])
    solver = SolverSettings(**raw.get("solver", {}))
    if solver.schedule is not None:
        s = [float(x) for x in solver.schedule]
        if s[0] != 1.0 or any(b >= a for a, b in zip(s, s[1:])) or s[-1] <= 0:
            raise ConfigError("solver.schedule must start at 1 and decrease strictly to a positive floor")
    task = raw["task"]
    if task == "solve-ke" and geom.kind != FOOTBALL:
        raise ConfigError("solve-ke runs on the FootballCone geometry")
    name = raw.get("name", task)
    return RunConfig(raw, task, name, geom, grid, raw["grid"].get("refinements", 0), solver,
                     raw.get("data", {}), raw.get("ke", {}), raw.get("assertions", {}))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(raw)


def potential_from_config(desc: dict, grid: ReducedGrid, rng: np.random.Generator | None = None) -> np.ndarray:
    """Evaluate a potential description on the sigma nodes."""
    kind = desc["type"]
    x = grid.sigma
    if kind == "sample":
        table = load_samples()[grid.kind]
        if desc["name"] not in table:
            raise ConfigError(f"unknown sample {desc['name']!r} for {grid.kind}; have {sorted(table)}")
        return potential_from_config(table[desc["name"]], grid, rng)
    if kind == "constant":
        return np.full(grid.n_sigma, float(desc["value"]))
    if kind == "fourier":
        if grid.kind != TORUS:
            raise ConfigError("fourier potentials are for TorusSmooth")
        P = grid.geom.period
        out = np.full(grid.n_sigma, float(desc.get("constant", 0.0)))
        for amp, k, trig in desc["terms"]:
            arg = 2.0 * np.pi * k * x / P
            out += amp * (np.cos(arg) if trig == "cos" else np.sin(arg))
        return out
    if kind == "radial":
        if grid.kind != FOOTBALL:
            raise ConfigError("radial potentials are for FootballCone")
        q = x * x
        b = 4.0 * q / (1.0 + q) ** 2  # inversion-symmetric, smooth on the sphere
        out = np.full(grid.n_sigma, float(desc.get("constant", 0.0)))
        for k, c in enumerate(desc["coeffs"], start=1):
            out += c * b**k
        return out
    if kind == "random":
        rng = rng if rng is not None else np.random.default_rng(0)
        amp = float(desc.get("amplitude", 0.01))
        modes = int(desc.get("modes", 3))
        coef = rng.uniform(-1.0, 1.0, size=(modes, 2)) * amp / np.arange(1, modes + 1)[:, None] ** 2
        if grid.kind == TORUS:
            terms = [[float(c), k + 1, trig] for k in range(modes) for c, trig in zip(coef[k], ("cos", "sin"))]
            return potential_from_config({"type": "fourier", "terms": terms}, grid)
        return potential_from_config({"type": "radial", "coeffs": coef[:, 0].tolist()}, grid)
    raise ConfigError(f"unknown potential type {kind!r}")


def _potential(cfg: RunConfig, key: str, rng) -> np.ndarray:
    if key not in cfg.data:
        raise ConfigError(f"task {cfg.task} needs data.{key}")
    return potential_from_config(cfg.data[key], cfg.grid, rng)


# --- assertions ---------------------------------------------------------------

@dataclass
class Assertion:
    key: str
    margin: float  # >= 0 means satisfied
    passed: bool
    detail: str = ""

    @property
    def anchor(self) -> str:
        return ANCHORS[self.key]

    def as_dict(self) -> dict:
        return {"key": self.key, "anchor": self.anchor, "margin": self.margin, "passed": self.passed,
                "detail": self.detail}


def _check(key: str, margin: float, detail: str = "") -> Assertion:
    margin = float(margin)
    return Assertion(key, margin, bool(margin >= 0.0), detail)


@dataclass
class TaskOutput:
    results: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)
    monitors: list = field(default_factory=list)  # rows keyed by MONITOR_COLUMNS
    fields: dict = field(default_factory=dict)  # stem -> Field
    tables: dict = field(default_factory=dict)  # file name -> csv text
    aborted: bool = False
    abort_message: str = ""


# --- tasks ----------------------------------------------------------------------

def reference_index(taus, target: float = 0.1) -> int:
    """Schedule entry closest to ``target`` in log scale."""
    logs = np.abs(np.log(np.asarray(taus)) - math.log(target))
    return int(np.argmin(logs))


def task_geom_check(cfg: RunConfig, rng) -> TaskOutput:
    out = TaskOutput()
    geom, grid = cfg.geom, cfg.grid
    area = float(np.sum(grid.sigma_weights * grid.density))
    rel = abs(area - geom.volume) / geom.volume
    out.results["volume"] = {"numeric": area, "exact": geom.volume, "relative_error": rel}
    if cfg.enabled("geometry"):
        out.assertions.append(_check("area", 10.0 * grid.h**2 + 1e-12 - rel, f"relative error {rel:.3e}"))
    if geom.kind == FOOTBALL:
        cone = geom.cone
        out.results["cone"] = {"beta": cone.beta, "delta": cone.delta, "kappa": cone.kappa, "alpha": cone.alpha}
        Q = quasi_isometry_constant(geom)
        bb = barrier_bounds(geom, grid.n_sigma)
        conn = connection_probe(geom, np.logspace(-6, -3, 31))
        out.results["quasi_isometry_constant"] = Q
        out.results["barrier"] = asdict(bb)
        out.results["connection"] = {"slope": conn.slope, "predicted": conn.predicted,
                                     "bounded": conn.bounded, "beta_threshold": 2.0 / 3.0}
        if cfg.enabled("geometry"):
            out.assertions.append(_check("quasi_isometry", 1.0 if math.isfinite(Q) else -1.0, f"Q = {Q:.4g}"))
            if cone.beta <= 2.0 / 3.0:
                out.assertions.append(_check("connection", conn.slope + 0.05, f"slope {conn.slope:.4f} (bounded regime)"))
            else:
                out.assertions.append(_check("connection", 0.1 - abs(conn.slope - (2.0 / cone.beta - 3.0)),
                                             f"slope {conn.slope:.4f} vs {2.0 / cone.beta - 3.0:.4f}"))
    return out


def task_solve_geodesic(cfg: RunConfig, rng) -> TaskOutput:
    from conegeo.hcma import BoundaryData, continuation, default_schedule
    from conegeo.mabuchi import energy_and_length, energy_derivative

    out = TaskOutput()
    grid, s = cfg.grid, cfg.solver
    phi0 = _potential(cfg, "phi0", rng)
    phi1 = _potential(cfg, "phi1", rng)
    bd = BoundaryData(phi0, phi1, m_phi=s.m)
    schedule = s.schedule or default_schedule(s.tau_min, s.tau_ratio)
    try:
        run = continuation(bd, grid, schedule, s.a_param, s.tol)
    except ContinuationAbort as exc:
        run = exc.partial
        out.aborted = True
        out.abort_message = str(exc)
    h2 = grid.h**2
    for k, (tau, rep) in enumerate(zip(run.taus, run.reports)):
        ed = energy_derivative(run.path(k))
        row = rep.as_dict()
        row.update(newton_residual=run.residuals[k], newton_iterations=run.iterations[k],
                   energy_drift=float(np.abs(ed["fd"]).max()), energy_bound=ed["bound"])
        out.monitors.append(row)
    out.results["m"] = run.m
    out.results["a_param"] = s.a_param
    out.results["schedule_requested"] = list(schedule)
    out.results["schedule_reached"] = list(run.taus)
    out.results["last_good_tau"] = run.taus[-1] if run.taus else None
    out.results["epsilon"] = {"value": run.taus[-1] if run.taus else None,
                              "definition": "epsilon = tau; f = 4 exp(a (Psi - Psi_1)) det(Omega_1)/det(Omega)"}
    if run.taus:
        E, L = energy_and_length(run.path())
        out.results["length"] = L
        out.results["energy"] = {"min": float(E.min()), "max": float(E.max()),
                                 "relative_spread": float((E.max() - E.min()) / max(abs(E.mean()), 1e-300))}
        if np.ptp(phi0) == 0 and np.ptp(phi1) == 0:
            c = float(phi1[0] - phi0[0])
            out.results["constant_shift_check"] = {"c": c, "expected_length": abs(c) * math.sqrt(cfg.geom.volume)}
        out.fields["psi"] = run.psi
        out.fields["phi"] = Field(grid, run.path().phi)
        out.fields["barrier_h"] = run.barrier
        out.fields["psi1"] = run.psi1
    rows = out.monitors
    if rows and cfg.enabled("barriers"):
        low = min(r["lower_margin"] for r in rows)
        up = max(r["upper_margin"] for r in rows)
        out.assertions.append(_check("lower_barrier", low + 5 * h2, f"min(Psi - Psi_1) = {low:.3e}, allowance 5h^2"))
        out.assertions.append(_check("upper_barrier", 5 * h2 - up, f"max(Psi - h) = {up:.3e}, allowance 5h^2"))
    if rows and cfg.enabled("gradient"):
        m = min(r["bdry_grad_bound"] * (1 + 1e-9) - r["bdry_grad"] for r in rows)
        out.assertions.append(_check("boundary_gradient", m))
    if rows and cfg.enabled("newton"):
        worst = max(r["newton_residual"] for r in rows)
        out.assertions.append(_check("newton", 1e-8 - worst, f"worst residual {worst:.3e}"))
    if rows and cfg.enabled("energy"):
        m = min(1.1 * r["energy_bound"] - r["energy_drift"] for r in rows)
        ratio = max(r["energy_drift"] / r["energy_bound"] if r["energy_bound"] > 0 else math.inf for r in rows)
        out.assertions.append(_check("energy", m, f"worst drift/bound ratio {ratio:.3f}"))
    if len(rows) > 1 and cfg.enabled("c11"):
        k = reference_index(run.taus)
        ref = rows[k]["c11_proxy"]
        worst = max(r["c11_proxy"] for r in rows[k:])
        out.results["c11_reference"] = {"tau": run.taus[k], "value": ref, "max_after": worst,
                                        "third_sup_ref": rows[k]["third_sup"],
                                        "third_sup_final": rows[-1]["third_sup"]}
        out.assertions.append(_check("c11", 2.0 * ref - worst, f"max ratio {worst / ref:.3f} vs tau={run.taus[k]:g}"))
    if out.aborted:
        last = run.taus[-1] if run.taus else 1.0
        out.assertions.append(Assertion("continuation", math.log10(s.tau_min) - math.log10(last), False,
                                        f"ABORTED at tau = {last:g}: {out.abort_message}"))
    return out


def task_metric_space(cfg: RunConfig, rng) -> TaskOutput:
    from conegeo.mabuchi import SolverConfig, metric_space_suite

    out = TaskOutput()
    grid, s = cfg.grid, cfg.solver
    descs = cfg.data.get("samples")
    if descs is None:
        descs = [{"type": "sample", "name": n} for n in load_samples()[grid.kind]]
    if len(descs) < 3:
        raise ConfigError("metric-space needs at least three samples")
    samples = [potential_from_config(d, grid, rng) for d in descs]
    suite = metric_space_suite(samples, grid, SolverConfig(s.tau_min, s.a_param, s.tol), normalize=True)
    out.results.update(suite)
    D = suite["distances"]
    buf = io.StringIO()
    buf.write("i,j,distance\n")
    for i in range(len(D)):
        for j in range(len(D)):
            buf.write(f"{i},{j},{D[i][j]!r}\n")
    out.tables["distances.csv"] = buf.getvalue()
    if cfg.enabled("metric"):
        tol = suite["tol"]
        tri = min(t["margin"] for t in suite["triangles"]) + tol
        out.assertions.append(_check("triangle", tri, f"{len(suite['triangle_violations'])} violations at tol {tol:.2e}"))
        n_pos = len(suite["positivity_violations"])
        out.assertions.append(_check("positivity", -float(n_pos) if n_pos else 0.0, f"{n_pos} pairs with d <= 0"))
        out.assertions.append(_check("symmetry", tol - suite["symmetry_error"], f"asymmetry {suite['symmetry_error']:.2e}"))
    return out


def task_solve_ke(cfg: RunConfig, rng) -> TaskOutput:
    from conegeo.einstein import (
        convergence_study,
        einstein_identity_residual,
        football_problem,
        ke_continuity_solve,
        oracle_error,
    )

    out = TaskOutput()
    geom = cfg.geom
    lam = cfg.ke.get("lambda")
    assembly = cfg.ke.get("assembly", "continuum")
    prob = football_problem(geom.beta, cfg.grid.n_sigma, geom.cone.delta, lam, assembly)
    try:
        sol = ke_continuity_solve(prob, cfg.ke.get("schedule"))
    except ContinuationAbort as exc:
        out.aborted = True
        out.abort_message = str(exc)
        out.results.update({"lambda": prob.lam, "beta": geom.beta, "last_good_t": exc.last_good})
        out.assertions.append(Assertion("continuation", -1.0, False, f"ABORTED at t = {exc.last_good:g}"))
        return out
    err = oracle_error(sol, prob)
    ident = einstein_identity_residual(sol.phi, prob)
    out.results.update({"lambda": prob.lam, "beta": geom.beta, "assembly": assembly, **sol.summary(),
                        "oracle_relative_error": err,
                        "einstein_identity_sup_off_equator": float(np.abs(ident[:-1]).max())})
    out.fields["ke_phi"] = sol.phi
    if cfg.enabled("ke"):
        out.assertions.append(_check("ke_residual", 1e-9 - sol.residual, f"residual {sol.residual:.3e}"))
        if assembly == "continuum":
            out.assertions.append(_check("ke_oracle", 1e-3 - err, f"relative error {err:.3e}"))
    if cfg.refinements > 0:
        n = cfg.grid.n_sigma
        sizes = [n // 2**k for k in reversed(range(cfg.refinements + 1))]
        if sizes[0] < 16:
            raise ConfigError("too many refinements for this n_sigma (coarsest grid below 16 nodes)")
        study = convergence_study(geom.beta, sizes, geom.cone.delta, lam)
        out.results["convergence"] = study
        if cfg.enabled("ke") and assembly == "continuum":
            worst = min(0.2 - abs(o - 2.0) for o in study["orders"])
            out.assertions.append(_check("ke_order", worst, "orders " + ", ".join(f"{o:.3f}" for o in study["orders"])))
    return out


def task_curvature_probe(cfg: RunConfig, rng) -> TaskOutput:
    from conegeo.hcma import BoundaryData, build_initial_path

    out = TaskOutput()
    grid = cfg.grid
    phi0 = _potential(cfg, "phi0", rng)
    phi1 = _potential(cfg, "phi1", rng)
    init = build_initial_path(BoundaryData(phi0, phi1, m_phi=cfg.solver.m), grid)
    rep = curvature_probe(phi0, phi1, grid, init.m)
    out.results.update({"m": init.m, "ricci_min": rep.ricci_min, "ricci_max": rep.ricci_max,
                        "components": {k: list(v) for k, v in rep.components.items()}, "nodes": rep.nodes})
    vals = [rep.ricci_min, rep.ricci_max] + [x for v in rep.components.values() for x in v]
    if cfg.enabled("geometry"):
        out.assertions.append(_check("curvature_finite", 1.0 if all(math.isfinite(v) for v in vals) else -1.0))
    return out


TASKS = {
    "geom-check": task_geom_check,
    "solve-geodesic": task_solve_geodesic,
    "metric-space": task_metric_space,
    "solve-ke": task_solve_ke,
    "curvature-probe": task_curvature_probe,
}


# --- run ------------------------------------------------------------------------

def output_root(explicit=None) -> Path:
    return Path(explicit or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def _monitor_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MONITOR_COLUMNS)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in MONITOR_COLUMNS])
    return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    v = float(v)
    if not math.isfinite(v):
        return ""
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 and v != 0.0 else repr(v)


def execute(cfg: RunConfig, run_dir: Path) -> tuple[int, dict]:
    """Run the configured task and write every artifact into ``run_dir``."""
    rng = np.random.default_rng(cfg.solver.seed)
    out = TASKS[cfg.task](cfg, rng)
    failed = [a for a in out.assertions if not a.passed]
    status = "aborted" if out.aborted else ("failed" if failed else "ok")
    code = EXIT_OK if status == "ok" else EXIT_ASSERT
    summary = {
        "task": cfg.task,
        "name": cfg.name,
        "config_digest": cfg.digest(),
        "geometry": cfg.geom.to_dict(),
        "grid": cfg.grid.descriptor(),
        "geometry_hash": cfg.grid.geometry_hash(),
        "status": status,
        "exit_code": code,
        "abort_message": out.abort_message,
        "assertions": [a.as_dict() for a in out.assertions],
        "results": out.results,
    }
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(canonical_json(cfg.raw))
    (run_dir / "summary.json").write_text(canonical_json(summary))
    if out.monitors:
        (run_dir / "monitors.csv").write_text(_monitor_csv(out.monitors))
    for name, text in out.tables.items():
        (run_dir / name).write_text(text)
    if out.fields:
        fdir = run_dir / "fields"
        fdir.mkdir(exist_ok=True)
        for stem, fld in sorted(out.fields.items()):
            (fdir / f"{stem}.csv").write_text(fld.to_csv())
            (fdir / f"{stem}.json").write_text(canonical_json(fld.header(stem)))
    return code, summary


def run(config_path, output=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        cfg = load_config(config_path)
        run_dir = output_root(output) / f"{cfg.name}-{cfg.digest()}"
        code, summary = execute(cfg, run_dir)
    except (ConfigError, NonPositiveMetric) as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    except ConeGeoError as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=stderr)
        return EXIT_ASSERT
    print(f"run directory: {run_dir}", file=stdout)
    for a in summary["assertions"]:
        if not a["passed"]:
            print(f"FAILED {a['anchor']}: margin {a['margin']:.3e} {a['detail']}", file=stderr)
    print(f"status: {summary['status']}", file=stdout)
    return code


# --- report ---------------------------------------------------------------------

def _read_summary(run_dir: Path) -> dict:
    path = run_dir / "summary.json"
    if not path.is_file():
        raise MissingArtifacts(f"{path} not found; is {run_dir} a run directory?")
    return json.loads(path.read_text())


def _read_monitors(run_dir: Path) -> list[dict]:
    path = run_dir / "monitors.csv"
    if not path.is_file():
        return []
    with path.open() as fh:
        return [{k: (float(v) if v not in ("", None) else math.nan) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def render_report(run_dir) -> str:
    run_dir = Path(run_dir)
    summary = _read_summary(run_dir)
    rows = _read_monitors(run_dir)
    lines = [f"run: {summary['name']} ({summary['task']}, digest {summary['config_digest']})",
             f"geometry: {summary['geometry']['kind']}  grid: {summary['grid']['n_sigma']} x {summary['grid']['n_t']}"]
    if summary["status"] == "aborted":
        last = summary["results"].get("last_good_tau", summary["results"].get("last_good_t"))
        lines.append(f"ABORTED (last good parameter {last}) : {summary['abort_message']}")
    lines.append(f"status: {summary['status'].upper()}")
    lines.append("")
    width = max([len(a["anchor"]) for a in summary["assertions"]] + [10])
    lines.append(f"{'check'.ljust(width)}  {'margin':>12}  result")
    lines.append("-" * (width + 24))
    for a in summary["assertions"]:
        margin = "n/a" if a["margin"] is None else f"{a['margin']:.4e}"
        lines.append(f"{a['anchor'].ljust(width)}  {margin:>12}  {'PASS' if a['passed'] else 'FAIL'}")
        if a["detail"]:
            lines.append(f"{''.ljust(width)}    {a['detail']}")
    if rows:
        lines.append("")
        lines.append(f"tau trace: {len(rows)} accepted values, tau from {rows[0]['tau']:g} to {rows[-1]['tau']:g}")
    res = summary["results"]
    for key in ("length", "oracle_relative_error", "symmetry_error", "ricci_min", "ricci_max"):
        if key in res and res[key] is not None:
            lines.append(f"{key}: {res[key]:.6g}")
    if "constant_shift_check" in res:
        lines.append(f"expected length |c| sqrt(Vol): {res['constant_shift_check']['expected_length']:.6g}")
    return "\n".join(lines) + "\n"


def _write_tau_trace(run_dir: Path, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["log10_tau"] + MONITOR_COLUMNS
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(math.log10(r["tau"]))] + ["" if math.isnan(r[c]) else repr(r[c]) for c in MONITOR_COLUMNS])
    (run_dir / "tau_trace.csv").write_text(buf.getvalue())


def _figures(run_dir: Path, summary: dict, rows) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir = run_dir / "figures"
    made = []
    meta = {"Software": None}
    if rows or (run_dir / "fields").is_dir():
        fig_dir.mkdir(exist_ok=True)
    if rows:
        tau = np.array([r["tau"] for r in rows])
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        ax = axes[0]
        ax.semilogx(tau, [r["lower_margin"] for r in rows], "o-", label="min(Psi - Psi_1)")
        ax.semilogx(tau, [r["upper_margin"] for r in rows], "s-", label="max(Psi - h)")
        ax.axhline(0.0, color="k", lw=0.5)
        ax.invert_xaxis()
        ax.set_xlabel("tau")
        ax.set_title("barrier margins")
        ax.legend()
        ax = axes[1]
        ax.loglog(tau, [r["c11_proxy"] for r in rows], "o-", label="C^{1,1} proxy")
        ax.loglog(tau, [r["third_sup"] for r in rows], "s-", label="third-derivative sup")
        drift = [max(r["energy_drift"], 1e-300) for r in rows]
        ax.loglog(tau, drift, "^-", label="|dE/dt|")
        ax.loglog(tau, [1.1 * r["energy_bound"] for r in rows], "--", label="1.1 x energy bound")
        ax.invert_xaxis()
        ax.set_xlabel("tau")
        ax.set_title("regularity and energy")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(fig_dir / "tau_trace.png", dpi=100, metadata=meta)
        plt.close(fig)
        made.append("figures/tau_trace.png")
    psi_path = run_dir / "fields" / "phi.csv"
    if psi_path.is_file():
        data = np.loadtxt(psi_path, delimiter=",", skiprows=1)
        n_s, n_t = summary["grid"]["n_sigma"], summary["grid"]["n_t"]
        phi = data[:, 3].reshape(n_s, n_t)
        sig = data[:, 1].reshape(n_s, n_t)[:, 0]
        t = data[:, 2].reshape(n_s, n_t)[0]
        fig, ax = plt.subplots(figsize=(6, 4))
        for j in np.linspace(0, n_t - 1, 5).astype(int):
            ax.plot(sig, phi[:, j], label=f"t = {t[j]:.2f}")
        ax.set_xlabel("sigma")
        ax.set_ylabel("phi(t)")
        ax.set_title("geodesic slices")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(fig_dir / "geodesic_slices.png", dpi=100, metadata=meta)
        plt.close(fig)
        made.append("figures/geodesic_slices.png")
    ke_path = run_dir / "fields" / "ke_phi.csv"
    if ke_path.is_file():
        data = np.loadtxt(ke_path, delimiter=",", skiprows=1, usecols=(1, 3))
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(data[:, 0], data[:, 1], "-")
        ax.set_xlabel("lifted radius r")
        ax.set_ylabel("phi")
        ax.set_title("Kahler-Einstein potential")
        fig.tight_layout()
        fig.savefig(fig_dir / "ke_potential.png", dpi=100, metadata=meta)
        plt.close(fig)
        made.append("figures/ke_potential.png")
    return made


def report(run_dir, figures: bool = True) -> str:
    """Write ``report.txt``, ``tau_trace.csv`` and figures; return the report text."""
    run_dir = Path(run_dir)
    summary = _read_summary(run_dir)
    rows = _read_monitors(run_dir)
    text = render_report(run_dir)
    if rows:
        _write_tau_trace(run_dir, rows)
    if figures:
        made = _figures(run_dir, summary, rows)
        if made:
            text += "figures: " + ", ".join(made) + "\n"
    (run_dir / "report.txt").write_text(text)
    return text


# --- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conegeo", description="Geodesics of Kähler cone metrics: runs and reports.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute a JSON run configuration")
    r.add_argument("config", help="path to the config JSON")
    r.add_argument("--output", help=f"output root (default: ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    rep = sub.add_parser("report", help="summarise a run directory")
    rep.add_argument("run_dir")
    rep.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return run(args.config, args.output)
    try:
        sys.stdout.write(report(args.run_dir, figures=not args.no_figures))
    except MissingArtifacts as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
