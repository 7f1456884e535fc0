"""Perturbation-rate studies, the Poisson stability study and the verification battery.

Every study keeps one reference mesh and moves only the maps: the base side
uses ``phi = Id`` and the perturbed side the graph map (cylinders) or the
normal map (disks) at each ``eps``. Rate constants are fitted on the largest
``eps`` and then frozen, so the checks on smaller ``eps`` are genuine
one-sided inequalities.
"""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from domperturb import geometry as geo
from domperturb.assembly import assemble_all, tilde_operator_identity_check
from domperturb.config import Source, StudyConfig
from domperturb.fitting import SlopeFit, fit_loglog_slope
from domperturb.mesh import DofMap, Mesh, generate_mesh
from domperturb.pullback import build_coefficient_bundle, identity_field, nodal_lumped
from domperturb.quadrature import cut_quadrature
from domperturb.selection import SelectionError, SubspacePair, pair_eigenfunctions, select_basis
from domperturb.spectral import (
    deift_residual,
    deviation_series,
    identity_decomposition,
    resolvent_singular_values,
    riesz_projector,
    schatten,
    solve_eigs,
    spectral_projector,
    projector_distance,
)
from domperturb.transport import transport_distance, union_norm

SCHEMA_VERSION = 1
CSV_RS = (2.0, 3.0, math.inf)
DELTA_PS = (2.0, 3.0, math.inf)
IDENTITY_TOL = 1e-10
FROZEN_SLACK = 1e-12


@dataclass(frozen=True)
class Check:
    """One pass/fail line. Non-gating checks are reported but never fail a run."""

    name: str
    passed: bool
    value: float = math.nan
    threshold: float = math.nan
    detail: str = ""
    gating: bool = True

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "value": _jsonable(self.value),
            "threshold": _jsonable(self.threshold),
            "detail": self.detail,
            "gating": self.gating,
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {_key(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _key(r) -> str:
    if isinstance(r, (float, int, np.floating)):
        return "inf" if math.isinf(r) else f"{float(r):g}"
    return str(r)


def _all_passed(checks) -> bool:
    return all(c.passed for c in checks if c.gating)


# ---------------------------------------------------------------------------
# concentration modulus


def mf_concentration(values, areas, s: float) -> float:
    """Largest ``L^2`` mass of a piecewise constant ``f`` over sets of measure ``<= s``.

    Elements are taken in decreasing order of ``|f_e|`` until the budget is
    spent, the last one fractionally. Budgets beyond the total area give
    ``||f||_{L^2}``.
    """
    if s < 0:
        raise ValueError("measure budget must be non-negative")
    values = np.abs(np.asarray(values, dtype=float)).ravel()
    areas = np.asarray(areas, dtype=float).ravel()
    if values.shape != areas.shape:
        raise ValueError("values and areas must have the same length")
    if np.any(areas < 0):
        raise ValueError("areas must be non-negative")
    order = np.argsort(-values, kind="stable")
    v2, a = values[order] ** 2, areas[order]
    cum = np.cumsum(a)
    n_full = int(np.searchsorted(cum, s, side="right"))
    mass = float(np.dot(v2[:n_full], a[:n_full]))
    if n_full < len(a):
        used = cum[n_full - 1] if n_full else 0.0
        mass += v2[n_full] * max(s - used, 0.0)
    return math.sqrt(mass)


def element_source(mesh: Mesh, f, phi: geo.DeformationMap) -> tuple[np.ndarray, np.ndarray]:
    """Values of ``f`` at mapped centroids and the physical element areas under ``phi``."""
    x = mesh.centroids
    return f(phi(x)), mesh.areas * np.abs(phi.det(x))


# ---------------------------------------------------------------------------
# shared study state


@dataclass
class StudyContext:
    """Reference mesh, base operators and eigensystem shared by all ``eps``."""

    config: StudyConfig
    mesh: Mesh
    dofmap: DofMap
    phi: geo.DeformationMap
    k: int
    l2_mass: np.ndarray

    @classmethod
    def build(cls, config: StudyConfig) -> "StudyContext":
        mesh = generate_mesh(config.domain, config.h)
        dofmap = mesh.dofmap()
        # series are truncated at a quarter of the free DOFs, where the discrete
        # eigenvalues still track the continuous ones, and never above config.k
        k = min(config.k, max(dofmap.n_free // 4, config.pair_index + 2))
        l2 = nodal_lumped(mesh, np.ones(mesh.n_elements))[dofmap.free]
        return cls(config, mesh, dofmap, geo.IdentityMap(), k, l2)

    def perturbed_map(self, eps: float) -> geo.DeformationMap:
        cfg, dom = self.config, self.config.domain
        g = cfg.perturbed_graph(eps)
        if dom.kind == "graph_cylinder":
            return geo.build_graph_map(dom.graph, g, dom.a, dom.b, cfg.rho)
        return geo.build_normal_map(dom, g, cfg.rho, reference=self.mesh.radial_boundary_graph())

    def bundles(self, phi_t: geo.DeformationMap) -> dict:
        coeffs = build_coefficient_bundle(self.config.coefficient, self.phi, phi_t, self.mesh)
        return assemble_all(self.mesh, self.dofmap, coeffs)


# ---------------------------------------------------------------------------
# perturbation study


@dataclass(frozen=True)
class StudyRecord:
    eps: float
    sym_diff: float
    displaced_measure: float
    delta_p: dict
    series: dict
    schatten: dict
    projector_distance: float
    eig_distance_weighted: float
    eig_distance_l2: float
    eig_distance_pushforward: float
    lam: float
    lam_t: float
    wall_time: float = field(default=0.0, compare=False)

    def quantities(self) -> dict:
        """All measured numbers, flattened (wall time excluded)."""
        out = {"sym_diff": self.sym_diff, "displaced_measure": self.displaced_measure}
        out.update({f"delta_p{_key(p)}": v for p, v in self.delta_p.items()})
        out.update({f"series_r{_key(r)}": v for r, v in self.series.items()})
        out.update({f"schatten_r{_key(r)}": v for r, v in self.schatten.items()})
        out.update(
            projector_distance=self.projector_distance,
            eig_distance_weighted=self.eig_distance_weighted,
            eig_distance_l2=self.eig_distance_l2,
            eig_distance_pushforward=self.eig_distance_pushforward,
        )
        return out


def evaluate_record(ctx: StudyContext, eps: float, phi_t: geo.DeformationMap | None = None) -> StudyRecord:
    """All study quantities for one perturbation (``phi_t`` overrides the family map)."""
    t0 = time.perf_counter()
    cfg, mesh, dofmap, phi = ctx.config, ctx.mesh, ctx.dofmap, ctx.phi
    phi_t = ctx.perturbed_map(eps) if phi_t is None else phi_t
    B = ctx.bundles(phi_t)
    es = solve_eigs(B["base"], ctx.k, seed=cfg.seed)
    et = solve_eigs(B["tilde"], ctx.k, seed=cfg.seed)
    w = B["base"].w
    sv = resolvent_singular_values(B["base"], B["tilde"], w, cfg.xi)
    rs = tuple(sorted(set(cfg.rs) | set(CSV_RS)))
    off = cfg.xi + 1.0  # the series is written with 1/(lam + 1); move the shift into lam
    series = {r: deviation_series(es.values - off, et.values - off, r) for r in rs}
    sch = {r: schatten(sv, r) for r in rs}

    cluster = es.cluster_of(cfg.pair_index)
    pairing = pair_eigenfunctions(
        es,
        et,
        w,
        cluster,
        l2_mass=ctx.l2_mass,
        transport=lambda v, psi: transport_distance(mesh, dofmap, v, phi, psi, phi_t),
    )
    vic = geo.vicinity_report(cfg.domain, phi, phi_t, cfg.coefficient, mesh, DELTA_PS)
    return StudyRecord(
        eps=float(eps),
        sym_diff=vic.sym_diff,
        displaced_measure=vic.displaced_measure,
        delta_p=dict(vic.delta_p),
        series=series,
        schatten=sch,
        projector_distance=pairing.projector_distance,
        eig_distance_weighted=float(np.max(pairing.weighted_distances)),
        eig_distance_l2=float(np.max(pairing.l2_distances)),
        eig_distance_pushforward=float(np.max(pairing.pushforward_distances)),
        lam=float(es.values[cfg.pair_index]),
        lam_t=float(et.values[cfg.pair_index]),
        wall_time=time.perf_counter() - t0,
    )


@dataclass
class StudyResult:
    config: StudyConfig
    records: list
    slopes: dict
    constants: dict
    checks: list
    exploratory: bool
    n_free: int
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return _all_passed(self.checks)


def _fit(xs, ys) -> SlopeFit | None:
    try:
        return fit_loglog_slope(xs, ys)
    except ValueError:
        return None


def _frozen(name: str, xs, ys, rate: float) -> tuple[float, Check]:
    """Fit ``c = y0 / x0^rate`` on the first point and check ``y <= c x^rate`` on all."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    if xs[0] <= 0:
        return math.nan, Check(name, False, detail="zero perturbation at the largest eps")
    c = ys[0] / xs[0] ** rate
    ratio = ys / np.maximum(c * xs**rate, 1e-300)
    worst = float(ratio.max())
    return c, Check(name, worst <= 1 + FROZEN_SLACK, worst, 1.0, f"c = {c:.6g}, max y/(c x^{rate:.4g})")


def identity_smoke(ctx: StudyContext) -> Check:
    """Every study quantity must vanish for ``phi_t = phi``."""
    rec = evaluate_record(ctx, 0.0, phi_t=geo.IdentityMap())
    worst = max(abs(v) for v in rec.quantities().values())
    return Check("identity_smoke", worst <= IDENTITY_TOL, worst, IDENTITY_TOL, "max |quantity| with phi_t = phi")


def study_checks(cfg: StudyConfig, records: list, exploratory: bool) -> tuple[dict, dict, list]:
    checks, slopes, consts = [], {}, {}
    slack = cfg.series_slack
    worst = -math.inf
    for rec in records:
        for r in cfg.rs:
            worst = max(worst, rec.series[r] - rec.schatten[r])
    checks.append(
        Check("series_le_schatten", worst <= slack, worst, slack, "max over records and r of series - Schatten")
    )
    if cfg.domain.kind == "graph_cylinder":
        excess = max(rec.displaced_measure - 2 * rec.sym_diff for rec in records)
        checks.append(Check("displaced_le_2_symdiff", excess <= 1e-12, excess, 1e-12, "max |D| - 2|sym diff|"))

    sd = np.array([r.sym_diff for r in records])
    target = 1.0 / cfg.rate_r
    series = np.array([r.series[cfg.rate_r] for r in records])
    eig = np.array([r.eig_distance_pushforward for r in records])
    columns = {
        "series": series,
        "schatten": np.array([r.schatten[cfg.rate_r] for r in records]),
        "projector_distance": np.array([r.projector_distance for r in records]),
        "eig_distance_pushforward": eig,
        "eig_distance_l2": np.array([r.eig_distance_l2 for r in records]),
    }
    for name, ys in columns.items():
        fit = _fit(sd, ys) if len(records) >= 3 else None
        slopes[name] = fit
    gate = not exploratory
    for name, ys in (("series", series), ("eig_distance_pushforward", eig)):
        fit = slopes[name]
        if fit is not None:
            checks.append(
                Check(f"{name}_rate", fit.slope >= target - cfg.rate_tolerance, fit.slope,
                      target - cfg.rate_tolerance, f"log-log slope vs |sym diff|, target 1/r = {target:.4g}", gate)
            )
        if len(records):
            c, chk = _frozen(f"{name}_frozen_constant", sd, ys, target)
            consts[name] = c
            checks.append(Check(chk.name, chk.passed, chk.value, chk.threshold, chk.detail, gate))
    if len(records) >= 2:
        mono = bool(np.all(np.diff(eig) < 0))
        checks.append(Check("eig_distance_monotone", mono, detail="push-forward distance decreases with eps", gating=gate))
    return slopes, consts, checks


def run_perturbation_study(config: StudyConfig, smoke: bool = True) -> StudyResult:
    """Records for every ``eps``, slope fits and the one-sided rate checks.

    The identity smoke test runs first (``smoke=False`` skips it). Records
    may be computed in parallel threads (``config.workers``); they are
    returned in ``eps`` order.
    """
    t0 = time.perf_counter()
    ctx = StudyContext.build(config)
    checks = [identity_smoke(ctx)] if smoke else []

    def one(eps):
        try:
            return evaluate_record(ctx, eps)
        except Exception as exc:
            raise RuntimeError(f"study failed at eps = {eps}: {exc}") from exc

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            records = list(pool.map(one, config.eps))
    else:
        records = [one(e) for e in config.eps]
    exploratory = not config.smooth_track
    slopes, consts, more = study_checks(config, records, exploratory)
    return StudyResult(
        config, records, slopes, consts, checks + more, exploratory, ctx.dofmap.n_free,
        time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# Poisson study


@dataclass(frozen=True)
class PoissonRecord:
    eps: float
    error: float
    sym_diff: float
    displaced_measure: float
    delta_s: float
    f_norm: float
    f_diff: float
    mf: float
    bound_local: float
    bound_global: float
    wall_time: float = field(default=0.0, compare=False)

    def quantities(self) -> dict:
        return {
            k: getattr(self, k)
            for k in (
                "error", "sym_diff", "displaced_measure", "delta_s", "f_norm",
                "f_diff", "mf", "bound_local", "bound_global",
            )
        }


def solve_shifted(bundle, rhs_nodal: np.ndarray) -> np.ndarray:
    """Free-DOF solution of ``(K + M) v = M f``."""
    A = (bundle.K + sp.diags(bundle.M)).tocsc()
    return spsolve(A, bundle.M * rhs_nodal)


def source_difference(mesh: Mesh, f, phi, phi_t, depth: int = 2) -> float:
    """``||f o phi - f o phi_t||`` in ``L^2`` of the reference domain."""
    seams = [m.seam for m in (phi, phi_t) if m.seam is not None]
    q = cut_quadrature(mesh.nodes, mesh.triangles, seams, depth=depth)
    return math.sqrt(q.integral((f(phi(q.points)) - f(phi_t(q.points))) ** 2))


def poisson_record(ctx: StudyContext, eps: float, source: Source, phi_t=None) -> PoissonRecord:
    t0 = time.perf_counter()
    cfg, mesh, dofmap, phi = ctx.config, ctx.mesh, ctx.dofmap, ctx.phi
    phi_t = ctx.perturbed_map(eps) if phi_t is None else phi_t
    B = ctx.bundles(phi_t)
    nodes = mesh.nodes[dofmap.free]
    v = solve_shifted(B["base"], source(phi(nodes)))
    v_t = solve_shifted(B["tilde"], source(phi_t(nodes)))
    error = float(transport_distance(mesh, dofmap, v, phi, v_t, phi_t)[0])

    dom = cfg.domain
    sym = geo.symmetric_difference(dom, phi, phi_t)
    disp = geo.displaced_measure(dom, phi, phi_t)
    delta_s = geo.delta_p(phi, phi_t, cfg.coefficient, cfg.poisson_s, mesh)
    f_norm = union_norm(mesh, source, phi, phi_t)
    f_diff = source_difference(mesh, source, phi, phi_t)
    mf = max(mf_concentration(*element_source(mesh, source, m), sym) for m in (phi, phi_t))
    local = (math.sqrt(disp) + delta_s) * f_norm + f_diff
    glob = sym ** (1.0 / cfg.rate_r) * f_norm + mf
    return PoissonRecord(
        float(eps), error, sym, disp, delta_s, f_norm, f_diff, mf, local, glob,
        time.perf_counter() - t0,
    )


@dataclass
class PoissonResult:
    config: StudyConfig
    source: Source
    records: list
    constants: dict
    checks: list
    n_free: int
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return _all_passed(self.checks)


def _frozen_ratio(name: str, lhs, rhs) -> tuple[float, Check]:
    lhs, rhs = np.asarray(lhs, float), np.asarray(rhs, float)
    if rhs[0] <= 0:
        ok = bool(np.all(lhs <= 0))
        return math.nan, Check(name, ok, detail="bound vanishes at the largest eps")
    c = lhs[0] / rhs[0]
    bad = (rhs <= 0) & (lhs > 0)
    ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), 0.0)
    worst = float(ratio.max()) / c if c > 0 else (0.0 if np.all(lhs == 0) else math.inf)
    ok = bool((not bad.any()) and worst <= 1 + FROZEN_SLACK)
    return c, Check(name, ok, worst, 1.0, f"c = {c:.6g}, max (lhs/rhs)/c")


def run_poisson_study(config: StudyConfig, source: Source | None = None, smoke: bool = True) -> PoissonResult:
    """``(K + M) v = M f`` on both sides, the union-domain error and both bounds.

    ``bound_local`` is ``(|D|^{1/2} + delta_s) ||f|| + ||f o phi - f o phi_t||``
    and ``bound_global`` is ``|sym diff|^{1/r} ||f|| + M_f(|sym diff|)``; each
    constant is fitted on the largest ``eps`` and frozen.
    """
    t0 = time.perf_counter()
    source = config.source if source is None else source
    ctx = StudyContext.build(config)
    checks = []
    if smoke:
        rec = poisson_record(ctx, 0.0, source, phi_t=geo.IdentityMap())
        worst = max(abs(v) for k, v in rec.quantities().items() if k != "f_norm")
        checks.append(Check("identity_smoke", worst <= IDENTITY_TOL, worst, IDENTITY_TOL, "error and bound with phi_t = phi"))
    records = [poisson_record(ctx, e, source) for e in config.eps]
    err = [r.error for r in records]
    consts = {}
    for name in ("bound_local", "bound_global"):
        c, chk = _frozen_ratio(f"poisson_{name}_frozen_constant", err, [getattr(r, name) for r in records])
        consts[name] = c
        checks.append(chk)
    return PoissonResult(config, source, records, consts, checks, ctx.dofmap.n_free, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# verification battery


@dataclass
class VerifyReport:
    seed: int
    checks: list

    @property
    def passed(self) -> bool:
        return _all_passed(self.checks)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
        }


def random_graph_pair(rng: np.random.Generator, base: float = 1.0):
    """Two admissible smooth top graphs over ``(0, 1)`` with random bumps."""
    g1 = geo.sine_bump(base, float(rng.uniform(-0.1, 0.1)), k=int(rng.integers(1, 4)))
    g2 = geo.compact_bump(
        base, float(rng.uniform(-0.15, 0.15)), float(rng.uniform(0.3, 0.7)), float(rng.uniform(0.15, 0.3))
    )
    return g1, g2


def random_pair_bundles(rng: np.random.Generator, h: float = 1 / 14, A=None):
    """Bundles for ``phi`` and ``phi_t`` both nontrivial graph maps of the unit square."""
    dom = geo.unit_square(dirichlet=[geo.DirichletPiece("bottom")])
    mesh = generate_mesh(dom, h)
    dofmap = mesh.dofmap()
    g0 = dom.graph
    ga, gb = random_graph_pair(rng)
    phi = geo.build_graph_map(g0, ga, dom.a, dom.b, dom.rho)
    phi_t = geo.build_graph_map(g0, gb, dom.a, dom.b, dom.rho)
    A = identity_field() if A is None else A
    coeffs = build_coefficient_bundle(A, phi, phi_t, mesh)
    return mesh, dofmap, phi, phi_t, assemble_all(mesh, dofmap, coeffs)


def random_subspace_pair(rng: np.random.Generator, n: int = 20, m: int = 5, scale: float | None = None):
    """``M``-orthonormal ``U`` and a rotated copy ``V`` with random positive ``M``."""
    M = rng.uniform(0.5, 2.0, n)
    sm = np.sqrt(M)
    Q, _ = np.linalg.qr(rng.standard_normal((n, m)))
    scale = float(10 ** rng.uniform(-4, 0.3)) if scale is None else scale
    X = rng.standard_normal((n, n))
    G = scale * (X - X.T) / math.sqrt(n)
    R = scipy.linalg.expm(G)
    P, _ = np.linalg.qr(R @ Q)
    return SubspacePair(M, Q / sm[:, None], P / sm[:, None])


def _affine_invariance(h: float = 0.1) -> float:
    """Relative eigenvalue gap between an affine pull-back and the mapped mesh."""
    dom = geo.unit_square(dirichlet=[geo.DirichletPiece("bottom")])
    mesh = generate_mesh(dom, h)
    dofmap = mesh.dofmap()
    aff = geo.AffineMap([[1.3, 0.4], [-0.2, 0.8]], [0.5, -1.0])
    A = identity_field()
    pulled = build_coefficient_bundle(A, aff, aff, mesh)
    es = solve_eigs(assemble_all(mesh, dofmap, pulled)["base"], 20)
    moved = Mesh(aff(mesh.nodes), mesh.triangles.copy(), mesh.boundary_edges, mesh.edge_tags, None)
    direct = build_coefficient_bundle(A, geo.IdentityMap(), geo.IdentityMap(), moved)
    ed = solve_eigs(assemble_all(moved, dofmap, direct)["base"], 20)
    return float(np.max(np.abs(es.values - ed.values) / np.abs(ed.values)))


def _minmax_violation(h: float = 0.1, k: int = 20) -> float:
    """Largest ``lambda_n(fewer constraints) - lambda_n(more constraints)`` (should be <= 0)."""
    vals = []
    for pieces in ([geo.DirichletPiece("bottom")], [geo.DirichletPiece("bottom"), geo.DirichletPiece("top")]):
        dom = geo.unit_square(dirichlet=pieces)
        mesh = generate_mesh(dom, h)
        dofmap = mesh.dofmap()
        b = build_coefficient_bundle(identity_field(), geo.IdentityMap(), geo.IdentityMap(), mesh)
        vals.append(solve_eigs(assemble_all(mesh, dofmap, b)["base"], k).values)
    return float(np.max((vals[0] - vals[1]) / vals[1]))


SQUARE_SIDES = ("bottom", "top", "left", "right")


def dirichlet_square_bundle(h: float):
    """Mesh, DOF map and base bundle of the Laplacian on the unit square, ``u = 0`` on all sides."""
    dom = geo.unit_square(dirichlet=[geo.DirichletPiece(s) for s in SQUARE_SIDES])
    mesh = generate_mesh(dom, h)
    dofmap = mesh.dofmap()
    b = build_coefficient_bundle(identity_field(), geo.IdentityMap(), geo.IdentityMap(), mesh)
    return mesh, dofmap, assemble_all(mesh, dofmap, b)["base"]


def dirichlet_square_exact(n: int) -> np.ndarray:
    """Lowest ``n`` eigenvalues ``pi^2 (j^2 + k^2)`` of the Dirichlet unit square."""
    jmax = int(math.isqrt(n)) + 3
    vals = [math.pi**2 * (j * j + k * k) for j in range(1, jmax + 1) for k in range(1, jmax + 1)]
    return np.sort(vals)[:n]


@dataclass(frozen=True)
class GalerkinStudy:
    hs: np.ndarray
    errors: np.ndarray  # (len(hs), n) relative eigenvalue errors
    fit: SlopeFit


def galerkin_convergence(hs=(0.2, 0.1, 0.05), n: int = 5) -> GalerkinStudy:
    """Relative errors of the ``n`` lowest Dirichlet-square eigenvalues and their rate in ``h``.

    The fitted quantity is the largest relative error over the ``n`` values.
    """
    exact = dirichlet_square_exact(n)
    errs = []
    for h in hs:
        _, _, base = dirichlet_square_bundle(h)
        errs.append(np.abs(solve_eigs(base, n).values - exact) / exact)
    errs = np.array(errs)
    hs = np.asarray(hs, dtype=float)
    return GalerkinStudy(hs, errs, fit_loglog_slope(hs, errs.max(1)))


def degenerate_gauge_check(h: float = 0.1, eps: float = 0.02, trials: int = 5, seed: int = 0) -> float:
    """Spread of paired distances under random rotations of a degenerate eigenbasis.

    On the Dirichlet square ``lambda_2 = lambda_3``. The computed pair is mixed
    by random orthogonal 2x2 matrices before pairing with the eigenfunctions of
    a sine-bump perturbation; the result is the largest change of any paired
    distance relative to the unmixed run.
    """
    dom = geo.unit_square(dirichlet=[geo.DirichletPiece(s) for s in SQUARE_SIDES])
    mesh = generate_mesh(dom, h)
    dofmap = mesh.dofmap()
    phi_t = geo.build_graph_map(dom.graph, geo.sine_bump(1.0, eps), dom.a, dom.b, dom.rho)
    B = assemble_all(mesh, dofmap, build_coefficient_bundle(identity_field(), geo.IdentityMap(), phi_t, mesh))
    es = solve_eigs(B["base"], 6, seed=seed)
    et = solve_eigs(B["tilde"], 6, seed=seed)
    cluster = es.cluster_of(1)
    if len(cluster) != 2:
        raise RuntimeError(f"expected a double eigenvalue, found cluster {cluster}")
    ref = pair_eigenfunctions(es, et, B["base"].w, cluster).weighted_distances
    rng = np.random.default_rng(seed)
    spread = 0.0
    for _ in range(trials):
        Q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        V = es.vectors.copy()
        V[:, cluster] = V[:, cluster] @ Q
        mixed = type(es)(es.values, V, es.M, es.residuals)
        d = pair_eigenfunctions(mixed, et, B["base"].w, cluster).weighted_distances
        spread = max(spread, float(np.max(np.abs(d - ref))))
    return spread


def verify_suite(seed: int = 0, corrupt_w: bool = False, selection_trials: int = 200) -> VerifyReport:
    """Identity and property battery on small random configurations.

    ``corrupt_w`` perturbs one nodal weight by 1 % before the tilde
    operator check (a negative control that must fail).
    """
    rng = np.random.default_rng(seed)
    checks = []
    mesh, dofmap, phi, phi_t, B = random_pair_bundles(rng)
    base, tilde, cross = B["base"], B["tilde"], B["cross"]

    dec = identity_decomposition(base, tilde, cross, xi=-1.0)
    checks.append(Check("identity_decomposition", dec.residual <= 1e-10, dec.residual, 1e-10))
    dr = deift_residual(base.T, base.WT, base.M, -1.0)
    checks.append(Check("deift_residual", dr <= 1e-11, dr, 1e-11))
    w = base.w.copy()
    if corrupt_w:
        w[int(rng.integers(len(w)))] *= 1.01
    tid = tilde_operator_identity_check(tilde, cross, w)
    checks.append(Check("tilde_operator_identity", tid <= 1e-12, tid, 1e-12, "||Ht - w^2 T*ST|| / ||Ht||"))
    fr = max(b.factorization_residual() for b in (base, tilde, cross))
    checks.append(Check("factorization", fr <= 1e-12, fr, 1e-12, "||K - T^T W_T S T|| / ||K||"))

    failures = 0
    for _ in range(selection_trials):
        pair = random_subspace_pair(rng, m=int(rng.integers(1, 6)))
        try:
            select_basis(pair)
        except SelectionError:
            failures += 1
    checks.append(Check("selection_bounds", failures == 0, failures, 0, f"{selection_trials} random trials"))

    es = solve_eigs(base, 12, seed=seed)
    et = solve_eigs(tilde, 12, seed=seed)
    c0 = es.cluster_of(0)
    lo = es.values[max(c0)]
    hi = es.values[max(c0) + 1]
    radius = 0.5 * (hi - es.values[0])
    P = riesz_projector(base, c0, es.values[0], radius, spectrum=es.values, seed=seed)
    rd = projector_distance(P, spectral_projector(es, c0))
    checks.append(Check("riesz_vs_spectral", rd <= 1e-8, rd, 1e-8, f"cluster {c0}, gap {hi - lo:.3g}"))

    sv = resolvent_singular_values(base, tilde, base.w, -1.0)
    norms = [schatten(sv, r) for r in (1, 2, 3, 4, math.inf)]
    mono = max(b - a for a, b in zip(norms, norms[1:]))
    checks.append(Check("schatten_monotone", mono <= 1e-14 * norms[0], mono, 0.0, "r = 1, 2, 3, 4, inf"))
    excess = max(deviation_series(es.values, et.values, r) - schatten(sv, r) for r in (2, 3, math.inf))
    checks.append(Check("series_le_schatten", excess <= 1e-10, excess, 1e-10))

    mm = _minmax_violation()
    checks.append(Check("minmax_monotone", mm <= 1e-12, mm, 1e-12, "extra Dirichlet edge raises every eigenvalue"))
    af = _affine_invariance()
    checks.append(Check("affine_invariance", af <= 1e-10, af, 1e-10, "pull-back vs mapped mesh eigenvalues"))
    gs = degenerate_gauge_check(seed=seed)
    checks.append(Check("degenerate_gauge", gs <= 1e-6, gs, 1e-6, "paired distances under remixing of lambda_2 = lambda_3"))

    Bi = assemble_all(mesh, dofmap, build_coefficient_bundle(identity_field(), phi, phi, mesh))
    sv0 = resolvent_singular_values(Bi["base"], Bi["tilde"], Bi["base"].w, -1.0)
    dom = geo.unit_square(dirichlet=[geo.DirichletPiece("bottom")])
    d0 = geo.vicinity_report(dom, geo.IdentityMap(), geo.IdentityMap(), identity_field(), mesh)
    zero = max(float(sv0.max(initial=0.0)), d0.sym_diff, d0.displaced_measure, *d0.delta_p.values())
    checks.append(Check("identity_end_to_end", zero <= IDENTITY_TOL, zero, IDENTITY_TOL, "all deltas with phi_t = phi"))
    return VerifyReport(seed, checks)


# ---------------------------------------------------------------------------
# serialisation

STUDY_COLUMNS = (
    ["eps", "sym_diff", "displaced_measure"]
    + [f"delta_p{_key(p)}" for p in DELTA_PS]
    + [f"series_r{_key(r)}" for r in CSV_RS]
    + [f"schatten_r{_key(r)}" for r in CSV_RS]
    + [
        "series_rate_r",
        "schatten_rate_r",
        "projector_distance",
        "eig_distance_weighted",
        "eig_distance_l2",
        "eig_distance_pushforward",
        "lambda",
        "lambda_tilde",
    ]
)
POISSON_COLUMNS = [
    "eps", "sym_diff", "displaced_measure", "delta_s", "f_norm", "f_diff", "mf",
    "error", "bound_local", "bound_global",
]


def _fmt(x) -> str:
    return f"{float(x):.10e}"


def _study_row(rec: StudyRecord, rate_r: float) -> list:
    row = [rec.eps, rec.sym_diff, rec.displaced_measure]
    row += [rec.delta_p[p] for p in DELTA_PS]
    row += [rec.series[r] for r in CSV_RS]
    row += [rec.schatten[r] for r in CSV_RS]
    row += [
        rec.series[rate_r], rec.schatten[rate_r], rec.projector_distance,
        rec.eig_distance_weighted, rec.eig_distance_l2, rec.eig_distance_pushforward,
        rec.lam, rec.lam_t,
    ]
    return row


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def study_csv(result: StudyResult) -> str:
    """Deterministic CSV (fixed columns, fixed float format, no timings)."""
    rate = result.config.rate_r
    return _csv(STUDY_COLUMNS, [_study_row(r, rate) for r in result.records])


def poisson_csv(result: PoissonResult) -> str:
    rows = [[r.eps] + [getattr(r, c) for c in POISSON_COLUMNS[1:]] for r in result.records]
    return _csv(POISSON_COLUMNS, rows)


def _metadata(config: StudyConfig, kind: str) -> dict:
    from domperturb import __version__

    return {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "name": config.name,
        "config_sha256": config.digest(),
        "seed": config.seed,
        "versions": {
            "domperturb": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def _slope_dict(fit: SlopeFit | None):
    if fit is None:
        return None
    return {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2, "excluded": fit.excluded.tolist()}


def study_json(result: StudyResult) -> str:
    cfg = result.config
    doc = _metadata(cfg, "perturbation_study")
    doc.update(
        passed=result.passed,
        exploratory=result.exploratory,
        n_free=result.n_free,
        rate_r=cfg.rate_r,
        target_slope=1.0 / cfg.rate_r,
        rate_tolerance=cfg.rate_tolerance,
        columns=STUDY_COLUMNS,
        records=[
            dict(zip(STUDY_COLUMNS, _study_row(r, cfg.rate_r)), wall_time=r.wall_time,
                 series={_key(k): v for k, v in r.series.items()},
                 schatten={_key(k): v for k, v in r.schatten.items()})
            for r in result.records
        ],
        slopes={k: _slope_dict(v) for k, v in result.slopes.items()},
        constants=result.constants,
        checks=[c.to_dict() for c in result.checks],
        wall_time=result.wall_time,
    )
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True)


def poisson_json(result: PoissonResult) -> str:
    doc = _metadata(result.config, "poisson_study")
    doc.update(
        passed=result.passed,
        n_free=result.n_free,
        source={"family": result.source.name, **result.source.params},
        columns=POISSON_COLUMNS,
        records=[
            dict(zip(POISSON_COLUMNS, [r.eps] + [getattr(r, c) for c in POISSON_COLUMNS[1:]]), wall_time=r.wall_time)
            for r in result.records
        ],
        constants=result.constants,
        checks=[c.to_dict() for c in result.checks],
        wall_time=result.wall_time,
    )
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True)
