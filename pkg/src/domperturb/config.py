"""Study configuration: a YAML document with nested sections.

Example (graph cylinder, sine bump on the top edge)::

    name: sine-bump
    seed: 0
    domain:
      kind: graph_cylinder
      graph: {family: constant, value: 1.0}
      w: [0.0, 1.0]
      a: 0.0
      b: 1.5
      rho: 0.5
      dirichlet: [{side: bottom}]
    coefficient: {family: identity}
    perturbation:
      family: sine_bump
      params: {base: 1.0, k: 1}
      eps: [0.1, 0.05, 0.025, 0.0125]
    mesh: {h: 0.03}
    spectral: {k: 200, r: [2, 3, .inf], rate_r: 3, xi: -1.0, pair_index: 0}
    tolerances: {rate: 0.15, series_slack: 1.0e-10}
    poisson: {source: {family: constant, value: 1.0}, s: 3}
    output: {dir: out}

Disk domains use ``kind: disk`` with ``radius``, ``t`` and ``rho`` and the
perturbation family acts on the angle (``cosine_mode`` with ``base: 0``).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from domperturb import geometry as geo
from domperturb.pullback import FIELD_FAMILIES, CoefficientError, CoefficientField


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


SECTIONS = {
    "name",
    "seed",
    "domain",
    "coefficient",
    "perturbation",
    "mesh",
    "spectral",
    "tolerances",
    "poisson",
    "output",
    "workers",
}


def _inf(v):
    if isinstance(v, str) and v.strip().lower() in {"inf", "+inf", ".inf", "infinity"}:
        return math.inf
    return float(v)


def _take(section: dict, where: str, allowed: set) -> dict:
    if section is None:
        return {}
    if not isinstance(section, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where!r}: {sorted(extra)}")
    return section


# ---------------------------------------------------------------------------
# sources


@dataclass(frozen=True)
class Source:
    """A right-hand side ``f`` evaluable on the whole plane."""

    f: Callable[[np.ndarray], np.ndarray]
    name: str
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.f(x), x.shape[:-1]).astype(float)


def make_source(spec: dict) -> Source:
    spec = dict(spec or {"family": "constant", "value": 1.0})
    family = spec.pop("family", None)
    try:
        if family == "constant":
            v = float(spec.pop("value", 1.0))
            src = Source(lambda x: np.full(x.shape[:-1], v), family, {"value": v})
        elif family == "zero":
            src = Source(lambda x: np.zeros(x.shape[:-1]), family)
        elif family == "affine":
            c = [float(spec.pop(k, 0.0)) for k in ("c0", "cx", "cy")]
            src = Source(lambda x: c[0] + c[1] * x[..., 0] + c[2] * x[..., 1], family, dict(zip(("c0", "cx", "cy"), c)))
        elif family == "gaussian":
            amp = float(spec.pop("amplitude", 1.0))
            cen = np.asarray(spec.pop("center", [0.5, 0.5]), dtype=float)
            wid = float(spec.pop("width", 0.25))
            src = Source(
                lambda x: amp * np.exp(-np.sum((x - cen) ** 2, -1) / (2 * wid**2)),
                family,
                {"amplitude": amp, "center": cen.tolist(), "width": wid},
            )
        else:
            raise ConfigError(f"unknown source family {family!r}")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad source parameters: {exc}") from exc
    if spec:
        raise ConfigError(f"unknown source parameters {sorted(spec)}")
    return src


# ---------------------------------------------------------------------------
# builders for geometry and coefficients


def make_graph(spec: dict, interval) -> geo.BoundaryGraph:
    spec = dict(spec)
    family = spec.pop("family", None)
    if family not in geo.GRAPH_FAMILIES:
        raise ConfigError(f"unknown graph family {family!r}; choose from {sorted(geo.GRAPH_FAMILIES)}")
    try:
        return geo.GRAPH_FAMILIES[family](interval=tuple(interval), **spec)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for graph family {family!r}: {exc}") from exc


def make_domain(spec: dict) -> geo.ReferenceDomain:
    spec = _take(spec, "domain", {"kind", "graph", "w", "a", "b", "rho", "radius", "t", "center", "dirichlet"})
    kind = spec.get("kind")
    pieces = []
    for p in spec.get("dirichlet", []) or []:
        p = _take(p, "domain.dirichlet", {"side", "lo", "hi"})
        if "side" not in p:
            raise ConfigError("every Dirichlet piece needs a side")
        pieces.append(geo.DirichletPiece(str(p["side"]), p.get("lo"), p.get("hi")))
    try:
        if kind == "graph_cylinder":
            w = tuple(float(v) for v in spec.get("w", (0.0, 1.0)))
            graph = make_graph(spec.get("graph", {"family": "constant", "value": 1.0}), w)
            return geo.graph_cylinder(
                graph, w, spec.get("a", 0.0), spec.get("b", 1.5), spec.get("rho", 0.5), pieces
            )
        if kind == "disk":
            return geo.disk(
                spec.get("radius", 1.0), spec.get("t", 0.5), tuple(spec.get("center", (0.0, 0.0))), pieces
            )
    except geo.GeometryError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown domain kind {kind!r}")


def make_coefficient(spec: dict) -> CoefficientField:
    spec = dict(spec or {"family": "identity"})
    family = spec.pop("family", None)
    if family not in FIELD_FAMILIES:
        raise ConfigError(f"unknown coefficient family {family!r}; choose from {sorted(FIELD_FAMILIES)}")
    try:
        return FIELD_FAMILIES[family](**spec)
    except (TypeError, CoefficientError) as exc:
        raise ConfigError(f"bad parameters for coefficient {family!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# the study configuration


@dataclass(frozen=True)
class StudyConfig:
    """Everything a perturbation or Poisson study needs.

    ``family`` names the perturbed boundary graph; ``eps`` is substituted
    into its parameters. The special family ``unperturbed`` reproduces the
    reference boundary for every ``eps``.
    """

    name: str
    domain: geo.ReferenceDomain
    coefficient: CoefficientField
    family: str
    family_params: dict
    eps: tuple
    h: float
    k: int
    rs: tuple
    rate_r: float
    xi: float
    rho: float
    pair_index: int
    seed: int
    rate_tolerance: float
    series_slack: float
    source: Source
    poisson_s: float
    out_dir: Path
    workers: int
    raw: dict = field(repr=False, compare=False)

    def perturbed_graph(self, eps: float) -> geo.BoundaryGraph:
        """The perturbed boundary graph (an offset ``g`` for disks) at ``eps``."""
        if self.domain.kind == "graph_cylinder":
            interval = self.domain.w
            if self.family == "unperturbed":
                return self.domain.graph
        else:
            interval = (0.0, 2 * math.pi)
            if self.family == "unperturbed":
                return geo.constant_graph(0.0, interval)
        return make_graph({"family": self.family, **self.family_params, "eps": eps}, interval)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the raw configuration."""
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def smooth_track(self) -> bool:
        """Lipschitz coefficients and smooth graphs: the fixed exponent ``1/r`` applies."""
        return bool(self.coefficient.lipschitz)


def config_from_dict(raw: dict, seed: int | None = None, out_dir: str | None = None) -> StudyConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    extra = set(raw) - SECTIONS
    if extra:
        raise ConfigError(f"unknown top-level keys {sorted(extra)}")
    if "domain" not in raw:
        raise ConfigError("missing 'domain' section")
    domain = make_domain(raw["domain"])
    coefficient = make_coefficient(raw.get("coefficient"))

    pert = _take(raw.get("perturbation"), "perturbation", {"family", "params", "eps", "rho"})
    family = pert.get("family", "sine_bump" if domain.kind == "graph_cylinder" else "cosine_mode")
    params = dict(pert.get("params") or {})
    if family != "unperturbed" and family not in geo.GRAPH_FAMILIES:
        raise ConfigError(f"unknown perturbation family {family!r}")
    if "eps" in params or "interval" in params:
        raise ConfigError("'eps' and 'interval' are set by the study, not in perturbation.params")
    try:
        eps = tuple(float(e) for e in pert.get("eps", (0.1, 0.05, 0.025, 0.0125)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad eps list: {exc}") from exc
    if len(eps) < 1 or any(e <= 0 for e in eps):
        raise ConfigError("eps values must be positive")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("eps list must be strictly decreasing")
    rho = float(pert.get("rho", domain.rho if domain.kind == "graph_cylinder" else 0.5 * domain.t))

    mesh = _take(raw.get("mesh"), "mesh", {"h"})
    h = float(mesh.get("h", 0.05))
    if h <= 0:
        raise ConfigError("mesh.h must be positive")

    spec = _take(raw.get("spectral"), "spectral", {"k", "r", "rate_r", "xi", "pair_index"})
    k = int(spec.get("k", 200))
    try:
        rs = tuple(_inf(r) for r in spec.get("r", (2, 3, math.inf)))
        rate_r = _inf(spec.get("rate_r", 3))
    except ValueError as exc:
        raise ConfigError(f"bad Schatten exponent: {exc}") from exc
    if any(r < 1 for r in rs):
        raise ConfigError("Schatten exponents must be >= 1")
    if not rate_r > 2:
        raise ConfigError("rate_r must exceed 2 (the space dimension)")
    if rate_r not in rs:
        rs = tuple(sorted(set(rs) | {rate_r}))
    xi = float(spec.get("xi", -1.0))
    if xi >= 0:
        raise ConfigError("xi must be negative (below the spectrum of both operators)")
    pair_index = int(spec.get("pair_index", 0))
    if k < 1 or not 0 <= pair_index < k:
        raise ConfigError("need k >= 1 and 0 <= pair_index < k")

    tol = _take(raw.get("tolerances"), "tolerances", {"rate", "series_slack"})
    poisson = _take(raw.get("poisson"), "poisson", {"source", "s"})
    source = make_source(poisson.get("source"))
    s = float(poisson.get("s", 3.0))
    if s < 2:
        raise ConfigError("poisson.s must be >= 2")
    output = _take(raw.get("output"), "output", {"dir"})
    try:
        seed_value = int(raw.get("seed", 0) if seed is None else seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad seed: {exc}") from exc
    if seed_value < 0:
        raise ConfigError("seed must be non-negative")
    workers = int(raw.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers must be >= 1")

    cfg = StudyConfig(
        name=str(raw.get("name", "study")),
        domain=domain,
        coefficient=coefficient,
        family=family,
        family_params=params,
        eps=eps,
        h=h,
        k=k,
        rs=rs,
        rate_r=rate_r,
        xi=xi,
        rho=rho,
        pair_index=pair_index,
        seed=seed_value,
        rate_tolerance=float(tol.get("rate", 0.15)),
        series_slack=float(tol.get("series_slack", 1e-10)),
        source=source,
        poisson_s=s,
        out_dir=Path(out_dir if out_dir is not None else output.get("dir", "out")),
        workers=workers,
        raw={**raw, "seed": seed_value},
    )
    # fail early on graphs that leave the admissible band
    try:
        for e in eps:
            g = cfg.perturbed_graph(e)
            if domain.kind == "graph_cylinder":
                g.check_band(domain.a + rho, domain.b)
            else:
                g.check_band(-domain.t + rho, domain.t)
    except geo.GeometryError as exc:
        raise ConfigError(f"perturbation out of band: {exc}") from exc
    return cfg


def load_config(path, seed: int | None = None, out_dir: str | None = None) -> StudyConfig:
    """Read a YAML file into a validated :class:`StudyConfig`."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return config_from_dict(raw, seed=seed, out_dir=out_dir)
