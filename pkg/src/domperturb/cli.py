"""Command line entry point.

Subcommands::

    mesh     write the reference mesh as text
    solve    eigensystem of the reference operator (and optionally a perturbed one) as JSON
    study    perturbation-rate study, CSV and JSON
    poisson  Poisson stability study, CSV and JSON
    verify   identity and property battery
    mf       concentration modulus of a piecewise constant source

Exit status: 0 when every gating check passes, 1 when a check fails,
2 for configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from domperturb import study as st
from domperturb.config import ConfigError, load_config
from domperturb.geometry import GeometryError
from domperturb.mesh import MeshError, generate_mesh
from domperturb.pullback import CoefficientError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML study configuration")
    common.add_argument("--seed", type=_u64, help="random seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--format", choices=("csv", "json"), default="json", help="format printed to stdout")

    parser = argparse.ArgumentParser(prog="domperturb", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("mesh", parents=[common], help="write the reference mesh")
    p = sub.add_parser("solve", parents=[common], help="eigensystem to JSON")
    p.add_argument("--eps", type=float, help="also solve the perturbed operator at this eps")
    sub.add_parser("study", parents=[common], help="perturbation-rate study")
    sub.add_parser("poisson", parents=[common], help="Poisson stability study")
    p = sub.add_parser("verify", parents=[common], help="identity/property battery")
    p.add_argument("--inject-fault", action="store_true", help="corrupt one nodal weight (negative control)")
    p.add_argument("--trials", type=int, default=200, help="random basis-selection trials")
    p = sub.add_parser("mf", parents=[common], help="concentration modulus M_f(s)")
    p.add_argument("--s", type=_floats, required=True, help="one or more measure budgets")
    p.add_argument("--values", type=_floats, help="per-element values of f (instead of a config)")
    p.add_argument("--areas", type=_floats, help="per-element areas matching --values")
    return parser


def _config(args, required: bool = True):
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this subcommand")
        return None
    return load_config(args.config, seed=args.seed, out_dir=None if args.out is None else str(args.out))


def _out_dir(args, cfg) -> Path:
    out = args.out if args.out is not None else (cfg.out_dir if cfg is not None else Path("out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _table(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def _emit(fmt: str, doc: dict, rows: list[dict]) -> None:
    if fmt == "json":
        print(json.dumps(st._jsonable(doc), indent=2, sort_keys=True))
    else:
        sys.stdout.write(_table(rows))


def _checks_rows(checks) -> list[dict]:
    return [c.to_dict() for c in checks]


# ---------------------------------------------------------------------------
# subcommands


def cmd_mesh(args) -> int:
    cfg = _config(args)
    mesh = generate_mesh(cfg.domain, cfg.h)
    out = _out_dir(args, cfg) / "mesh.txt"
    mesh.write(out)
    info = {
        "path": str(out),
        "nodes": mesh.n_nodes,
        "elements": mesh.n_elements,
        "free_dofs": mesh.dofmap().n_free,
        "min_angle_deg": mesh.min_angle(),
        "area": mesh.area(),
    }
    _emit(args.format, info, [info])
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _config(args)
    ctx = st.StudyContext.build(cfg)
    phi_t = ctx.perturbed_map(args.eps) if args.eps is not None else ctx.phi
    B = ctx.bundles(phi_t)
    doc = {"name": cfg.name, "seed": cfg.seed, "n_free": ctx.dofmap.n_free, "k": ctx.k}
    sides = ["base"] + (["tilde"] if args.eps is not None else [])
    rows = []
    for side in sides:
        es = st.solve_eigs(B[side], ctx.k, seed=cfg.seed)
        doc[side] = {
            "eigenvalues": es.values.tolist(),
            "relative_residuals": es.residuals.tolist(),
            "orthonormality_error": es.orthonormality_error(),
            "clusters": es.clusters(),
        }
        rows += [{"side": side, "n": i + 1, "eigenvalue": f"{v:.12e}"} for i, v in enumerate(es.values)]
    if args.eps is not None:
        doc["eps"] = args.eps
    out = _out_dir(args, cfg) / "eigensystem.json"
    out.write_text(json.dumps(st._jsonable(doc), indent=2, sort_keys=True))
    _emit(args.format, doc, rows)
    return EXIT_OK


def _report(args, cfg, stem: str, csv_text: str, json_text: str, passed: bool) -> int:
    out = _out_dir(args, cfg)
    (out / f"{stem}.csv").write_text(csv_text)
    (out / f"{stem}.json").write_text(json_text)
    sys.stdout.write(csv_text if args.format == "csv" else json_text + "\n")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_study(args) -> int:
    cfg = _config(args)
    res = st.run_perturbation_study(cfg)
    return _report(args, cfg, "study", st.study_csv(res), st.study_json(res), res.passed)


def cmd_poisson(args) -> int:
    cfg = _config(args)
    res = st.run_poisson_study(cfg)
    return _report(args, cfg, "poisson", st.poisson_csv(res), st.poisson_json(res), res.passed)


def cmd_verify(args) -> int:
    cfg = _config(args, required=False)
    seed = args.seed if args.seed is not None else (cfg.seed if cfg is not None else 0)
    if args.trials < 1:
        raise ConfigError("--trials must be positive")
    rep = st.verify_suite(seed, corrupt_w=args.inject_fault, selection_trials=args.trials)
    doc = rep.to_dict()
    (_out_dir(args, cfg) / "verify.json").write_text(json.dumps(st._jsonable(doc), indent=2, sort_keys=True))
    _emit(args.format, doc, _checks_rows(rep.checks))
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_mf(args) -> int:
    if args.values is not None or args.areas is not None:
        if args.values is None or args.areas is None or len(args.values) != len(args.areas):
            raise ConfigError("--values and --areas must be given together with equal lengths")
        values, areas = np.asarray(args.values), np.asarray(args.areas)
        if np.any(areas < 0):
            raise ConfigError("areas must be non-negative")
    else:
        cfg = _config(args)
        mesh = generate_mesh(cfg.domain, cfg.h)
        values, areas = st.element_source(mesh, cfg.source, st.geo.IdentityMap())
    if any(s < 0 for s in args.s):
        raise ConfigError("measure budgets must be non-negative")
    rows = [{"s": s, "mf": st.mf_concentration(values, areas, s)} for s in args.s]
    _emit(args.format, {"total_area": float(np.sum(areas)), "results": rows}, rows)
    return EXIT_OK


COMMANDS = {
    "mesh": cmd_mesh,
    "solve": cmd_solve,
    "study": cmd_study,
    "poisson": cmd_poisson,
    "verify": cmd_verify,
    "mf": cmd_mf,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, GeometryError, MeshError, CoefficientError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
