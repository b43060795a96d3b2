"""Command-line entry point: ``sqfn <command> --config cfg.json --out dir/``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from ._validation import SqfnError
from .grid import distances
from .lab.config import RunConfig
from .lab.envelopes import fit_kernel_envelopes
from .lab.probes import ProbeZoo
from .lab.reports import ReportBundle, emit_reports
from .lab.suite import run_theorem_a_suite
from .potential import PotentialProfile, build_covering, export_rho_csv
from .semigroup import (
    decompose,
    heat_kernel,
    poisson_subordinated,
    subordination_weight_integral,
)
from .spaces import Atom, BanachSurrogate, bmo_L_norm, is_atom, make_atom, save_atoms
from .squarefn import g_split

log = logging.getLogger("sqfn")


def _scalar_probe(config: RunConfig, profile, kind: str, index: int) -> np.ndarray:
    zoo = ProbeZoo(profile.grid, profile, (kind,))
    return zoo.probe(index, config.seeds["probes"], BanachSurrogate(2.0, 1)).values[:, 0]


def _setup(config: RunConfig, bundle: ReportBundle):
    grid = config.build_grid()
    profile = config.build_profile(grid)
    bundle.note(f"grid {grid.to_dict()}, potential {profile.to_dict()}")
    return grid, profile


def cmd_rho(config, args, bundle):
    grid, profile = _setup(config, bundle)
    path = export_rho_csv(profile, Path(args.out) / "tables" / "rho.csv")
    rho = profile.rho_table
    bundle.report = {"rho": {"min": rho.min(), "max": rho.max(), "capped": int(profile.capped.sum()),
                             "nodes": grid.node_count, "csv": path.name}}


def cmd_covering(config, args, bundle):
    _, profile = _setup(config, bundle)
    cov = build_covering(profile)
    rows = cov.to_rows()
    cols = ["ball", "node"] + [f"x{i + 1}" for i in range(profile.grid.d)] + ["radius", "overlap"]
    table = bundle.table("covering", cols)
    for row in rows:
        table.add(**row)
    bundle.report = {"covering": {"balls": len(rows), "coverage": cov.coverage,
                                  "overlap_bound": cov.overlap_bound}}


def cmd_heat(config, args, bundle):
    _, profile = _setup(config, bundle)
    dec = decompose(profile, node_cap=config.node_cap)
    kernel = heat_kernel(dec, args.t)
    path, side = kernel.save(Path(args.out) / f"heat_t{args.t:g}.bin")
    mass = kernel.row_mass()
    bundle.report = {"heat": {"t": args.t, "file": path.name, "sidecar": side.name,
                              "row_mass_min": mass.min(), "row_mass_max": mass.max()}}


def cmd_poisson(config, args, bundle):
    _, profile = _setup(config, bundle)
    dec = decompose(profile, node_cap=config.node_cap)
    kernel = poisson_subordinated(dec, args.t)
    path, side = kernel.save(Path(args.out) / f"poisson_t{args.t:g}.bin")
    out = {"t": args.t, "file": path.name, "sidecar": side.name, "mismatch": kernel.mismatch}
    if args.check_subordination:
        out["weight_integral"] = subordination_weight_integral(args.t)
    bundle.report = {"poisson": out}


def cmd_gfunc(config, args, bundle):
    grid, profile = _setup(config, bundle)
    cfg = dataclasses.replace(config.square_function_config(), q=args.q)
    if args.kind == "L":
        dec = decompose(profile, node_cap=config.node_cap)
    else:
        dec = decompose(PotentialProfile(grid, c=0.0), node_cap=config.node_cap)
    f = _scalar_probe(config, profile, args.probe, args.index)
    split = g_split(cfg, f, dec, profile)
    value = {"none": split.g, "global": split.g_global, "local": split.g_local}[args.split]
    cols = [f"x{i + 1}" for i in range(grid.d)] + ["g", "global", "local"]
    table = bundle.table("gfunc", cols)
    for x, g, gg, gl in zip(grid.nodes, split.g, split.g_global, split.g_local):
        table.add(**{f"x{i + 1}": v for i, v in enumerate(x)}, g=g, **{"global": gg, "local": gl})
    bundle.report = {"gfunc": {"q": args.q, "kind": args.kind, "split": args.split,
                               "probe": f"{args.probe}-{args.index}", "max": value.max(),
                               "l2": float(np.sqrt(np.sum(value ** 2) * grid.cell_volume))}}


def cmd_bmo(config, args, bundle):
    _, profile = _setup(config, bundle)
    family = config.build_ball_family(profile)
    f = _scalar_probe(config, profile, args.probe, args.index)
    rep = bmo_L_norm(f, None, family, profile, report=True)
    table = bundle.table("bmo", ["ball", "oscillation", "average", "binding"])
    for row in rep.rows():
        table.add(**row)
    bundle.report = {"bmo": {"norm": rep.norm, "binding_ball": rep.binding_ball,
                             "binding_condition": rep.binding_condition, "balls": len(family)}}


def cmd_atoms(config, args, bundle):
    grid, profile = _setup(config, bundle)
    center = grid.nearest_node(np.zeros(grid.d))
    rho = profile.rho_table[center]
    small_r = min(max(0.6 * rho, 1.5 * grid.spacing), 0.95 * rho)
    big_r = max(rho, grid.spacing) * 1.2
    atoms = [make_atom(grid, center, small_r, "small", profile, config.seeds["atoms"]),
             make_atom(grid, center, big_r, "big", profile, config.seeds["atoms"] + 1)]
    inside = distances(grid.nodes, grid.nodes[center]) <= small_r
    flat = inside / (inside.sum() * grid.cell_volume)
    atoms.append(Atom(flat, center, small_r, "small"))
    index = save_atoms(atoms, Path(args.out) / "atoms")
    table = bundle.table("atoms", ["atom", "kind", "center", "radius", "is_atom"])
    for k, a in enumerate(atoms):
        table.add(atom=k, kind=a.kind, center=a.center, radius=a.radius, is_atom=is_atom(a, profile))
    bundle.report = {"atoms": {"index": index.name, "count": len(atoms), "rho_center": rho}}


def cmd_theorem_a(config, args, bundle):
    suite = run_theorem_a_suite(config, ledger=not args.no_ledger)
    bundle.report, bundle.tables = suite.report, suite.tables
    bundle.log.extend(suite.log)


def cmd_envelopes(config, args, bundle):
    rep = fit_kernel_envelopes(config)
    table = bundle.table("envelope", ["xi_from", "W"])
    for row in rep.envelope.rows():
        table.add(**row)
    bundle.report = {"envelopes": rep.to_dict()}
    bundle.note(f"envelopes: C_alpha={rep.C_alpha:.6g}, holdout pass rate {rep.holdout_pass_rate:.4f}")


def cmd_run(config, args, bundle):
    cmd_theorem_a(config, args, bundle)
    env = ReportBundle()
    cmd_envelopes(config, args, env)
    bundle.report["envelopes"] = env.report["envelopes"]
    bundle.tables.update(env.tables)
    bundle.log.extend(env.log)


COMMANDS = {
    "run": cmd_run, "rho": cmd_rho, "covering": cmd_covering, "heat": cmd_heat,
    "poisson": cmd_poisson, "gfunc": cmd_gfunc, "bmo": cmd_bmo, "atoms": cmd_atoms,
    "theorem-a": cmd_theorem_a, "envelopes": cmd_envelopes,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqfn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        if name in ("heat", "poisson"):
            p.add_argument("--t", type=float, required=True)
        if name == "poisson":
            p.add_argument("--check-subordination", action="store_true")
        if name == "gfunc":
            p.add_argument("--q", type=float, default=2.0)
            p.add_argument("--kind", choices=("L", "delta"), default="L")
            p.add_argument("--split", choices=("global", "local", "none"), default="none")
        if name in ("gfunc", "bmo"):
            p.add_argument("--probe", choices=("gaussian", "indicator", "eigenmix"), default="gaussian")
            p.add_argument("--index", type=int, default=0)
        if name in ("theorem-a", "run"):
            p.add_argument("--no-ledger", action="store_true", help="skip the localization ledger")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = RunConfig.from_json(args.config)
        bundle = ReportBundle()
        COMMANDS[args.command](config, args, bundle)
        emit_reports(bundle, args.out)
    except (SqfnError, ValueError, MemoryError, RuntimeError, OSError) as exc:
        print(f"sqfn {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
