"""Boundedness suite: probe estimates of g^{L,q} norms over Banach surrogates, plus the
localization ledger that tracks the global/local split on a few scalar fields."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .._validation import NumericError
from ..potential import PotentialProfile, build_covering, comparability_constant
from ..semigroup import decompose
from ..spaces import BallFamily, BanachSurrogate, bmo_L_norm, lp_norm, weak_l1
from ..squarefn import (
    annulus_audit,
    check_global_domination,
    check_local_difference,
    cutoff_violations,
    g_function,
    g_split,
)
from .norms import drift_pct, report_from_ratios
from .probes import ATOM_KINDS, ProbeZoo, stack
from .reports import ReportBundle

log = logging.getLogger(__name__)

LEVEL_STRIDE = 1009
N_DRIFT_LIMIT = 15.0
RESOLUTION_DRIFT_LIMIT = 20.0

# item -> (domain, codomain)
ITEMS = {
    "L2": ("L^2_X", "L^2"),
    "weakL1": ("L^1_X", "weak-L^1"),
    "BMO": ("BMO_L,X", "BMO_L"),
    "H1": ("H^1_L,X atoms", "L^1"),
}

LIMITATIONS = [
    "Norm estimates are maxima over probes, hence lower estimates of operator norms.",
    "The converse implications of the characterization rely on rescaling over the whole "
    "space and are not exhibited on a bounded box; each boundedness statement is probed "
    "directly instead.",
    "The estimate at n components is the maximum over levels m <= n of fresh m-component "
    "probes, since zero padding embeds the m-component surrogate isometrically.",
]

NORM_COLUMNS = ["resolution", "surrogate", "n", "item", "operator", "domain", "codomain",
                "estimate", "fresh_estimate", "probe_count", "argmax_probe", "drift_pct"]


def levels(n: int) -> list[int]:
    """Powers of two up to n, followed by n itself."""
    out = [m for m in (2 ** k for k in range(int(math.log2(n)) + 1)) if m <= n]
    return out if out[-1] == n else out + [n]


def level_seed(seed: int, m: int) -> int:
    return seed * LEVEL_STRIDE + m


def convexity_label(X: BanachSurrogate) -> str:
    if 1 < X.r < math.inf:
        return f"uniformly convex, power type {max(X.r, 2.0):g}"
    return "not uniformly convex"


@dataclass
class _Resolution:
    label: str
    grid: object
    profile: PotentialProfile
    dec: object
    family: BallFamily


class FinitenessAudit:
    """Counts every computed entry and stops the suite at the first non-finite one."""

    def __init__(self):
        self.fields = 0
        self.entries = 0

    def check(self, where: str, values, columns=None) -> None:
        arr = np.asarray(values, dtype=np.float64)
        self.fields += 1
        self.entries += arr.size
        bad = ~np.isfinite(arr)
        if bad.any():
            hit = np.argwhere(bad)[0]
            who = where
            if columns is not None and arr.ndim >= 2:
                who = f"{where}, probe {columns[int(hit[-1])]}"
            raise NumericError(f"{int(bad.sum())} non-finite entries in {who} (first at {hit.tolist()})")


def _build_resolution(config, grid) -> _Resolution:
    profile = config.build_profile(grid)
    dec = decompose(profile, node_cap=config.node_cap)
    label = "x".join(str(s) for s in grid.shape)
    return _Resolution(label, grid, profile, dec, config.build_ball_family(profile))


def _ratio(table: dict, skipped: list, pid: str, num: float, den: float) -> None:
    if den == 0:
        skipped.append(pid)
        return
    table[pid] = num / den


def _level_ratios(res: _Resolution, cfg, X, main, atoms, audit: FinitenessAudit, where: str):
    """Ratios of every item for one resolution, surrogate and level."""
    grid, profile, family = res.grid, res.profile, res.family
    ratios = {item: {} for item in ITEMS}
    skipped = {item: [] for item in ITEMS}
    ids = [p.id for p in main]
    f = stack(main)
    audit.check(f"{where} inputs", f, ids)
    g = g_function(cfg, f, res.dec, X)
    audit.check(f"{where} g", g, ids)
    for k, p in enumerate(main):
        gk = g[:, k]
        _ratio(ratios["L2"], skipped["L2"], p.id, lp_norm(gk, 2, None, grid), lp_norm(p.values, 2, X, grid))
        _ratio(ratios["weakL1"], skipped["weakL1"], p.id, weak_l1(gk, None, grid),
               lp_norm(p.values, 1, X, grid))
        _ratio(ratios["BMO"], skipped["BMO"], p.id, bmo_L_norm(gk, None, family, profile),
               bmo_L_norm(p.values, X, family, profile))
    atom_ids = [a.id for a in atoms]
    fa = stack(atoms)
    audit.check(f"{where} atoms", fa, atom_ids)
    ga = g_function(cfg, fa, res.dec, X)
    audit.check(f"{where} g(atoms)", ga, atom_ids)
    for k, a in enumerate(atoms):
        # Atoms have H^1 norm at most one, so ‖g a‖_1 itself is the ratio.
        ratios["H1"][a.id] = lp_norm(ga[:, k], 1, None, grid)
    return ratios, skipped


def _theorem_a(config, resolutions, cfg, bundle: ReportBundle, audit: FinitenessAudit) -> dict:
    seeds = config.seeds
    count = int(config.probes.get("count", 32))
    atom_count = int(config.probes.get("atom_count", 32))
    kinds = tuple(config.probes.get("kinds", ()))
    atom_kinds = tuple(config.probes.get("atom_kinds", ATOM_KINDS))
    norms = bundle.table("norms", NORM_COLUMNS)
    probe_log = bundle.table("probe_ratios", ["resolution", "surrogate", "level", "item", "probe_id", "ratio"])
    drift_n = bundle.table("drift_n", ["resolution", "surrogate", "item", "n_first", "n_last",
                                       "estimate_first", "estimate_last", "drift_pct"])
    drift_res = bundle.table("drift_resolution", ["surrogate", "n", "item", "resolution_a",
                                                  "resolution_b", "estimate_a", "estimate_b", "drift_pct"])
    reports = {}  # (res label, X label, n, item) -> NormReport
    fresh = {}
    for res in resolutions:
        main_zoo = ProbeZoo(res.grid, res.profile, kinds)
        atom_zoo = ProbeZoo(res.grid, res.profile, atom_kinds)
        for spec in config.surrogate_list():
            merged = {item: {} for item in ITEMS}
            skipped = {item: [] for item in ITEMS}
            for m in levels(spec.n):
                X = BanachSurrogate(spec.r, m)
                main = main_zoo.generate(count, level_seed(seeds["probes"], m), X)
                atoms = atom_zoo.generate(atom_count, level_seed(seeds["atoms"], m), X)
                where = f"resolution {res.label}, {X.label}"
                ratios, skip = _level_ratios(res, cfg, X, main, atoms, audit, where)
                bundle.note(f"{where}: {len(main)} probes, {len(atoms)} atoms")
                for item in ITEMS:
                    merged[item].update(ratios[item])
                    skipped[item].extend(skip[item])
                    for pid in sorted(ratios[item]):
                        probe_log.add(resolution=res.label, surrogate=spec.label, level=m, item=item,
                                      probe_id=pid, ratio=ratios[item][pid])
                    domain, codomain = ITEMS[item]
                    rep = report_from_ratios(merged[item], f"g^(L,{cfg.q:g})", domain, codomain,
                                             skipped[item])
                    reports[(res.label, spec.label, m, item)] = rep
                    fresh[(res.label, spec.label, m, item)] = max(ratios[item].values(), default=0.0)
    labels = [r.label for r in resolutions]
    for (a, b) in zip(labels, labels[1:]):
        for (rl, xl, m, item), rep in sorted(reports.items()):
            if rl != b:
                continue
            other = reports[(a, xl, m, item)]
            rep.drift_pct = drift_pct(other.estimate, rep.estimate)
            drift_res.add(surrogate=xl, n=m, item=item, resolution_a=a, resolution_b=b,
                          estimate_a=other.estimate, estimate_b=rep.estimate, drift_pct=rep.drift_pct)
    for (rl, xl, m, item), rep in sorted(reports.items()):
        norms.add(resolution=rl, surrogate=xl, n=m, item=item, operator=rep.operator, domain=rep.domain,
                  codomain=rep.codomain, estimate=rep.estimate, fresh_estimate=fresh[(rl, xl, m, item)],
                  probe_count=rep.probe_count, argmax_probe=rep.argmax_probe, drift_pct=rep.drift_pct)
    checks = []
    for res in resolutions:
        for spec in config.surrogate_list():
            ns = levels(spec.n)
            for item in ITEMS:
                seq = [reports[(res.label, spec.label, m, item)].estimate for m in ns]
                d = drift_pct(min(seq), max(seq))
                drift_n.add(resolution=res.label, surrogate=spec.label, item=item, n_first=ns[0],
                            n_last=ns[-1], estimate_first=seq[0], estimate_last=seq[-1], drift_pct=d)
                entry = {"resolution": res.label, "surrogate": spec.label, "item": item,
                         "convexity": convexity_label(spec), "estimates": seq, "n": ns,
                         "finite": bool(np.all(np.isfinite(seq))), "drift_n_pct": d,
                         "nondecreasing": bool(np.all(np.diff(seq) >= 0))}
                if 1 < spec.r < math.inf:
                    entry["drift_n_ok"] = d <= N_DRIFT_LIMIT
                checks.append(entry)
    res_checks = [
        {"surrogate": row["surrogate"], "n": row["n"], "item": row["item"],
         "drift_pct": row["drift_pct"], "ok": row["drift_pct"] <= RESOLUTION_DRIFT_LIMIT}
        for row in drift_res.rows
    ]
    return {
        "reports": [dict(resolution=rl, surrogate=xl, n=m, item=item, **rep.to_dict())
                    for (rl, xl, m, item), rep in sorted(reports.items())],
        "n_checks": checks,
        "resolution_checks": res_checks,
        "limits": {"drift_n_pct": N_DRIFT_LIMIT, "drift_resolution_pct": RESOLUTION_DRIFT_LIMIT},
    }


def _localization(config, res: _Resolution, cfg, bundle: ReportBundle, audit: FinitenessAudit) -> dict:
    """Split, domination constants, path ratios and the annulus audit on scalar fields."""
    spec = config.ledger
    n_main, n_atoms = int(spec.get("probes", 2)), int(spec.get("atoms", 2))
    grid, profile, family = res.grid, res.profile, res.family
    X = BanachSurrogate(2.0, 1)
    kinds = [k for k in config.probes.get("kinds", ()) if k not in ATOM_KINDS] or ["gaussian"]
    main = ProbeZoo(grid, profile, kinds).generate(n_main, level_seed(config.seeds["probes"], 1), X)
    atom_kinds = tuple(config.probes.get("atom_kinds", ATOM_KINDS))
    atoms = ProbeZoo(grid, profile, atom_kinds).generate(n_atoms, level_seed(config.seeds["atoms"], 1), X)
    dec_delta = decompose(PotentialProfile(grid, c=0.0), node_cap=config.node_cap)
    table = bundle.table("localization", ["resolution", "probe_id", "quantity", "value"])
    rows = []
    for probe in main + atoms:
        f = probe.values[:, 0]
        split_L = g_split(cfg, f, res.dec, profile)
        split_D = g_split(cfg, f, dec_delta, profile)
        for name, arr in (("g", split_L.g), ("g_global", split_L.g_global), ("g_local", split_L.g_local),
                          ("g_delta", split_D.g), ("g_delta_local", split_D.g_local)):
            audit.check(f"localization {probe.id} {name}", arr)
        glob = check_global_domination(cfg, f, res.dec, profile, split=split_L)
        local = check_local_difference(cfg, f, res.dec, dec_delta, profile, splits=(split_L, split_D))
        diff = np.abs(split_L.g_local - split_D.g_local)
        row = {
            "probe_id": probe.id,
            "cutoff_violations_L": int(cutoff_violations(split_L).size),
            "cutoff_violations_delta": int(cutoff_violations(split_D).size),
            "global_constant": glob.constant,
            "local_difference_constant": local.constant,
        }
        if probe.kind in ATOM_KINDS:
            row["global_atom_L1"] = lp_norm(split_L.g_global, 1, None, grid)
            row["local_difference_atom_L1"] = lp_norm(diff, 1, None, grid)
        else:
            f_l2 = lp_norm(f, 2, None, grid)
            f_bmo = bmo_L_norm(f, None, family, profile)
            row["global_L2_ratio"] = lp_norm(split_L.g_global, 2, None, grid) / f_l2
            row["local_difference_L2_ratio"] = lp_norm(diff, 2, None, grid) / f_l2
            row["global_BMO_to_Linf"] = float(split_L.g_global.max()) / f_bmo
            row["local_difference_BMO_to_Linf"] = float(diff.max()) / f_bmo
        for key in sorted(row):
            if key != "probe_id":
                table.add(resolution=res.label, probe_id=probe.id, quantity=key, value=row[key])
        rows.append(row)
    covering = build_covering(profile)
    C1 = comparability_constant(profile)
    audit_result = annulus_audit(profile, covering, C1)
    bundle.note(f"annulus audit on {res.label}: {audit_result.pairs_checked} pairs, "
                f"{audit_result.violations} violations")
    return {
        "resolution": res.label,
        "fields": rows,
        "cutoff_violations": sum(r["cutoff_violations_L"] + r["cutoff_violations_delta"] for r in rows),
        "annulus": audit_result.to_dict(),
        "covering": {"balls": len(covering.centers), "overlap_bound": covering.overlap_bound,
                     "coverage": covering.coverage},
    }


def run_theorem_a_suite(config, *, ledger: bool = True) -> ReportBundle:
    """Run every probe experiment in ``config`` and return the report bundle."""
    bundle = ReportBundle()
    audit = FinitenessAudit()
    cfg = config.square_function_config()
    resolutions = [_build_resolution(config, g) for g in config.resolution_grids()]
    for res in resolutions:
        bundle.note(f"resolution {res.label}: {res.grid.node_count} nodes, "
                    f"{type(res.dec).__name__}, {len(res.family)} balls")
    config_echo = {k: v for k, v in config.to_dict().items() if k != "outputs"}
    report = {"config": config_echo, "theorem_a": _theorem_a(config, resolutions, cfg, bundle, audit),
              "limitations": LIMITATIONS}
    if ledger:
        report["localization"] = _localization(config, resolutions[0], cfg, bundle, audit)
    report["finiteness"] = {"fields": audit.fields, "entries": audit.entries, "nonfinite": 0}
    bundle.note(f"finiteness audit: {audit.fields} fields, {audit.entries} entries, all finite")
    bundle.report = report
    return bundle
