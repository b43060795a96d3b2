import json
import math
from types import SimpleNamespace

import numpy as np
import pytest

from sqfn._validation import ArgumentError, ConfigurationError, FitError
from sqfn.cli import main
from sqfn.grid import Grid
from sqfn.potential import PotentialProfile
from sqfn.semigroup import decompose
from sqfn.spaces import BanachSurrogate, is_atom, lp_norm
from sqfn.squarefn import SquareFunctionConfig, g_function
from sqfn.lab import (
    ReportBundle,
    RunConfig,
    emit_reports,
    estimate_operator_norm,
    fit_kernel_envelopes,
    run_theorem_a_suite,
)
from sqfn.lab.envelopes import C_LADDER, StepEnvelope, _ladder_fit, fit_envelopes_on, sample_triples
from sqfn.lab.norms import drift_pct
from sqfn.lab.probes import ProbeZoo, stack
from sqfn.lab.reports import canonical, render_csv, render_json
from sqfn.lab.suite import FinitenessAudit, level_seed, levels

SEEDS = {"probes": 7, "atoms": 8, "envelopes": 9}
SMALL = {"grid": {"d": 3, "half_width": 1.5, "points_per_axis": 8},
         "ball_family": {"per_axis": 3, "n_radii": 3},
         "surrogates": [{"r": 2.0, "n": 2}, {"r": "inf", "n": 2}],
         "envelopes": {"triples": 400},
         "seeds": SEEDS}


# configuration

def test_config_defaults_and_round_trip(tmp_path):
    cfg = RunConfig.from_dict({"seeds": SEEDS})
    assert cfg.build_grid().shape == (16, 16, 16)
    assert cfg.square_function_config().q == 2.0
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert RunConfig.from_json(path).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("spec", [
    {},
    {"seeds": {"probes": 1, "atoms": 2}},
    {"seeds": {**SEEDS, "probes": 1.5}},
    {"seeds": {**SEEDS, "atoms": True}},
    {"seeds": SEEDS, "probes": {"count": 8}},
    {"seeds": SEEDS, "potential": {"kind": "power", "beta": 1.0}, "grid": {"points_per_axis": 30}},
    {"seeds": SEEDS, "square_function": {"q": 0.5}},
])
def test_config_rejections(spec):
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict(spec)


def test_separable_grid_may_exceed_the_node_cap():
    cfg = RunConfig.from_dict({"seeds": SEEDS, "grid": {"points_per_axis": 30}})
    assert cfg.build_grid().node_count > cfg.node_cap


def test_resolution_overrides():
    cfg = RunConfig.from_dict({"seeds": SEEDS, "resolutions": [{"points_per_axis": 20}]})
    assert [g.shape[0] for g in cfg.resolution_grids()] == [16, 20]


# probes

@pytest.fixture(scope="module")
def small_grid():
    g = Grid(3, 1.5, 10)
    return g, PotentialProfile(g, "constant", 1.0)


def test_probes_are_deterministic(small_grid):
    g, prof = small_grid
    zoo = ProbeZoo(g, prof)
    X = BanachSurrogate(2.0, 3)
    a, b = zoo.generate(10, 4, X), zoo.generate(10, 4, X)
    assert [p.id for p in a] == [p.id for p in b]
    assert all(np.array_equal(p.values, q.values) for p, q in zip(a, b))
    assert {p.kind for p in a} == {"gaussian", "indicator", "eigenmix", "atom_small", "atom_big"}


def test_probe_components_do_not_depend_on_n(small_grid):
    g, prof = small_grid
    zoo = ProbeZoo(g, prof, ("gaussian", "indicator", "eigenmix"))
    for k in range(3):
        short = zoo.probe(k, 2, BanachSurrogate(2.0, 2)).values
        long = zoo.probe(k, 2, BanachSurrogate(2.0, 5)).values
        assert np.array_equal(short, long[:, :2])


def test_probes_mean_the_same_function_on_every_grid():
    coarse, fine = Grid(3, 1.5, 9), Grid(3, 1.5, 17)
    X = BanachSurrogate(2.0, 1)
    for k in range(3):
        a = ProbeZoo(coarse, kinds=("gaussian",)).probe(k, 3, X).values[:, 0]
        b = ProbeZoo(fine, kinds=("gaussian",)).probe(k, 3, X).values[:, 0]
        # every coarse node is a fine node when (n - 1) doubles
        idx = [fine.nearest_node(p) for p in coarse.nodes]
        assert np.allclose(a, b[idx], rtol=1e-12, atol=1e-300)


def test_atom_probes_are_atoms(small_grid):
    g, prof = small_grid
    zoo = ProbeZoo(g, prof, ("atom_small", "atom_big"))
    for m in (1, 3):
        X = BanachSurrogate(2.0, m)
        for p in zoo.generate(12, 5, X):
            c, r = p.ball
            from sqfn.spaces import Atom
            kind = "small" if p.kind == "atom_small" else "big"
            assert is_atom(Atom(p.values, c, r, kind), prof, X)


def test_probe_errors(small_grid):
    g, _ = small_grid
    with pytest.raises(ArgumentError):
        ProbeZoo(g, kinds=("wavelet",))
    with pytest.raises(ArgumentError):
        ProbeZoo(g, None, ("atom_big",))


# norm estimation

def _zoo(grid):
    zoo = ProbeZoo(grid, kinds=("gaussian", "indicator", "eigenmix"))
    return lambda count, seed: zoo.generate(count, seed, BanachSurrogate(2.0, 1))


def test_identity_and_zero_operators(small_grid):
    g, _ = small_grid
    l2 = lambda v: lp_norm(v, 2, None, g)  # noqa: E731
    ident = estimate_operator_norm(lambda v: v, l2, l2, 32, 1, zoo=_zoo(g), operator="I")
    assert abs(ident.estimate - 1) <= 1e-12 and ident.probe_count == 32
    zero = estimate_operator_norm(lambda v: 0 * v, l2, l2, 32, 1, zoo=_zoo(g))
    assert zero.estimate == 0.0
    assert max(ident.ratios.values()) == ident.estimate == ident.ratios[ident.argmax_probe]


def test_norm_estimation_skips_zero_probes_and_checks_counts(small_grid):
    g, _ = small_grid
    probes = [SimpleNamespace(id="zero", values=np.zeros(g.node_count)),
              SimpleNamespace(id="one", values=np.ones(g.node_count))]
    rep = estimate_operator_norm(lambda v: 2 * v, np.linalg.norm, np.linalg.norm, probes)
    assert rep.skipped == ["zero"] and rep.estimate == 2.0
    with pytest.raises(ArgumentError):
        estimate_operator_norm(lambda v: v, np.linalg.norm, np.linalg.norm, 31, 0, zoo=_zoo(g))
    with pytest.raises(ArgumentError):
        estimate_operator_norm(lambda v: v, np.linalg.norm, np.linalg.norm, 32, None)


def test_free_square_function_norm_on_the_line():
    g = Grid(1, 1.0, 512)
    dec = decompose(PotentialProfile(g, c=0.0))
    cfg = SquareFunctionConfig()
    eye = np.eye(g.node_count)
    probes = [SimpleNamespace(id=f"mode-{k}", values=dec.synthesize(eye[:, k])) for k in range(32)]
    l2 = lambda v: lp_norm(v, 2, None, g)  # noqa: E731
    rep = estimate_operator_norm(lambda v: g_function(cfg, v, dec), l2, l2, probes)
    assert rep.estimate == pytest.approx(0.5, rel=0.01)
    assert min(rep.ratios.values()) == pytest.approx(0.5, rel=0.01)


def test_drift_and_levels():
    assert drift_pct(1.0, 1.1) == pytest.approx(100 / 11)
    assert drift_pct(0.0, 0.0) == 0.0
    assert levels(8) == [1, 2, 4, 8] and levels(6) == [1, 2, 4, 6] and levels(1) == [1]
    assert level_seed(3, 4) != level_seed(4, 3)


def test_finiteness_audit_names_the_probe():
    audit = FinitenessAudit()
    audit.check("ok", np.ones((3, 2)))
    bad = np.ones((3, 2))
    bad[1, 1] = np.nan
    with pytest.raises(Exception, match="probe b"):
        audit.check("field", bad, ["a", "b"])
    assert audit.fields == 2 and audit.entries == 12


# envelopes

def test_sample_triples_respects_the_tail_cut():
    g = Grid(3, 2.0, 21)
    x, y, t = sample_triples(g, 500, (0.05, 0.5), 3)
    assert len(t) == 500
    r2 = np.sum((g.nodes[x] - g.nodes[y]) ** 2, axis=1)
    assert np.all(r2 <= 40 * t) and np.all((t >= 0.05) & (t <= 0.5))
    assert np.all(np.abs(g.nodes[np.concatenate([x, y])]) <= 0.75 * 2.0 + 1e-12)
    again = sample_triples(g, 500, (0.05, 0.5), 3)
    assert all(np.array_equal(a, b) for a, b in zip((x, y, t), again))


def test_step_envelope_bounds_its_data(rng):
    xi = rng.uniform(0, 5, 300)
    e = np.exp(-xi) * rng.uniform(0.5, 1, 300)
    env = StepEnvelope.fit(xi, e, 5.0)
    assert np.all(np.diff(env.values) <= 0)
    assert np.all(e <= env(xi))


def test_ladder_fit():
    ratios = np.array([0.2, 3.0, 1.0])
    c, idx, worst = _ladder_fit(ratios, (np.arange(3),) * 3)
    assert worst == 1 and c >= 3.0 and C_LADDER[idx - 1] < 3.0
    with pytest.raises(FitError, match="worst triple"):
        _ladder_fit(np.array([1.0, 1e9]), (np.arange(2),) * 3)


def test_envelope_without_potential():
    g = Grid(3, 2.0, 12)
    prof = PotentialProfile(g, "constant", 0.0, rho_cap=2.0)
    dec = decompose(prof)
    rep = fit_envelopes_on(prof, dec, 300, (0.05, 0.5), 1, dec_free=dec)
    assert rep.gaussian_violations == 0 and rep.negative_entries == 0
    assert np.all(rep.envelope.values == 0) and rep.perturbation_validated


def test_envelope_with_unit_potential():
    g = Grid(3, 2.0, 14)
    prof = PotentialProfile(g, "constant", 1.0)
    rep = fit_envelopes_on(prof, decompose(prof), 1000, (0.05, 0.5), 2)
    assert rep.gaussian_violations == 0 and math.isfinite(rep.C_alpha)
    assert rep.shift_check["max_rel_gap"] < 1e-10 and rep.shift_check["bounded_by_ct_h"]
    assert rep.holdout_pass_rate == 1.0


def test_fit_kernel_envelopes_from_config():
    cfg = RunConfig.from_dict({**SMALL, "potential": {"kind": "power", "beta": 2.0},
                               "envelopes": {"triples": 300, "grid": {"points_per_axis": 12}}})
    rep = fit_kernel_envelopes(cfg)
    out = rep.to_dict()
    assert out["triples"] == 300 and "dual_path" in out
    assert set(out["dual_path"]) >= {"C_alpha_mehler", "same_outcome", "ladder_steps_apart"}


# reports

def test_empty_bundle_writes_header_only_csv(tmp_path):
    bundle = ReportBundle()
    bundle.table("norms", ["a", "b"])
    paths = emit_reports(bundle, tmp_path)
    assert paths["tables"]["norms"].read_text() == "a,b\n"
    assert json.loads(paths["report"].read_text()) == {}
    with pytest.raises(ArgumentError):
        bundle.table("norms", ["a"]).add(c=1)


def test_canonical_rounding():
    assert canonical({"x": np.float64(1 / 3), "n": np.int64(4), "f": np.bool_(True)}) == \
        {"x": 0.333333333333, "n": 4, "f": True}
    assert canonical([math.inf, np.arange(2)]) == ["inf", [0, 1]]
    t = ReportBundle().table("t", ["v", "w"])
    t.add(v=0.1 + 0.2)
    assert render_csv(t) == "v,w\n0.3,\n"
    assert render_json({"b": 1, "a": 2}).index('"a"') < render_json({"b": 1, "a": 2}).index('"b"')


@pytest.fixture(scope="module")
def small_suite():
    return run_theorem_a_suite(RunConfig.from_dict(SMALL))


def test_small_suite(small_suite):
    report = small_suite.report
    ta = report["theorem_a"]
    assert report["finiteness"]["nonfinite"] == 0
    assert {c["item"] for c in ta["n_checks"]} == {"L2", "weakL1", "BMO", "H1"}
    assert all(c["finite"] for c in ta["n_checks"])
    loc = report["localization"]
    assert loc["cutoff_violations"] == 0 and loc["annulus"]["violations"] == 0
    # every estimate is the maximum of the logged ratios for its key
    logged = {}
    for row in small_suite.tables["probe_ratios"].rows:
        key = (row["resolution"], row["surrogate"], row["item"])
        logged.setdefault(key, {})[(row["level"], row["probe_id"])] = row["ratio"]
    for row in small_suite.tables["norms"].rows:
        vals = [v for (lvl, _), v in logged[(row["resolution"], row["surrogate"], row["item"])].items()
                if lvl <= row["n"]]
        assert row["estimate"] == max(vals)


def test_rerun_is_byte_identical(tmp_path, small_suite):
    again = run_theorem_a_suite(RunConfig.from_dict(SMALL))
    a = emit_reports(small_suite, tmp_path / "a")
    b = emit_reports(again, tmp_path / "b")
    assert a["report"].read_bytes() == b["report"].read_bytes()
    for name in a["tables"]:
        assert a["tables"][name].read_bytes() == b["tables"][name].read_bytes()


def test_two_seeds_share_a_schema(small_suite):
    other = run_theorem_a_suite(RunConfig.from_dict({**SMALL, "seeds": {**SEEDS, "probes": 70}}),
                                ledger=False)
    assert set(other.tables) <= set(small_suite.tables)
    ids = lambda b: {r["probe_id"] for r in b.tables["probe_ratios"].rows if r["item"] == "L2"}  # noqa: E731
    assert ids(other).isdisjoint(ids(small_suite))
    rows = small_suite.report["theorem_a"]["reports"], other.report["theorem_a"]["reports"]
    assert [sorted(r) for r in rows[0]] == [sorted(r) for r in rows[1]]


# command line

@pytest.fixture()
def cfg_path(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**SMALL, "ball_family": {"per_axis": 3, "n_radii": 2}}))
    return path


@pytest.mark.parametrize("args", [
    ["rho"], ["covering"], ["heat", "--t", "0.1"], ["poisson", "--t", "0.5", "--check-subordination"],
    ["gfunc", "--split", "local"], ["gfunc", "--kind", "delta", "--probe", "indicator"],
    ["bmo", "--probe", "eigenmix"], ["atoms"],
])
def test_cli_subcommands(tmp_path, cfg_path, args):
    out = tmp_path / "out"
    assert main([args[0], "--config", str(cfg_path), "--out", str(out), *args[1:]]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report and (out / "log.txt").exists()


def test_cli_atoms_table(tmp_path, cfg_path):
    out = tmp_path / "out"
    main(["atoms", "--config", str(cfg_path), "--out", str(out)])
    flags = (out / "tables" / "atoms.csv").read_text().splitlines()[1:]
    assert [line.rsplit(",", 1)[1] for line in flags] == ["True", "True", "False"]


def test_cli_reports_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"grid": {"d": 3}}))
    assert main(["rho", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "seeds" in capsys.readouterr().err
