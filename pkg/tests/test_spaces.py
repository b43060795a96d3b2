import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sqfn._validation import ArgumentError, ConstructionError
from sqfn.grid import Grid
from sqfn.potential import PotentialProfile
from sqfn.semigroup import decompose
from sqfn.spaces import (
    Atom,
    BallFamily,
    BanachSurrogate,
    bmo_L_norm,
    h1_norm_upper,
    is_atom,
    load_atoms,
    lp_modulus_closed_form,
    lp_norm,
    make_atom,
    modulus_of_convexity,
    save_atoms,
    weak_l1,
    x_norm,
)

SQUARE = Grid(2, 1.0, 15)
SQUARE_PROFILE = PotentialProfile(SQUARE, "constant", 4.0)


def test_surrogate_validation_and_label():
    assert BanachSurrogate(math.inf, 8).label == "linf_8"
    assert BanachSurrogate(2, 3).label == "l2_3"
    with pytest.raises(ArgumentError):
        BanachSurrogate(0.5, 2)
    with pytest.raises(ArgumentError):
        BanachSurrogate(2.0, 0)


def test_x_norm_examples(rng):
    assert x_norm(BanachSurrogate(2, 2), [3, 4]) == 5
    assert x_norm(BanachSurrogate(math.inf, 3), [1, -7, 2]) == 7
    v = rng.standard_normal(6)
    assert x_norm(BanachSurrogate(1, 6), v) == pytest.approx(sum(abs(c) for c in v), rel=1e-15)
    with pytest.raises(ArgumentError):
        x_norm(BanachSurrogate(2, 3), [1.0, 2.0])


@given(st.sampled_from([1.0, 1.5, 2.0, 3.0, 7.0, math.inf]),
       arrays(np.float64, (2, 4), elements=st.floats(-1e3, 1e3)), st.floats(-10, 10))
def test_norm_axioms(r, vs, c):
    X = BanachSurrogate(r, 4)
    u, v = vs
    assert X.norm(u + v) <= X.norm(u) + X.norm(v) + 1e-9 * (1 + X.norm(u) + X.norm(v))
    assert X.norm(c * u) == pytest.approx(abs(c) * X.norm(u), rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("eps", [0.2, 0.8, 1.5])
def test_modulus_hilbert(eps):
    est = modulus_of_convexity(BanachSurrogate(2, 2), eps, seed=3)
    assert est == pytest.approx(1 - math.sqrt(1 - eps ** 2 / 4), abs=1e-3)
    assert lp_modulus_closed_form(2, eps) == pytest.approx(1 - math.sqrt(1 - eps ** 2 / 4))


@pytest.mark.parametrize("r", [1.0, math.inf])
def test_modulus_flat_faces(r):
    for eps in (0.1, 0.5, 1.0):
        assert modulus_of_convexity(BanachSurrogate(r, 2), eps, seed=1) < 1e-6


def test_modulus_flat_faces_brute_force():
    # On one edge of the l1 unit square, x and y at l1 distance ε have midpoint norm 1.
    for eps in (0.25, 0.5, 1.0):
        x = np.array([1.0, 0.0])
        y = np.array([1 - eps / 2, eps / 2])
        X = BanachSurrogate(1, 2)
        assert X.norm(x - y) == pytest.approx(eps) and X.norm(y) == 1
        assert 1 - X.norm((x + y) / 2) == 0


def test_modulus_monotone_and_power_fit():
    X = BanachSurrogate(4.0, 2)
    ladder = [0.25, 0.5, 1.0, 1.5]
    est = [modulus_of_convexity(X, e, seed=0) for e in ladder]
    assert all(a <= b + 1e-6 for a, b in zip(est, est[1:]))
    c = min(v / e ** 4 for v, e in zip(est, ladder))
    assert c > 0
    with pytest.raises(ArgumentError):
        modulus_of_convexity(X, 2.5)


def test_modulus_is_deterministic():
    X = BanachSurrogate(3.0, 3)
    assert modulus_of_convexity(X, 0.7, seed=11) == modulus_of_convexity(X, 0.7, seed=11)


def test_weak_l1_of_indicator(rng):
    E = rng.random(SQUARE.node_count) < 0.3
    assert weak_l1(E.astype(float), None, SQUARE) == E.sum() * SQUARE.cell_volume


@given(arrays(np.float64, 15 * 15, elements=st.floats(-100, 100)))
def test_chebyshev_bound(f):
    assert weak_l1(f, None, SQUARE) <= lp_norm(f, 1, None, SQUARE) * (1 + 1e-12) + 1e-300


def test_parseval(const_dec, rng):
    f = rng.standard_normal(const_dec.grid.node_count)
    coef = const_dec.analyze(f)
    assert lp_norm(f, 2, None, const_dec.grid) == pytest.approx(np.linalg.norm(coef), rel=1e-8)


def test_lp_norm_vector_and_sup(rng):
    f = rng.standard_normal((SQUARE.node_count, 3))
    X = BanachSurrogate(math.inf, 3)
    assert lp_norm(f, math.inf, X, SQUARE) == np.abs(f).max()
    direct = (np.sum(np.abs(f).max(axis=1) ** 3) * SQUARE.cell_volume) ** (1 / 3)
    assert lp_norm(f, 3, X, SQUARE) == pytest.approx(direct)


@pytest.fixture(scope="module")
def family():
    return BallFamily.default(SQUARE_PROFILE, n_radii=8, stride=2)


def test_bmo_constant_and_zero(family):
    one = np.ones(SQUARE.node_count)
    assert bmo_L_norm(one, None, family, SQUARE_PROFILE) == 1.0
    assert bmo_L_norm(0 * one, None, family, SQUARE_PROFILE) == 0.0


def test_bmo_matches_brute_force(family, rng):
    f = rng.standard_normal(SQUARE.node_count)
    best = 0.0
    for k in range(len(family)):
        vals = f[family.mask(k)]
        best = max(best, np.mean(np.abs(vals - vals.mean())))
        if not family.small[k]:
            best = max(best, np.mean(np.abs(vals)))
    assert bmo_L_norm(f, None, family, SQUARE_PROFILE) == pytest.approx(best, rel=1e-12)


def test_bmo_dominates_classical_oscillation(family, rng):
    f = rng.standard_normal((SQUARE.node_count, 2))
    rep = bmo_L_norm(f, None, family, SQUARE_PROFILE, report=True)
    assert rep.norm >= rep.oscillation.max()
    assert {row["binding"] for row in rep.rows()} <= {"oscillation", "average"}


def test_bmo_pruning(family, rng):
    f = rng.standard_normal(SQUARE.node_count) + 2.0
    full = bmo_L_norm(f, None, family, SQUARE_PROFILE, report=True)
    pruned = bmo_L_norm(f, None, family, SQUARE_PROFILE, prune=True)
    assert pruned <= full.norm <= 2 * pruned
    if full.binding_condition == "average" or family.small[full.binding_ball]:
        assert pruned == full.norm


def test_bmo_needs_big_balls():
    tiny = BallFamily.from_balls(SQUARE, [112], [0.05], SQUARE_PROFILE)
    with pytest.raises(ArgumentError):
        bmo_L_norm(np.ones(SQUARE.node_count), None, tiny, SQUARE_PROFILE)


def test_lattice_family_is_resolution_independent():
    fams = [BallFamily.lattice(PotentialProfile(Grid(3, 1.5, n))) for n in (16, 20)]
    assert len(fams[0]) == len(fams[1]) == 125 * 8
    assert np.array_equal(fams[0].radii, fams[1].radii)
    counts = fams[0].counts()
    assert np.all(counts >= 1)


@pytest.fixture(scope="module")
def atom_setting():
    center = SQUARE.nearest_node([0.0, 0.0])
    rho = SQUARE_PROFILE.rho_table[center]
    return center, rho


def test_atom_examples(atom_setting):
    center, rho = atom_setting
    r_small = 0.8 * rho
    mask = np.linalg.norm(SQUARE.nodes - SQUARE.nodes[center], axis=1) <= r_small
    measure = mask.sum() * SQUARE.cell_volume
    idx = np.flatnonzero(mask)
    half = len(idx) // 2
    signed = np.zeros(SQUARE.node_count)
    signed[idx[:half]] = 1 / measure
    signed[idx[half:2 * half]] = -1 / measure
    assert is_atom(Atom(signed, center, r_small, "small"), SQUARE_PROFILE)
    flat = mask / measure
    assert not is_atom(Atom(flat, center, r_small, "small"), SQUARE_PROFILE)
    r_big = 1.5 * rho
    big_mask = np.linalg.norm(SQUARE.nodes - SQUARE.nodes[center], axis=1) <= r_big
    big = big_mask / (big_mask.sum() * SQUARE.cell_volume)
    assert is_atom(Atom(big, center, r_big, "big"), SQUARE_PROFILE)
    assert not is_atom(Atom(2 * big, center, r_big, "big"), SQUARE_PROFILE)
    outside = big.copy()
    outside[0] = 1e-9
    assert not is_atom(Atom(outside, center, r_big, "big"), SQUARE_PROFILE)


@given(st.integers(0, 2 ** 20), st.sampled_from(["small", "big"]), st.integers(1, 3))
def test_generated_atoms_pass(seed, kind, n):
    center = SQUARE.nearest_node([0.1, -0.2])
    rho = SQUARE_PROFILE.rho_table[center]
    radius = 0.7 * rho if kind == "small" else 1.3 * rho
    X = BanachSurrogate(2.0, n)
    a = make_atom(SQUARE, center, radius, kind, SQUARE_PROFILE, seed, X)
    assert is_atom(a, SQUARE_PROFILE, X)
    if kind == "small":
        assert all(math.fsum(col) == 0.0 for col in a.values.T)


def test_make_atom_errors(atom_setting):
    center, rho = atom_setting
    with pytest.raises(ConstructionError):
        make_atom(SQUARE, center, 1.5 * rho, "small", SQUARE_PROFILE, 0)
    with pytest.raises(ConstructionError):
        make_atom(SQUARE, center, 0.4 * SQUARE.spacing, "small", SQUARE_PROFILE, 0)
    with pytest.raises(ArgumentError):
        make_atom(SQUARE, center, rho, "medium", SQUARE_PROFILE, 0)


def test_h1_upper_bound(atom_setting):
    center, rho = atom_setting
    a = make_atom(SQUARE, center, 0.6 * rho, "small", SQUARE_PROFILE, 1)
    other = SQUARE.nearest_node([0.7, 0.7])
    b = make_atom(SQUARE, other, 0.6 * SQUARE_PROFILE.rho_table[other], "small", SQUARE_PROFILE, 2)
    assert h1_norm_upper(a.values, [(1.0, a)], SQUARE) == 1
    assert h1_norm_upper(2 * a.values, [(2.0, a)], SQUARE) == 2
    assert h1_norm_upper(a.values + b.values, [(1.0, a), (1.0, b)], SQUARE) == 2
    with pytest.raises(ArgumentError):
        h1_norm_upper(a.values, [(1.0, b)], SQUARE)


def test_atom_serialization(tmp_path, atom_setting):
    center, rho = atom_setting
    atoms = [make_atom(SQUARE, center, 0.8 * rho, "small", SQUARE_PROFILE, 4),
             make_atom(SQUARE, center, 2 * rho, "big", SQUARE_PROFILE, 5)]
    index = save_atoms(atoms, tmp_path)
    back = load_atoms(index)
    for a, b in zip(atoms, back):
        assert np.array_equal(a.values, b.values) and a.kind == b.kind and a.radius == b.radius
