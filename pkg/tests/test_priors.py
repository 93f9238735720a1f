import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from retrograph.priors import (
    HOPS,
    INF,
    BiasMode,
    DistanceMatrix,
    DuplicateMapNumber,
    IntraBiasConfig,
    ShapeMismatch,
    all_pairs_distance,
    atom_bias,
    cross_alignment,
    hop_masks,
    intra_bias,
    lift_to_tokens,
)
from retrograph.smiles import Atom, Bond, BondOrder, MolGraph, parse, tokenize


def floyd_warshall(n: int, edges) -> np.ndarray:
    d = np.full((n, n), math.inf)
    np.fill_diagonal(d, 0)
    for a, b in edges:
        d[a, b] = d[b, a] = 1
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if d[i, k] + d[k, j] < d[i, j]:
                    d[i, j] = d[i, k] + d[k, j]
    return d


@st.composite
def graphs(draw, max_n=10):
    n = draw(st.integers(1, max_n))
    pairs = draw(st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=2 * n))
    edges = sorted({tuple(sorted(p)) for p in pairs if p[0] != p[1]})
    g = MolGraph(tuple(Atom("C") for _ in range(n)), tuple(Bond(a, b, BondOrder.SINGLE) for a, b in edges))
    return g, edges


@given(graphs())
def test_distance_matches_floyd_warshall(case):
    g, edges = case
    d = all_pairs_distance(g).d
    assert np.array_equal(d, floyd_warshall(len(g.atoms), edges))
    assert np.array_equal(d, d.T)
    assert np.all(np.diag(d) == 0)


def test_disconnected_components_are_infinite():
    g, _ = parse("CC.O")
    d = all_pairs_distance(g).d
    assert d[0, 1] == 1 and d[0, 2] == INF and d[2, 1] == INF


def test_ring_distances():
    d = all_pairs_distance(parse("C1CCCCC1")[0]).d
    assert d[0, 3] == 3 and d[0, 5] == 1 and d[1, 4] == 3


@given(graphs())
def test_hop_masks_definition_and_disjointness(case):
    g, _ = case
    dist = all_pairs_distance(g)
    masks = hop_masks(dist)
    total = np.zeros_like(dist.d)
    for h in HOPS:
        assert np.array_equal(masks[h], (dist.d == h).astype(masks[h].dtype))
        total = total + masks[h]
    assert total.max(initial=0) <= 1
    assert np.array_equal(total > 0, (dist.d >= 1) & (dist.d <= 4))


@given(graphs(), st.floats(0.2, 5.0))
def test_gaussian_bias_formula(case, sigma):
    g, _ = case
    dist = all_pairs_distance(g)
    b = atom_bias(dist, IntraBiasConfig(BiasMode.GAUSSIAN, sigma=sigma))
    n = len(g.atoms)
    for i in range(n):
        for j in range(n):
            expected = math.exp(-dist.d[i, j] ** 2 / (2 * sigma**2)) if dist.d[i, j] < math.inf else 0.0
            assert abs(b[i, j] - expected) <= 1e-12


def test_hard_bias_weights():
    dist = all_pairs_distance(parse("CCCCCC")[0])
    b = atom_bias(dist, IntraBiasConfig(BiasMode.HARD))
    assert b[0].tolist() == [0.0, 1.0, 0.5, 0.25, 0.125, 0.0]
    custom = atom_bias(dist, IntraBiasConfig(BiasMode.HARD, weights=(4, 3, 2, 1)))
    assert custom[0].tolist() == [0, 4, 3, 2, 1, 0]


def test_off_bias_is_zero():
    dist = all_pairs_distance(parse("CCO")[0])
    assert not atom_bias(dist, IntraBiasConfig(BiasMode.OFF)).any()


def test_lift_puts_zero_on_syntax_tokens():
    g, seq = parse("C(=O)O")
    b = intra_bias(seq, all_pairs_distance(g), IntraBiasConfig()).b
    assert b.shape == (len(seq), len(seq))
    syntax = [i for i, t in enumerate(seq) if not t.is_atom]
    assert not b[syntax].any() and not b[:, syntax].any()
    atom = seq.atom_positions
    assert b[atom[0], atom[1]] == pytest.approx(math.exp(-0.5))


def test_lift_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        lift_to_tokens(tokenize("CCO"), np.zeros((2, 2)))


def test_cross_alignment_pairs_mapped_atoms():
    product = parse("[CH3:1][C:2](=O)[NH:3]C")
    reactants = parse("[NH2:3]C.Cl[C:2]([CH3:1])=O")
    b = cross_alignment(product, reactants).b
    p_pos, r_pos = product[1].atom_positions, reactants[1].atom_positions
    assert b.sum() == 3
    assert b[p_pos[0], r_pos[4]] == 1  # map 1
    assert b[p_pos[1], r_pos[3]] == 1  # map 2
    assert b[p_pos[3], r_pos[0]] == 1  # map 3
    assert set(np.unique(b)) <= {0.0, 1.0}
    assert (b.sum(axis=0) <= 1).all() and (b.sum(axis=1) <= 1).all()


def test_duplicate_map_number():
    with pytest.raises(DuplicateMapNumber):
        cross_alignment(parse("[CH3:1][OH:1]"), parse("C"))


def test_config_validation():
    with pytest.raises(ValueError):
        IntraBiasConfig(sigma=0)
    with pytest.raises(ValueError):
        IntraBiasConfig(weights=(1.0, 2.0))
    assert IntraBiasConfig(mode="hard").mode is BiasMode.HARD


def test_distance_matrix_size():
    assert DistanceMatrix(np.zeros((3, 3))).size == 3


# -- worked examples -----------------------------------------------------------

def test_ethanol_distances_and_masks():
    dist = all_pairs_distance(parse("CCO")[0])
    assert dist.d.tolist() == [[0, 1, 2], [1, 0, 1], [2, 1, 0]]
    masks = hop_masks(dist)
    assert {tuple(x) for x in np.argwhere(masks[1])} == {(0, 1), (1, 0), (1, 2), (2, 1)}
    assert {tuple(x) for x in np.argwhere(masks[2])} == {(0, 2), (2, 0)}


def test_single_atom():
    dist = all_pairs_distance(parse("C")[0])
    assert dist.d.tolist() == [[0]]
    assert all(not hop_masks(dist)[h].any() for h in HOPS)


def test_hexane_hop4():
    masks = hop_masks(all_pairs_distance(parse("CCCCCC")[0]))
    assert masks[4][0, 4] == 1 and masks[4][0, 5] == 0


def test_gaussian_values():
    b = atom_bias(all_pairs_distance(parse("CCO")[0]), IntraBiasConfig())
    assert b[0, 0] == 1.0
    assert b[0, 2] == pytest.approx(0.1353352832366127, abs=1e-15)


def test_hard_single_weight_selects_first_mask():
    g, seq = parse("CC(C)O")
    dist = all_pairs_distance(g)
    b = intra_bias(seq, dist, IntraBiasConfig(BiasMode.HARD, weights=(1, 0, 0, 0))).b
    assert np.array_equal(b, lift_to_tokens(seq, hop_masks(dist)[1].astype(float)))


def test_cross_alignment_examples():
    prod = parse("[CH3:1][OH:2]")
    b = cross_alignment(prod, parse("[CH3:1]Br.[OH:2]")).b
    assert [tuple(x) for x in np.argwhere(b)] == [(0, 0), (1, 3)]
    assert not cross_alignment(parse("CO"), parse("C.O")).b.any()
    assert not cross_alignment(parse("[CH3:1]O"), parse("[CH3:2]O")).b.any()


@given(graphs(), st.floats(0.05, 5.0))
def test_gaussian_monotone_and_symmetric(case, sigma):
    g, _ = case
    dist = all_pairs_distance(g)
    b = atom_bias(dist, IntraBiasConfig(sigma=sigma))
    assert np.array_equal(b, b.T)
    finite = np.isfinite(dist.d)
    assert (b[finite] <= 1).all() and not b[~finite].any()
    # exp(-D^2 / 2 sigma^2) underflows to 0.0 in float64 once the exponent passes ~745
    representable = finite & (dist.d**2 / (2 * sigma**2) < 700)
    assert (b[representable] > 0).all()
    order = np.argsort(dist.d, axis=None, kind="stable")
    assert np.all(np.diff(b.reshape(-1)[order]) <= 0)


def test_gaussian_concentrates_as_sigma_shrinks():
    dist = all_pairs_distance(parse("CCCC")[0])
    b = atom_bias(dist, IntraBiasConfig(sigma=0.05))
    assert np.array_equal(np.diag(b), np.ones(4))
    assert b[dist.d >= 1].max() < 1e-80
