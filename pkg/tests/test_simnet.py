import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from folionet import simnet, vectors
from folionet.synth import planted_market
from helpers import market_pipeline
from oracles import brute_force_classes, brute_force_graph, investor_similarity_mass


def units_rows(units: sp.csr_matrix) -> list[dict[int, int]]:
    return [dict(zip(units[r].indices.tolist(), units[r].data.tolist())) for r in range(units.shape[0])]


def classes_from_rows(rows, investors=None, n_stocks=None):
    investors = investors or [f"I{r}" for r in range(len(rows))]
    n_stocks = n_stocks or 1 + max(j for r in rows for j in r)
    m = sp.lil_matrix((len(rows), n_stocks), dtype=np.int64)
    for r, row in enumerate(rows):
        for j, u in row.items():
            m[r, j] = u
    return simnet.dedupe(m.tocsr(), investors)


def assert_matches_oracle(classes, threshold, n_stocks):
    g = simnet.build_graph(classes, threshold, n_stocks)
    vecs = [dict(zip(c.stocks.tolist(), c.units.tolist())) for c in classes]
    edges, loops = brute_force_graph(vecs, [c.n for c in classes], threshold, n_stocks)
    got = {(int(a), int(b)): float(w) for (a, b), w in zip(g.edges, g.weights)}
    assert got.keys() == edges.keys()
    for key, w in edges.items():
        assert abs(got[key] - w) <= 1e-12 * max(1.0, w)
    np.testing.assert_array_equal(g.self_loops, loops)
    return g


# --- dedupe --------------------------------------------------------------------------------


def test_nine_investors_three_structures():
    a, b, c = {0: 60, 1: 40}, {1: 100}, {0: 20, 2: 80}
    rows = [a, b, a, c, a, b, c, a, b]
    classes = classes_from_rows(rows)
    assert [cl.n for cl in classes] == [4, 3, 2]
    assert classes[0].members == ["I0", "I2", "I4", "I7"]
    assert classes[0].canonical == {0: 0.6, 1: 0.4}


def test_all_distinct_gives_one_class_each():
    classes = classes_from_rows([{0: 100}, {1: 100}, {0: 50, 1: 50}])
    assert [c.n for c in classes] == [1, 1, 1]


def test_dedupe_matches_sort_and_count(planted_small):
    _, _, u, units, classes = planted_small
    vecs, members = brute_force_classes(units_rows(units), u.investors)
    assert [c.members for c in classes] == members
    assert sum(c.n for c in classes) == sum(1 for r in units_rows(units) if r)
    keys = {tuple(zip(c.stocks.tolist(), c.units.tolist())) for c in classes}
    assert len(keys) == len(classes)


# --- build_graph ------------------------------------------------------------------------------


def test_self_loop_of_four_is_six():
    g = simnet.build_graph(classes_from_rows([{0: 100}] * 4))
    assert g.self_loops.tolist() == [6.0]


def test_edge_weight_is_pair_count_times_similarity():
    rows = [{0: 90, 1: 10}] * 2 + [{0: 100}] * 3
    classes = classes_from_rows(rows)
    s = 90 / math.sqrt(90 ** 2 + 10 ** 2)
    g = simnet.build_graph(classes, 0.9)
    assert g.n_edges == 1
    assert g.weights[0] == pytest.approx(2 * 3 * s, abs=1e-12)
    # oracle: all 6 cross investor pairs each contribute s
    assert g.weights[0] == pytest.approx(math.fsum([s] * 6), abs=1e-12)


def test_disjoint_support_no_edge():
    g = simnet.build_graph(classes_from_rows([{0: 100}, {1: 100}]), 0.01)
    assert g.n_edges == 0


@pytest.mark.parametrize("theta", [0.0, -0.1, 1.01])
def test_threshold_out_of_range(theta):
    with pytest.raises(ValueError):
        simnet.build_graph(classes_from_rows([{0: 100}]), theta)


@pytest.mark.parametrize("rows, theta", [
    ([{0: 75, 1: 25}, {0: 75, 2: 25}], 0.9),  # 5625 / 6250
    ([{0: 30, 1: 40}, {1: 100}], 0.8),  # 4000 / 5000
])
def test_cosine_exactly_at_threshold_is_kept(rows, theta):
    g = simnet.build_graph(classes_from_rows(rows), theta)
    assert g.n_edges == 1 and g.similarity[0] == theta


def test_threshold_one_keeps_only_identical():
    g = simnet.build_graph(classes_from_rows([{0: 50, 1: 50}, {0: 49, 1: 51}, {0: 100}]), 1.0)
    assert g.n_edges == 0


def test_worked_conservation_example():
    sizes = np.array([2, 1, 1])
    g = simnet._assemble(sizes, [np.array([0, 1])], [np.array([1, 2])], [np.array([0.95, 0.92])], 0.9)
    # investor pairs: a1-a2 (1), a1-b, a2-b (0.95 each), b-c (0.92); a-c below threshold
    full = math.fsum([1.0, 0.95, 0.95, 0.92])
    assert full == pytest.approx(3.82, abs=1e-12)
    assert g.total_weight() == pytest.approx(full, abs=1e-9)


def test_oracle_equivalence_on_planted_market(planted_small):
    _, _, u, _, classes = planted_small
    assert_matches_oracle(classes, 0.9, u.n_stocks)


@pytest.mark.parametrize("theta", [0.3, 0.7, 0.95])
def test_oracle_equivalence_other_thresholds(planted_small, theta):
    _, _, u, _, classes = planted_small
    assert_matches_oracle(classes, theta, u.n_stocks)


def test_blocked_candidate_generation_matches_single_block(planted_small, monkeypatch):
    _, _, u, _, classes = planted_small
    whole = simnet.build_graph(classes, 0.5, u.n_stocks)
    monkeypatch.setattr(simnet, "_BLOCK_PAIRS", 50)
    blocks = list(simnet.candidate_blocks(simnet.class_matrix(classes, u.n_stocks), 50))
    assert len(blocks) > 3
    orig = simnet.candidate_blocks
    monkeypatch.setattr(simnet, "candidate_blocks", lambda x, max_pairs=50: orig(x, 50))
    split = simnet.build_graph(classes, 0.5, u.n_stocks)
    np.testing.assert_array_equal(whole.edges, split.edges)
    np.testing.assert_array_equal(whole.weights, split.weights)


def test_weight_conservation_on_market(planted_small):
    _, _, u, units, classes = planted_small
    g = simnet.build_graph(classes, 0.9, u.n_stocks)
    assert abs(g.total_weight() - investor_similarity_mass(units_rows(units), 0.9)) <= 1e-9 * max(1, g.total_weight())


@settings(max_examples=25, deadline=None)
@given(st.lists(st.dictionaries(st.integers(0, 5), st.integers(1, 100), min_size=1, max_size=3),
                min_size=1, max_size=25),
       st.sampled_from([0.5, 0.8, 0.9, 1.0]))
def test_conservation_and_oracle_property(rows, theta):
    classes = classes_from_rows(rows, n_stocks=6)
    g = assert_matches_oracle(classes, theta, 6)
    assert abs(g.total_weight() - investor_similarity_mass(rows, theta)) <= 1e-9 * max(1, g.total_weight())


def test_node_permutation_symmetry(planted_small):
    _, _, u, _, classes = planted_small
    g = simnet.build_graph(classes, 0.9, u.n_stocks)
    perm = np.random.default_rng(0).permutation(len(classes))
    shuffled = [classes[k] for k in perm]
    h = simnet.build_graph(shuffled, 0.9, u.n_stocks)
    # relabel h's nodes back to the original ids
    back = {(min(perm[a], perm[b]), max(perm[a], perm[b])): w for (a, b), w in zip(h.edges, h.weights)}
    orig = {(int(a), int(b)): w for (a, b), w in zip(g.edges, g.weights)}
    assert back.keys() == orig.keys()
    assert all(back[k] == orig[k] for k in orig)
    np.testing.assert_array_equal(h.self_loops, g.self_loops[perm])


# --- files ----------------------------------------------------------------------------------


def test_graph_file_roundtrip(tmp_path, planted_small):
    _, _, u, _, classes = planted_small
    g = simnet.build_graph(classes, 0.9, u.n_stocks)
    simnet.write_graph(tmp_path / "g.txt", g)
    lines = (tmp_path / "g.txt").read_text().splitlines()
    assert lines[0] == f"# nodes={g.n_nodes} threshold=0.9"
    assert lines[1].split()[:2] == ["1", "1"]
    for line in lines[1:]:
        a, b, _ = line.split()
        assert 1 <= int(a) <= int(b) <= g.n_nodes
    h = simnet.read_graph(tmp_path / "g.txt")
    np.testing.assert_array_equal(h.edges, g.edges)
    np.testing.assert_array_equal(h.weights, g.weights)
    np.testing.assert_array_equal(h.self_loops, g.self_loops)
    np.testing.assert_array_equal(h.sizes, g.sizes)


def test_membership_roundtrip(tmp_path, planted_small):
    _, _, _, _, classes = planted_small
    simnet.write_membership(tmp_path / "m.csv", classes)
    assert simnet.read_membership(tmp_path / "m.csv") == [c.members for c in classes]


@pytest.mark.parametrize("seed", [1, 2])
def test_oracle_equivalence_with_noise_investors(seed):
    _, _, u, _, classes = market_pipeline(
        planted_market(n_groups=2, group_size=40, stocks=15, pool_size=3, noise_investors=60,
                       concentration=0.6, seed=seed))
    assert_matches_oracle(classes, 0.9, u.n_stocks)
