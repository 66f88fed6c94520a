import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lambda_bbc.density import build_index
from lambda_bbc.evaluation import grid_points
from lambda_bbc.objectives import HOLDER_SPACE, holder_table
from lambda_bbc.partition import (
    Hyperplane,
    PartitionTree,
    backpropagate,
    fit_linear_svm,
    inverse_density_weights,
    leaf_membership,
    learn_latent_action,
    treeify,
)
from lambda_bbc.sobol import SobolStream


def holder_fixture(n=256, seed=0):
    u = SobolStream(2, seed=seed).next(n)
    y = holder_table(HOLDER_SPACE.denormalize(u))
    rho = build_index(u).density_at(u)
    return u, y, rho


def check_exact(tree: PartitionTree, n: int):
    leaves = tree.leaves
    all_idx = np.concatenate([tree.nodes[i].indices for i in leaves])
    assert sorted(all_idx.tolist()) == list(range(n))
    for nd in tree.nodes:
        assert (nd.separator is None) == (nd.good is None) == (nd.bad is None)
        if nd.separator is not None:
            kids = np.concatenate([tree.nodes[nd.good].indices, tree.nodes[nd.bad].indices])
            assert sorted(kids.tolist()) == sorted(nd.indices.tolist())


def test_weights_examples():
    assert np.allclose(inverse_density_weights([1.0, 3.0]), [0.75, 0.25])
    assert np.allclose(inverse_density_weights(np.full(7, 2.5)), 1 / 7)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=200))
def test_weights_sum_to_one(rho):
    w = inverse_density_weights(rho)
    assert abs(w.sum() - 1.0) <= 1e-12
    assert np.all(w > 0)


def test_hyperplane_requires_normal():
    with pytest.raises(ValueError):
        Hyperplane(np.zeros(2), 0.0)
    hp = Hyperplane(np.array([1.0, 0.0]), -0.5)
    assert hp.good_side([[0.5, 0.1]])[0]  # boundary goes to the good side


def test_latent_action_separable_1d():
    u = np.array([[0.1], [0.2], [0.8], [0.9]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    hp = learn_latent_action(u, y, np.full(4, 0.25))
    assert hp.good_side(u).tolist() == [False, False, True, True]


def test_latent_action_constant_y():
    u = np.random.default_rng(0).random((20, 2))
    assert learn_latent_action(u, np.ones(20), np.full(20, 0.05)) is None


def test_svm_separable_fixture():
    rng = np.random.default_rng(4)
    a = rng.random((40, 2)) * 0.4
    b = 0.6 + rng.random((40, 2)) * 0.4
    u = np.vstack([a, b])
    labels = np.r_[np.zeros(40), np.ones(40)].astype(int)
    w, b0 = fit_linear_svm(u, labels, np.ones(80))
    pred = u @ w + b0 >= 0
    assert (pred == labels.astype(bool)).all()


def ring_fixture(seed=0):
    rng = np.random.default_rng(seed)
    dense = 0.15 + 0.1 * rng.random((200, 2))
    ang = rng.uniform(0, 2 * np.pi, 20)
    ring = np.c_[0.7 + 0.15 * np.cos(ang), 0.7 + 0.15 * np.sin(ang)]
    u = np.vstack([dense, ring])
    y = np.r_[rng.normal(0, 0.01, 200), 1 + rng.normal(0, 0.01, 20)]
    rho = build_index(u).density_at(u)
    return u, y, rho


def test_weighting_isolates_ring():
    u, y, rho = ring_fixture()
    w = inverse_density_weights(rho)
    hp = learn_latent_action(u, y, w)
    good = hp.good_side(u)
    wm = lambda m: np.average(y[m], weights=w[m])  # noqa: E731
    assert wm(good) > wm(~good)
    assert good[200:].mean() >= 0.8


def test_weighting_does_not_overpartition_dense_cluster():
    u, y, rho = ring_fixture()
    dense = np.zeros(len(y), bool)
    dense[:200] = True

    def touching(weighted):
        tree = treeify(u, y, rho, leafsize=10, max_depth=6, weighted=weighted)
        return sum(1 for i in tree.leaves if dense[tree.nodes[i].indices].any())

    assert touching(True) <= touching(False)


def test_treeify_small_is_single_leaf():
    u = np.random.default_rng(0).random((5, 2))
    tree = treeify(u, np.arange(5.0), np.ones(5), leafsize=10, max_depth=8)
    assert tree.leaves == [0]


def test_treeify_holder_structure():
    u, y, rho = holder_fixture()
    tree = treeify(u, y, rho, leafsize=10, max_depth=8)
    check_exact(tree, len(y))
    for i in tree.leaves:
        nd = tree.nodes[i]
        assert nd.count < 20 or nd.depth == 8
        assert nd.depth <= 8


def test_treeify_depth_one():
    u, y, rho = holder_fixture()
    tree = treeify(u, y, rho, leafsize=10, max_depth=1)
    assert len(tree.nodes) == 3 and len(tree.leaves) == 2


def test_good_side_dominance():
    u, y, rho = holder_fixture(512, seed=3)
    tree = treeify(u, y, rho, leafsize=10, max_depth=8)
    for nd in tree.nodes:
        if nd.separator is not None:
            g, b = tree.nodes[nd.good], tree.nodes[nd.bad]
            assert g.weighted_mean_y >= b.weighted_mean_y


def test_membership_partitions_grid():
    u, y, rho = holder_fixture()
    tree = treeify(u, y, rho, leafsize=10, max_depth=8)
    g, _ = grid_points(HOLDER_SPACE, 100)
    q = HOLDER_SPACE.normalize(g)
    member = np.array([tree.member(i, q) for i in tree.leaves])
    assert (member.sum(0) == 1).all()
    routed = tree.route(q)
    assert (np.array(tree.leaves)[member.argmax(0)] == routed).all()
    # single point form
    leaf = int(routed[123])
    assert leaf_membership(tree, leaf, q[123]) is True


def test_membership_simple_trees():
    tree = treeify(np.array([[0.1], [0.2]]), np.array([1.0, 1.0]), np.ones(2), 10, 8)
    assert tree.member(0, np.random.default_rng(0).random((50, 1))).all()
    u = np.array([[0.1], [0.2], [0.8], [0.9]])
    tree = treeify(u, np.array([0.0, 0.0, 1.0, 1.0]), np.ones(4), leafsize=2, max_depth=1)
    root = tree.root
    assert leaf_membership(tree, root.good, np.array([0.95]))
    assert not leaf_membership(tree, root.bad, np.array([0.95]))


def test_backpropagate_matches_recompute():
    u, y, rho = holder_fixture(300, seed=5)
    tree = treeify(u[:256], y[:256], rho[:256], leafsize=10, max_depth=8)
    before = {nd.id: nd.count for nd in tree.nodes}
    # one record: one leaf and its ancestors increment by one
    leaves = backpropagate(tree, [256], u, y, rho)
    changed = {nd.id for nd in tree.nodes if nd.count != before[nd.id]}
    path, nid = set(), int(leaves[0])
    while nid is not None:
        path.add(nid)
        nid = tree.nodes[nid].parent
    assert changed == path
    assert all(tree.nodes[i].count == before[i] + 1 for i in path)
    backpropagate(tree, np.arange(257, 300), u, y, rho)
    assert tree.root.count == 300
    check_exact(tree, 300)
    stats = [(nd.count, nd.sum_y, nd.sum_inv_rho, nd.sum_y_inv_rho) for nd in tree.nodes]
    tree.refresh_stats(y, rho)
    fresh = [(nd.count, nd.sum_y, nd.sum_inv_rho, nd.sum_y_inv_rho) for nd in tree.nodes]
    assert np.allclose(stats, fresh, rtol=1e-12)


def test_tree_dump(tmp_path):
    u, y, rho = holder_fixture()
    tree = treeify(u, y, rho, leafsize=10, max_depth=3)
    p = tmp_path / "tree.json"
    tree.dump(p)
    import json

    d = json.loads(p.read_text())
    assert d["dim"] == 2 and len(d["nodes"]) == len(tree.nodes)
