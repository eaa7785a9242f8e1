import numpy as np
import pytest
from scipy.special import expit

from peot.errors import InvalidInputError, NumericError
from peot.tree import (
    PARAM_NAMES,
    ObliqueTree,
    TrainConfig,
    loss_and_gradients,
    loss_value,
    train,
)


def random_tree(depth=3, F=10, C=3, hidden=4, seed=0, leaf_scale=0.5):
    rng = np.random.default_rng(seed)
    tree = ObliqueTree.random(depth, F, C, hidden=hidden, rng=rng)
    tree.leaf_logits = rng.normal(0, leaf_scale, size=tree.leaf_logits.shape)
    return tree


def blob_data(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = np.concatenate([rng.normal([-2, -2], 0.5, (n // 2, 2)),
                        rng.normal([2, 2], 0.5, (n // 2, 2))])
    y = np.concatenate([np.zeros(n // 2, dtype=np.int64),
                        np.ones(n // 2, dtype=np.int64)])
    p = rng.permutation(n)
    return X[p], y[p]


def xor_data(n=400, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.integers(0, 2, size=(n, 2))
    X = q * 4.0 - 2.0 + rng.normal(0, 0.4, (n, 2))
    y = (q[:, 0] ^ q[:, 1]).astype(np.int64)
    return X, y


class TestRoutingProbability:
    def test_zero_parameters_give_half(self):
        tree = ObliqueTree(1, 3, 2, 2, np.zeros((1, 2, 3)), np.zeros((1, 2)),
                           np.zeros((1, 2)), np.zeros(1), np.zeros((2, 2)))
        assert tree.routing_probability(0, [1.0, -5.0, 3.0]) == 0.5

    def test_saturated_logit(self):
        tree = ObliqueTree(1, 1, 2, 1, np.ones((1, 1, 1)), np.zeros((1, 1)),
                           np.full((1, 1), 20.0), np.zeros(1), np.zeros((2, 2)))
        assert tree.routing_probability(0, [1.0]) > 0.999999

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(3)
        tree = random_tree(seed=3)
        x = rng.normal(size=10)
        node = 2
        # naive matrix-vector oracle
        hid = []
        for h in range(tree.hidden):
            acc = tree.b1[node, h]
            for f in range(tree.n_features):
                acc += tree.W1[node, h, f] * x[f]
            hid.append(max(acc, 0.0))
        logit = tree.b2[node] + sum(tree.w2[node, h] * hid[h]
                                    for h in range(tree.hidden))
        expected = 1.0 / (1.0 + np.exp(-logit))
        assert tree.routing_probability(node, x) == pytest.approx(expected,
                                                                  abs=1e-12)

    def test_dimension_mismatch(self):
        tree = random_tree()
        with pytest.raises(InvalidInputError):
            tree.routing_probability(0, np.zeros(7))


def leaf_probability_oracle(tree, x):
    """Brute-force product of branch probabilities along each root path."""
    probs = np.empty(tree.n_leaves)
    for leaf in range(tree.n_leaves):
        node, p = 0, 1.0
        for level in reversed(range(tree.depth)):
            bit = (leaf >> level) & 1
            right = tree.routing_probability(node, x)
            p *= right if bit else (1.0 - right)
            node = 2 * node + 1 + bit
        probs[leaf] = p
    return probs


class TestPathProbabilities:
    def test_zero_tree_uniform(self):
        tree = ObliqueTree(2, 3, 2, 2, np.zeros((3, 2, 3)), np.zeros((3, 2)),
                           np.zeros((3, 2)), np.zeros(3), np.zeros((4, 2)))
        np.testing.assert_allclose(tree.path_probabilities(np.ones(3)),
                                   [0.25] * 4, atol=0)

    def test_partition_of_unity(self):
        rng = np.random.default_rng(5)
        for seed in range(10):
            tree = random_tree(depth=3, seed=seed)
            x = rng.normal(size=tree.n_features)
            assert tree.path_probabilities(x).sum() == pytest.approx(1.0,
                                                                     abs=1e-9)

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(6)
        for seed in range(5):
            tree = random_tree(depth=3, seed=seed)
            x = rng.normal(size=tree.n_features)
            np.testing.assert_allclose(tree.path_probabilities(x),
                                       leaf_probability_oracle(tree, x),
                                       atol=1e-12)


class TestPredictSoft:
    def test_identical_leaves_return_leaf_distribution(self):
        tree = random_tree(depth=2, C=4, seed=1)
        tree.leaf_logits = np.tile([2.0, -1.0, 0.5, 0.0], (tree.n_leaves, 1))
        q = np.exp([2.0, -1.0, 0.5, 0.0])
        q = q / q.sum()
        for seed in range(5):
            x = np.random.default_rng(seed).normal(size=tree.n_features)
            np.testing.assert_allclose(tree.predict_soft(x), q, atol=1e-12)

    def test_zero_tree_one_hot_leaves_uniform(self):
        leaf_logits = np.full((4, 4), -30.0)
        np.fill_diagonal(leaf_logits, 30.0)
        tree = ObliqueTree(2, 3, 4, 2, np.zeros((3, 2, 3)), np.zeros((3, 2)),
                           np.zeros((3, 2)), np.zeros(3), leaf_logits)
        np.testing.assert_allclose(tree.predict_soft(np.ones(3)),
                                   [0.25] * 4, atol=1e-12)

    def test_matches_leaf_enumeration_oracle(self):
        rng = np.random.default_rng(7)
        for seed in range(5):
            tree = random_tree(depth=3, seed=seed)
            x = rng.normal(size=tree.n_features)
            P = leaf_probability_oracle(tree, x)
            pi = np.exp(tree.leaf_logits
                        - tree.leaf_logits.max(axis=1, keepdims=True))
            pi = pi / pi.sum(axis=1, keepdims=True)
            np.testing.assert_allclose(tree.predict_soft(x), P @ pi, atol=1e-12)

    def test_outputs_are_distributions(self):
        tree = random_tree(depth=3, seed=9, leaf_scale=2.0)
        X = np.random.default_rng(1).normal(size=(50, tree.n_features))
        S = tree.predict_soft(X)
        assert np.all(S >= 0)
        np.testing.assert_allclose(S.sum(axis=1), 1.0, atol=1e-9)


class TestSinglePath:
    def test_zero_tree_goes_all_left(self):
        tree = ObliqueTree(3, 2, 2, 2, np.zeros((7, 2, 2)), np.zeros((7, 2)),
                           np.zeros((7, 2)), np.zeros(7), np.zeros((8, 2)))
        label, visited, leaf = tree.predict_single_path(np.ones(2))
        assert visited == [0, 1, 3]
        assert leaf == 0
        assert label == 0  # argmax tie goes to the lowest class index

    def test_visits_exactly_depth_nodes(self):
        for depth in (1, 2, 4):
            tree = random_tree(depth=depth, seed=depth)
            _, visited, _ = tree.predict_single_path(np.zeros(tree.n_features))
            assert len(visited) == depth

    def test_saturated_tree_agrees_with_soft_argmax(self):
        # scale routing weights so probabilities saturate; the agreement
        # property is conditioned on inputs routed outside [0.4, 0.6]
        tree = random_tree(depth=3, seed=11, leaf_scale=2.0)
        tree.W1 *= 60.0
        tree.b2 = tree.b2 + 0.3  # break exact-zero logits
        rng = np.random.default_rng(0)
        eligible = agree = 0
        for _ in range(600):
            x = rng.normal(size=tree.n_features)
            probs = [tree.routing_probability(i, x)
                     for i in range(tree.n_internal)]
            if any(0.4 <= p <= 0.6 for p in probs):
                continue
            eligible += 1
            label, _, _ = tree.predict_single_path(x)
            agree += label == int(np.argmax(tree.predict_soft(x)))
        assert eligible >= 100
        assert agree >= 0.99 * eligible

    def test_invariant_to_non_visited_subtree(self):
        tree = random_tree(depth=3, seed=13)
        x = np.random.default_rng(2).normal(size=tree.n_features)
        label, visited, leaf = tree.predict_single_path(x)
        other = tree.copy()
        untouched = [i for i in range(tree.n_internal) if i not in visited]
        for i in untouched:
            other.W1[i] = 99.0
            other.b2[i] = -5.0
        assert other.predict_single_path(x) == (label, visited, leaf)

    def test_batch_predict_matches_single(self):
        tree = random_tree(depth=3, seed=17)
        X = np.random.default_rng(3).normal(size=(40, tree.n_features))
        batch = tree.predict(X)
        singles = [tree.predict_single_path(x)[0] for x in X]
        np.testing.assert_array_equal(batch, singles)


class TestLossAndGradients:
    def test_perfect_one_hot_prediction_near_zero_loss(self):
        tree = random_tree(depth=2, C=3, seed=4)
        tree.leaf_logits = np.tile([50.0, 0.0, 0.0], (tree.n_leaves, 1))
        X = np.random.default_rng(5).normal(size=(1, tree.n_features))
        loss, _ = loss_and_gradients(tree, X, np.array([0]))
        assert loss <= 1e-6

    def test_linear_in_lambda(self):
        tree = random_tree(seed=8)
        rng = np.random.default_rng(9)
        X = rng.normal(size=(6, tree.n_features))
        y = rng.integers(0, tree.n_classes, size=6)
        c = rng.uniform(0.5, 4.0, size=tree.n_features)
        l0 = loss_value(tree, X, y, lam=0.0, cost_vec=c)
        l1 = loss_value(tree, X, y, lam=0.3, cost_vec=c)
        l2 = loss_value(tree, X, y, lam=0.6, cost_vec=c)
        assert (l2 - l0) == pytest.approx(2.0 * (l1 - l0), abs=1e-9)

    @pytest.mark.parametrize("lam", [0.0, 0.1])
    def test_gradients_match_finite_differences(self, lam):
        rng = np.random.default_rng(42)
        tree = random_tree(seed=42)
        # keep W1 entries off the L1 kink so central differences are valid
        tree.W1 = np.sign(tree.W1) * (np.abs(tree.W1) + 2e-3)
        X = rng.normal(size=(8, tree.n_features))
        y = rng.integers(0, tree.n_classes, size=8)
        c = rng.uniform(0.5, 5.0, size=tree.n_features)
        _, grads = loss_and_gradients(tree, X, y, lam=lam, cost_vec=c)
        step = 1e-5
        for name in PARAM_NAMES:
            arr = getattr(tree, name)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                old = arr[ix]
                arr[ix] = old + step
                up = loss_value(tree, X, y, lam=lam, cost_vec=c)
                arr[ix] = old - step
                down = loss_value(tree, X, y, lam=lam, cost_vec=c)
                arr[ix] = old
                fd = (up - down) / (2 * step)
                g = grads[name][ix]
                if abs(fd) < 1e-8:
                    assert abs(g - fd) < 1e-8
                else:
                    assert abs(g - fd) / max(abs(fd), abs(g)) < 1e-4

    def test_invalid_labels_rejected(self):
        tree = random_tree()
        X = np.zeros((2, tree.n_features))
        with pytest.raises(InvalidInputError):
            loss_and_gradients(tree, X, np.array([0, 3]))

    def test_nonfinite_forward_reports_node(self):
        tree = random_tree(depth=2, seed=1)
        tree.W1[1] = np.inf
        X = np.ones((1, tree.n_features))
        with pytest.raises(NumericError, match="node 1"):
            loss_and_gradients(tree, X, np.array([0]))


class TestTrain:
    def test_separable_blobs_depth_one(self):
        X, y = blob_data(seed=0)
        cfg = TrainConfig(depth=1, hidden=8, epochs=60, learning_rate=0.1,
                          seed=1)
        tree = train(X, y, cfg)
        assert np.mean(tree.predict(X) == y) >= 0.99

    def test_xor_needs_depth_two(self):
        # hidden width 1 makes each routing function hyperplane-equivalent,
        # so a depth-1 tree cannot express XOR but a depth-2 tree can
        X, y = xor_data(seed=0)
        shallow = train(X, y, TrainConfig(depth=1, hidden=1, epochs=200,
                                          learning_rate=0.1, seed=0))
        deep = train(X, y, TrainConfig(depth=2, hidden=1, epochs=200,
                                       learning_rate=0.1, seed=0))
        assert np.mean(shallow.predict(X) == y) <= 0.75
        assert np.mean(deep.predict(X) == y) >= 0.95

    def test_same_seed_bit_identical(self):
        X, y = blob_data(seed=2)
        cfg = TrainConfig(depth=2, hidden=4, epochs=10, seed=7)
        a = train(X, y, cfg)
        b = train(X, y, cfg)
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_loss_monotone_at_small_learning_rate(self):
        X, y = blob_data(seed=3)
        cfg = TrainConfig(depth=1, hidden=8, epochs=40, learning_rate=1e-3,
                          seed=5)
        tree = train(X, y, cfg)
        h = np.asarray(tree.history)
        assert np.all(np.diff(h) <= 1e-12), f"loss trace not monotone: {h}"

    def test_empty_dataset_rejected(self):
        with pytest.raises(InvalidInputError):
            train(np.zeros((0, 2)), np.zeros(0, dtype=int), TrainConfig())

    def test_divergence_aborts_with_numeric_error(self):
        X, y = blob_data(seed=4)
        cfg = TrainConfig(depth=2, hidden=4, epochs=50, learning_rate=1e12,
                          seed=0)
        with pytest.raises(NumericError):
            train(X * 1e6, y, cfg)

    def test_standardization_stored_and_applied(self):
        X, y = blob_data(seed=5)
        X = X * 100.0 + 500.0
        cfg = TrainConfig(depth=1, hidden=8, epochs=60, seed=1)
        tree = train(X, y, cfg)
        assert np.mean(tree.predict(X) == y) >= 0.99
        assert np.allclose(tree.mu, X.mean(axis=0))


class TestParamsTouchedFraction:
    def test_depth_four_internal_only(self):
        tree = random_tree(depth=4, F=784, C=10, hidden=16, seed=0)
        assert tree.params_touched_fraction("internal-only") == pytest.approx(
            4 / 15)

    def test_depth_one_with_leaves_closed_form(self):
        tree = random_tree(depth=1, F=5, C=3, hidden=2, seed=0)
        s = tree.node_param_count  # 2*5 + 2*2 + 1
        expected = (s + 3) / (s + 2 * 3)
        assert tree.params_touched_fraction("with-leaves") == pytest.approx(
            expected)

    def test_unknown_accounting(self):
        with pytest.raises(InvalidInputError):
            random_tree().params_touched_fraction("bogus")
