import numpy as np
import pytest

from tensorucb.errors import ConfigurationError, ContractError, ParseError
from tensorucb.im_graph import random_graph
from tensorucb.synth_env import (
    P_MAX,
    feedback_edges,
    generate_environment,
    load_feature_table,
    normalize_rows,
    product_loadings,
    sample_feedback,
    sample_product,
)
from tensorucb.tensor_model import ContextTensor, init_posterior, model_inner_product


def make_env(h=1.0, seed=0, n=60, products=4, **kw):
    graph = random_graph(n, 4.0, np.random.default_rng(seed))
    env = generate_environment(graph, (6, 6, 5), 2, products, h, np.random.default_rng(seed), **kw)
    return graph, env


def mean_product_gap(graph, env):
    return np.mean(np.abs(env.edge_probabilities(graph, 0) - env.edge_probabilities(graph, 1)))


class TestGenerateEnvironment:
    def test_homogeneous_products_collapse(self):
        graph, env = make_env(h=0.0)
        np.testing.assert_allclose(env.edge_probabilities(graph, 0), env.edge_probabilities(graph, 1), atol=1e-15)

    def test_same_seed_same_environment(self):
        g1, e1 = make_env(seed=3)
        g2, e2 = make_env(seed=3)
        np.testing.assert_array_equal(e1.user_features, e2.user_features)
        np.testing.assert_array_equal(e1.products, e2.products)
        np.testing.assert_array_equal(e1.edge_probabilities(g1, 2), e2.edge_probabilities(g2, 2))

    def test_heterogeneity_separates_products(self):
        for seed in range(3):
            graph, flat = make_env(h=0.0, seed=seed)
            _, split = make_env(h=1.0, seed=seed)
            assert mean_product_gap(graph, split) > mean_product_gap(graph, flat) + 1e-3

    def test_gap_grows_with_heterogeneity(self):
        gaps = [mean_product_gap(*make_env(h=h, seed=1)) for h in (0.0, 0.5, 1.0)]
        assert gaps[0] < gaps[1] < gaps[2]

    def test_feature_norms(self):
        _, env = make_env()
        assert np.all(np.linalg.norm(env.user_features, axis=1) <= 1 + 1e-12)
        np.testing.assert_allclose(np.linalg.norm(env.products, axis=1), 1.0)

    def test_probability_range(self):
        graph, env = make_env(scale=5.0)
        for k in range(env.n_products):
            p = env.edge_probabilities(graph, k)
            assert p.min() >= 0.0 and p.max() <= P_MAX
        assert p.max() == P_MAX

    def test_realizable_below_clip(self):
        # unclipped scores are exactly the inner product with a rank-2 CP tensor
        graph, env = make_env()
        W = env.hidden_tensor()
        x, z = env.user_features, env.products[1]
        raw = env.scores(graph.src, graph.dst, 1)
        ref = np.einsum("ijk,ei,ej,k->e", W, x[graph.src], x[graph.dst], z)
        np.testing.assert_allclose(raw, ref, atol=1e-12)
        p = env.edge_probabilities(graph, 1)
        inside = raw < P_MAX
        np.testing.assert_allclose(p[inside], np.maximum(raw[inside], 0.0))

    def test_scores_non_negative_without_feature_noise(self):
        graph, env = make_env(feature_noise=0.0)
        for k in range(env.n_products):
            assert env.scores(graph.src, graph.dst, k).min() >= -1e-15
        # the default noise only dips a little below zero
        graph, env = make_env()
        assert env.scores(graph.src, graph.dst, 0).min() > -0.05

    def test_learner_rank_two_represents_scores(self):
        graph, env = make_env()
        post = init_posterior(3, 2, list(env.dims), 0.1)
        w = env.scale ** (1 / 3)
        for r in range(2):
            post.means[0, r, :6] = post.means[1, r, :6] = w * env.user_factors[r]
            post.means[2, r, :5] = w * env.product_factors[r]
        x = env.user_features
        raw = env.scores(graph.src, graph.dst, 3)
        for e in range(0, graph.n_edges, 23):
            ctx = ContextTensor.of(x[graph.src[e]], x[graph.dst[e]], env.products[3])
            assert model_inner_product(post, ctx) == pytest.approx(raw[e], abs=1e-12)

    def test_off_graph_zero(self, triangle):
        env = generate_environment(triangle, (4, 4, 3), 2, 2, 1.0, np.random.default_rng(0))
        assert env.probability(triangle, 2, 0, 0) == 0.0
        assert env.probability(triangle, 0, 1, 0) == env.edge_probabilities(triangle, 0)[0]

    def test_external_features(self, triangle):
        feats = np.array([[3.0, 4.0], [0.1, 0.0], [0.0, 0.0]])
        env = generate_environment(triangle, (2, 2, 2), 1, 1, 0.0, np.random.default_rng(0), user_features=feats)
        np.testing.assert_allclose(env.user_features[0], [0.6, 0.8])
        np.testing.assert_allclose(env.user_features[1], [0.1, 0.0])

    @pytest.mark.parametrize(
        "dims,rank,products,h",
        [((4, 5, 3), 2, 2, 0.5), ((4, 4), 2, 2, 0.5), ((4, 4, 3), 5, 2, 0.5), ((4, 4, 3), 2, 0, 0.5), ((4, 4, 3), 2, 2, 1.5)],
    )
    def test_invalid(self, triangle, dims, rank, products, h):
        with pytest.raises(ConfigurationError):
            generate_environment(triangle, dims, rank, products, h, np.random.default_rng(0))


class TestProductLoadings:
    def test_extremes(self):
        np.testing.assert_array_equal(product_loadings(3, 2, 0.0, 0.5), np.ones((3, 2)))
        np.testing.assert_array_equal(product_loadings(3, 2, 1.0, 0.0), [[1, 0], [0, 1], [1, 0]])

    def test_non_negative(self):
        assert np.all(product_loadings(5, 3, 1.0, 0.2) >= 0)


class TestSampleFeedback:
    def test_one_tuple_per_out_edge(self):
        graph, env = make_env()
        seeds = [0, 7, 11]
        out = sample_feedback(env, graph, seeds, 0, np.random.default_rng(0))
        assert len(out) == sum(graph.out_degree()[s] for s in seeds)

    def test_context_convention(self, triangle):
        env = generate_environment(triangle, (3, 3, 2), 1, 2, 0.0, np.random.default_rng(0))
        (x, _), (x2, _) = sample_feedback(env, triangle, [0], 1, np.random.default_rng(0))
        np.testing.assert_array_equal(x.modes[0], env.user_features[0])
        assert {tuple(x.modes[1]), tuple(x2.modes[1])} == {tuple(env.user_features[1]), tuple(env.user_features[2])}
        np.testing.assert_array_equal(x.modes[2], env.products[1])

    def test_sink_seed_gives_nothing(self, triangle):
        env = generate_environment(triangle, (3, 3, 2), 1, 1, 0.0, np.random.default_rng(0))
        assert sample_feedback(env, triangle, [2], 0, np.random.default_rng(0)) == []

    def test_certain_edges(self, triangle):
        env = generate_environment(triangle, (3, 3, 2), 1, 1, 0.0, np.random.default_rng(0))
        env.p_max = 1.0
        env._cache[(id(triangle), 0)] = np.ones(3)
        _, y = feedback_edges(env, triangle, [0, 1], 0, np.random.default_rng(1))
        np.testing.assert_array_equal(y, 1.0)

    def test_bernoulli_rate(self):
        graph, env = make_env()
        e = int(np.argmax(env.edge_probabilities(graph, 0)))
        p = env.edge_probabilities(graph, 0)[e]
        seed = int(graph.src[e])
        pos = list(np.sort(graph.out_edges(seed))).index(e)
        rng = np.random.default_rng(2)
        ys = np.array([feedback_edges(env, graph, [seed], 0, rng)[1][pos] for _ in range(10_000)])
        assert abs(ys.mean() - p) < 3 * np.sqrt(p * (1 - p) / ys.size)

    def test_unknown_seed(self, triangle):
        env = generate_environment(triangle, (3, 3, 2), 1, 1, 0.0, np.random.default_rng(0))
        with pytest.raises(ContractError):
            sample_feedback(env, triangle, [9], 0, np.random.default_rng(0))


class TestSampleProduct:
    def test_single_product(self, triangle):
        env = generate_environment(triangle, (3, 3, 2), 1, 1, 0.0, np.random.default_rng(0))
        rng = np.random.default_rng(0)
        assert all(sample_product(env, rng)[0] == 0 for _ in range(20))

    def test_uniform_frequencies(self):
        _, env = make_env(products=4)
        rng = np.random.default_rng(0)
        counts = np.bincount([sample_product(env, rng)[0] for _ in range(10_000)], minlength=4)
        freq = counts / 10_000
        se = np.sqrt(0.25 * 0.75 / 10_000)
        assert np.all(np.abs(freq - 0.25) < 3 * se)

    def test_same_seed_same_sequence(self):
        _, env = make_env()
        r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
        assert [sample_product(env, r1)[0] for _ in range(50)] == [sample_product(env, r2)[0] for _ in range(50)]


class TestFeatureTable:
    def test_reads_and_normalizes(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("# id,a,b\n1,0.0,0.5\n0,3,4\n")
        np.testing.assert_allclose(load_feature_table(path), [[0.6, 0.8], [0.0, 0.5]])

    @pytest.mark.parametrize("text,line", [("0,1,2\n1,x,2\n", 2), ("0,1,2\n1,1\n", 2), ("0\n", 1)])
    def test_malformed(self, tmp_path, text, line):
        path = tmp_path / "f.csv"
        path.write_text(text)
        with pytest.raises(ParseError, match=f"line {line}"):
            load_feature_table(path)

    def test_missing_id(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("0,1\n2,1\n")
        with pytest.raises(ParseError):
            load_feature_table(path)

    def test_normalize_rows_leaves_short_rows(self):
        np.testing.assert_allclose(normalize_rows([[0.3, 0.4], [6.0, 8.0]]), [[0.3, 0.4], [0.6, 0.8]])

