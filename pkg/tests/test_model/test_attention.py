"""Test measure attention, graph-preserving stacks and the same-domain model."""
import math
import numpy as np
from .. import util
import measureformer as mf
from measureformer.attention import (
    HeadParams, LayerParams, MlpParams, SameDomainModel, attend_head, default_widths, head_attention,
    layer_forward, mlp_forward, warp
)
from measureformer.diff import Tape
from measureformer.util import ConfigError, DimensionError, MeasureError

CLIP = mf.SmoothClip(1.0, 2.0)


def random_head(rng, width, key_dim=3, value_dim=2, out=1):
    """Gaussian head on `width`-wide tokens."""

    return HeadParams(
        rng.standard_normal((key_dim, width)),
        rng.standard_normal((key_dim, width)),
        rng.standard_normal((value_dim, width)),
        rng.standard_normal((out, value_dim))
    )


def graph_measure(rng, n, dim=1, channels=1):
    """Uniform graph measure on `[0, 1]^dim x [-1, 1]^channels`."""

    loc = np.hstack([rng.random((n, dim)), rng.uniform(-1.0, 1.0, (n, channels))])
    return mf.uniform_measure(loc, dim)


class TestAttendHead(util.TestCase):
    """Test a single head."""

    def test_dirac(self):
        """Against a Dirac the head returns `V z_1`."""

        rng = np.random.default_rng(0)
        head = random_head(rng, 3)
        mu = mf.DiscreteMeasure([[0.2, 0.4, -0.1]], [1.0], 1)
        self.assert_allclose(attend_head(mu, rng.standard_normal(3), head), head.value @ mu.locations[0])

    def test_convex(self):
        """Outputs are convex combinations of `V z_j`."""

        rng = np.random.default_rng(1)
        head = random_head(rng, 2, value_dim=1)
        mu = graph_measure(rng, 7)
        out = attend_head(mu, [0.5, 0.0], head)[0]
        vals = mu.locations @ head.value[0]
        self.assertTrue(vals.min() - 1e-12 <= out <= vals.max() + 1e-12)

    def test_zero_weight(self):
        """An atom without mass changes nothing."""

        rng = np.random.default_rng(2)
        head = random_head(rng, 2)
        mu = graph_measure(rng, 4)
        padded = mf.DiscreteMeasure(
            np.vstack([mu.locations, [[0.9, 0.9]]]), np.concatenate([mu.weights, [0.0]]), 1
        )
        z = [0.3, -0.2]
        self.assert_allclose(attend_head(padded, z, head), attend_head(mu, z, head), atol=1e-14)

    def test_split_atom(self):
        """Splitting an atom into two halves is the same measure."""

        rng = np.random.default_rng(3)
        head = random_head(rng, 2)
        mu = graph_measure(rng, 3)
        split = mf.DiscreteMeasure(
            np.vstack([mu.locations, mu.locations[:1]]),
            np.concatenate([[mu.weights[0] / 2], mu.weights[1:], [mu.weights[0] / 2]]),
            1
        )
        z = [0.1, 0.6]
        self.assert_allclose(attend_head(split, z, head), attend_head(mu, z, head), atol=1e-14)

    def test_scale_dim(self):
        """`scale_dim` changes the logit scaling."""

        rng = np.random.default_rng(4)
        head = random_head(rng, 2, key_dim=4)
        mu = graph_measure(rng, 5)
        z = [0.2, 0.7]
        same = attend_head(mu, z, head, scale_dim=4)
        self.assert_allclose(same, attend_head(mu, z, head), atol=1e-14)
        self.assertFalse(np.allclose(attend_head(mu, z, head, scale_dim=1), same))

    def test_width(self):
        """Token and head widths must match the atoms."""

        rng = np.random.default_rng(5)
        with self.assertRaises(DimensionError):
            attend_head(graph_measure(rng, 3), [0.1, 0.2, 0.3], random_head(rng, 3))

    def test_no_mass(self):
        """Attention needs some mass."""

        tape = Tape(record=False)
        t = tape.constant(np.ones((2, 2)))
        q = tape.constant(np.ones((1, 2)))
        with self.assertRaises(MeasureError):
            head_attention(tape, t, t, [0.0, 0.0], q, q, q)

    def test_head_shapes(self):
        """Mismatched head matrices."""

        with self.assertRaises(DimensionError):
            HeadParams(np.ones((2, 3)), np.ones((3, 3)), np.ones((1, 3)), np.ones((1, 1)))


class TestLayers(util.TestCase):
    """Test single layers and the warp."""

    def test_layer_passthrough(self):
        """Spatial coordinates are copied, the value part is updated."""

        rng = np.random.default_rng(6)
        layer = LayerParams(rng.standard_normal((2, 3)), [random_head(rng, 3, out=2)], 1)
        mu = mf.uniform_measure(np.hstack([rng.random((4, 1)), rng.standard_normal((4, 2))]), 1)
        z = np.array([0.37, 0.1, -0.4])
        out = layer_forward(mu, z, layer)
        self.assertEqual(out[0], 0.37)
        head = layer.heads[0]
        expected = layer.residual @ z + head.output @ attend_head(mu, z, head)
        self.assert_allclose(out[1:], expected, atol=1e-14)

    def test_layer_widths(self):
        """Value width can change between layers."""

        rng = np.random.default_rng(7)
        layer = LayerParams(rng.standard_normal((5, 3)), [random_head(rng, 3, out=5)], 1)
        self.assertEqual((layer.in_width, layer.out_width), (2, 5))
        mu = mf.uniform_measure(rng.standard_normal((3, 3)), 1)
        self.assertEqual(layer_forward(mu, [0.5, 0.1, 0.2], layer).shape, (6,))
        with self.assertRaises(DimensionError):
            layer_forward(mu, [0.5, 0.1], layer)

    def test_mlp(self):
        """Token-wise MLP with and without the residual."""

        rng = np.random.default_rng(8)
        w0, b0 = rng.standard_normal((3, 2)), rng.standard_normal(3)
        w1, b1 = rng.standard_normal((1, 3)), rng.standard_normal(1)
        z = np.array([0.25, -0.5])
        h = w1 @ np.tanh(w0 @ z + b0) + b1
        plain = mlp_forward(z, MlpParams([w0, w1], [b0, b1], spatial_dim=1))
        self.assert_allclose(plain, [0.25, h[0]], atol=1e-14)
        res = mlp_forward(z, MlpParams([w0, w1], [b0, b1], spatial_dim=1, residual=True))
        self.assert_allclose(res, [0.25, h[0] - 0.5], atol=1e-14)

    def test_mlp_errors(self):
        """Bad activations and shapes."""

        with self.assertRaises(ConfigError):
            MlpParams([np.ones((1, 2))], [np.zeros(1)], activation='relu')
        with self.assertRaises(DimensionError):
            MlpParams([np.ones((1, 2))], [np.zeros(2)])

    def test_warp(self):
        """`(x, y) -> (x, y0)`."""

        out = warp([[0.1, 0.5], [0.7, -0.3]], [0.25], 1)
        self.assert_bit_equal(out, np.array([[0.1, 0.25], [0.7, 0.25]]))


class TestStack(util.TestCase):
    """Test graph-preserving stacks."""

    def test_widths(self):
        """Default width schedule."""

        self.assertEqual(default_widths(1, 1, 3), (1, 8, 8, 1))
        self.assertEqual(default_widths(2, 1, 1), (1, 1))

    def test_passthrough(self):
        """Spatial coordinates and weights survive bit for bit."""

        rng = np.random.default_rng(9)
        for dim in (1, 2):
            config = mf.StackConfig(dim, default_widths(dim, 1, 3), CLIP, heads=2)
            mu = graph_measure(rng, 9, dim)
            out = mf.stack_forward(mu, config, mf.init_stack(config, 3))
            self.assert_bit_equal(out.spatial, mu.spatial)
            self.assert_bit_equal(out.weights, mu.weights)
            self.assertTrue(np.all(np.abs(out.values) <= 2.0))

    def test_warp_independence(self):
        """With a warp the output ignores the input values."""

        rng = np.random.default_rng(10)
        config = mf.StackConfig(1, (1, 4, 1), CLIP, y0=[0.5])
        params = mf.init_stack(config, 1)
        mu = graph_measure(rng, 6)
        other = mu.with_locations(np.hstack([mu.spatial, rng.uniform(-1.0, 1.0, (6, 1))]))
        a = mf.stack_forward(mu, config, params)
        b = mf.stack_forward(other, config, params)
        self.assert_bit_equal(a.locations, b.locations)

    def test_permutation(self):
        """Permuting atoms permutes the output."""

        rng = np.random.default_rng(11)
        config = mf.StackConfig(1, (1, 8, 1), CLIP, heads=2)
        params = mf.init_stack(config, 2)
        mu = graph_measure(rng, 8)
        perm = rng.permutation(8)
        shuffled = mf.DiscreteMeasure(mu.locations[perm], mu.weights[perm], 1)
        out = mf.stack_forward(mu, config, params)
        self.assert_allclose(mf.stack_forward(shuffled, config, params).locations, out.locations[perm])

    def test_split_mismatch(self):
        """The measure must split the way the stack expects."""

        config = mf.StackConfig(2, (1, 1), CLIP)
        with self.assertRaises(DimensionError):
            mf.stack_forward(graph_measure(np.random.default_rng(0), 3), config, mf.init_stack(config))

    def test_config_errors(self):
        """Bad schedules and warp constants."""

        self.assert_raises_config(mf.StackConfig, 1, (1, 4, 2), CLIP)
        self.assert_raises_config(mf.StackConfig, 1, (1,), CLIP)
        self.assert_raises_config(mf.StackConfig, 1, (1, 1), CLIP, y0=[1.5])
        self.assert_raises_config(mf.StackConfig, 1, (1, 1), CLIP, heads=0)

    def test_init_deterministic(self):
        """Same seed, same parameters."""

        config = mf.StackConfig(1, (1, 8, 1), CLIP, heads=2)
        self.assertEqual(mf.init_stack(config, 5), mf.init_stack(config, 5))
        self.assertNotEqual(mf.init_stack(config, 5), mf.init_stack(config, 6))


def softmax_transformer(tokens, config, params):
    """Per-token softmax transformer with the stack's weights and an unweighted `e / e.sum(1)`."""

    d = config.spatial_dim
    x = tokens[:, :d]
    z = tokens
    for layer in range(config.n_layers):
        prefix = f'layer{layer}'
        values = z @ params[f'{prefix}.residual'].T
        for h in range(config.heads):
            query = params[f'{prefix}.head{h}.query']
            logits = (z @ query.T) @ (z @ params[f'{prefix}.head{h}.key'].T).T / math.sqrt(query.shape[0])
            e = np.exp(logits - logits.max(axis=1, keepdims=True))
            att = (e / e.sum(1, keepdims=True)) @ (z @ params[f'{prefix}.head{h}.value'].T)
            values = values + att @ params[f'{prefix}.head{h}.output'].T
        z = np.hstack([x, values])
        hidden = np.tanh(z @ params[f'mlp{layer}.weight0'].T + params[f'mlp{layer}.bias0'])
        z = np.hstack([x, hidden @ params[f'mlp{layer}.weight1'].T + params[f'mlp{layer}.bias1']])
    return np.hstack([x, config.clip(z[:, d:])])


class TestSequence(util.TestCase):
    """Test the stack on plain token sequences."""

    def test_uniform_matches_softmax_transformer(self):
        """On the uniform measure the stack is an ordinary softmax transformer."""

        rng = np.random.default_rng(12)
        for dim, heads in ((1, 2), (2, 1)):
            config = mf.StackConfig(dim, default_widths(dim, 1, 2), CLIP, heads=heads)
            params = mf.init_stack(config, 4)
            tokens = np.hstack([rng.random((10, dim)), rng.uniform(-1.0, 1.0, (10, 1))])
            expected = softmax_transformer(tokens, config, params)
            self.assert_allclose(mf.sequence_forward(tokens, config, params), expected, atol=1e-12)

    def test_input_order(self):
        """Output rows follow the input rows."""

        rng = np.random.default_rng(13)
        config = mf.StackConfig(1, (1, 8, 1), CLIP, heads=2)
        params = mf.init_stack(config, 2)
        tokens = np.hstack([rng.random((7, 1)), rng.uniform(-1.0, 1.0, (7, 1))])
        out = mf.sequence_forward(tokens, config, params)
        self.assert_bit_equal(out[:, :1], tokens[:, :1])
        perm = rng.permutation(7)
        self.assert_allclose(mf.sequence_forward(tokens[perm], config, params), out[perm])

    def test_decoded_read_back(self):
        """With a mollifier width the output is read back at the input points."""

        rng = np.random.default_rng(14)
        config = mf.StackConfig(1, (1, 8, 1), CLIP)
        params = mf.init_stack(config, 3)
        tokens = np.hstack([rng.random((12, 1)), rng.uniform(-1.0, 1.0, (12, 1))])
        gamma = mf.stack_forward(mf.uniform_measure(tokens, 1), config, params)
        expected = mf.token_sequence(gamma, tokens[:, :1], 0.2)
        out = mf.sequence_forward(tokens, config, params, eps=0.2)
        self.assertEqual(out.shape, (12, 2))
        self.assert_allclose(out, expected)

    def test_empty_sequence(self):
        """An empty sequence has no uniform measure."""

        config = mf.StackConfig(1, (1, 1), CLIP)
        with self.assertRaises(MeasureError):
            mf.sequence_forward(np.zeros((0, 2)), config, mf.init_stack(config))


class TestSameDomainModel(util.TestCase):
    """Test the trained same-domain architecture."""

    def setUp(self):
        """Setup."""

        super().setUp()
        self.config = mf.ModelConfig(mf.SAME_DOMAIN, embed=8, heads=2)
        self.model = SameDomainModel.initial(self.config, 0)

    def test_shape_bound(self):
        """One bounded prediction per input point."""

        rng = np.random.default_rng(12)
        out = self.model.predict(rng.random((10, 1)), rng.uniform(-1.0, 1.0, (10, 1)))
        self.assertEqual(out.shape, (10, 1))
        self.assertTrue(np.all(np.abs(out) <= self.config.output_bound + self.config.clip_margin))

    def test_equivariant(self):
        """Reordering tokens reorders predictions."""

        rng = np.random.default_rng(13)
        points, values = rng.random((7, 1)), rng.uniform(-1.0, 1.0, (7, 1))
        perm = rng.permutation(7)
        out = self.model.predict(points, values)
        self.assert_allclose(self.model.predict(points[perm], values[perm]), out[perm])

    def test_measure(self):
        """Graph measures keep their coordinates."""

        mu = graph_measure(np.random.default_rng(14), 5)
        out = self.model.predict_measure(mu)
        self.assert_bit_equal(out.spatial, mu.spatial)
        self.assert_bit_equal(out.values, self.model.predict(mu.spatial, mu.values))

    def test_identity_residual(self):
        """Attention residuals start as `[0 | I]`."""

        feat = self.config.features.width
        residual = self.model.params['layer0.residual']
        self.assert_bit_equal(residual[:, :feat], np.zeros((8, feat)))
        self.assert_bit_equal(residual[:, feat:], np.eye(8))

    def test_mode(self):
        """A query configuration is refused."""

        with self.assertRaises(ConfigError):
            SameDomainModel(mf.ModelConfig(mf.QUERY), self.model.params)


class TestFeatures(util.TestCase):
    """Test coordinate features and the model configuration."""

    def test_frequencies(self):
        """Geometric frequencies from 1 to 16."""

        features = mf.ModelConfig(dim=2).features
        self.assertEqual(features.width, 24)
        self.assert_allclose(features.frequencies[[0, -1]], [1.0, 16.0], atol=1e-12)

    def test_layout(self):
        """`(sin, cos)` pairs, axis by axis."""

        from measureformer.features import positional_features

        out = positional_features([0.125, 0.0])
        self.assert_allclose(out[:2], [math.sin(math.pi / 4), math.cos(math.pi / 4)], atol=1e-15)
        self.assert_allclose(out[12:14], [0.0, 1.0])

    def test_defaults(self):
        """Derived sizes."""

        cfg = mf.ModelConfig(embed=32, heads=2)
        self.assertEqual((cfg.key_dim, cfg.head_dim, cfg.mlp_hidden), (16, 16, 64))
        self.assertEqual(cfg.clip, mf.SmoothClip(4.0, 5.0))

    def test_errors(self):
        """Invalid configurations."""

        self.assert_raises_config(mf.ModelConfig, 'other')
        self.assert_raises_config(mf.ModelConfig, embed=10, heads=3)
        self.assert_raises_config(mf.ModelConfig.from_mapping, {'embed': 8, 'width': 3})
        self.assertEqual(mf.ModelConfig.from_mapping({'embed': 8, 'heads': 4}), mf.ModelConfig(embed=8, heads=4))
