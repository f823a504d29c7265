"""Test product-space attention, its reductions and the query model."""
import numpy as np
from .. import util
import measureformer as mf
from measureformer.product import (
    INPUT_SELF, INPUT_TO_QUERY, PATTERNS, QUERY_SELF, QUERY_TO_INPUT, AttentionCounter, BlockMatrices,
    ProductToken, fiber_lift, readout_value
)
from measureformer.util import ConfigError, DimensionError, MeasureError

S_WIDTH = 2
R_WIDTH = 3


def pattern_blocks(rng, pattern, key_dim=2, value_dim=2):
    """Random blocks that respect `pattern`."""

    q_side = S_WIDTH if pattern in (INPUT_SELF, INPUT_TO_QUERY) else R_WIDTH
    kv_side = S_WIDTH if pattern in (INPUT_SELF, QUERY_TO_INPUT) else R_WIDTH
    return BlockMatrices.from_pattern(
        pattern,
        rng.standard_normal((key_dim, q_side)),
        rng.standard_normal((key_dim, kv_side)),
        rng.standard_normal((value_dim, kv_side)),
        S_WIDTH,
        R_WIDTH
    )


class TestBlocks(util.TestCase):
    """Test block placement."""

    def test_cross(self):
        """Only the query-to-input pattern is cross-constrained."""

        rng = np.random.default_rng(0)
        for pattern in PATTERNS:
            blocks = pattern_blocks(rng, pattern)
            self.assertEqual(blocks.is_cross(), pattern == QUERY_TO_INPUT)
            self.assertEqual((blocks.input_width, blocks.query_width), (S_WIDTH, R_WIDTH))

    def test_cross_builder(self):
        """`cross` zeroes `Q_s`, `K_r` and `V_r`."""

        rng = np.random.default_rng(1)
        blocks = BlockMatrices.cross(
            rng.standard_normal((2, R_WIDTH)), rng.standard_normal((2, S_WIDTH)), rng.standard_normal((1, S_WIDTH)),
            R_WIDTH
        )
        self.assertTrue(blocks.is_cross())
        self.assert_bit_equal(blocks.q_s, np.zeros((2, S_WIDTH)))

    def test_unknown(self):
        """Unknown patterns."""

        with self.assertRaises(ValueError):
            BlockMatrices.from_pattern(INPUT_SELF | QUERY_SELF, np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 2)), 2, 3)

    def test_shapes(self):
        """Query and key blocks must agree."""

        with self.assertRaises(DimensionError):
            BlockMatrices(np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 3)), np.ones((2, 3)), np.ones((1, 2)),
                          np.ones((1, 3)))

    def test_token(self):
        """`(s, r)` concatenation."""

        self.assert_bit_equal(ProductToken([1.0, 2.0], [3.0]).vector, [1.0, 2.0, 3.0])


class TestReductions(util.TestCase):
    """Product attention against its single-sum forms."""

    def test_patterns(self):
        """Every pattern on random instances."""

        rng = np.random.default_rng(2)
        for _ in range(25):
            for pattern in PATTERNS:
                mu = util.random_measure(rng, int(rng.integers(1, 6)), S_WIDTH)
                nu = util.random_measure(rng, int(rng.integers(1, 6)), R_WIDTH)
                blocks = pattern_blocks(rng, pattern)
                xi = ProductToken(rng.standard_normal(S_WIDTH), rng.standard_normal(R_WIDTH))
                full = mf.product_attend(mf.product_measure(mu, nu), xi, blocks)
                reduced = mf.reduced_attend(pattern, mu, nu, xi, blocks)
                self.assert_allclose(full, reduced, atol=1e-10 * max(1.0, float(np.max(np.abs(reduced)))))

    def test_width(self):
        """Blocks must match the product atoms."""

        rng = np.random.default_rng(3)
        mu = util.random_measure(rng, 2, S_WIDTH)
        nu = util.random_measure(rng, 2, 1)
        with self.assertRaises(DimensionError):
            mf.product_attend(mf.product_measure(mu, nu), np.zeros(3), pattern_blocks(rng, INPUT_SELF))

    def test_cross_dirac(self):
        """Cross-attention against a Dirac returns `V_s s_1`."""

        rng = np.random.default_rng(4)
        mu = mf.DiscreteMeasure([[0.3, -0.2]], [1.0], 1)
        v = rng.standard_normal((2, 2))
        out = mf.cross_attend(rng.standard_normal(3), mu, rng.standard_normal((2, 3)), rng.standard_normal((2, 2)), v)
        self.assert_allclose(out, v @ mu.locations[0])

    def test_cross_shapes(self):
        """Blocks must match the token and the atoms."""

        mu = mf.DiscreteMeasure([[0.3, -0.2]], [1.0], 1)
        with self.assertRaises(DimensionError):
            mf.cross_attend(np.zeros(3), mu, np.ones((2, 3)), np.ones((2, 3)), np.ones((1, 3)))


class TestFiber(util.TestCase):
    """Test fiber lifting and readout."""

    def test_lift(self):
        """One product atom per input atom at `(s, x', 0)`."""

        mu = mf.DiscreteMeasure([[0.1, 0.5], [0.6, -0.4]], [0.25, 0.75], 1)
        lifted = fiber_lift(mu, [0.8])
        self.assertEqual(len(lifted), 2)
        self.assert_bit_equal(lifted.weights, mu.weights)
        self.assert_bit_equal(lifted.locations, np.array([[0.1, 0.5, 0.8, 0.0], [0.6, -0.4, 0.8, 0.0]]))

    def test_readout(self):
        """The common query value is read from any atom."""

        good = mf.DiscreteMeasure([[0.1, 0.5, 0.8, 0.3], [0.6, -0.4, 0.8, 0.3]], [0.5, 0.5], 1)
        self.assert_bit_equal(readout_value(good), [0.3])
        bad = mf.DiscreteMeasure([[0.1, 0.5, 0.8, 0.3], [0.6, -0.4, 0.8, 0.4]], [0.5, 0.5], 1)
        with self.assertRaises(MeasureError):
            readout_value(bad)


class TestQueryModel(util.TestCase):
    """Test the trained query architecture."""

    def setUp(self):
        """Setup."""

        super().setUp()
        self.config = mf.ModelConfig(mf.QUERY, embed=8, heads=2)
        self.model = mf.QueryModel.initial(self.config, 0)
        rng = np.random.default_rng(5)
        self.mu = mf.uniform_measure(np.hstack([rng.random((9, 1)), rng.uniform(-1.0, 1.0, (9, 1))]), 1)
        self.queries = rng.random((4, 1))

    def test_shape_bound(self):
        """One bounded value per query."""

        out = mf.query_forward(self.mu, self.queries, self.model)
        self.assertEqual(out.shape, (4, 1))
        self.assertTrue(np.all(np.abs(out) <= self.config.output_bound + self.config.clip_margin))

    def test_predict(self):
        """`predict` on uniform tokens agrees with the measure entry point."""

        out = self.model.predict(self.mu.spatial, self.mu.values, self.queries)
        self.assert_allclose(out, mf.query_forward(self.mu, self.queries, self.model), atol=1e-14)

    def test_fibers_independent(self):
        """A query's value does not depend on the other queries."""

        out = mf.query_forward(self.mu, self.queries, self.model)
        for k in range(4):
            self.assert_bit_equal(mf.query_forward(self.mu, self.queries[k:k + 1], self.model), out[k:k + 1])

    def test_permutation(self):
        """Reordering input tokens leaves predictions unchanged."""

        perm = np.random.default_rng(6).permutation(9)
        shuffled = mf.DiscreteMeasure(self.mu.locations[perm], self.mu.weights[perm], 1)
        self.assert_allclose(
            mf.query_forward(shuffled, self.queries, self.model), mf.query_forward(self.mu, self.queries, self.model)
        )

    def test_resolution(self):
        """Inputs of any size are accepted."""

        rng = np.random.default_rng(7)
        for n in (1, 3, 40):
            mu = mf.uniform_measure(np.hstack([rng.random((n, 1)), rng.uniform(-1.0, 1.0, (n, 1))]), 1)
            self.assertEqual(mf.query_forward(mu, self.queries, self.model).shape, (4, 1))

    def test_counter(self):
        """Each fiber scores every fiber atom against every input atom, per head and block."""

        counter = AttentionCounter()
        mf.query_forward(self.mu, self.queries, self.model, counter)
        self.assertEqual(counter.logits, 4 * self.config.query_blocks * self.config.heads * 9 * 9)

    def test_no_queries(self):
        """An empty query set gives an empty result."""

        self.assertEqual(mf.query_forward(self.mu, np.zeros((0, 1)), self.model).shape, (0, 1))

    def test_errors(self):
        """Mode and shape errors."""

        with self.assertRaises(ConfigError):
            mf.QueryModel(mf.ModelConfig(mf.SAME_DOMAIN), self.model.params)
        with self.assertRaises(DimensionError):
            mf.query_forward(mf.uniform_measure(np.zeros((3, 3)), 2), self.queries, self.model)


class TestQueryBatch(util.TestCase):
    """Test query point files."""

    def test_read(self):
        """Points come back in file order."""

        batch = mf.QueryBatch.from_csv('x1,x2\n0.25,0.5\n\n0.75,1.0\n')
        self.assertEqual((len(batch), batch.dim), (2, 2))
        self.assert_bit_equal(batch.points, [[0.25, 0.5], [0.75, 1.0]])
        self.assertEqual(mf.QueryBatch.from_csv(batch.to_csv()), batch)

    def test_predictions(self):
        """Written predictions carry `y` columns that reading skips."""

        batch = mf.QueryBatch([0.1, 0.2, 0.3], dim=1)
        text = batch.to_csv([[1.5], [-0.5], [0.0]])
        self.assertEqual(text.splitlines()[:2], ['x1,y1', '0.1,1.5'])
        self.assertEqual(mf.QueryBatch.from_csv(text, 1), batch)
        self.assertEqual(batch.rows([[1.5], [-0.5], [0.0]])[1], (0.2, -0.5))
        with self.assertRaises(DimensionError):
            batch.rows([[1.0], [2.0]])

    def test_empty(self):
        """A header alone is an empty batch."""

        self.assertEqual(len(mf.QueryBatch.from_csv('x1,x2\n')), 0)

    def test_bad_header(self):
        """The header names the coordinates."""

        self.assert_raises_config(mf.QueryBatch.from_csv, 'a,b\n0.1,0.2\n', line=1)
        self.assert_raises_config(mf.QueryBatch.from_csv, 'x2\n0.1\n', line=1)
        self.assert_raises_config(mf.QueryBatch.from_csv, '')

    def test_bad_rows(self):
        """Malformed rows are reported at their line."""

        err = self.assert_raises_config(mf.QueryBatch.from_csv, 'x1\n0.25\nabc\n', line=3)
        self.assertEqual(err.col, 1)
        self.assert_raises_config(mf.QueryBatch.from_csv, 'x1,x2\n0.1,0.2\n0.3\n', line=3)
        self.assert_raises_config(mf.QueryBatch.from_csv, 'x1\nnan\n')

    def test_dimension(self):
        """The file must match the model dimension."""

        self.assert_raises_config(mf.QueryBatch.from_csv, 'x1,x2\n0.1,0.2\n', 1)
        with self.assertRaises(DimensionError):
            mf.QueryBatch(np.zeros((2, 2)), dim=1)
        with self.assertRaises(DimensionError):
            mf.QueryBatch(np.zeros((2, 0)))

    def test_forward(self):
        """A batch predicts exactly like its point array."""

        config = mf.ModelConfig(mf.QUERY, embed=8, heads=2)
        model = mf.QueryModel.initial(config, 0)
        rng = np.random.default_rng(8)
        mu = mf.uniform_measure(np.hstack([rng.random((6, 1)), rng.uniform(-1.0, 1.0, (6, 1))]), 1)
        points = rng.random((3, 1))
        self.assert_bit_equal(
            mf.query_forward(mu, mf.QueryBatch(points), model), mf.query_forward(mu, points, model)
        )
