"""Test sampling, tokenization, `R_tau` and the mollifier decoder."""
import numpy as np
from .. import util
import measureformer as mf
from measureformer.encode import (
    SamplingScheme, grid_nodes, interior_cutoff, mollifier_eval, mollify_grid, standard_mollifier
)
from measureformer.util import ConfigError, DimensionError, ResolutionError, ValueBoundError


class TestMollifier(util.TestCase):
    """Test the bump."""

    def test_support(self):
        """Zero outside the unit ball in any coordinate."""

        m = standard_mollifier()
        self.assertEqual(mollifier_eval(m, [1.0]), 0.0)
        self.assertEqual(mollifier_eval(m, [-1.5]), 0.0)
        self.assertEqual(mollifier_eval(m, [0.2, 1.0]), 0.0)
        self.assertGreater(mollifier_eval(m, [0.0]), 0.0)

    def test_symmetric(self):
        """`rho(x) = rho(-x)`."""

        m = standard_mollifier()
        rng = np.random.default_rng(0)
        for x in rng.uniform(-1.2, 1.2, (20, 2)):
            self.assertEqual(mollifier_eval(m, x), mollifier_eval(m, -x))

    def test_normalized(self):
        """Unit integral under the stored quadrature."""

        m = standard_mollifier()
        nodes, step = m.quadrature()
        self.assertEqual(len(nodes), 10001)
        self.assertAlmostEqual(float(np.sum(m.profile(nodes)) * step), 1.0, delta=1e-8)

    def test_product_form(self):
        """Product over coordinates."""

        m = standard_mollifier()
        self.assertAlmostEqual(
            mollifier_eval(m, [0.2, -0.3]),
            float(m.profile(0.2) * m.profile(-0.3)),
            delta=1e-15
        )


class TestSampling(util.TestCase):
    """Test sampling schemes."""

    def test_grid(self):
        """Cell centers."""

        pts = mf.sample_points(mf.Domain(1), SamplingScheme('grid'), 4)
        self.assert_allclose(pts[:, 0], [0.125, 0.375, 0.625, 0.875])

    def test_grid_2d(self):
        """Row-major 2-D cell centers."""

        pts = mf.sample_points(mf.Domain(2), SamplingScheme('grid'), 4)
        self.assert_allclose(pts, [[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]])

    def test_not_a_power(self):
        """Grids need a perfect power."""

        with self.assertRaises(ConfigError):
            mf.sample_points(mf.Domain(2), SamplingScheme('grid'), 5)
        with self.assertRaises(ConfigError):
            mf.sample_points(mf.Domain(2), SamplingScheme('jitter'), 8)

    def test_no_points(self):
        """At least one point."""

        with self.assertRaises(ValueError):
            mf.sample_points(mf.Domain(1), SamplingScheme('uniform'), 0)

    def test_deterministic(self):
        """Same seed, same points."""

        domain = mf.Domain(2)
        for kind in ('jitter', 'uniform', 'gauss'):
            a = mf.sample_points(domain, SamplingScheme(kind, 42), 16)
            b = mf.sample_points(domain, SamplingScheme(kind, 42), 16)
            self.assert_bit_equal(a, b)
            c = mf.sample_points(domain, SamplingScheme(kind, 43), 16)
            self.assertFalse(np.array_equal(a, c))

    def test_uniform_mean(self):
        """Monte-Carlo mean of `sin(2 pi x)`."""

        pts = mf.sample_points(mf.Domain(1), SamplingScheme('uniform', 1), 10000)
        self.assertLess(abs(float(np.mean(np.sin(2.0 * np.pi * pts[:, 0])))), 0.02)

    def test_jitter_cells(self):
        """Jittered points stay in their cells."""

        pts = mf.sample_points(mf.Domain(1), SamplingScheme('jitter', 3), 16)
        centers = mf.sample_points(mf.Domain(1), SamplingScheme('grid'), 16)
        self.assertTrue(np.all(np.abs(pts - centers) <= 0.5 / 16))

    def test_gauss_inside(self):
        """Gaussian clouds are clamped into the cube and wrapped on the torus."""

        cube = mf.sample_points(mf.Domain(1), SamplingScheme('gauss', 0, 2.0), 500)
        torus = mf.sample_points(mf.Domain(1, mf.TORUS), SamplingScheme('gauss', 0, 2.0), 500)
        for pts in (cube, torus):
            self.assertTrue(np.all((pts >= 0.0) & (pts < 1.0)))

    def test_parse(self):
        """Scheme strings."""

        self.assertEqual(mf.parse_scheme('grid'), SamplingScheme('grid'))
        self.assertEqual(mf.parse_scheme('gauss:0.2').param, 0.2)
        self.assertEqual(mf.parse_scheme('jitter', seed=5).seed, 5)
        self.assertEqual(mf.parse_scheme('jitter').param, 1.0)

    def test_parse_errors(self):
        """Bad scheme strings."""

        self.assert_raises_config(mf.parse_scheme, 'sobol')
        self.assert_raises_config(mf.parse_scheme, 'gauss:')
        err = self.assert_raises_config(mf.parse_scheme, 'gauss:wide')
        self.assertEqual(err.col, 7)


class TestSampledFunction(util.TestCase):
    """Test grid functions."""

    def test_bound(self):
        """Grid values respect the bound."""

        with self.assertRaises(ValueBoundError):
            mf.SampledFunction(mf.Domain(1, value_bound=0.5), np.linspace(0.0, 1.0, 8))

    def test_shape(self):
        """Grids are square."""

        with self.assertRaises(DimensionError):
            mf.SampledFunction(mf.Domain(2), np.zeros((4, 5)))

    def test_interpolation(self):
        """Linear functions interpolate exactly between cell centers."""

        domain = mf.Domain(1)
        nodes = grid_nodes(domain, 16)
        h = mf.SampledFunction(domain, 0.5 * nodes)
        self.assert_allclose(h([[0.3], [0.61]]), [[0.15], [0.305]])

    def test_torus_nodes(self):
        """Torus nodes start at zero and interpolation wraps."""

        domain = mf.Domain(1, mf.TORUS)
        nodes = grid_nodes(domain, 8)
        self.assertEqual(nodes[0, 0], 0.0)
        h = mf.SampledFunction(domain, np.cos(2.0 * np.pi * nodes))
        self.assert_allclose(h([[1.0], [0.125]]), [[1.0], [np.cos(np.pi / 4.0)]])

    def test_csv(self):
        """CSV keeps the grid."""

        h = mf.SampledFunction(mf.Domain(2, mf.TORUS), np.arange(9.0).reshape(3, 3) / 10.0)
        text = h.to_csv()
        self.assertTrue(text.startswith('M,d,n\n3,2,1\n'))
        self.assert_bit_equal(mf.SampledFunction.from_csv(text).values, h.values)

    def test_csv_errors(self):
        """Bad CSV headers and sizes."""

        self.assert_raises_config(mf.SampledFunction.from_csv, 'M,d\n2,1\n0.1\n0.2\n')
        self.assert_raises_config(mf.SampledFunction.from_csv, 'M,d,n\n3,1,1\n0.1\n0.2\n')


class TestTokenize(util.TestCase):
    """Test graph tokenization."""

    def test_constant(self):
        """Constant functions give constant values."""

        h = mf.SampledFunction.from_callable(mf.Domain(2), lambda x: np.full(len(x), 0.4), 8)
        mu = mf.tokenize(h, np.random.default_rng(0).random((10, 2)))
        self.assert_allclose(mu.values, np.full((10, 1), 0.4))
        self.assertEqual(mu.coord_split, 2)

    def test_single(self):
        """One point, weight one."""

        mu = mf.tokenize(util.sine_function(), [[0.25]])
        self.assert_allclose(mu.weights, [1.0])
        self.assert_allclose(mu.locations, [[0.25, 1.0]])

    def test_identity(self):
        """`h(x) = x` on the four-point grid."""

        h = mf.SampledFunction.from_callable(mf.Domain(1), lambda x: x[:, 0], 16)
        mu = mf.tokenize(h, mf.sample_points(h.domain, SamplingScheme('grid'), 4))
        self.assert_allclose(mu.locations, [[0.125, 0.125], [0.375, 0.375], [0.625, 0.625], [0.875, 0.875]])
        self.assert_allclose(mu.weights, [0.25] * 4)

    def test_clamp(self):
        """Values just past the bound are clamped; further out is an error."""

        domain = mf.Domain(1)
        grid = np.zeros(4)
        near = mf.SampledFunction(domain, grid, lambda p: np.full((len(p), 1), 1.0 + 5e-10))
        self.assertEqual(float(mf.tokenize(near, [[0.5]]).values[0, 0]), 1.0)
        far = mf.SampledFunction(domain, grid, lambda p: np.full((len(p), 1), 1.1))
        with self.assertRaises(ValueBoundError):
            mf.tokenize(far, [[0.5]])

    def test_dimension(self):
        """Points must match the domain."""

        with self.assertRaises(DimensionError):
            mf.tokenize(util.sine_function(), [[0.1, 0.2]])

    def test_regularized(self):
        """`M_{N,tau}` evaluates `R_tau h`."""

        h = util.sine_function(800)
        pts = mf.sample_points(h.domain, SamplingScheme('grid'), 10)
        reg = mf.regularize_rtau(h, 0.01)
        self.assert_allclose(mf.tokenize(h, pts, 0.01).values, reg(pts))


class TestRegularizer(util.TestCase):
    """Test `R_tau`."""

    def test_constant(self):
        """Constants stay exact away from the boundary and vanish at it."""

        tau, res = 0.01, 800
        h = mf.SampledFunction.from_callable(mf.Domain(1), lambda x: np.full(len(x), 0.7), res)
        out = mf.regularize_rtau(h, tau)
        dist = h.domain.distance_to_boundary(h.nodes())
        self.assert_allclose(out.values[dist >= 6 * tau, 0], 0.7, atol=1e-12)
        self.assertTrue(np.all(out.values[dist < tau, 0] == 0.0))

    def test_cutoff(self):
        """`chi_tau` is one at distance `5 tau` and zero near the boundary."""

        tau, res = 0.01, 800
        domain = mf.Domain(1)
        chi = interior_cutoff(domain, tau, res)
        dist = domain.distance_to_boundary(grid_nodes(domain, res))
        self.assert_allclose(chi[dist >= 5 * tau], 1.0, atol=1e-12)
        self.assertTrue(np.all(chi[dist < 3 * tau] == 0.0))
        self.assert_allclose(interior_cutoff(mf.Domain(1, mf.TORUS), tau, res), np.ones(res))

    def test_compact_support(self):
        """Compactly supported functions are simply mollified."""

        def bump(x):
            t = (x[:, 0] - 0.5) / 0.2
            return 0.8 * np.where(np.abs(t) < 1.0, 1.0 - t * t, 0.0) ** 3

        h = mf.SampledFunction.from_callable(mf.Domain(1), bump, 800)
        self.assert_allclose(mf.regularize_rtau(h, 0.01).values, mollify_grid(h, 0.01).values, atol=1e-14)

    def test_sine_oracle(self):
        """Interior values match the analytic convolution of `sin(2 pi x)`."""

        tau, res = 0.01, 1600
        h = util.sine_function(res)
        out = mf.regularize_rtau(h, tau)
        m = standard_mollifier()
        nodes, step = m.quadrature()
        # rho_tau * sin(2 pi x) = sin(2 pi x) * integral of rho(s) cos(2 pi tau s)
        factor = float(np.sum(m.profile(nodes) * np.cos(2.0 * np.pi * tau * nodes)) * step)
        x = h.nodes()[:, 0]
        interior = h.domain.distance_to_boundary(h.nodes()) >= 6 * tau
        self.assert_allclose(out.values[interior, 0], factor * np.sin(2.0 * np.pi * x[interior]), atol=1e-4)

    def test_linear(self):
        """`R_tau` is linear."""

        rng = np.random.default_rng(2)
        domain = mf.Domain(2)
        a = rng.uniform(-0.4, 0.4, (80, 80))
        b = rng.uniform(-0.4, 0.4, (80, 80))
        ra = mf.regularize_rtau(mf.SampledFunction(domain, a), 0.1).values
        rb = mf.regularize_rtau(mf.SampledFunction(domain, b), 0.1).values
        rab = mf.regularize_rtau(mf.SampledFunction(domain, 0.5 * a - 1.5 * b), 0.1).values
        self.assert_allclose(rab, 0.5 * ra - 1.5 * rb, atol=1e-12)

    def test_sup_bound(self):
        """`R_tau` does not increase the sup norm."""

        rng = np.random.default_rng(8)
        values = rng.uniform(-1.0, 1.0, 400)
        out = mf.regularize_rtau(mf.SampledFunction(mf.Domain(1), values), 0.02)
        self.assertLessEqual(float(np.max(np.abs(out.values))), float(np.max(np.abs(values))) + 1e-12)

    def test_torus_constant(self):
        """Constants are exact everywhere on the torus."""

        h = mf.SampledFunction(mf.Domain(1, mf.TORUS), np.full(256, -0.3))
        self.assert_allclose(mf.regularize_rtau(h, 0.05).values, -0.3, atol=1e-12)

    def test_errors(self):
        """`tau` must be small and resolved."""

        h = util.sine_function(800)
        with self.assertRaises(ValueError):
            mf.regularize_rtau(h, 0.2)
        with self.assertRaises(ValueError):
            mf.regularize_rtau(h, 0.0)
        with self.assertRaises(ResolutionError):
            mf.regularize_rtau(util.sine_function(64), 0.01)


class TestDecoder(util.TestCase):
    """Test `F_eps`."""

    def dense_tokens(self, func, n=4096):
        """Grid tokens of `func`."""

        h = mf.SampledFunction.from_callable(mf.Domain(1), func, 16)
        return mf.tokenize(h, mf.sample_points(h.domain, SamplingScheme('grid'), n))

    def test_constant(self):
        """Constants decode to themselves in the interior."""

        mu = self.dense_tokens(lambda x: np.full(len(x), 0.6))
        self.assertAlmostEqual(float(mf.decode_feps(mu, [[0.5]], 0.1)[0, 0]), 0.6, delta=1e-3)

    def test_far(self):
        """No atom within `eps` gives zero."""

        mu = mf.DiscreteMeasure([[0.1, 0.5], [0.2, -0.5]], [0.5, 0.5], 1)
        self.assertEqual(float(mf.decode_feps(mu, [[0.8]], 0.1)[0, 0]), 0.0)

    def test_linear(self):
        """The even kernel removes the odd part of a linear function."""

        mu = self.dense_tokens(lambda x: 0.3 + 0.4 * (x[:, 0] - 0.5))
        self.assertAlmostEqual(float(mf.decode_feps(mu, [[0.5]], 0.05)[0, 0]), 0.3, delta=1e-3)

    def test_second_order(self):
        """Halving `eps` divides the interior error by about four."""

        def h(x):
            return 0.5 * np.sin(2.0 * np.pi * x[:, 0]) + 0.3 * np.cos(4.0 * np.pi * x[:, 0])

        mu = self.dense_tokens(h)
        queries = np.linspace(0.25, 0.75, 101)[:, None]
        errors = [
            float(np.max(np.abs(mf.decode_feps(mu, queries, eps)[:, 0] - h(queries))))
            for eps in (0.1, 0.05)
        ]
        self.assertTrue(2.5 <= errors[0] / errors[1] <= 6.0)

    def test_shape(self):
        """One row per query, one column per channel."""

        mu = mf.DiscreteMeasure([[0.1, 0.2, 0.3, 0.4]], [1.0], 2)
        self.assertEqual(mf.decode_feps(mu, np.zeros((5, 2)), 0.5).shape, (5, 2))
        with self.assertRaises(DimensionError):
            mf.decode_feps(mu, np.zeros((5, 1)), 0.5)
        with self.assertRaises(ValueError):
            mf.decode_feps(mu, np.zeros((5, 2)), 0.0)

    def test_token_sequence(self):
        """Points first, decoded values after, in query order."""

        mu = self.dense_tokens(lambda x: 0.3 + 0.4 * (x[:, 0] - 0.5))
        points = np.array([[0.5], [0.3], [0.7]])
        seq = mf.token_sequence(mu, points, 0.05)
        self.assertEqual(seq.shape, (3, 2))
        self.assert_bit_equal(seq[:, :1], points)
        self.assert_bit_equal(seq[:, 1:], mf.decode_feps(mu, points, 0.05))
        self.assertAlmostEqual(float(seq[0, 1]), 0.3, delta=1e-3)
        with self.assertRaises(DimensionError):
            mf.token_sequence(mu, np.zeros((2, 2)), 0.05)
