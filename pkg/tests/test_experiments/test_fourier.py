"""Test the Fourier teacher and the random field sampler."""
import numpy as np
from .. import util
import measureformer as mf
from measureformer.fourier import interpolate_periodic, spectral_hidden
from measureformer.util import DimensionError, ResolutionError


class TestTeacher(util.TestCase):
    """Test the fixed Fourier operator."""

    def setUp(self):
        """Setup."""

        super().setUp()
        self.teacher = mf.FourierTeacher.from_seed()
        self.field = mf.sample_field(mf.RandomFieldSampler(seed=3))

    def test_parameter_count(self):
        """`2W + W^2 (2m - 1)^d + PW + 2P + 1`."""

        self.assertEqual(self.teacher.parameter_count(), 785)
        self.assertEqual(mf.FourierTeacher.full_scale().parameter_count(), 33313)

    def test_deterministic(self):
        """Same seed, bit-identical weights."""

        self.assertEqual(mf.FourierTeacher.from_seed(seed=4), mf.FourierTeacher.from_seed(seed=4))
        self.assertNotEqual(mf.FourierTeacher.from_seed(seed=4), mf.FourierTeacher.from_seed(seed=5))

    def test_conjugate_symmetric(self):
        """Spectral weights at `-m` conjugate those at `m`."""

        spec = self.teacher.spectral
        self.assert_bit_equal(np.conj(np.flip(spec, axis=0)), spec)
        full = mf.FourierTeacher.full_scale(1).spectral
        self.assert_bit_equal(np.conj(np.flip(full, axis=(0, 1))), full)

    def test_real(self):
        """The hidden field is real up to rounding."""

        _, residue = spectral_hidden(self.field, self.teacher)
        self.assertLess(residue, 1e-10)

    def test_translation(self):
        """Grid shifts commute with the operator."""

        out = mf.teacher_apply(self.field, self.teacher)
        shifted = mf.teacher_apply(self.field.with_values(np.roll(self.field.values, 5, axis=0)), self.teacher)
        self.assert_allclose(shifted.values, np.roll(out.values, 5, axis=0), atol=1e-10)

    def test_translation_2d(self):
        """Shifts along both axes in two dimensions."""

        teacher = mf.FourierTeacher.from_seed(2, 3, 4, 8, 0)
        field = mf.sample_field(mf.RandomFieldSampler(2, 16, 4, seed=1))
        out = mf.teacher_apply(field, teacher)
        rolled = field.with_values(np.roll(field.values, (5, 3), axis=(0, 1)))
        self.assert_allclose(
            mf.teacher_apply(rolled, teacher).values, np.roll(out.values, (5, 3), axis=(0, 1)), atol=1e-10
        )

    def test_output(self):
        """Bounded torus output on the input grid."""

        out = mf.teacher_apply(self.field, self.teacher)
        self.assertEqual(out.domain.kind, mf.TORUS)
        self.assertEqual(out.values.shape, (64, 1))
        self.assertTrue(np.all(np.abs(out.values) <= self.teacher.output_bound))

    def test_zero_without_biases(self):
        """Without biases zero maps to zero."""

        zero = mf.SampledFunction(mf.Domain(1, mf.TORUS), np.zeros((32, 1)))
        out = mf.teacher_apply(zero, self.teacher.without_biases())
        self.assertTrue(np.all(out.values == 0.0))

    def test_nonlinear(self):
        """Scaling the input does not scale the output."""

        half = self.field.with_values(0.5 * self.field.values)
        a = mf.teacher_apply(self.field, self.teacher).values
        b = mf.teacher_apply(half, self.teacher).values
        self.assertFalse(np.allclose(0.5 * a, b, atol=1e-6))

    def test_resolution(self):
        """Grids must hold the retained modes."""

        coarse = mf.sample_field(mf.RandomFieldSampler(resolution=8, max_frequency=3))
        with self.assertRaises(ResolutionError):
            mf.teacher_apply(coarse, self.teacher)

    def test_dimension(self):
        """Field and teacher dimensions must agree."""

        field = mf.sample_field(mf.RandomFieldSampler(2, 16, 4))
        with self.assertRaises(DimensionError):
            mf.teacher_apply(field, self.teacher)

    def test_manifest(self):
        """Rebuilding from the manifest gives the same teacher."""

        self.assertEqual(mf.FourierTeacher.from_json(self.teacher.to_json()), self.teacher)
        self.assertEqual(self.teacher.manifest()['parameters'], 785)

    def test_manifest_errors(self):
        """Bad manifests and settings."""

        self.assert_raises_config(mf.FourierTeacher.from_json, '{"format": "other"}')
        self.assert_raises_config(mf.FourierTeacher.from_json, '{"format": "measureformer-fourier-teacher"}')
        text = self.teacher.to_json().replace('"tanh"', '"relu"')
        self.assert_raises_config(mf.FourierTeacher.from_json, text)
        self.assert_raises_config(mf.FourierTeacher.from_seed, 3)
        self.assert_raises_config(mf.FourierTeacher.from_seed, 1, 0)


class TestFieldSampler(util.TestCase):
    """Test random input fields."""

    def test_sup_norm(self):
        """Grid values are rescaled to the target sup norm."""

        field = mf.sample_field(mf.RandomFieldSampler(seed=7))
        self.assertAlmostEqual(float(np.max(np.abs(field.values))), 0.9, delta=1e-15)
        self.assertEqual(field.domain.kind, mf.TORUS)

    def test_mean_zero(self):
        """No constant mode."""

        field = mf.sample_field(mf.RandomFieldSampler(2, 32, 5, seed=2))
        self.assertLess(abs(float(np.mean(field.values))), 1e-12)

    def test_evaluator(self):
        """Off-grid evaluation continues the grid values."""

        field = mf.sample_field(mf.RandomFieldSampler(seed=8))
        self.assert_allclose(field(field.nodes()), field.values.reshape(-1, 1), atol=1e-12)
        self.assert_allclose(field([[0.3]]), field([[1.3]]), atol=1e-12)

    def test_deterministic(self):
        """Same seed, same field; different seed, different field."""

        a = mf.sample_field(mf.RandomFieldSampler(seed=1))
        self.assert_bit_equal(a.values, mf.sample_field(mf.RandomFieldSampler(seed=1)).values)
        self.assertFalse(np.array_equal(a.values, mf.sample_field(mf.RandomFieldSampler(seed=2)).values))

    def test_frequencies(self):
        """Half-space frequencies without zero."""

        freqs = mf.RandomFieldSampler(2, 8, 1).frequencies()
        self.assertEqual(freqs.tolist(), [[0, 1], [1, -1], [1, 0], [1, 1]])
        self.assertEqual(len(mf.RandomFieldSampler(1, 64, 8).frequencies()), 8)

    def test_errors(self):
        """Invalid samplers."""

        with self.assertRaises(ResolutionError):
            mf.RandomFieldSampler(resolution=10, max_frequency=8)
        self.assert_raises_config(mf.RandomFieldSampler, sup_norm=1.5)
        self.assert_raises_config(mf.RandomFieldSampler, 3)


class TestInterpolation(util.TestCase):
    """Test periodic interpolation."""

    def test_nodes(self):
        """Exact at nodes."""

        grid = np.array([0.0, 1.0, 2.0, 3.0])
        self.assert_bit_equal(interpolate_periodic(grid, [[0.0], [0.25], [0.5], [0.75]]), grid[:, None])

    def test_wrap(self):
        """Between the last node and the first."""

        grid = np.array([0.0, 1.0, 2.0, 3.0])
        self.assert_allclose(interpolate_periodic(grid, [[0.875], [1.125]]), [[1.5], [0.5]])
