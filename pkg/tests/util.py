"""Test utilities."""
import unittest
import numpy as np
import measureformer as mf
from measureformer.util import ConfigError


def random_measure(rng, n, width, split=1):
    """Random measure with strictly positive weights."""

    w = rng.random(n) + 0.05
    return mf.DiscreteMeasure(rng.standard_normal((n, width)), w / w.sum(), split)


def sine_function(resolution=256, bound=1.0, kind=mf.CUBE):
    """`sin(2 pi x)` on a 1-D domain."""

    return mf.SampledFunction.from_callable(
        mf.Domain(1, kind, bound), lambda x: np.sin(2.0 * np.pi * x[:, 0]), resolution
    )


class TestCase(unittest.TestCase):
    """Test case."""

    def setUp(self):
        """Setup."""

        mf.purge()

    def purge(self):
        """Purge cache."""

        mf.purge()

    def assert_allclose(self, actual, expected, atol=1e-12, rtol=0.0):
        """Assert arrays agree within tolerance."""

        np.testing.assert_allclose(np.asarray(actual, dtype=np.float64), expected, atol=atol, rtol=rtol)

    def assert_bit_equal(self, a, b):
        """Assert arrays are identical bit for bit."""

        a = np.asarray(a)
        b = np.asarray(b)
        self.assertEqual(a.shape, b.shape)
        self.assertEqual(a.tobytes(), b.tobytes())

    def assert_raises_config(self, func, *args, line=None, **kwargs):
        """Assert a `ConfigError`, optionally at a given line of the source."""

        print('----Running Config Error Test----')
        with self.assertRaises(ConfigError) as cm:
            func(*args, **kwargs)
        if line is not None:
            self.assertEqual(cm.exception.line, line)
        return cm.exception
